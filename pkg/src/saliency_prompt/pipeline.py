"""Pre-training loop, datasets, checkpoints and reports."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import manifest as mf
from .evaluation import DetectionRecord, average_precision, kernel_heatmap, mask_to_box
from .grad import backward
from .head import HeadParams, forward, sgd_step
from .losses import LossWeights, total_loss
from .prompting import STRATEGIES, assign, inject, make_prompts
from .proposals import ProposalConfig, propose_masks, proposal_seed_features, random_proposals
from .synthetic import FEATURE_DIM, SceneSpec, make_dataset, neck, toy_feature_extractor
from .tensor import read_tensor, write_tensor

log = logging.getLogger(__name__)

LABEL_SOURCES = ("saliency", "random", "external-manifest")
DEFAULT_N_KERNELS = 100


class ConfigError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass
class RunConfig:
    n_kernels: int = DEFAULT_N_KERNELS
    c: int = 16
    d: int = FEATURE_DIM
    stages: int = 2
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 0.05
    momentum: float = 0.9
    steps: int = 200
    seed: int = 0
    label_source: str = "saliency"
    assignment: str = "cosine"
    random_count: int = 4
    manifest_dir: str | None = None
    accumulate: int = 1
    grad_clip: float | None = 1.0
    max_expected_proposals: int | None = None
    log_wall_time: bool = True
    dataset: dict | str | None = None

    def validate(self) -> None:
        if self.label_source not in LABEL_SOURCES:
            raise ConfigError(f"label_source must be one of {LABEL_SOURCES}")
        if self.assignment not in STRATEGIES:
            raise ConfigError(f"assignment must be one of {STRATEGIES}")
        if self.label_source == "external-manifest" and not self.manifest_dir:
            raise ConfigError("external-manifest needs manifest_dir")
        if self.n_kernels < 1 or self.c < 2 or self.d < 1 or self.stages < 1:
            raise ConfigError("n_kernels, c, d and stages must be positive")
        if self.c - 1 < self.d:
            raise ConfigError("c must exceed d (the neck keeps all feature channels)")
        if self.steps < 0 or self.accumulate < 1:
            raise ConfigError("steps must be >= 0 and accumulate >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ConfigError("need lr >= 0 and momentum in [0, 1)")
        if self.max_expected_proposals is not None and self.n_kernels < self.max_expected_proposals:
            raise ConfigError("n_kernels must be at least the expected maximum proposal count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["proposal"] = self.proposal.to_dict()
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "proposal" in doc:
                doc["proposal"] = ProposalConfig(**doc["proposal"])
            if "weights" in doc:
                doc["weights"] = LossWeights(**doc["weights"])
            cfg = cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg


# -- data --------------------------------------------------------------------

@dataclass
class Sample:
    image_id: str
    features: np.ndarray  # D x H x W
    gt_masks: np.ndarray | None = None  # K x H x W, at feature resolution


@dataclass
class Prepared:
    sample: Sample
    feat: np.ndarray  # C x H x W
    proposals: list
    seed_feats: np.ndarray  # L x D
    prompts: np.ndarray  # L x C


def samples_from_scenes(scenes, prefix: str = "scene") -> list[Sample]:
    return [Sample(f"{prefix}_{k:03d}", toy_feature_extractor(s.image), s.masks)
            for k, s in enumerate(scenes)]


def load_image(path) -> np.ndarray:
    """PGM/PPM to a ``3 x H x W`` float array in [0, 1]."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return np.moveaxis(img, -1, 0)


def save_image(path, rgb) -> None:
    arr = np.round(np.clip(np.moveaxis(np.asarray(rgb), 0, -1), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PPM")


def write_scene_dir(out_dir, scenes) -> None:
    """Dump scenes as ``<id>.ppm`` plus ``<id>.gt.json`` (RLE ground-truth masks)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(scenes):
        stem = f"scene_{k:03d}"
        save_image(out / f"{stem}.ppm", s.image)
        h, w = s.hw
        (out / f"{stem}.gt.json").write_text(json.dumps({
            "image_id": stem, "height": h, "width": w,
            "masks": [mf.rle_encode(m) for m in s.masks],
        }))


def load_dataset(spec) -> list[Sample]:
    """Resolve a dataset reference.

    ``spec`` is either a dict ``{"synthetic": {"count", "seed", ...SceneSpec}}``,
    a path to a JSON file holding such a dict, or a directory of ``*.ppm`` /
    ``*.pgm`` images (optional ``<stem>.gt.json``) or ``*.spt`` feature tensors.
    """
    if isinstance(spec, dict):
        syn = dict(spec.get("synthetic", {}))
        count = int(syn.pop("count", 20))
        seed = int(syn.pop("seed", 0))
        prefix = syn.pop("prefix", "scene")
        scene_spec = SceneSpec(**{k: tuple(v) if k == "shapes" else v for k, v in syn.items()})
        return samples_from_scenes(make_dataset(count, seed, scene_spec), prefix)
    path = Path(spec)
    if path.is_file():
        return load_dataset(json.loads(path.read_text()))
    if not path.is_dir():
        raise FileNotFoundError(f"no dataset at {path}")
    samples = []
    for p in sorted(path.iterdir()):
        if p.suffix in (".ppm", ".pgm"):
            feats = toy_feature_extractor(load_image(p))
        elif p.suffix == ".spt":
            feats = read_tensor(p, widen=True)
        else:
            continue
        gt = None
        gt_path = p.with_name(p.stem + ".gt.json")
        if gt_path.exists():
            doc = json.loads(gt_path.read_text())
            h, w = doc["height"], doc["width"]
            gt = np.array([mf.rle_decode(r, h, w) for r in doc["masks"]]).reshape(-1, h, w)
        samples.append(Sample(p.stem, feats, gt))
    if not samples:
        raise FileNotFoundError(f"no images or feature tensors in {path}")
    return samples


def proposals_for(sample: Sample, cfg: RunConfig, index: int = 0):
    x = np.moveaxis(sample.features, 0, -1)
    if cfg.label_source == "saliency":
        return propose_masks(x, cfg.proposal), cfg.proposal
    if cfg.label_source == "random":
        h, w = x.shape[:2]
        return random_proposals(h, w, cfg.random_count, cfg.seed * 7919 + index,
                                cfg.proposal.min_area_fraction), cfg.proposal
    doc = mf.read_manifest(Path(cfg.manifest_dir) / f"{sample.image_id}.json")
    return mf.manifest_to_proposals(doc)


def prepare(samples, cfg: RunConfig) -> list[Prepared]:
    out = []
    for k, s in enumerate(samples):
        if s.features.shape[0] != cfg.d:
            raise ConfigError(f"{s.image_id}: features have {s.features.shape[0]} channels, config d={cfg.d}")
        feat = neck(s.features, cfg.c)
        props, pcfg = proposals_for(s, cfg, k)
        x = np.moveaxis(s.features, 0, -1)
        out.append(Prepared(s, feat, props, proposal_seed_features(x, props, pcfg),
                            make_prompts(feat, props).prompts))
    return out


# -- training ----------------------------------------------------------------

@dataclass
class TrainState:
    params: HeadParams
    velocity: HeadParams
    step: int = 0
    seed: int = 0


def init_state(cfg: RunConfig) -> TrainState:
    params = HeadParams.init(cfg.n_kernels, cfg.c, cfg.d, cfg.seed)
    return TrainState(params, params.zeros_like(), 0, cfg.seed)


def injected_kernels(params: HeadParams, item: Prepared, strategy: str, rng_seed: int) -> np.ndarray:
    a = assign(strategy, params.kernels0, item.prompts, rng_seed)
    if a is None:
        return params.kernels0
    return inject(params.kernels0, item.prompts, a.delta)


def clip_grad_norm(grads: HeadParams, max_norm: float) -> HeadParams:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float((v * v).sum()) for _, v in grads.items()))
    if norm <= max_norm:
        return grads
    return HeadParams(**{n: v * (max_norm / norm) for n, v in grads.items()})


def _assign_seed(cfg: RunConfig, step: int) -> int:
    return cfg.seed * 1_000_003 + step


def image_loss(params: HeadParams, item: Prepared, cfg: RunConfig, step: int = 0):
    k = injected_kernels(params, item, cfg.assignment, _assign_seed(cfg, step))
    trace = forward(params, k, item.feat, cfg.stages)
    return total_loss(params, trace, item.proposals, item.seed_feats, cfg.weights)


def dataset_loss(params: HeadParams, data: list[Prepared], cfg: RunConfig) -> float:
    """Mean total loss over ``data`` (random assignment draws use step 0)."""
    return float(np.mean([image_loss(params, it, cfg).total for it in data]))


def pretrain(cfg: RunConfig, data: list[Prepared], state: TrainState | None = None,
             log_path=None) -> tuple[TrainState, list[dict]]:
    """Run ``cfg.steps`` optimizer steps, one image (or ``accumulate`` images) each.

    Images are visited in order, cycling. Returns the final state and the
    per-step log records (also appended to ``log_path`` as JSON lines).
    """
    cfg.validate()
    if not data:
        raise ConfigError("dataset is empty")
    state = state or init_state(cfg)
    records = []
    fh = open(log_path, "a") if log_path else None
    t0 = time.perf_counter()
    cursor = state.step * cfg.accumulate
    try:
        for _ in range(cfg.steps):
            grads = None
            terms = {"cls": 0.0, "dice": 0.0, "ce": 0.0, "ker": 0.0}
            total = 0.0
            ids = []
            for _ in range(cfg.accumulate):
                item = data[cursor % len(data)]
                cursor += 1
                params = state.params
                k = injected_kernels(params, item, cfg.assignment, _assign_seed(cfg, cursor))
                trace = forward(params, k, item.feat, cfg.stages)
                g, loss = backward(params, trace, item.proposals, item.seed_feats, cfg.weights)
                if not math.isfinite(loss.total):
                    raise NumericError(f"non-finite loss at step {state.step} on {item.sample.image_id}")
                grads = g if grads is None else HeadParams(
                    **{n: v + getattr(g, n) for n, v in grads.items()})
                total += loss.total / cfg.accumulate
                for n in terms:
                    terms[n] += loss.terms[n] / cfg.accumulate
                ids.append(item.sample.image_id)
            if cfg.accumulate > 1:
                grads = HeadParams(**{n: v / cfg.accumulate for n, v in grads.items()})
            if cfg.grad_clip is not None:
                grads = clip_grad_norm(grads, cfg.grad_clip)
            params, velocity = sgd_step(state.params, grads, cfg.lr, cfg.momentum, state.velocity)
            state = TrainState(params, velocity, state.step + 1, state.seed)
            rec = {"step": state.step, "images": ids, "total": total, **terms}
            if cfg.log_wall_time:
                rec["wall_time"] = time.perf_counter() - t0
            records.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
    finally:
        if fh:
            fh.close()
    for name, v in state.params.items():
        if not np.all(np.isfinite(v)):
            raise NumericError(f"parameter {name} diverged")
    return state, records


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, state: TrainState, cfg: RunConfig) -> None:
    """Directory checkpoint: one tensor file per field and moment, plus JSON."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for name, v in state.params.items():
        write_tensor(out / f"{name}.spt", v)
    for name, v in state.velocity.items():
        write_tensor(out / f"momentum.{name}.spt", v)
    (out / "checkpoint.json").write_text(json.dumps({
        "step": state.step, "seed": state.seed,
        "fields": state.params.names(), "config": cfg.to_dict(),
    }, indent=1, sort_keys=True))


def load_checkpoint(path) -> tuple[TrainState, RunConfig]:
    src = Path(path)
    meta = json.loads((src / "checkpoint.json").read_text())
    params = HeadParams(**{n: read_tensor(src / f"{n}.spt", widen=True) for n in meta["fields"]})
    velocity = HeadParams(**{n: read_tensor(src / f"momentum.{n}.spt", widen=True) for n in meta["fields"]})
    params.check()
    cfg = RunConfig.from_dict(meta["config"])
    return TrainState(params, velocity, meta["step"], meta["seed"]), cfg


# -- evaluation --------------------------------------------------------------

def predict(params: HeadParams, item: Prepared, cfg: RunConfig, strategy: str = "none",
            mask_threshold: float = 0.5):
    """Final masks, boxes and scores for one image; empty masks are dropped."""
    k = injected_kernels(params, item, strategy, _assign_seed(cfg, 0))
    trace = forward(params, k, item.feat, cfg.stages)
    soft = trace.final_masks()
    boxes, scores = [], []
    for n in range(soft.shape[0]):
        box = mask_to_box(soft[n] >= mask_threshold)
        if box is not None:
            boxes.append(box)
            scores.append(float(trace.prob[n]))
    return soft, boxes, scores


def evaluate(params: HeadParams, data: list[Prepared], cfg: RunConfig, strategy: str = "none"):
    records, stacks = [], []
    for item in data:
        soft, boxes, scores = predict(params, item, cfg, strategy)
        stacks.append(soft)
        gt = item.sample.gt_masks
        gt_boxes = [b for b in (mask_to_box(m) for m in gt) if b is not None] if gt is not None else []
        records.append(DetectionRecord(item.sample.image_id, boxes, scores, gt_boxes))
    return average_precision(records), stacks


def report(params: HeadParams, data: list[Prepared], cfg: RunConfig, strategy: str | None = None,
           train_log=None, report_path=None, heatmap_threshold=None, figures: bool = True) -> dict:
    """Metrics dict; with ``report_path`` also writes the JSON plus side files.

    ``metrics`` uses prompted inference with ``strategy`` (default: the
    training strategy); ``metrics_no_prompt`` runs the bare kernels. The
    kernel heatmap is built from the bare-kernel masks, since it is meant to
    show what the kernels learned on their own. Side files share the report's
    stem: ``<stem>_heatmap.spt``, ``<stem>_heatmap.png`` and, given a
    training log, ``<stem>_loss.png``.
    """
    strategy = cfg.assignment if strategy is None else strategy
    metrics, _ = evaluate(params, data, cfg, strategy)
    bare, stacks = evaluate(params, data, cfg, "none")
    doc = {"metrics": metrics, "metrics_no_prompt": bare, "images": len(data),
           "n_kernels": params.n, "eval_assignment": strategy}
    if train_log:
        doc["loss_first"] = train_log[0]["total"]
        doc["loss_last"] = train_log[-1]["total"]
        doc["steps"] = len(train_log)
    if report_path is not None:
        report_path = Path(report_path)
        out, stem = report_path.parent, report_path.stem
        out.mkdir(parents=True, exist_ok=True)
        hm = kernel_heatmap(stacks, heatmap_threshold)
        write_tensor(out / f"{stem}_heatmap.spt", hm.data)
        doc["heatmap"] = {"file": f"{stem}_heatmap.spt", "shape": list(hm.data.shape),
                          "image_count": hm.image_count}
        if figures:
            from .plotting import plot_kernel_heatmaps, plot_loss_curve
            plot_kernel_heatmaps(hm.data, out / f"{stem}_heatmap.png")
            doc["figures"] = [f"{stem}_heatmap.png"]
            if train_log:
                plot_loss_curve(train_log, out / f"{stem}_loss.png")
                doc["figures"].append(f"{stem}_loss.png")
        report_path.write_text(json.dumps(doc, indent=1))
    return doc


def export_heatmap(params: HeadParams, data: list[Prepared], cfg: RunConfig, out_dir,
                   activation_threshold=None, pgm: bool = True, figure: bool = True) -> dict:
    """Write ``kernel_heatmap.spt`` plus optional per-kernel PGMs and a grid figure."""
    _, stacks = evaluate(params, data, cfg, "none")
    hm = kernel_heatmap(stacks, activation_threshold)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "kernel_heatmap.spt", hm.data)
    files = ["kernel_heatmap.spt"]
    if pgm:
        for n in range(hm.data.shape[0]):
            mf.write_pgm(out / f"kernel_{n:03d}.pgm", hm.data[n])
            files.append(f"kernel_{n:03d}.pgm")
    if figure:
        from .plotting import plot_kernel_heatmaps
        plot_kernel_heatmaps(hm.data, out / "kernel_heatmap.png")
        files.append("kernel_heatmap.png")
    return {"shape": list(hm.data.shape), "image_count": hm.image_count, "files": files}


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **kw)
