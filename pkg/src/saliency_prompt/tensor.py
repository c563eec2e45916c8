"""Dense array helpers and the binary tensor container.

Arrays are plain ``numpy.ndarray`` objects; everything here computes in
float64. The on-disk container is::

    b"SPTENSR1"            8-byte magic
    u32 version            currently 1
    u8  elem type          0 = float32, 1 = float64
    u8  rank
    u64 dims[rank]
    payload                row-major, little-endian

All header fields are little-endian.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"SPTENSR1"
VERSION = 1
ZERO_NORM = 1e-12

_ELEM_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_PREFIX = struct.Struct("<8sIBB")


class TensorFileError(Exception):
    """Base class for container read/write failures."""

    code = "io_error"


class BadMagicError(TensorFileError):
    code = "bad_magic"


class TruncatedPayloadError(TensorFileError):
    code = "truncated"


class UnsupportedFormatError(TensorFileError):
    code = "unsupported"


def _check_box(box, h: int, w: int) -> tuple[int, int, int, int]:
    x0, y0, x1, y1 = (int(v) for v in box)
    if x0 > x1 or y0 > y1:
        raise ValueError(f"empty box {box!r}")
    if x0 < 0 or y0 < 0 or x1 >= w or y1 >= h:
        raise ValueError(f"box {box!r} outside {h}x{w} extent")
    return x0, y0, x1, y1


def avg_pool_region(t: np.ndarray, box) -> np.ndarray:
    """Per-channel mean of a ``C x H x W`` map over an inclusive box.

    ``box`` is ``(x0, y0, x1, y1)`` in pixel coordinates, both corners
    inclusive.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected C x H x W, got shape {t.shape}")
    x0, y0, x1, y1 = _check_box(box, t.shape[1], t.shape[2])
    return t[:, y0:y1 + 1, x0:x1 + 1].mean(axis=(1, 2))


def cosine(u, v) -> float:
    """Cosine similarity; 0.0 when either vector has (near) zero norm."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine between the rows of ``a`` (N x C) and ``b`` (L x C)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"channel mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    safe_a = np.where(na < ZERO_NORM, 1.0, na)
    safe_b = np.where(nb < ZERO_NORM, 1.0, nb)
    out = (a / safe_a[:, None]) @ (b / safe_b[:, None]).T
    out[na < ZERO_NORM, :] = 0.0
    out[:, nb < ZERO_NORM] = 0.0
    return np.clip(out, -1.0, 1.0)


def linear_normalize(t) -> np.ndarray:
    """Min-max rescale to [0, 1]. A constant input maps to all zeros."""
    t = np.asarray(t, dtype=np.float64)
    lo = t.min()
    hi = t.max()
    if hi <= lo:
        return np.zeros_like(t)
    return (t - lo) / (hi - lo)


def sigmoid(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def dot_conv(weights, feat) -> np.ndarray:
    """1x1 convolution of a ``C x H x W`` map with a single C-vector."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    f = np.asarray(feat, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != w.size:
        raise ValueError(f"channel mismatch: weights {w.size}, feature {f.shape}")
    return np.tensordot(w, f, axes=(0, 0))


def write_tensor(path, t: np.ndarray) -> None:
    arr = np.asarray(t)
    if arr.dtype == np.float32:
        arr = arr.astype("<f4", copy=False)
    elif arr.dtype == np.float64:
        arr = arr.astype("<f8", copy=False)
    else:
        raise UnsupportedFormatError(f"unsupported element type {arr.dtype}")
    if arr.ndim > 255:
        raise UnsupportedFormatError("rank too large")
    header = _PREFIX.pack(MAGIC, VERSION, _ELEM_CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(arr).tobytes(order="C"))
    except OSError as exc:
        raise TensorFileError(f"cannot write {path}: {exc}") from exc


def read_tensor(path, widen: bool = False) -> np.ndarray:
    """Read a container file.

    The stored element type is preserved unless ``widen`` is set, in which
    case float32 payloads come back as float64.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise TensorFileError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _PREFIX.size or raw[:8] != MAGIC:
        raise BadMagicError(f"{os.fspath(path)}: bad magic")
    _, version, code, rank = _PREFIX.unpack_from(raw)
    if version != VERSION:
        raise UnsupportedFormatError(f"unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise UnsupportedFormatError(f"unknown element type code {code}")
    off = _PREFIX.size
    if len(raw) < off + 8 * rank:
        raise TruncatedPayloadError(f"{os.fspath(path)}: truncated header")
    shape = struct.unpack_from(f"<{rank}Q", raw, off)
    off += 8 * rank
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    need = count * dtype.itemsize
    if len(raw) - off != need:
        raise TruncatedPayloadError(
            f"{os.fspath(path)}: payload has {len(raw) - off} bytes, expected {need}")
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(shape).copy()
    if widen:
        arr = arr.astype(np.float64)
    return arr
