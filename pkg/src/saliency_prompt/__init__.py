"""Saliency-prompt pre-training for kernel-based instance segmentation heads."""

from .evaluation import average_precision, box_iou, kernel_heatmap, mask_iou, mask_to_box
from .grad import backward
from .head import HeadParams, forward, sgd_step
from .losses import LossWeights, bce_loss, dice_loss, focal_loss, kernel_loss, match_hungarian, total_loss
from .prompting import inject, make_prompts, match_cosine, match_random, match_sequential, similarity_matrix
from .proposals import MaskProposal, ProposalConfig, propose_masks, random_proposals
from .tensor import read_tensor, write_tensor

__version__ = "0.1.0"
