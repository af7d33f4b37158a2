"""Training objectives: pixelwise two-class cross-entropy and prototype alignment.

Both losses floor probabilities at eps=1e-8 before the log, so a confident
wrong pixel costs a large-but-finite penalty instead of producing inf. The
``*_torch`` variants are differentiable end to end through the prototype
pipeline; the public wrappers take the package's numpy value types.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from . import protoseg
from .protoseg import _t
from .encoders import EncoderBackend, encode
from .errors import InvalidArgumentError
from .types import BinaryMask, Image2D, ProbabilityMask, resize_array_nearest

EPS = 1e-8


def seg_loss_torch(pred: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """(2,H,W) probabilities vs (H,W) {0,1} labels -> mean cross-entropy."""
    if pred.shape[1:] != truth.shape:
        raise InvalidArgumentError(f"prediction {tuple(pred.shape)} and truth {tuple(truth.shape)} disagree")
    logp = torch.log(pred.clamp_min(EPS))
    return -(truth * logp[1] + (1.0 - truth) * logp[0]).mean()


def seg_loss(pred: ProbabilityMask, truth: BinaryMask) -> float:
    if pred.shape != truth.shape:
        raise InvalidArgumentError(f"prediction {pred.shape} and truth {truth.shape} disagree")
    return float(seg_loss_torch(_t(pred.probs), _t(truth.labels)))


def floored_background_probs(shape: tuple[int, int], dtype=torch.float64) -> torch.Tensor:
    """The all-background prediction used when a predicted pseudo-label is empty."""
    probs = torch.empty((2, *shape), dtype=dtype)
    probs[0] = 1.0 - EPS
    probs[1] = EPS
    return probs


def _upsample_probs(probs_grid: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    """Bilinear (2,h,w) -> (2,H,W); linearity keeps per-pixel sums at exactly 1."""
    return F.interpolate(probs_grid[None], size=shape, mode="bilinear", align_corners=False)[0]


def _coarse_pixel_probs(
    feats_s: torch.Tensor,
    support_labels: np.ndarray,
    feats_q: torch.Tensor,
    out_shape: tuple[int, int],
    window: tuple[int, int],
    threshold: float,
    alpha: float,
) -> torch.Tensor:
    grid_shape = (feats_s.shape[1], feats_s.shape[2])
    mask_grid = resize_array_nearest(support_labels, grid_shape).astype(np.float64)
    eff_window = (min(window[0], grid_shape[0]), min(window[1], grid_shape[1]))
    probs_grid = protoseg.coarse_probs_torch(
        feats_s, torch.as_tensor(mask_grid, dtype=feats_s.dtype), feats_q, eff_window, threshold, alpha
    )
    return _upsample_probs(probs_grid, out_shape)


def alignment_loss_torch(
    feats_s: torch.Tensor,
    pred_as_label: np.ndarray,
    original_label: np.ndarray,
    window: tuple[int, int],
    threshold: float,
    alpha: float,
) -> torch.Tensor:
    """Reversed-role loss: prototypes from (x, predicted label) re-segment x,
    scored against the original pseudo-label. Empty predictions fall back to
    a constant all-background prediction (no gradient, finite penalty)."""
    shape = pred_as_label.shape
    truth = torch.as_tensor(original_label.astype(np.float64))
    if not pred_as_label.any():
        return seg_loss_torch(floored_background_probs(shape, dtype=feats_s.dtype), truth)
    probs = _coarse_pixel_probs(feats_s, pred_as_label, feats_s, shape, window, threshold, alpha)
    return seg_loss_torch(probs, truth)


def alignment_loss(
    support_img: Image2D,
    pred_as_label: BinaryMask,
    original_label: BinaryMask,
    backend: EncoderBackend,
    window=(4, 4),
    threshold: float = 0.95,
    alpha: float = 20.0,
) -> float:
    if pred_as_label.shape != support_img.shape or original_label.shape != support_img.shape:
        raise InvalidArgumentError("labels must match the support image shape")
    feats = _t(encode(backend, support_img).values)
    if isinstance(window, int):
        window = (window, window)
    return float(
        alignment_loss_torch(feats, pred_as_label.labels, original_label.labels, tuple(window), threshold, alpha)
    )


def episode_losses(
    backend,
    support_px: np.ndarray,
    support_labels: np.ndarray,
    query_px: np.ndarray,
    truth_labels: np.ndarray,
    pred_to_support_frame,
    window: tuple[int, int],
    threshold: float,
    alpha: float,
    dtype=torch.float64,
) -> tuple[torch.Tensor, torch.Tensor, Optional[np.ndarray]]:
    """One differentiable forward pass: (L_seg, L_reg, predicted query label).

    ``backend`` must expose ``encode_torch``; ``pred_to_support_frame`` maps
    the thresholded query prediction back into the support frame (the inverse
    geometric transform) and is treated as non-differentiable data.
    """
    if not hasattr(backend, "encode_torch"):
        raise InvalidArgumentError(f"backend {getattr(backend, 'name', backend)!r} has no differentiable encoder")
    xs = torch.as_tensor(support_px, dtype=dtype)[None, None]
    xq = torch.as_tensor(query_px, dtype=dtype)[None, None]
    feats_s = backend.encode_torch(xs)[0]
    feats_q = backend.encode_torch(xq)[0]
    probs_q = _coarse_pixel_probs(feats_s, support_labels, feats_q, truth_labels.shape, window, threshold, alpha)
    l_seg = seg_loss_torch(probs_q, torch.as_tensor(truth_labels.astype(np.float64)))

    pred_q = (probs_q[1].detach().numpy() >= 0.5).astype(np.uint8)
    pred_support = pred_to_support_frame(pred_q)
    l_reg = alignment_loss_torch(feats_s, pred_support, support_labels, window, threshold, alpha)
    return l_seg, l_reg, pred_q
