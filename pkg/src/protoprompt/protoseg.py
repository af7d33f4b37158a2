"""Coarse one-shot segmentation by prototype matching.

Support features are summarized into class prototypes two ways: local
prototypes average complete, non-overlapping windows of the feature grid
whose mask occupancy clears a threshold; a global prototype is the
mask-weighted mean over the whole grid. Background uses the same recipe on
the complemented mask. Each prototype is compared to every query feature by
scaled cosine similarity; per-class maps are fused with a per-pixel softmax
over prototypes, and the two class maps are normalized into probabilities.

The differentiable path lives in the ``*_torch`` functions (used by the
fine-tuning losses); the public functions wrap them for numpy callers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .encoders import EncoderBackend, encode
from .errors import EmptySupportError, InvalidArgumentError
from .types import (
    BinaryMask,
    FeatureMap,
    Image2D,
    ProbabilityMask,
    resize_array_bilinear,
    resize_array_nearest,
)

FOREGROUND = "foreground"
BACKGROUND = "background"

# Windows pass the occupancy gate on >= threshold; the tiny slack absorbs
# float error in the pooled mean (occupancies are ratios k / (Lh*Lw)).
_OCC_EPS = 1e-9


def _t(arr: np.ndarray) -> torch.Tensor:
    """Tensor from a (possibly frozen) numpy array without sharing memory."""
    return torch.from_numpy(np.array(arr, dtype=np.float64))


@dataclass(frozen=True)
class Prototype:
    vector: np.ndarray
    class_id: str
    kind: str  # local | global
    window_index: Optional[tuple[int, int]] = None

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or not np.isfinite(v).all():
            raise InvalidArgumentError("prototype vector must be a finite 1-D array")
        if self.kind not in ("local", "global"):
            raise InvalidArgumentError(f"unknown prototype kind {self.kind!r}")
        if (self.kind == "local") != (self.window_index is not None):
            raise InvalidArgumentError("local prototypes carry a window index; global ones do not")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True)
class PrototypeSet:
    prototypes: tuple[Prototype, ...]
    pooling_window: tuple[int, int]
    occupancy_threshold: float

    def __post_init__(self):
        present = {p.class_id for p in self.prototypes}
        if not {FOREGROUND, BACKGROUND} <= present:
            missing = {FOREGROUND, BACKGROUND} - present
            raise InvalidArgumentError(f"prototype set lacks any prototype for {sorted(missing)}")

    def for_class(self, class_id: str) -> list[Prototype]:
        return [p for p in self.prototypes if p.class_id == class_id]


@dataclass(frozen=True)
class SimilarityMap:
    values: np.ndarray
    class_id: str
    alpha: float
    prototype_index: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise InvalidArgumentError("similarity map must be 2-D")
        if np.abs(v).max(initial=0.0) > self.alpha + 1e-9:
            raise InvalidArgumentError(f"similarity values exceed the scale bound ±{self.alpha}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


# ---------------------------------------------------------------------------
# differentiable core (torch)
# ---------------------------------------------------------------------------


def local_prototypes_torch(
    fmap: torch.Tensor, mask: torch.Tensor, window: tuple[int, int], threshold: float
) -> tuple[torch.Tensor, list[tuple[int, int]]]:
    """(D,H,W) features + (H,W) mask -> (L,D) window means over qualifying tiles.

    Tiles are complete, non-overlapping windows (remainder rows/cols at the
    bottom/right edges contribute only to the global prototype).
    """
    lh, lw = window
    d, h, w = fmap.shape
    if lh < 1 or lw < 1 or lh > h or lw > w:
        raise InvalidArgumentError(f"window {window} does not fit feature grid {(h, w)}")
    pooled = F.avg_pool2d(fmap[None], kernel_size=(lh, lw), stride=(lh, lw))[0]  # (D, M, N)
    occ = F.avg_pool2d(mask[None, None], kernel_size=(lh, lw), stride=(lh, lw))[0, 0]  # (M, N)
    keep = occ >= (threshold - _OCC_EPS)
    idx = [(int(m), int(n)) for m, n in zip(*[t.tolist() for t in torch.nonzero(keep, as_tuple=True)])]
    protos = pooled[:, keep].T  # (L, D)
    return protos, idx


def global_prototype_torch(fmap: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    total = mask.sum()
    if float(total) == 0.0:
        raise EmptySupportError("mask has no positive cells at feature resolution")
    return (fmap * mask[None]).sum(dim=(1, 2)) / total


def similarity_torch(protos: torch.Tensor, fmap: torch.Tensor, alpha: float) -> torch.Tensor:
    """(L,D) prototypes vs (D,H,W) features -> (L,H,W) scaled cosine maps.

    Zero-norm feature columns get similarity 0; a zero-norm prototype is an
    error. Cosines are clamped to [-1, 1] so the ±alpha bound is exact.
    """
    d, h, w = fmap.shape
    pnorm = torch.linalg.vector_norm(protos, dim=1)
    if float(pnorm.detach().min()) == 0.0:
        raise InvalidArgumentError("zero-norm prototype")
    flat = fmap.reshape(d, h * w)
    fnorm = torch.linalg.vector_norm(flat, dim=0)
    dots = protos @ flat  # (L, HW)
    # only exact zero norms get the fallback; non-finite values must propagate
    # so callers' finite-loss checks can see them
    denom = pnorm[:, None] * fnorm[None, :]
    zero = denom == 0
    safe = torch.where(zero, torch.ones_like(denom), denom)
    cos = torch.where(zero, torch.zeros_like(dots), dots / safe)
    return (alpha * cos.clamp(-1.0, 1.0)).reshape(-1, h, w)


def fuse_torch(stack: torch.Tensor) -> torch.Tensor:
    """(L,H,W) per-prototype maps -> (H,W) softmax-weighted fusion over L."""
    if stack.shape[0] < 1:
        raise InvalidArgumentError("cannot fuse an empty stack of similarity maps")
    return (torch.softmax(stack, dim=0) * stack).sum(dim=0)


def class_similarity_torch(
    fmap_s: torch.Tensor,
    mask_grid: torch.Tensor,
    fmap_q: torch.Tensor,
    window: tuple[int, int],
    threshold: float,
    alpha: float,
) -> Optional[torch.Tensor]:
    """Fused (H,W) similarity of the query against one class's prototypes.

    Returns None when the class is entirely absent at feature resolution —
    the caller substitutes a constant -alpha plane (certain absence).
    """
    if float(mask_grid.sum()) == 0.0:
        return None
    locals_, _ = local_prototypes_torch(fmap_s, mask_grid, window, threshold)
    global_ = global_prototype_torch(fmap_s, mask_grid)[None]
    protos = torch.cat([locals_, global_], dim=0) if locals_.shape[0] else global_
    return fuse_torch(similarity_torch(protos, fmap_q, alpha))


def coarse_probs_torch(
    fmap_s: torch.Tensor,
    mask_grid: torch.Tensor,
    fmap_q: torch.Tensor,
    window: tuple[int, int],
    threshold: float,
    alpha: float,
) -> torch.Tensor:
    """Full prototype pipeline at feature resolution -> (2,H,W) probabilities."""
    h, w = fmap_q.shape[1], fmap_q.shape[2]
    planes = []
    for grid in (1.0 - mask_grid, mask_grid):  # background first
        fused = class_similarity_torch(fmap_s, grid, fmap_q, window, threshold, alpha)
        if fused is None:
            fused = torch.full((h, w), -alpha, dtype=fmap_q.dtype, device=fmap_q.device)
        planes.append(fused)
    return torch.softmax(torch.stack(planes), dim=0)


# ---------------------------------------------------------------------------
# public numpy-facing API
# ---------------------------------------------------------------------------


def _as_window(window) -> tuple[int, int]:
    if isinstance(window, (int, np.integer)):
        return int(window), int(window)
    lh, lw = int(window[0]), int(window[1])
    return lh, lw


def _check_grid_mask(fmap: FeatureMap, mask: BinaryMask) -> None:
    if mask.shape != fmap.grid_shape:
        raise InvalidArgumentError(
            f"mask {mask.shape} must be at feature-grid resolution {fmap.grid_shape} (resize nearest first)"
        )


def pool_local_prototypes(
    fmap: FeatureMap, mask: BinaryMask, window, threshold: float, class_id: str = FOREGROUND
) -> list[Prototype]:
    _check_grid_mask(fmap, mask)
    protos, idx = local_prototypes_torch(_t(fmap.values), _t(mask.labels), _as_window(window), threshold)
    vectors = protos.numpy()
    return [Prototype(vectors[i], class_id, "local", window_index=idx[i]) for i in range(len(idx))]


def global_prototype(fmap: FeatureMap, mask: BinaryMask, class_id: str = FOREGROUND) -> Prototype:
    _check_grid_mask(fmap, mask)
    vec = global_prototype_torch(_t(fmap.values), _t(mask.labels))
    return Prototype(vec.numpy(), class_id, "global")


def similarity_map(proto: Prototype, fmap: FeatureMap, alpha: float, prototype_index: int = 0) -> SimilarityMap:
    if proto.vector.shape[0] != fmap.dim:
        raise InvalidArgumentError(f"prototype dim {proto.vector.shape[0]} != feature dim {fmap.dim}")
    values = similarity_torch(_t(proto.vector[None]), _t(fmap.values), alpha)[0]
    return SimilarityMap(values.numpy(), proto.class_id, alpha, prototype_index)


def fuse_similarities(maps: Sequence[SimilarityMap]) -> SimilarityMap:
    if not maps:
        raise InvalidArgumentError("cannot fuse zero similarity maps")
    shape = maps[0].values.shape
    class_id = maps[0].class_id
    alpha = maps[0].alpha
    for m in maps[1:]:
        if m.values.shape != shape:
            raise InvalidArgumentError("similarity maps disagree in shape")
        if m.class_id != class_id:
            raise InvalidArgumentError("fusion mixes similarity maps of different classes")
    stack = _t(np.stack([m.values for m in maps]))
    return SimilarityMap(fuse_torch(stack).numpy(), class_id, alpha, prototype_index=None)


def normalize_classes(fg: SimilarityMap, bg: SimilarityMap) -> ProbabilityMask:
    if fg.values.shape != bg.values.shape:
        raise InvalidArgumentError("foreground/background maps disagree in shape")
    probs = torch.softmax(_t(np.stack([bg.values, fg.values])), dim=0)
    return ProbabilityMask(probs.numpy())


def build_prototype_set(
    fmap: FeatureMap, mask_grid: BinaryMask, window, threshold: float
) -> PrototypeSet:
    """Foreground + background prototypes with the global-prototype guarantee."""
    _check_grid_mask(fmap, mask_grid)
    window = _as_window(window)
    protos: list[Prototype] = []
    for class_id, labels in ((FOREGROUND, mask_grid.labels), (BACKGROUND, 1 - mask_grid.labels)):
        class_mask = BinaryMask(labels)
        if class_mask.count() == 0:
            raise EmptySupportError(f"{class_id} is empty at feature resolution")
        protos.extend(pool_local_prototypes(fmap, class_mask, window, threshold, class_id))
        protos.append(global_prototype(fmap, class_mask, class_id))
    return PrototypeSet(tuple(protos), window, threshold)


def upsample_probabilities(pm: ProbabilityMask, target: tuple[int, int]) -> ProbabilityMask:
    """Bilinear upsample each plane, then re-normalize per pixel."""
    planes = np.stack([resize_array_bilinear(pm.probs[c], target) for c in range(2)])
    planes = np.clip(planes, 0.0, 1.0)
    total = planes.sum(axis=0)
    total = np.where(total > 0, total, 1.0)
    return ProbabilityMask(planes / total)


def coarse_segment(
    support: tuple[Image2D, BinaryMask], query: Image2D, backend: EncoderBackend, cfg
) -> ProbabilityMask:
    """Encode support + query, match prototypes, return query-resolution probabilities."""
    support_img, support_mask = support
    if support_img.shape != support_mask.shape:
        raise InvalidArgumentError("support image and mask shapes disagree")
    fmap_s = encode(backend, support_img)
    fmap_q = encode(backend, query)
    grid = resize_array_nearest(support_mask.labels, fmap_s.grid_shape)
    lh, lw = _as_window(cfg["protoseg.window"])
    window = (min(lh, fmap_s.grid_shape[0]), min(lw, fmap_s.grid_shape[1]))
    probs = coarse_probs_torch(
        _t(fmap_s.values),
        _t(grid),
        _t(fmap_q.values),
        window,
        cfg["protoseg.occupancy_threshold"],
        cfg["protoseg.alpha"],
    )
    return upsample_probabilities(ProbabilityMask(probs.numpy()), query.shape)
