"""Core value types: images, masks, feature maps, probabilities, geometry.

All types are immutable after construction (arrays are frozen), so they can
be shared freely across threads. Coordinate convention project-wide:
(row, col), origin at the top-left, row-major.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import cv2
import numpy as np

from .errors import InvalidArgumentError

POSITIVE = "positive"
NEGATIVE = "negative"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Image2D:
    """H x W x C image (C in {1, 3}), float pixels, optionally with physical spacing."""

    pixels: np.ndarray
    spacing: Optional[tuple[float, float]] = None
    id: str = ""

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise InvalidArgumentError(f"image must be HxW or HxWxC with C in {{1,3}}, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidArgumentError("image dims must be >= 1")
        if not np.isfinite(px).all():
            raise InvalidArgumentError("image pixels must be finite")
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def gray(self) -> np.ndarray:
        """Channel-mean grayscale view, H x W."""
        return self.pixels.mean(axis=2)


@dataclass(frozen=True)
class BinaryMask:
    """H x W labels over {0, 1}."""

    labels: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.labels)
        if lb.ndim != 2:
            raise InvalidArgumentError(f"mask must be HxW, got shape {lb.shape}")
        if not np.isin(lb, (0, 1)).all():
            raise InvalidArgumentError("mask labels must be in {0, 1}")
        object.__setattr__(self, "labels", _freeze(lb.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def any(self) -> bool:
        return bool(self.labels.any())

    def count(self) -> int:
        return int(self.labels.sum())


@dataclass(frozen=True)
class FeatureMap:
    """D x H' x W' dense features from an encoder backend."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] < 1:
            raise InvalidArgumentError(f"feature map must be DxHxW with D >= 1, got {v.shape}")
        if not np.isfinite(v).all():
            raise InvalidArgumentError("feature map values must be finite")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


@dataclass(frozen=True)
class ProbabilityMask:
    """2 x H x W per-pixel class probabilities; plane 0 = background, 1 = foreground."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != 2:
            raise InvalidArgumentError(f"probability mask must be 2xHxW, got {p.shape}")
        if p.min() < 0.0 or p.max() > 1.0:
            raise InvalidArgumentError("probabilities must lie in [0, 1]")
        sums = p.sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise InvalidArgumentError("per-pixel probabilities must sum to 1 within 1e-6")
        object.__setattr__(self, "probs", _freeze(p))

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[1], self.probs.shape[2]

    @property
    def background(self) -> np.ndarray:
        return self.probs[0]

    @property
    def foreground(self) -> np.ndarray:
        return self.probs[1]


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel-coordinate box."""

    row_min: int
    col_min: int
    row_max: int
    col_max: int

    def __post_init__(self):
        if self.row_min > self.row_max or self.col_min > self.col_max:
            raise InvalidArgumentError(f"degenerate bounding box {self}")
        if min(self.row_min, self.col_min) < 0:
            raise InvalidArgumentError("bounding box coordinates must be non-negative")

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.row_min, self.col_min, self.row_max, self.col_max)


@dataclass(frozen=True)
class PointPrompt:
    """A single positive/negative point prompt at (row, col)."""

    row: int
    col: int
    polarity: str = POSITIVE

    def __post_init__(self):
        if self.polarity not in (POSITIVE, NEGATIVE):
            raise InvalidArgumentError(f"polarity must be positive/negative, got {self.polarity!r}")
        if self.row < 0 or self.col < 0:
            raise InvalidArgumentError("point coordinates must be non-negative")


@dataclass(frozen=True)
class Episode:
    """One (support, query) unit; query_truth is only present for training/eval."""

    support_image: Image2D
    support_mask: BinaryMask
    query: Image2D
    query_truth: Optional[BinaryMask] = None
    class_id: str = ""

    def __post_init__(self):
        if self.support_image.shape != self.support_mask.shape:
            raise InvalidArgumentError(
                f"support image {self.support_image.shape} and mask {self.support_mask.shape} disagree"
            )
        if self.query_truth is not None and self.query_truth.shape != self.query.shape:
            raise InvalidArgumentError("query_truth shape must match query shape")


def nearest_index_map(src: int, dst: int) -> np.ndarray:
    """Half-pixel-center nearest source index for each destination index."""
    idx = np.floor((np.arange(dst) + 0.5) * (src / dst)).astype(np.int64)
    return np.clip(idx, 0, src - 1)


def resize_array_nearest(arr: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    th, tw = target
    rows = nearest_index_map(arr.shape[0], th)
    cols = nearest_index_map(arr.shape[1], tw)
    return arr[np.ix_(rows, cols)]


def resize_array_bilinear(arr: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    th, tw = target
    out = cv2.resize(np.asarray(arr, dtype=np.float64), (tw, th), interpolation=cv2.INTER_LINEAR)
    if arr.ndim == 3 and out.ndim == 2:  # cv2 drops singleton channels
        out = out[:, :, None]
    return out


def resize(item, target: tuple[int, int], mode: str | None = None):
    """Resize an Image2D (bilinear default) or BinaryMask (nearest only).

    Nearest-neighbor keeps the {0,1} label alphabet; bilinear stays within
    the input value range. Target dims must be positive.
    """
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise InvalidArgumentError(f"target dims must be >= 1, got {(th, tw)}")
    if isinstance(item, BinaryMask):
        if mode not in (None, "nearest"):
            raise InvalidArgumentError("masks are resized with nearest mode only (label smearing)")
        return BinaryMask(resize_array_nearest(item.labels, (th, tw)))
    if isinstance(item, Image2D):
        mode = mode or "bilinear"
        if mode == "bilinear":
            out = resize_array_bilinear(item.pixels, (th, tw))
        elif mode == "nearest":
            out = item.pixels[np.ix_(nearest_index_map(item.shape[0], th), nearest_index_map(item.shape[1], tw))]
        else:
            raise InvalidArgumentError(f"unknown resize mode {mode!r}")
        return Image2D(out, spacing=None, id=item.id)
    raise InvalidArgumentError(f"cannot resize object of type {type(item).__name__}")


def tight_bounding_box(mask: BinaryMask | np.ndarray) -> BoundingBox:
    """Tight box around all positive pixels; raises if the mask is empty."""
    labels = mask.labels if isinstance(mask, BinaryMask) else np.asarray(mask)
    rows, cols = np.nonzero(labels)
    if rows.size == 0:
        raise InvalidArgumentError("cannot bound an empty mask")
    return BoundingBox(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
