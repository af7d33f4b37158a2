"""Graph-based superpixel pseudo-labels for self-supervised episodes.

Segments come from the Felzenszwalb-Huttenlocher algorithm; defaults
(scale=100, sigma=0.8, min_size=400) are tuned to yield organ-scale regions
on 256x256 slices. Maps are cached on disk keyed by the image content hash
and the parameter triple, since they never change across training runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from skimage.segmentation import felzenszwalb

from .errors import InvalidArgumentError
from .types import BinaryMask, Image2D


@dataclass(frozen=True)
class SuperpixelLabelMap:
    """H x W segment indices in [0, num_segments); every segment non-empty."""

    labels: np.ndarray
    num_segments: int

    def __post_init__(self):
        lb = np.asarray(self.labels, dtype=np.int64)
        if lb.ndim != 2:
            raise InvalidArgumentError("label map must be 2-D")
        present = np.unique(lb)
        if self.num_segments < 1 or present[0] < 0 or present[-1] >= self.num_segments:
            raise InvalidArgumentError("labels must lie in [0, num_segments)")
        if len(present) != self.num_segments:
            raise InvalidArgumentError("every segment index must be non-empty")
        lb = lb.copy()
        lb.setflags(write=False)
        object.__setattr__(self, "labels", lb)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def segment_mask(self, index: int) -> BinaryMask:
        if not 0 <= index < self.num_segments:
            raise InvalidArgumentError(f"segment index {index} out of range [0, {self.num_segments})")
        return BinaryMask((self.labels == index).astype(np.uint8))


@dataclass(frozen=True)
class FelzParams:
    scale: float = 100.0
    sigma: float = 0.8
    min_size: int = 400

    def key(self) -> str:
        return f"fh-scale{self.scale:g}-sigma{self.sigma:g}-min{self.min_size}"


def generate_superpixels(img: Image2D, params: FelzParams = FelzParams()) -> SuperpixelLabelMap:
    """Deterministic Felzenszwalb segmentation; labels relabeled to 0..k-1."""
    px = img.pixels
    if px.shape[2] == 1:
        raw = felzenszwalb(px[:, :, 0], scale=params.scale, sigma=params.sigma, min_size=params.min_size)
    else:
        raw = felzenszwalb(px, scale=params.scale, sigma=params.sigma, min_size=params.min_size, channel_axis=2)
    _, labels = np.unique(raw, return_inverse=True)
    labels = labels.reshape(raw.shape)
    return SuperpixelLabelMap(labels, int(labels.max()) + 1)


def content_hash(img: Image2D) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(img.pixels).tobytes())
    h.update(str(img.pixels.shape).encode())
    return h.hexdigest()[:24]


def cached_superpixels(
    img: Image2D, params: FelzParams = FelzParams(), cache_dir: Optional[str | Path] = None
) -> SuperpixelLabelMap:
    """Load from the (content hash, params) cache when possible, else compute and store."""
    if cache_dir is None or str(cache_dir) == "":
        return generate_superpixels(img, params)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{content_hash(img)}-{params.key()}.npz"
    if path.is_file():
        with np.load(path) as data:
            return SuperpixelLabelMap(data["labels"], int(data["num_segments"]))
    spmap = generate_superpixels(img, params)
    tmp = path.with_suffix(".tmp.npz")
    np.savez_compressed(tmp, labels=spmap.labels, num_segments=spmap.num_segments)
    tmp.replace(path)
    return spmap
