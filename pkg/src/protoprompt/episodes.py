"""Self-supervised training episodes from superpixel pseudo-labels.

Each episode picks one superpixel segment of an image as a pseudo-class: the
untouched image + segment indicator form the support, and an intensity- then
geometrically-transformed copy forms the query, with the segment indicator
carried through the same geometric transform as the query's ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .errors import InvalidArgumentError
from .superpixels import SuperpixelLabelMap
from .types import BinaryMask, Image2D


@dataclass(frozen=True)
class GeometricTransform:
    """An invertible spatial transform applied identically to image and label.

    ``affine`` uses a 2x3 matrix in (x, y) convention; ``rot90``/``flip``/
    ``identity`` are exact grid operations kept for equivariance tests.
    """

    kind: str  # identity | rot90 | flip | affine
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("identity", "rot90", "flip", "affine"):
            raise InvalidArgumentError(f"unknown geometric transform {self.kind!r}")
        if (self.kind == "affine") != (self.matrix is not None):
            raise InvalidArgumentError("affine transforms need a 2x3 matrix; exact ones must not have one")
        if self.matrix is not None:
            m = np.asarray(self.matrix, dtype=np.float64)
            if m.shape != (2, 3):
                raise InvalidArgumentError("affine matrix must be 2x3")
            m = m.copy()
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)

    def apply(self, arr: np.ndarray, is_label: bool) -> np.ndarray:
        if self.kind == "identity":
            return arr.copy()
        if self.kind == "rot90":
            return np.ascontiguousarray(np.rot90(arr))
        if self.kind == "flip":
            return np.ascontiguousarray(np.fliplr(arr))
        interp = cv2.INTER_NEAREST if is_label else cv2.INTER_LINEAR
        h, w = arr.shape[:2]
        out = cv2.warpAffine(
            arr.astype(np.float64), self.matrix, (w, h), flags=interp, borderMode=cv2.BORDER_CONSTANT, borderValue=0.0
        )
        if arr.ndim == 3 and out.ndim == 2:
            out = out[:, :, None]
        return out

    def inverse(self) -> "GeometricTransform":
        if self.kind in ("identity", "flip"):
            return self
        if self.kind == "rot90":
            # inverse of one quarter-turn = three quarter-turns; expressed as
            # an exact callable below via apply_inverse instead
            raise InvalidArgumentError("use apply_inverse for exact transforms")
        return GeometricTransform("affine", cv2.invertAffineTransform(self.matrix))

    def apply_inverse(self, arr: np.ndarray, is_label: bool) -> np.ndarray:
        if self.kind == "identity":
            return arr.copy()
        if self.kind == "rot90":
            return np.ascontiguousarray(np.rot90(arr, k=-1))
        if self.kind == "flip":
            return np.ascontiguousarray(np.fliplr(arr))
        return self.inverse().apply(arr, is_label)


@dataclass(frozen=True)
class EpisodeParams:
    gamma_range: tuple[float, float] = (0.7, 1.3)
    noise_sigma: float = 0.02
    rotation_max_deg: float = 20.0
    scale_range: tuple[float, float] = (0.9, 1.1)
    translate_max: float = 0.1

    @classmethod
    def from_config(cls, cfg) -> "EpisodeParams":
        return cls(
            gamma_range=tuple(cfg["train.gamma_range"]),
            noise_sigma=cfg["train.noise_sigma"],
            rotation_max_deg=cfg["train.rotation_max_deg"],
            scale_range=tuple(cfg["train.scale_range"]),
            translate_max=cfg["train.translate_max"],
        )


@dataclass(frozen=True)
class TrainEpisode:
    support_image: Image2D
    support_mask: BinaryMask
    query: Image2D
    query_truth: BinaryMask
    segment_index: int
    transform: GeometricTransform

    def __post_init__(self):
        if self.support_image.shape != self.support_mask.shape:
            raise InvalidArgumentError("support image/mask shapes disagree")
        if self.query.shape != self.query_truth.shape:
            raise InvalidArgumentError("query image/truth shapes disagree")

    def dump(self, path: str | Path) -> Path:
        """Persist the episode arrays for post-mortem diagnosis."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez_compressed(
            path,
            support_image=self.support_image.pixels,
            support_mask=self.support_mask.labels,
            query=self.query.pixels,
            query_truth=self.query_truth.labels,
            segment_index=self.segment_index,
            transform_kind=self.transform.kind,
            transform_matrix=self.transform.matrix if self.transform.matrix is not None else np.zeros((2, 3)),
        )
        return path


def intensity_transform(px: np.ndarray, rng: np.random.Generator, params: EpisodeParams) -> np.ndarray:
    """Gamma jitter + additive Gaussian noise, clipped back to [0, 1]."""
    gamma = rng.uniform(*params.gamma_range)
    out = np.clip(px, 0.0, 1.0) ** gamma
    out = out + rng.normal(0.0, params.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def sample_affine(shape: tuple[int, int], rng: np.random.Generator, params: EpisodeParams) -> GeometricTransform:
    h, w = shape
    angle = rng.uniform(-params.rotation_max_deg, params.rotation_max_deg)
    scale = rng.uniform(*params.scale_range)
    tx = rng.uniform(-params.translate_max, params.translate_max) * w
    ty = rng.uniform(-params.translate_max, params.translate_max) * h
    matrix = cv2.getRotationMatrix2D((w / 2.0, h / 2.0), angle, scale)
    matrix[0, 2] += tx
    matrix[1, 2] += ty
    return GeometricTransform("affine", matrix)


def build_episode(
    img: Image2D,
    spmap: SuperpixelLabelMap,
    rng: np.random.Generator,
    params: EpisodeParams = EpisodeParams(),
    geometric: Optional[GeometricTransform] = None,
    identity_intensity: bool = False,
) -> TrainEpisode:
    """Sample a segment uniformly and assemble the (support, query) pair.

    ``geometric`` overrides the sampled affine with an exact transform (tests
    use rot90/flip/identity); ``identity_intensity`` skips the photometric
    jitter.
    """
    if img.shape != spmap.shape:
        raise InvalidArgumentError(f"image {img.shape} and superpixel map {spmap.shape} disagree")
    segment = int(rng.integers(spmap.num_segments))
    support_mask = spmap.segment_mask(segment)
    jittered = img.pixels if identity_intensity else intensity_transform(img.pixels, rng, params)
    t_g = geometric if geometric is not None else sample_affine(img.shape, rng, params)
    query_px = t_g.apply(jittered, is_label=False)
    truth = t_g.apply(support_mask.labels.astype(np.float64), is_label=True)
    return TrainEpisode(
        support_image=img,
        support_mask=support_mask,
        query=Image2D(query_px, id=f"{img.id}#seg{segment}"),
        query_truth=BinaryMask((truth > 0.5).astype(np.uint8)),
        segment_index=segment,
        transform=t_g,
    )
