"""Turn a coarse probability mask into geometric prompts.

The foreground is thresholded, split into connected components, and each
component is scored by its mean foreground probability. The highest-scoring
component supplies the prompts: its tight bounding box, a centroid point
(snapped onto the component), a max-probability point, and optionally a
negative point at the most background-like pixel outside the component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import EmptyPredictionError, InvalidArgumentError
from .types import NEGATIVE, POSITIVE, BinaryMask, BoundingBox, PointPrompt, ProbabilityMask, tight_bounding_box

BBOX = "bbox"
CENT = "cent"
CONF = "conf"
NEG = "neg"
ALL_KINDS = (BBOX, CENT, CONF, NEG)

_STRUCTURES = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8),
    8: np.ones((3, 3), dtype=np.uint8),
}


@dataclass(frozen=True)
class ConnectedComponent:
    """A maximal set of connected foreground pixels with its mean confidence."""

    pixels: np.ndarray  # (N, 2) int rows of (row, col), in row-major scan order
    confidence: float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64)
        if px.ndim != 2 or px.shape[1] != 2 or px.shape[0] < 1:
            raise InvalidArgumentError("component pixels must be a non-empty (N, 2) array")
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidArgumentError("component confidence must lie in [0, 1]")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    @property
    def top_left(self) -> tuple[int, int]:
        i = np.lexsort((self.pixels[:, 1], self.pixels[:, 0]))[0]
        return int(self.pixels[i, 0]), int(self.pixels[i, 1])

    def contains(self, row: int, col: int) -> bool:
        return bool(((self.pixels[:, 0] == row) & (self.pixels[:, 1] == col)).any())

    def as_mask(self, shape: tuple[int, int]) -> BinaryMask:
        out = np.zeros(shape, dtype=np.uint8)
        out[self.pixels[:, 0], self.pixels[:, 1]] = 1
        return BinaryMask(out)


@dataclass(frozen=True)
class PromptBundle:
    """Prompts extracted from one selected component.

    ``point_kinds[i]`` names which rule produced ``points[i]`` (cent/conf/neg).
    """

    bbox: Optional[BoundingBox]
    points: tuple[PointPrompt, ...]
    point_kinds: tuple[str, ...]
    source_component: ConnectedComponent
    enabled: frozenset[str]

    def __post_init__(self):
        if len(self.points) != len(self.point_kinds):
            raise InvalidArgumentError("points and point_kinds must align")
        if not self.enabled or not self.enabled <= set(ALL_KINDS):
            raise InvalidArgumentError(f"enabled must be a non-empty subset of {ALL_KINDS}")
        if (self.bbox is not None) != (BBOX in self.enabled):
            raise InvalidArgumentError("bbox present iff the bbox kind is enabled")
        kinds_present = set(self.point_kinds)
        for kind in (CENT, CONF, NEG):
            if (kind in self.enabled) != (kind in kinds_present):
                raise InvalidArgumentError(f"point kind {kind} must be present iff enabled")
        for point, kind in zip(self.points, self.point_kinds):
            inside = self.source_component.contains(point.row, point.col)
            if kind in (CENT, CONF):
                if point.polarity != POSITIVE or not inside:
                    raise InvalidArgumentError(f"{kind} points must be positive and inside the component")
            elif kind == NEG:
                if point.polarity != NEGATIVE or inside:
                    raise InvalidArgumentError("neg points must be negative and outside the component")
            else:
                raise InvalidArgumentError(f"unknown point kind {kind!r}")

    def points_of(self, kind: str) -> list[PointPrompt]:
        return [p for p, k in zip(self.points, self.point_kinds) if k == kind]

    def to_json_dict(self) -> dict:
        return {
            "enabled": sorted(self.enabled),
            "bbox": list(self.bbox.as_tuple()) if self.bbox else None,
            "points": [
                {"row": p.row, "col": p.col, "polarity": p.polarity, "kind": k}
                for p, k in zip(self.points, self.point_kinds)
            ],
            "component": {
                "size": self.source_component.size,
                "confidence": self.source_component.confidence,
                "top_left": list(self.source_component.top_left),
            },
        }


def threshold_mask(pm: ProbabilityMask, tau: float) -> BinaryMask:
    """Label 1 where foreground probability >= tau (inclusive)."""
    if not 0.0 < tau < 1.0:
        raise InvalidArgumentError(f"threshold must lie strictly inside (0, 1), got {tau}")
    return BinaryMask((pm.foreground >= tau).astype(np.uint8))


def connected_components(mask: BinaryMask, connectivity: int = 8) -> list[np.ndarray]:
    """Pixel sets of maximal connected foreground regions, in first-pixel scan order."""
    if connectivity not in _STRUCTURES:
        raise InvalidArgumentError(f"connectivity must be 4 or 8, got {connectivity}")
    labeled, n = ndimage.label(mask.labels, structure=_STRUCTURES[connectivity])
    out = []
    for lab in range(1, n + 1):
        rows, cols = np.nonzero(labeled == lab)
        out.append(np.stack([rows, cols], axis=1))
    return out


def component_confidence(pixels: np.ndarray, pm: ProbabilityMask) -> float:
    """Mean foreground probability over the component's pixels."""
    pixels = np.asarray(pixels)
    if pixels.size == 0:
        raise InvalidArgumentError("component is empty")
    return float(pm.foreground[pixels[:, 0], pixels[:, 1]].mean())


def select_component(pixel_sets: Sequence[np.ndarray], pm: ProbabilityMask) -> ConnectedComponent:
    """Highest-confidence component; ties go to the larger one, then to the
    smaller (row, col) of the top-left pixel, so reruns are deterministic."""
    if not pixel_sets:
        raise EmptyPredictionError("no connected components to select from")
    comps = [ConnectedComponent(px, component_confidence(px, pm)) for px in pixel_sets]
    return max(comps, key=lambda c: (c.confidence, c.size, (-c.top_left[0], -c.top_left[1])))


def _centroid_point(comp: ConnectedComponent) -> PointPrompt:
    centroid = comp.pixels.mean(axis=0)
    d2 = ((comp.pixels - centroid) ** 2).sum(axis=1)
    best = int(np.argmin(d2))  # ties resolve to the first pixel in scan order
    return PointPrompt(int(comp.pixels[best, 0]), int(comp.pixels[best, 1]), POSITIVE)


def _top_k_points(values: np.ndarray, pixels: np.ndarray, k: int, polarity: str) -> list[PointPrompt]:
    scores = values[pixels[:, 0], pixels[:, 1]]
    order = np.argsort(-scores, kind="stable")[: min(k, len(scores))]
    return [PointPrompt(int(pixels[i, 0]), int(pixels[i, 1]), polarity) for i in order]


def extract_prompts(pm: ProbabilityMask, enabled: Sequence[str], cfg) -> PromptBundle:
    """Select the most confident component and derive the enabled prompts."""
    enabled_set = frozenset(enabled)
    if not enabled_set:
        raise InvalidArgumentError("at least one prompt kind must be enabled")
    if not enabled_set <= set(ALL_KINDS):
        raise InvalidArgumentError(f"unknown prompt kinds {sorted(enabled_set - set(ALL_KINDS))}")
    mask = threshold_mask(pm, cfg["prompts.threshold"])
    comps = connected_components(mask, cfg["prompts.connectivity"])
    if not comps:
        raise EmptyPredictionError("thresholded prediction has no foreground pixels")
    comp = select_component(comps, pm)
    k = cfg["prompts.points_per_kind"]

    bbox = tight_bounding_box(comp.as_mask(pm.shape)) if BBOX in enabled_set else None
    points: list[PointPrompt] = []
    kinds: list[str] = []
    if CENT in enabled_set:
        points.append(_centroid_point(comp))
        kinds.append(CENT)
    if CONF in enabled_set:
        for p in _top_k_points(pm.foreground, comp.pixels, k, POSITIVE):
            points.append(p)
            kinds.append(CONF)
    if NEG in enabled_set:
        exterior = np.ones(pm.shape, dtype=bool)
        exterior[comp.pixels[:, 0], comp.pixels[:, 1]] = False
        ext_pixels = np.argwhere(exterior)
        if ext_pixels.size == 0:
            raise InvalidArgumentError("cannot place a negative point: the component covers the whole frame")
        for p in _top_k_points(pm.background, ext_pixels, k, NEGATIVE):
            points.append(p)
            kinds.append(NEG)
    return PromptBundle(bbox, tuple(points), tuple(kinds), comp, enabled_set)
