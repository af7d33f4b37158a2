"""Volumetric evaluation protocol.

A query scan's in-class slice span is split into C contiguous sections of
near-equal size; each section is guided one-shot by the middle slice of the
corresponding section of a *different* support scan. Scores are recorded per
slice, and the volume-level Dice/IoU are computed over the stacked in-span
slices (not averaged per slice) — both aggregations stay recomputable from
the per-slice records.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ClassNotFoundError, InvalidArgumentError
from .metrics import dice_arrays, iou_arrays
from .types import BinaryMask, Episode, Image2D

SlicePair = tuple[Image2D, BinaryMask]


@dataclass(frozen=True)
class SliceRange:
    """Inclusive slice interval with its support reference index."""

    start: int
    stop: int
    middle: int

    def __post_init__(self):
        if not self.start <= self.middle <= self.stop:
            raise InvalidArgumentError(f"middle {self.middle} outside range [{self.start}, {self.stop}]")

    def indices(self) -> range:
        return range(self.start, self.stop + 1)


@dataclass(frozen=True)
class VolumePair:
    support_volume: tuple[SlicePair, ...]
    query_volume: tuple[SlicePair, ...]
    class_id: str
    support_scan_id: str = ""
    query_scan_id: str = ""

    def __post_init__(self):
        if not self.support_volume or not self.query_volume:
            raise InvalidArgumentError("support and query volumes must be non-empty")
        if self.support_scan_id and self.support_scan_id == self.query_scan_id:
            raise InvalidArgumentError("support and query must come from different scans")
        object.__setattr__(self, "support_volume", tuple(self.support_volume))
        object.__setattr__(self, "query_volume", tuple(self.query_volume))


@dataclass(frozen=True)
class SliceScore:
    index: int
    dice: float
    iou: float
    truth_pixels: int
    predicted_pixels: int


@dataclass(frozen=True)
class VolumeResult:
    class_id: str
    slice_scores: tuple[SliceScore, ...]
    volume_dice: float
    volume_iou: float


def _class_span(volume: Sequence[SlicePair], class_id: str) -> tuple[int, int]:
    present = [i for i, (_, mask) in enumerate(volume) if mask.any()]
    if not present:
        raise ClassNotFoundError(f"class {class_id!r} absent from every slice")
    return present[0], present[-1]


def chunk_sections(volume: Sequence[SlicePair], class_id: str, C: int) -> list[SliceRange]:
    """Split the in-class span into <= C contiguous near-equal sections.

    Sizes follow largest-remainder order (bigger sections first); the
    reference index of each section is its lower-median slice. Sections that
    would be empty (span shorter than C) are dropped.
    """
    if C < 1:
        raise InvalidArgumentError(f"C must be >= 1, got {C}")
    first, last = _class_span(volume, class_id)
    span = last - first + 1
    base, rem = divmod(span, C)
    out = []
    start = first
    for i in range(C):
        size = base + (1 if i < rem else 0)
        if size == 0:
            continue
        stop = start + size - 1
        out.append(SliceRange(start, stop, middle=start + (size - 1) // 2))
        start = stop + 1
    return out


def evaluate_volume(
    pipeline: Callable[[Episode], BinaryMask],
    vp: VolumePair,
    C: int,
    skip_empty_pairs: bool = False,
) -> VolumeResult:
    """Segment every in-span query slice one-shot from its section's support reference."""
    query_ranges = chunk_sections(vp.query_volume, vp.class_id, C)
    support_ranges = chunk_sections(vp.support_volume, vp.class_id, C)

    scores: list[SliceScore] = []
    pred_stack: list[np.ndarray] = []
    truth_stack: list[np.ndarray] = []
    for i, qrange in enumerate(query_ranges):
        # a shorter support span can collapse sections; clamp to the last one
        sref = support_ranges[min(i, len(support_ranges) - 1)]
        support_img, support_mask = vp.support_volume[sref.middle]
        for qi in qrange.indices():
            query_img, truth = vp.query_volume[qi]
            episode = Episode(support_img, support_mask, query_img, truth, class_id=vp.class_id)
            pred = pipeline(episode)
            if pred.shape != truth.shape:
                raise InvalidArgumentError(f"pipeline returned {pred.shape} for truth {truth.shape}")
            if skip_empty_pairs and not truth.any() and not pred.any():
                continue
            scores.append(
                SliceScore(
                    index=qi,
                    dice=dice_arrays(pred.labels, truth.labels),
                    iou=iou_arrays(pred.labels, truth.labels),
                    truth_pixels=truth.count(),
                    predicted_pixels=pred.count(),
                )
            )
            pred_stack.append(pred.labels)
            truth_stack.append(truth.labels)
    if pred_stack:
        preds = np.stack(pred_stack)
        truths = np.stack(truth_stack)
        vol_dice, vol_iou = dice_arrays(preds, truths), iou_arrays(preds, truths)
    else:
        vol_dice = vol_iou = 1.0  # everything skipped as correctly empty
    return VolumeResult(vp.class_id, tuple(scores), vol_dice, vol_iou)
