"""Overlap metrics. Both-empty pairs score 1.0 — a correctly empty
prediction is a success, not a divide-by-zero."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .types import BinaryMask


def _counts(a: np.ndarray, b: np.ndarray) -> tuple[int, int, int]:
    if a.shape != b.shape:
        raise InvalidArgumentError(f"mask shapes disagree: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    return int((a & b).sum()), int(a.sum()), int(b.sum())


def dice_arrays(a: np.ndarray, b: np.ndarray) -> float:
    inter, na, nb = _counts(a, b)
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def iou_arrays(a: np.ndarray, b: np.ndarray) -> float:
    inter, na, nb = _counts(a, b)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return inter / union


def dice(a: BinaryMask, b: BinaryMask) -> float:
    return dice_arrays(a.labels, b.labels)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    return iou_arrays(a.labels, b.labels)
