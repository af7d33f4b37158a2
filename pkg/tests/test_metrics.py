import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp

from protoprompt.errors import InvalidArgumentError
from protoprompt.metrics import dice, dice_arrays, iou, iou_arrays
from protoprompt.types import BinaryMask


def loop_dice(a, b):
    inter = tp = fp = fn = 0
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        if x and y:
            tp += 1
        elif x and not y:
            fp += 1
        elif y and not x:
            fn += 1
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def test_dice_matches_loop_oracle(rng):
    for _ in range(50):
        a = (rng.random((9, 11)) < 0.4).astype(np.uint8)
        b = (rng.random((9, 11)) < 0.4).astype(np.uint8)
        assert abs(dice_arrays(a, b) - loop_dice(a, b)) < 1e-12


def test_dice_iou_identity(rng):
    """dice = 2*iou / (1 + iou), a hard algebraic link between the metrics."""
    for _ in range(200):
        a = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        b = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        d, i = dice_arrays(a, b), iou_arrays(a, b)
        assert abs(d - 2 * i / (1 + i)) < 1e-9


def test_both_empty_is_perfect():
    z = np.zeros((4, 4), dtype=np.uint8)
    assert dice_arrays(z, z) == 1.0
    assert iou_arrays(z, z) == 1.0


def test_disjoint_is_zero():
    a = np.zeros((4, 4), dtype=np.uint8)
    a[0, 0] = 1
    b = np.zeros((4, 4), dtype=np.uint8)
    b[3, 3] = 1
    assert dice_arrays(a, b) == 0.0
    assert iou_arrays(a, b) == 0.0


def test_identical_is_one(rng):
    a = (rng.random((6, 6)) < 0.5).astype(np.uint8)
    assert dice_arrays(a, a) == 1.0
    assert iou_arrays(a, a) == 1.0


def test_shape_mismatch_rejected():
    with pytest.raises(InvalidArgumentError):
        dice_arrays(np.zeros((2, 2), dtype=np.uint8), np.zeros((3, 3), dtype=np.uint8))


def test_volume_stacks_supported(rng):
    a = (rng.random((3, 5, 5)) < 0.5).astype(np.uint8)
    b = (rng.random((3, 5, 5)) < 0.5).astype(np.uint8)
    assert abs(dice_arrays(a, b) - loop_dice(a, b)) < 1e-12


def test_mask_wrappers(rng):
    a = BinaryMask((rng.random((7, 7)) < 0.5).astype(np.uint8))
    b = BinaryMask((rng.random((7, 7)) < 0.5).astype(np.uint8))
    assert dice(a, b) == dice_arrays(a.labels, b.labels)
    assert iou(a, b) == iou_arrays(a.labels, b.labels)


@given(
    a=hnp.arrays(np.uint8, (6, 6), elements=hnp.from_dtype(np.dtype(np.uint8), min_value=0, max_value=1)),
    b=hnp.arrays(np.uint8, (6, 6), elements=hnp.from_dtype(np.dtype(np.uint8), min_value=0, max_value=1)),
)
@settings(max_examples=150, deadline=None)
def test_metric_bounds_and_symmetry(a, b):
    d = dice_arrays(a, b)
    i = iou_arrays(a, b)
    assert 0.0 <= i <= d <= 1.0
    assert dice_arrays(b, a) == d
    assert iou_arrays(b, a) == i
