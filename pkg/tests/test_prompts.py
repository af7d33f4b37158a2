"""Prompt extraction against flood-fill and exhaustive-enumeration oracles."""

import numpy as np
import pytest

from protoprompt.config import RunConfig
from protoprompt.errors import EmptyPredictionError, InvalidArgumentError
from protoprompt.prompts import (
    ALL_KINDS,
    ConnectedComponent,
    PromptBundle,
    component_confidence,
    connected_components,
    extract_prompts,
    select_component,
    threshold_mask,
)
from protoprompt.types import NEGATIVE, POSITIVE, BinaryMask, PointPrompt, ProbabilityMask


def pm_from_fg(fg: np.ndarray) -> ProbabilityMask:
    return ProbabilityMask(np.stack([1.0 - fg, fg]))


def flood_fill_components(mask: np.ndarray, connectivity: int):
    """Reference BFS labeling, independent of scipy."""
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            queue, pixels = [(r, c)], []
            seen[r, c] = True
            while queue:
                cr, cc = queue.pop()
                pixels.append((cr, cc))
                for dr, dc in steps:
                    nr, nc = cr + dr, cc + dc
                    if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and not seen[nr, nc]:
                        seen[nr, nc] = True
                        queue.append((nr, nc))
            comps.append(frozenset(pixels))
    return comps


@pytest.mark.parametrize("connectivity", [4, 8])
def test_connected_components_match_flood_fill(rng, connectivity):
    for _ in range(40):
        mask = (rng.random((12, 14)) < 0.35).astype(np.uint8)
        got = connected_components(BinaryMask(mask), connectivity)
        got_sets = {frozenset(map(tuple, px)) for px in got}
        assert got_sets == set(flood_fill_components(mask, connectivity))


def test_diagonal_pixels_split_under_4_connectivity():
    mask = BinaryMask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
    assert len(connected_components(mask, 4)) == 2
    assert len(connected_components(mask, 8)) == 1


def test_component_pixels_are_scan_ordered(rng):
    mask = (rng.random((10, 10)) < 0.4).astype(np.uint8)
    for px in connected_components(BinaryMask(mask), 8):
        flat = px[:, 0] * 10 + px[:, 1]
        assert (np.diff(flat) > 0).all()


def test_threshold_is_inclusive():
    fg = np.array([[0.5, 0.4999], [0.5001, 0.0]])
    got = threshold_mask(pm_from_fg(fg), 0.5)
    assert got.labels.tolist() == [[1, 0], [1, 0]]


def test_threshold_range_validated(rng):
    pm = pm_from_fg(rng.random((3, 3)))
    for tau in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(InvalidArgumentError):
            threshold_mask(pm, tau)


def test_component_confidence_is_mean_probability(rng):
    fg = rng.random((8, 8))
    pm = pm_from_fg(fg)
    pixels = np.array([[0, 0], [3, 4], [7, 7]])
    expect = (fg[0, 0] + fg[3, 4] + fg[7, 7]) / 3
    assert abs(component_confidence(pixels, pm) - expect) < 1e-12


def test_select_component_exhaustive(rng):
    """Argmax over (confidence, size, top-left) agrees with direct enumeration."""
    for _ in range(60):
        fg = rng.random((10, 12))
        pm = pm_from_fg(fg)
        mask = (fg >= 0.5).astype(np.uint8)
        sets = connected_components(BinaryMask(mask), 8)
        if not sets:
            continue
        best = select_component(sets, pm)
        scored = [
            ConnectedComponent(px, component_confidence(px, pm)) for px in sets
        ]
        winner = max(scored, key=lambda c: (c.confidence, c.size, (-c.top_left[0], -c.top_left[1])))
        assert np.array_equal(best.pixels, winner.pixels)
        assert all(best.confidence >= c.confidence - 1e-12 for c in scored)


def test_select_component_tie_breaks_on_size():
    fg = np.zeros((5, 5))
    fg[0, 0] = 0.9
    fg[2, 0], fg[2, 1] = 0.9, 0.9  # same confidence, bigger component
    pm = pm_from_fg(fg)
    sets = connected_components(BinaryMask((fg > 0).astype(np.uint8)), 8)
    assert select_component(sets, pm).size == 2


def test_select_component_final_tie_break_is_scan_order():
    fg = np.zeros((5, 5))
    fg[4, 4] = 0.9  # later in scan order
    fg[1, 1] = 0.9
    pm = pm_from_fg(fg)
    sets = connected_components(BinaryMask((fg > 0).astype(np.uint8)), 8)
    assert select_component(sets, pm).top_left == (1, 1)


def test_select_component_empty_raises(rng):
    with pytest.raises(EmptyPredictionError):
        select_component([], pm_from_fg(rng.random((3, 3))))


# --- full extraction ----------------------------------------------------------


def cfg_with(**kw):
    base = {"prompts.threshold": 0.5, "prompts.connectivity": 8, "prompts.points_per_kind": 1}
    base.update(kw)
    return RunConfig(base)


def blob_pm(rng, shape=(16, 16)):
    """A probability mask with one clear foreground blob plus noise floor."""
    fg = rng.random(shape) * 0.3
    fg[4:9, 5:11] = 0.6 + rng.random((5, 6)) * 0.4
    return pm_from_fg(fg)


def test_extract_bbox_is_tight(rng):
    pm = blob_pm(rng)
    bundle = extract_prompts(pm, ["bbox"], cfg_with())
    comp_mask = bundle.source_component.as_mask(pm.shape).labels
    rows, cols = np.nonzero(comp_mask)
    assert bundle.bbox.as_tuple() == (rows.min(), cols.min(), rows.max(), cols.max())
    assert bundle.points == ()


def test_extract_conf_point_is_argmax(rng):
    pm = blob_pm(rng)
    bundle = extract_prompts(pm, ["conf"], cfg_with())
    (point,) = bundle.points_of("conf")
    comp = bundle.source_component
    best = pm.foreground[comp.pixels[:, 0], comp.pixels[:, 1]].max()
    assert pm.foreground[point.row, point.col] == best
    assert point.polarity == POSITIVE


def test_extract_cent_point_snaps_to_component(rng):
    pm = blob_pm(rng)
    bundle = extract_prompts(pm, ["cent"], cfg_with())
    (point,) = bundle.points_of("cent")
    comp = bundle.source_component
    assert comp.contains(point.row, point.col)
    centroid = comp.pixels.mean(axis=0)
    d2 = ((comp.pixels - centroid) ** 2).sum(axis=1)
    assert (point.row - centroid[0]) ** 2 + (point.col - centroid[1]) ** 2 <= d2.min() + 1e-9


def test_cent_snapping_on_a_ring():
    """A hollow square's centroid is off-component; the point must still land on it."""
    fg = np.full((9, 9), 0.1)
    fg[2, 2:7] = 0.9
    fg[6, 2:7] = 0.9
    fg[2:7, 2] = 0.9
    fg[2:7, 6] = 0.9
    bundle = extract_prompts(pm_from_fg(fg), ["cent"], cfg_with())
    (point,) = bundle.points_of("cent")
    assert bundle.source_component.contains(point.row, point.col)


def test_extract_neg_point_outside_most_background(rng):
    pm = blob_pm(rng)
    bundle = extract_prompts(pm, ["neg", "bbox"], cfg_with())
    (neg,) = bundle.points_of("neg")
    comp = bundle.source_component
    assert not comp.contains(neg.row, neg.col)
    assert neg.polarity == NEGATIVE
    exterior = np.ones(pm.shape, dtype=bool)
    exterior[comp.pixels[:, 0], comp.pixels[:, 1]] = False
    assert pm.background[neg.row, neg.col] == pm.background[exterior].max()


def test_neg_impossible_when_component_fills_frame():
    pm = pm_from_fg(np.full((4, 4), 0.9))
    with pytest.raises(InvalidArgumentError, match="whole frame"):
        extract_prompts(pm, ["neg"], cfg_with())


def test_points_per_kind_multiplies_conf_and_neg(rng):
    pm = blob_pm(rng)
    bundle = extract_prompts(pm, ["cent", "conf", "neg"], cfg_with(**{"prompts.points_per_kind": 3}))
    assert len(bundle.points_of("cent")) == 1  # cent stays single
    assert len(bundle.points_of("conf")) == 3
    assert len(bundle.points_of("neg")) == 3
    confs = [pm.foreground[p.row, p.col] for p in bundle.points_of("conf")]
    assert confs == sorted(confs, reverse=True)


def test_extract_requires_some_foreground():
    pm = pm_from_fg(np.full((6, 6), 0.05))
    with pytest.raises(EmptyPredictionError):
        extract_prompts(pm, ["bbox"], cfg_with())


def test_extract_rejects_unknown_kind(rng):
    with pytest.raises(InvalidArgumentError):
        extract_prompts(blob_pm(rng), ["bbox", "blob"], cfg_with())
    with pytest.raises(InvalidArgumentError):
        extract_prompts(blob_pm(rng), [], cfg_with())


def test_extraction_is_deterministic(rng):
    pm = blob_pm(rng)
    a = extract_prompts(pm, ALL_KINDS, cfg_with())
    b = extract_prompts(pm, ALL_KINDS, cfg_with())
    assert a.to_json_dict() == b.to_json_dict()


# --- bundle invariants ---------------------------------------------------------


def _component():
    return ConnectedComponent(np.array([[1, 1], [1, 2]]), 0.8)


def test_bundle_rejects_misaligned_points():
    with pytest.raises(InvalidArgumentError):
        PromptBundle(None, (PointPrompt(1, 1),), (), _component(), frozenset({"cent"}))


def test_bundle_rejects_bbox_mismatch():
    with pytest.raises(InvalidArgumentError):
        PromptBundle(None, (), (), _component(), frozenset({"bbox"}))


def test_bundle_rejects_outside_cent():
    with pytest.raises(InvalidArgumentError):
        PromptBundle(
            None, (PointPrompt(0, 0),), ("cent",), _component(), frozenset({"cent"})
        )


def test_bundle_rejects_positive_neg_point():
    with pytest.raises(InvalidArgumentError):
        PromptBundle(
            None, (PointPrompt(0, 0, POSITIVE),), ("neg",), _component(), frozenset({"neg"})
        )


def test_bundle_json_dict_shape(rng):
    pm = blob_pm(rng)
    payload = extract_prompts(pm, ALL_KINDS, cfg_with()).to_json_dict()
    assert payload["enabled"] == sorted(ALL_KINDS)
    assert len(payload["bbox"]) == 4
    assert {p["kind"] for p in payload["points"]} == {"cent", "conf", "neg"}
    assert set(payload["component"]) == {"size", "confidence", "top_left"}
