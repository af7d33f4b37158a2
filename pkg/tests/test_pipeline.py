import numpy as np
import pytest

from protoprompt.errors import InvalidArgumentError
from protoprompt.metrics import dice
from protoprompt.pipeline import build_pipeline, prepare_coarse, refine_from_coarse, run_one_shot
from protoprompt.segmenters import StubSegmenter
from protoprompt.synthetic import synth_episode
from protoprompt.types import BinaryMask, Episode, Image2D, ProbabilityMask


class ExplodingSegmenter:
    """Fails the test if refinement runs when it should have short-circuited."""

    name = "exploding"
    accepts = frozenset({"bbox", "cent", "conf", "neg"})

    def segment(self, img, prompts):
        raise AssertionError("segmenter must not run on an empty coarse prediction")


def test_run_one_shot_recovers_synthetic_target(stub_encoder, tiny_cfg, rng):
    ep = synth_episode(rng, size=112, kind="rect")
    result = run_one_shot(ep, stub_encoder, StubSegmenter("box-fill"), tiny_cfg)
    assert result.mask.shape == ep.query.shape
    assert not result.empty
    assert result.bundle is not None
    assert dice(result.mask, ep.query_truth) > 0.7
    assert set(result.timings) == {"coarse_s", "prompts_s", "refine_s"}


def test_native_resolution_restored(stub_encoder, tiny_cfg, rng):
    """Working size is square 112 but outputs come back at the query's own shape."""
    ep0 = synth_episode(rng, size=112, kind="disk")
    query = Image2D(np.asarray(ep0.query.pixels)[: 90, : 70, 0])
    truth = BinaryMask(np.asarray(ep0.query_truth.labels)[: 90, : 70])
    ep = Episode(ep0.support_image, ep0.support_mask, query, truth)
    result = run_one_shot(ep, stub_encoder, StubSegmenter("box-fill"), tiny_cfg)
    assert result.mask.shape == (90, 70)


def test_empty_coarse_short_circuits(tiny_cfg):
    """All-background coarse probabilities never reach the segmenter."""

    class TwoToneEncoder:
        # one-hot feature per 7px cell keyed on local intensity, so the
        # all-dark query matches the support background exactly and the
        # foreground loses by the full +/- alpha logit margin everywhere.
        name = "stub-two-tone"
        feature_dim = 4
        patch_stride = 7

        def encode(self, img):
            from protoprompt.types import FeatureMap

            g = np.asarray(img.gray())
            gh, gw = -(-g.shape[0] // 7), -(-g.shape[1] // 7)
            feats = np.zeros((4, gh, gw))
            for i in range(gh):
                for j in range(gw):
                    cell = g[i * 7 : (i + 1) * 7, j * 7 : (j + 1) * 7]
                    feats[0 if float(cell.mean()) < 0.5 else 1, i, j] = 1.0
            return FeatureMap(feats)

    # support: dark canvas with a bright square exactly under the mask
    # (stride-aligned, 28 = 4*7 and 77 = 11*7); query: all dark so no cell
    # resembles the foreground prototype.
    mask = np.zeros((112, 112), dtype=np.uint8)
    mask[28:77, 28:77] = 1
    support = Image2D(mask.astype(float))
    query = Image2D(np.zeros((112, 112)))
    ep = Episode(support, BinaryMask(mask), query)
    coarse = prepare_coarse(ep, TwoToneEncoder(), tiny_cfg)
    assert coarse.probs.foreground.max() < tiny_cfg["prompts.threshold"]
    result = refine_from_coarse(coarse, ExplodingSegmenter(), tiny_cfg)
    assert result.empty
    assert result.bundle is None
    assert result.score == 0.0
    assert not result.mask.any()
    assert result.mask.shape == ep.query.shape


def test_coarse_reuse_across_prompt_combos(stub_encoder, tiny_cfg, rng):
    """One coarse pass refined twice gives the same masks as two full runs."""
    ep = synth_episode(rng, size=112, kind="disk")
    coarse = prepare_coarse(ep, stub_encoder, tiny_cfg)
    seg = StubSegmenter("box-fill")
    via_reuse = [
        refine_from_coarse(coarse, seg, tiny_cfg, enabled=combo).mask.labels
        for combo in (("bbox",), ("cent",))
    ]
    via_full = [
        run_one_shot(ep, stub_encoder, seg, tiny_cfg, enabled=combo).mask.labels
        for combo in (("bbox",), ("cent",))
    ]
    for a, b in zip(via_reuse, via_full):
        assert np.array_equal(a, b)


def test_enabled_override_controls_bundle(stub_encoder, tiny_cfg, rng):
    ep = synth_episode(rng, size=112, kind="rect")
    result = run_one_shot(ep, stub_encoder, StubSegmenter("box-fill"), tiny_cfg, enabled=("bbox",))
    assert result.bundle.enabled == frozenset({"bbox"})
    assert result.bundle.points == ()


def test_build_pipeline_oracle_and_empty(tiny_cfg, rng):
    ep = synth_episode(rng, size=64, kind="disk")
    oracle = build_pipeline(tiny_cfg, "oracle-truth")
    assert np.array_equal(oracle(ep).labels, ep.query_truth.labels)

    empty = build_pipeline(tiny_cfg, "empty")
    assert not empty(ep).any()

    with pytest.raises(InvalidArgumentError):
        build_pipeline(tiny_cfg, "magic")


def test_oracle_pipeline_requires_truth(tiny_cfg, rng):
    ep0 = synth_episode(rng, size=64, kind="disk")
    ep = Episode(ep0.support_image, ep0.support_mask, ep0.query)  # no truth
    with pytest.raises(InvalidArgumentError):
        build_pipeline(tiny_cfg, "oracle-truth")(ep)


def test_one_shot_pipeline_closure(tiny_cfg, rng):
    ep = synth_episode(rng, size=112, kind="disk")
    run = build_pipeline(tiny_cfg, "one-shot")
    mask = run(ep)
    assert isinstance(mask, BinaryMask)
    assert mask.shape == ep.query.shape
