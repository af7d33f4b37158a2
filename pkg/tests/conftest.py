"""Shared fixtures: small deterministic inputs and tiny configs.

Everything here is sized for CPU-second budgets — tests that need the full
default geometry build their own config on top of `tiny_cfg`.
"""

import numpy as np
import pytest

from protoprompt import BinaryMask, Episode, Image2D, StubEncoder, load_config
from protoprompt.synthetic import synth_episode, synth_sample


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_cfg():
    """Stub backends at a small working resolution."""
    return load_config(
        overrides=(
            "pipeline.image_size=112",
            "encoder.patch_stride=7",
            "protoseg.window=2",
            "protoseg.occupancy_threshold=0.9",
        )
    )


@pytest.fixture
def stub_encoder():
    return StubEncoder(feature_dim=32, patch_stride=7, seed=0)


@pytest.fixture
def disk_episode(rng) -> Episode:
    return synth_episode(rng, size=112, kind="disk")


@pytest.fixture
def rect_episode(rng) -> Episode:
    return synth_episode(rng, size=112, kind="rect")


def random_mask(rng, shape=(16, 16), density=0.4) -> BinaryMask:
    return BinaryMask((rng.random(shape) < density).astype(np.uint8))


def random_probability_pair(rng, shape=(12, 12)):
    """A valid 2xHxW probability stack (bg, fg)."""
    fg = rng.random(shape)
    return np.stack([1.0 - fg, fg])


@pytest.fixture
def textured_image(rng) -> Image2D:
    img, _ = synth_sample(rng, size=96, kind="disk")
    return img
