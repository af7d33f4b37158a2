import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoprompt.config import RunConfig
from protoprompt.encoders import (
    StubEncoder,
    create_encoder,
    encode,
    feature_grid_shape,
    pad_to_multiple,
)
from protoprompt.errors import ProtoPromptError
from protoprompt.types import FeatureMap, Image2D
from protoprompt.vit import TinyViTEncoder


@given(h=st.integers(1, 60), w=st.integers(1, 60), stride=st.integers(1, 16))
@settings(max_examples=150, deadline=None)
def test_grid_shape_is_ceil_division(h, w, stride):
    gh, gw = feature_grid_shape((h, w), stride)
    assert gh == math.ceil(h / stride)
    assert gw == math.ceil(w / stride)


@given(h=st.integers(1, 40), w=st.integers(1, 40), stride=st.integers(1, 12))
@settings(max_examples=100, deadline=None)
def test_pad_to_multiple_dims_and_prefix(h, w, stride):
    arr = np.arange(h * w, dtype=np.float64).reshape(h, w)
    out = pad_to_multiple(arr, stride)
    assert out.shape[0] % stride == 0 and out.shape[1] % stride == 0
    assert out.shape[0] - h < stride and out.shape[1] - w < stride
    # the original content is untouched in the top-left corner
    assert np.array_equal(out[:h, :w], arr)


def test_stub_encode_obeys_grid_contract():
    enc = StubEncoder(feature_dim=16, patch_stride=5, seed=0)
    for shape in [(10, 10), (11, 13), (5, 23), (1, 1), (7, 5)]:
        img = Image2D(np.random.default_rng(0).random(shape))
        fmap = encode(enc, img)
        assert fmap.grid_shape == feature_grid_shape(shape, 5)
        assert fmap.dim == 16


def test_stub_is_deterministic_per_seed(rng):
    img = Image2D(rng.random((28, 28)))
    a = StubEncoder(seed=3).encode(img).values
    b = StubEncoder(seed=3).encode(img).values
    c = StubEncoder(seed=4).encode(img).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_stub_separates_distinct_textures(rng):
    """Uniform vs noisy halves should land in different feature clusters."""
    px = np.zeros((28, 56))
    px[:, 28:] = rng.random((28, 28))
    fmap = StubEncoder(patch_stride=14, seed=0).encode(Image2D(px))
    left = fmap.values[:, :, 0].mean(axis=1)
    right = fmap.values[:, :, 2:].mean(axis=(1, 2))
    cos = float(left @ right / (np.linalg.norm(left) * np.linalg.norm(right)))
    assert cos < 0.99


def test_encode_wrapper_rejects_wrong_grid():
    class Lying:
        name = "liar"
        feature_dim = 4
        patch_stride = 7

        def encode(self, img):
            return FeatureMap(np.ones((4, 1, 1)))

    with pytest.raises(ProtoPromptError, match="grid"):
        encode(Lying(), Image2D(np.zeros((28, 28))))


def test_create_encoder_factory():
    assert isinstance(create_encoder(RunConfig()), StubEncoder)
    cfg = RunConfig({"encoder.backend": "trainable-stub", "encoder.feature_dim": 16, "encoder.patch_stride": 4})
    enc = create_encoder(cfg)
    assert isinstance(enc, TinyViTEncoder)
    assert enc.feature_dim == 16 and enc.patch_stride == 4
