import numpy as np
import pytest
import torch
import torch.nn as nn

from protoprompt.errors import InvalidArgumentError
from protoprompt.types import Image2D
from protoprompt.vit import LoRALinear, TinyViTEncoder


def test_lora_is_identity_at_init():
    """With B = 0 the adapter contributes nothing, so wrapping is loss-free."""
    base = nn.Linear(6, 4)
    wrapped = LoRALinear(base, rank=2).double()
    x = torch.randn(3, 6, dtype=torch.float64)
    assert torch.equal(wrapped(x), wrapped.base(x))


def test_lora_update_scaled_by_inverse_rank():
    lora = LoRALinear(nn.Linear(5, 5), rank=4).double()
    base = lora.base
    with torch.no_grad():
        lora.lora_a.copy_(torch.eye(4, 5, dtype=torch.float64))
        lora.lora_b.copy_(torch.eye(5, 4, dtype=torch.float64))
    x = torch.randn(2, 5, dtype=torch.float64)
    expect = base(x) + (x @ lora.lora_a.T @ lora.lora_b.T) / 4
    assert torch.allclose(lora(x), expect)


def test_lora_base_frozen_adapters_trainable():
    lora = LoRALinear(nn.Linear(3, 3), rank=1)
    assert not lora.base.weight.requires_grad
    assert not lora.base.bias.requires_grad
    assert lora.lora_a.requires_grad and lora.lora_b.requires_grad


def test_lora_rejects_bad_rank():
    with pytest.raises(InvalidArgumentError):
        LoRALinear(nn.Linear(3, 3), rank=0)


def test_tiny_vit_only_adapters_trainable():
    enc = TinyViTEncoder(feature_dim=16, patch_stride=4, adapter_rank=2)
    trainable = {n for n, p in enc.named_parameters() if p.requires_grad}
    assert trainable
    assert all("lora" in n for n in trainable)
    assert len(enc.adapter_parameters()) == len(trainable)


def test_tiny_vit_deterministic_by_seed():
    img = Image2D(np.random.default_rng(0).random((24, 24)))
    a = TinyViTEncoder(feature_dim=16, patch_stride=4, seed=1).encode(img).values
    b = TinyViTEncoder(feature_dim=16, patch_stride=4, seed=1).encode(img).values
    c = TinyViTEncoder(feature_dim=16, patch_stride=4, seed=2).encode(img).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_tiny_vit_grid_contract():
    enc = TinyViTEncoder(feature_dim=16, patch_stride=4)
    for shape in [(24, 24), (25, 30), (3, 9)]:
        fmap = enc.encode(Image2D(np.zeros(shape)))
        assert fmap.grid_shape == (-(-shape[0] // 4), -(-shape[1] // 4))
        assert fmap.dim == 16


def test_adapter_state_round_trip():
    a = TinyViTEncoder(feature_dim=16, patch_stride=4, seed=0)
    b = TinyViTEncoder(feature_dim=16, patch_stride=4, seed=0)
    a.randomize_adapters(seed=5)
    img = Image2D(np.random.default_rng(1).random((20, 20)))
    assert not np.array_equal(a.encode(img).values, b.encode(img).values)
    b.load_adapter_state(a.adapter_state())
    assert np.array_equal(a.encode(img).values, b.encode(img).values)


def test_adapter_state_layout_mismatch():
    a = TinyViTEncoder(feature_dim=16, patch_stride=4, depth=2)
    b = TinyViTEncoder(feature_dim=16, patch_stride=4, depth=1)
    with pytest.raises(InvalidArgumentError):
        b.load_adapter_state(a.adapter_state())


def test_randomize_adapters_unfreezes_the_zero_halves():
    enc = TinyViTEncoder(feature_dim=16, patch_stride=4)
    assert any(torch.count_nonzero(p) == 0 for p in enc.adapter_parameters())
    enc.randomize_adapters(seed=0)
    assert all(torch.count_nonzero(p) > 0 for p in enc.adapter_parameters())
