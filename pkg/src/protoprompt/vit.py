"""A small trainable vision-transformer encoder with low-rank adapters.

This backend exists so the episodic fine-tuning loop and its gradient checks
can run CPU-only and in seconds: a patch-embedding convolution plus a couple
of attention blocks, with the base weights frozen and rank-r adapters on the
query/value projections as the only trainable parameters. It is not meant to
be a strong feature extractor — just a differentiable one with the same
interface and adapter surface as a full-scale backbone.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidArgumentError
from .types import FeatureMap, Image2D


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank update B @ A scaled by 1/r."""

    def __init__(self, base: nn.Linear, rank: int):
        super().__init__()
        if rank < 1:
            raise InvalidArgumentError("adapter rank must be >= 1")
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.normal_(self.lora_a, std=0.02)
        self.scale = 1.0 / rank

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + F.linear(F.linear(x, self.lora_a), self.lora_b) * self.scale


class _Attention(nn.Module):
    def __init__(self, dim: int, heads: int, adapter_rank: int):
        super().__init__()
        if dim % heads != 0:
            raise InvalidArgumentError(f"feature_dim {dim} must be divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = LoRALinear(nn.Linear(dim, dim), adapter_rank)
        self.k = nn.Linear(dim, dim)
        self.v = LoRALinear(nn.Linear(dim, dim), adapter_rank)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q = self.q(x).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(x).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(x).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int, adapter_rank: int, mlp_ratio: int = 2):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = _Attention(dim, heads, adapter_rank)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TinyViTEncoder(nn.Module):
    """Deterministically initialized trainable encoder; adapters are the only trainable weights."""

    def __init__(
        self,
        feature_dim: int = 32,
        patch_stride: int = 8,
        depth: int = 2,
        heads: int = 2,
        adapter_rank: int = 4,
        seed: int = 0,
    ):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.patch_embed = nn.Conv2d(1, feature_dim, kernel_size=patch_stride, stride=patch_stride)
            self.blocks = nn.ModuleList(_Block(feature_dim, heads, adapter_rank) for _ in range(depth))
            self.norm = nn.LayerNorm(feature_dim)
        self.name = f"trainable-stub-d{feature_dim}-s{patch_stride}-seed{seed}"
        self.feature_dim = feature_dim
        self.patch_stride = patch_stride
        self.seed = seed
        for n, p in self.named_parameters():
            p.requires_grad_("lora" in n)

    def adapter_parameters(self) -> list[nn.Parameter]:
        return [p for n, p in self.named_parameters() if "lora" in n]

    def adapter_state(self) -> dict[str, torch.Tensor]:
        return {n: p.detach().clone() for n, p in self.named_parameters() if "lora" in n}

    def load_adapter_state(self, state: dict[str, torch.Tensor]) -> None:
        own = {n: p for n, p in self.named_parameters() if "lora" in n}
        if set(state) != set(own):
            raise InvalidArgumentError("adapter state does not match this model's adapter layout")
        with torch.no_grad():
            for n, p in own.items():
                p.copy_(state[n].to(p.dtype))

    def randomize_adapters(self, seed: int = 0, std: float = 0.05) -> None:
        """Give every adapter tensor (including the zero-initialized halves) generic values.

        Gradient checks need this: with the B factors at their zero init, the
        A factors sit at a stationary point where both analytic and numeric
        gradients vanish identically.
        """
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.adapter_parameters():
                p.copy_(torch.randn(p.shape, generator=g, dtype=torch.float64).to(p.dtype) * std)

    def encode_torch(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 1, H, W) -> (B, D, H', W'), differentiable w.r.t. adapter params."""
        s = self.patch_stride
        ph = (-x.shape[2]) % s
        pw = (-x.shape[3]) % s
        if ph or pw:
            mode = "reflect" if (ph < x.shape[2] and pw < x.shape[3]) else "replicate"
            x = F.pad(x, (0, pw, 0, ph), mode=mode)
        tokens = self.patch_embed(x)  # (B, D, H', W')
        b, d, gh, gw = tokens.shape
        x = tokens.flatten(2).transpose(1, 2)  # (B, N, D)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        return x.transpose(1, 2).reshape(b, d, gh, gw)

    def encode(self, img: Image2D) -> FeatureMap:
        dtype = next(self.parameters()).dtype
        x = torch.from_numpy(img.gray()[None, None]).to(dtype)
        with torch.no_grad():
            out = self.encode_torch(x)
        return FeatureMap(out[0].double().numpy())
