"""Feature-extractor backends.

Every backend maps an Image2D to a FeatureMap whose spatial dims are
ceil(H / patch_stride) x ceil(W / patch_stride). `StubEncoder` is a
deterministic, weight-free backend for tests: it projects local patch
statistics through a fixed random Fourier feature map, so visually distinct
regions land far apart in cosine space while uniform regions cluster.
"""

from __future__ import annotations

import math
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import BackendUnavailableError, InvalidArgumentError, ProtoPromptError
from .types import FeatureMap, Image2D


@runtime_checkable
class EncoderBackend(Protocol):
    name: str
    feature_dim: int
    patch_stride: int

    def encode(self, img: Image2D) -> FeatureMap: ...


def feature_grid_shape(image_shape: tuple[int, int], patch_stride: int) -> tuple[int, int]:
    h, w = image_shape
    return math.ceil(h / patch_stride), math.ceil(w / patch_stride)


def pad_to_multiple(arr: np.ndarray, stride: int) -> np.ndarray:
    """Reflect-pad bottom/right so both dims are stride multiples.

    Falls back to edge padding when the pad would be as large as the array
    (numpy's reflect mode needs pad < dim).
    """
    h, w = arr.shape[:2]
    ph = (-h) % stride
    pw = (-w) % stride
    if ph == 0 and pw == 0:
        return arr
    widths = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    mode = "reflect" if (ph < h and pw < w) else "edge"
    return np.pad(arr, widths, mode=mode)


def encode(backend: EncoderBackend, img: Image2D) -> FeatureMap:
    """Run a backend and enforce the spatial shape contract."""
    fmap = backend.encode(img)
    expected = feature_grid_shape(img.shape, backend.patch_stride)
    if fmap.grid_shape != expected:
        raise ProtoPromptError(
            f"backend {backend.name!r} returned grid {fmap.grid_shape}, expected {expected} "
            f"for image {img.shape} at stride {backend.patch_stride}"
        )
    return fmap


class StubEncoder:
    """Seeded random-Fourier projection of per-patch intensity statistics."""

    def __init__(self, feature_dim: int = 64, patch_stride: int = 14, seed: int = 0, omega_scale: float = 3.0):
        if feature_dim < 1 or patch_stride < 1:
            raise ProtoPromptError("feature_dim and patch_stride must be >= 1")
        self.name = f"stub-d{feature_dim}-s{patch_stride}-seed{seed}"
        self.feature_dim = int(feature_dim)
        self.patch_stride = int(patch_stride)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self._omega = rng.normal(0.0, omega_scale, size=(8, self.feature_dim))
        self._phase = rng.uniform(0.0, 2.0 * np.pi, size=self.feature_dim)

    @staticmethod
    def _patch_stats(patches: np.ndarray) -> np.ndarray:
        """patches: (N, s, s) -> (N, 8) summary statistics."""
        n, s, _ = patches.shape
        half = max(1, s // 2)
        mean = patches.mean(axis=(1, 2))
        std = patches.std(axis=(1, 2))
        gx = np.abs(np.diff(patches, axis=2)).mean(axis=(1, 2)) if s > 1 else np.zeros(n)
        gy = np.abs(np.diff(patches, axis=1)).mean(axis=(1, 2)) if s > 1 else np.zeros(n)
        q00 = patches[:, :half, :half].mean(axis=(1, 2))
        q01 = patches[:, :half, half:].mean(axis=(1, 2)) if s > half else mean
        q10 = patches[:, half:, :half].mean(axis=(1, 2)) if s > half else mean
        q11 = patches[:, half:, half:].mean(axis=(1, 2)) if s > half else mean
        return np.stack([mean, std, gx, gy, q00, q01, q10, q11], axis=1)

    def encode(self, img: Image2D) -> FeatureMap:
        s = self.patch_stride
        gray = pad_to_multiple(img.gray(), s)
        gh, gw = gray.shape[0] // s, gray.shape[1] // s
        patches = gray.reshape(gh, s, gw, s).transpose(0, 2, 1, 3).reshape(gh * gw, s, s)
        stats = self._patch_stats(patches)
        feats = np.cos(stats @ self._omega + self._phase)  # (N, D)
        return FeatureMap(feats.T.reshape(self.feature_dim, gh, gw))


# ImageNet statistics used by the pretrained checkpoints this adapter targets.
_IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
_IMAGENET_STD = np.array([0.229, 0.224, 0.225])


class ExternalEncoder:
    """Adapter around a pretrained vision-transformer checkpoint.

    Loads lazily so the package imports (and the stub paths run) without the
    optional heavyweight dependencies installed.
    """

    def __init__(self, weights_path: str = "facebook/dinov2-large", device: str = "cpu"):
        self.name = "external"
        self.weights_path = weights_path or "facebook/dinov2-large"
        self.device = device
        self._model = None
        self._torch = None
        self.feature_dim = 0  # known after load
        self.patch_stride = 14

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch
            from transformers import AutoModel
        except ImportError as exc:
            raise BackendUnavailableError(
                "external encoder needs the optional 'transformers' extra: pip install 'protoprompt[external]'"
            ) from exc
        try:
            model = AutoModel.from_pretrained(self.weights_path)
        except Exception as exc:
            raise BackendUnavailableError(
                f"cannot load encoder weights from {self.weights_path!r}: {exc}"
            ) from exc
        model.eval().to(self.device)
        self._torch = torch
        self._model = model
        self.feature_dim = int(model.config.hidden_size)
        self.patch_stride = int(getattr(model.config, "patch_size", 14))

    def _forward_grid(self, batch):
        """(B,3,H,W) pixel batch -> (B,D,H',W') patch-token grid."""
        s = self.patch_stride
        out = self._model(pixel_values=batch)
        tokens = out.last_hidden_state
        gh, gw = batch.shape[2] // s, batch.shape[3] // s
        n_special = tokens.shape[1] - gh * gw
        grid = tokens[:, n_special:].reshape(batch.shape[0], gh, gw, -1)
        return grid.permute(0, 3, 1, 2)

    def encode(self, img: Image2D) -> FeatureMap:
        self._load()
        torch = self._torch
        px = img.pixels
        if px.shape[2] == 1:
            px = np.repeat(px, 3, axis=2)
        px = pad_to_multiple(px, self.patch_stride)
        px = (px - _IMAGENET_MEAN) / _IMAGENET_STD
        batch = torch.from_numpy(px.transpose(2, 0, 1)[None]).float().to(self.device)
        with torch.no_grad():
            grid = self._forward_grid(batch)
        return FeatureMap(grid[0].cpu().double().numpy())

    # --- optional fine-tuning surface (rank-r adapters on attention q/v) ---

    def enable_adapters(self, rank: int = 4) -> int:
        """Wrap every attention query/value projection in a low-rank adapter;
        freezes the base weights. Returns the number of wrapped layers."""
        self._load()
        from .vit import LoRALinear

        torch_nn = self._torch.nn
        for p in self._model.parameters():
            p.requires_grad_(False)
        wrapped = 0
        for module in self._model.modules():
            for attr in ("query", "value"):
                layer = getattr(module, attr, None)
                if isinstance(layer, torch_nn.Linear) and not isinstance(layer, LoRALinear):
                    setattr(module, attr, LoRALinear(layer, rank))
                    wrapped += 1
        if wrapped == 0:
            raise BackendUnavailableError(f"no attention projections found to adapt in {self.weights_path!r}")
        return wrapped

    def adapter_parameters(self):
        self._load()
        return [p for n, p in self._model.named_parameters() if "lora" in n]

    def adapter_state(self):
        self._load()
        return {n: p.detach().clone() for n, p in self._model.named_parameters() if "lora" in n}

    def load_adapter_state(self, state) -> None:
        self._load()
        own = {n: p for n, p in self._model.named_parameters() if "lora" in n}
        if set(state) != set(own):
            raise InvalidArgumentError("adapter state does not match this model's adapter layout")
        with self._torch.no_grad():
            for n, p in own.items():
                p.copy_(state[n].to(p.dtype))

    def parameters(self):
        self._load()
        return self._model.parameters()

    def encode_torch(self, x):
        """(B,1,H,W) [0,1] grayscale -> (B,D,H',W'), differentiable through adapters."""
        self._load()
        torch = self._torch
        x = x.repeat(1, 3, 1, 1)
        mean = torch.as_tensor(_IMAGENET_MEAN, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
        std = torch.as_tensor(_IMAGENET_STD, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
        x = (x - mean) / std
        s = self.patch_stride
        ph, pw = (-x.shape[2]) % s, (-x.shape[3]) % s
        if ph or pw:
            x = torch.nn.functional.pad(x, (0, pw, 0, ph), mode="reflect")
        return self._forward_grid(x)


def create_encoder(cfg) -> EncoderBackend:
    """Instantiate the encoder selected by ``encoder.backend``."""
    kind = cfg["encoder.backend"]
    if kind == "stub":
        return StubEncoder(
            feature_dim=cfg["encoder.feature_dim"],
            patch_stride=cfg["encoder.patch_stride"],
            seed=cfg["seed"],
        )
    if kind == "trainable-stub":
        from .vit import TinyViTEncoder

        return TinyViTEncoder(
            feature_dim=cfg["encoder.feature_dim"],
            patch_stride=cfg["encoder.patch_stride"],
            adapter_rank=cfg["train.adapter_rank"],
            seed=cfg["seed"],
        )
    if kind == "external":
        return ExternalEncoder(weights_path=cfg["encoder.weights_path"], device=cfg["encoder.device"])
    raise BackendUnavailableError(f"unknown encoder backend {kind!r}")
