"""Episodic adapter fine-tuning over superpixel pseudo-labels.

Each step samples an image, builds a self-supervised episode, runs the
differentiable prototype pipeline, and descends the segmentation +
alignment objective with Adam — touching only the backend's adapter
parameters. Checkpoints hold adapter weights alone (the base is frozen) and
are named ``adapter_step{N}.pt``; per-step losses stream to a JSONL log.
A non-finite loss aborts immediately, dumping the offending episode.
"""

from __future__ import annotations

import json
import math
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .episodes import EpisodeParams, build_episode
from .errors import EmptyDatasetError, InvalidArgumentError, NonFiniteLossError
from .losses import episode_losses
from .superpixels import FelzParams, cached_superpixels
from .types import Image2D, resize


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    learning_rate: float = 1.0e-4
    image_size: tuple[int, int] = (256, 256)
    adapter_rank: int = 4
    seed: int = 0
    checkpoint_interval: int = 10000
    reg_weight: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidArgumentError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate <= 0:
            raise InvalidArgumentError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.adapter_rank < 1:
            raise InvalidArgumentError("adapter_rank must be >= 1")
        if self.checkpoint_interval < 1:
            raise InvalidArgumentError("checkpoint_interval must be >= 1")

    @classmethod
    def from_run_config(cls, cfg) -> "TrainConfig":
        size = int(cfg["train.image_size"])
        return cls(
            steps=cfg["train.steps"],
            learning_rate=cfg["train.learning_rate"],
            image_size=(size, size),
            adapter_rank=cfg["train.adapter_rank"],
            seed=cfg["seed"],
            checkpoint_interval=cfg["train.checkpoint_interval"],
            reg_weight=cfg["train.reg_weight"],
        )


@dataclass
class TrainResult:
    backend: object
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    log_path: Optional[Path] = None


def save_checkpoint(backend, step: int, cfg: TrainConfig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"step": step, "adapters": backend.adapter_state(), "config": asdict(cfg)}, path)
    return path


def load_checkpoint(backend, path: str | Path) -> int:
    """Restore adapter weights; returns the step the checkpoint was taken at."""
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    backend.load_adapter_state(payload["adapters"])
    return int(payload["step"])


def train(
    images: Sequence[Image2D],
    backend,
    cfg: TrainConfig,
    *,
    episode_params: EpisodeParams = EpisodeParams(),
    felz_params: FelzParams = FelzParams(),
    cache_dir: Optional[str | Path] = None,
    out_dir: Optional[str | Path] = None,
    window: tuple[int, int] = (4, 4),
    threshold: float = 0.95,
    alpha: float = 20.0,
    resume_from: Optional[str | Path] = None,
) -> TrainResult:
    """Run ``cfg.steps`` optimizer steps (continuing a checkpoint's counter when resuming)."""
    if not images:
        raise EmptyDatasetError("no training images")
    if not hasattr(backend, "adapter_parameters") or not hasattr(backend, "encode_torch"):
        raise InvalidArgumentError(
            f"backend {getattr(backend, 'name', backend)!r} exposes no trainable adapters"
        )
    start_step = load_checkpoint(backend, resume_from) if resume_from else 0

    out_path = Path(out_dir) if out_dir else None
    log_path = None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_path = out_path / "train_log.jsonl"
        log_file = open(log_path, "a" if resume_from else "w")

    dtype = next(backend.parameters()).dtype if hasattr(backend, "parameters") else torch.float64
    optimizer = torch.optim.Adam(backend.adapter_parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + start_step)

    work = [resize(img, cfg.image_size) for img in images]
    spmaps: dict[int, object] = {}
    result = TrainResult(backend=backend, log_path=log_path)
    try:
        last = start_step + cfg.steps
        for step in range(start_step + 1, last + 1):
            idx = int(rng.integers(len(work)))
            if idx not in spmaps:
                spmaps[idx] = cached_superpixels(work[idx], felz_params, cache_dir)
            ep = build_episode(work[idx], spmaps[idx], rng, episode_params)

            def to_support_frame(pred: np.ndarray) -> np.ndarray:
                back = ep.transform.apply_inverse(pred.astype(np.float64), is_label=True)
                return (back > 0.5).astype(np.uint8)

            l_seg, l_reg, _ = episode_losses(
                backend,
                ep.support_image.gray(),
                ep.support_mask.labels,
                ep.query.gray(),
                ep.query_truth.labels,
                to_support_frame,
                window,
                threshold,
                alpha,
                dtype=dtype,
            )
            total = l_seg + cfg.reg_weight * l_reg
            seg_f, reg_f, total_f = (float(t.detach()) for t in (l_seg, l_reg, total))
            if not math.isfinite(total_f):
                dump_dir = out_path if out_path is not None else Path(tempfile.mkdtemp(prefix="protoprompt-"))
                dump = ep.dump(dump_dir / f"nonfinite_step{step}.npz")
                raise NonFiniteLossError(
                    f"non-finite loss at step {step} (seg={seg_f}, reg={reg_f}); "
                    f"episode dumped to {dump}",
                    dump_path=dump,
                )
            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            record = {"step": step, "seg_loss": seg_f, "reg_loss": reg_f, "total": total_f}
            result.history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
            if out_path is not None and (step % cfg.checkpoint_interval == 0 or step == last):
                result.checkpoints.append(save_checkpoint(backend, step, cfg, out_path / f"adapter_step{step}.pt"))
    finally:
        if log_file is not None:
            log_file.close()
    return result
