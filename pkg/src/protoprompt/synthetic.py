"""Synthetic fixtures: shapes over textured backgrounds, written in the
package's dataset layouts. Used by the test suite and for CLI smoke runs —
bright foreground objects on darker textured grounds give the stub encoder
clean statistics to separate."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .types import BinaryMask, Episode, Image2D, resize_array_bilinear

SIZE = 96


def textured(rng: np.random.Generator, shape: tuple[int, int], level: float, wobble: float = 0.05) -> np.ndarray:
    """A level +/- smooth low-frequency texture + fine grain, clipped to [0,1]."""
    coarse = rng.normal(0.0, 1.0, size=(6, 6))
    smooth = resize_array_bilinear(coarse, shape)
    grain = rng.normal(0.0, 1.0, size=shape)
    return np.clip(level + wobble * smooth + 0.015 * grain, 0.0, 1.0)


def _disk_mask(shape: tuple[int, int], center: tuple[float, float], radius: float) -> np.ndarray:
    rows, cols = np.ogrid[: shape[0], : shape[1]]
    return ((rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius**2).astype(np.uint8)


def _rect_mask(shape: tuple[int, int], center: tuple[float, float], half: tuple[float, float]) -> np.ndarray:
    out = np.zeros(shape, dtype=np.uint8)
    r0 = max(0, int(round(center[0] - half[0])))
    r1 = min(shape[0] - 1, int(round(center[0] + half[0])))
    c0 = max(0, int(round(center[1] - half[1])))
    c1 = min(shape[1] - 1, int(round(center[1] + half[1])))
    out[r0 : r1 + 1, c0 : c1 + 1] = 1
    return out


def synth_sample(
    rng: np.random.Generator, size: int = SIZE, kind: str = "disk", jitter: float = 0.15
) -> tuple[Image2D, BinaryMask]:
    """One image with a single bright object (disk or axis-aligned rectangle)."""
    shape = (size, size)
    center = (size / 2 + rng.uniform(-jitter, jitter) * size, size / 2 + rng.uniform(-jitter, jitter) * size)
    if kind == "disk":
        mask = _disk_mask(shape, center, radius=rng.uniform(0.18, 0.28) * size)
    elif kind == "rect":
        half = (rng.uniform(0.14, 0.24) * size, rng.uniform(0.14, 0.24) * size)
        mask = _rect_mask(shape, center, half)
    else:
        raise ValueError(f"unknown shape kind {kind!r}")
    bg = textured(rng, shape, level=0.30)
    fg = textured(rng, shape, level=0.78, wobble=0.03)
    px = np.where(mask.astype(bool), fg, bg)
    return Image2D(px), BinaryMask(mask)


def synth_episode(rng: np.random.Generator, size: int = SIZE, kind: str = "disk") -> Episode:
    support_img, support_mask = synth_sample(rng, size, kind)
    query_img, query_mask = synth_sample(rng, size, kind)
    return Episode(support_img, support_mask, query_img, query_truth=query_mask, class_id="1")


def _write_png(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), arr.astype(np.uint8))


def write_pairs_dataset(
    root: str | Path, n: int = 21, size: int = SIZE, seed: int = 0, kinds: tuple[str, ...] = ("disk", "rect")
) -> Path:
    """images/ + masks/ layout; object kinds alternate through ``kinds``."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for i in range(n):
        img, mask = synth_sample(rng, size, kinds[i % len(kinds)])
        name = f"sample_{i:03d}.png"
        _write_png(root / "images" / name, np.round(img.gray() * 255.0))
        _write_png(root / "masks" / name, mask.labels * 255)
    return root


def write_volume_dataset(
    root: str | Path,
    n_scans: int = 2,
    n_slices: int = 9,
    size: int = SIZE,
    seed: int = 0,
    modality: str = "MRI",
    with_second_class: bool = False,
) -> Path:
    """dataset.json + scans/ layout: class 1 is a disk drifting across the
    in-span slices (empty first/last slice); class 2, when requested, is a
    small rectangle present on a 3-slice sub-span."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    classes = {"1": "object-a"} | ({"2": "object-b"} if with_second_class else {})
    (root).mkdir(parents=True, exist_ok=True)
    (root / "dataset.json").write_text(
        '{"schema_version": 1, "modality": "%s", "classes": %s}'
        % (modality, str(classes).replace("'", '"'))
    )
    for s in range(n_scans):
        scan = root / "scans" / f"scan_{s:02d}"
        base_row = size / 2 + rng.uniform(-6, 6)
        for k in range(n_slices):
            shape = (size, size)
            label = np.zeros(shape, dtype=np.uint8)
            in_span = 1 <= k <= n_slices - 2
            if in_span:
                drift = (k - n_slices / 2) * 2.0
                disk = _disk_mask(shape, (base_row + drift, size / 2 + drift), radius=0.22 * size)
                label[disk.astype(bool)] = 1
            if with_second_class and n_slices // 2 - 1 <= k <= n_slices // 2 + 1:
                rect = _rect_mask(shape, (size * 0.22, size * 0.75), (size * 0.08, size * 0.08))
                label[rect.astype(bool)] = 2
            bg = textured(rng, shape, level=0.30)
            fg = textured(rng, shape, level=0.78, wobble=0.03)
            fg2 = textured(rng, shape, level=0.55, wobble=0.03)
            px = np.where(label == 1, fg, np.where(label == 2, fg2, bg))
            _write_png(scan / f"image_{k:03d}.png", np.round(px * 255.0))
            _write_png(scan / f"label_{k:03d}.png", label)
    return root
