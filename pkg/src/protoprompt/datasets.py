"""Dataset ingestion: slice-stack volumes, 2D image/mask pairs, folds, filters.

Two on-disk layouts are supported (full contract in ``docs/datasets.md``):

* volume layout — ``root/dataset.json`` plus ``scans/<scan_id>/`` holding
  ``image_<k>.png`` / ``label_<k>.png`` slice pairs ordered by ``k``;
  ``.npy`` files may stand in for PNGs where float intensities (e.g. raw CT
  units) matter. Label rasters hold small integer class ids, 0 = background.
* pairs layout — ``root/images/`` and ``root/masks/`` with same-named files;
  masks are {0, 255} rasters thresholded at 128. Each image is its own scan.

The dataset root may be overridden with the PROTOPROMPT_DATA_ROOT env var.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np

from .errors import CorruptDatasetError, DataError, EmptyDatasetError, InvalidArgumentError
from .types import BinaryMask, Image2D

MODALITIES = ("CT", "MRI", "endoscopy")
ENV_DATA_ROOT = "PROTOPROMPT_DATA_ROOT"
MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ManifestItem:
    image_ref: str  # path relative to root
    mask_ref: str
    scan_id: str
    slice_index: int
    class_ids: tuple[str, ...]  # classes with >= 1 pixel in this slice


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    modality: str
    classes: tuple[str, ...]
    items: tuple[ManifestItem, ...]
    folds: dict[str, int]  # scan_id -> fold index

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise InvalidArgumentError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        scan_ids = {item.scan_id for item in self.items}
        if set(self.folds) != scan_ids:
            raise InvalidArgumentError("fold assignment must cover exactly the manifest's scan ids")

    def scan_ids(self) -> list[str]:
        return sorted({item.scan_id for item in self.items})

    def items_of_scan(self, scan_id: str) -> list[ManifestItem]:
        return sorted((i for i in self.items if i.scan_id == scan_id), key=lambda i: i.slice_index)

    def scans_in_fold(self, fold: int) -> list[str]:
        return sorted(s for s, f in self.folds.items() if f == fold)

    def num_folds(self) -> int:
        return max(self.folds.values()) + 1 if self.folds else 0

    def to_json_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "root": self.root,
            "modality": self.modality,
            "classes": list(self.classes),
            "items": [asdict(i) | {"class_ids": list(i.class_ids)} for i in self.items],
            "folds": dict(sorted(self.folds.items())),
        }


@dataclass(frozen=True)
class SplitSpec:
    held_out_class: str
    setting: str = "standard"  # standard | exclude-test-class

    def __post_init__(self):
        if self.setting not in ("standard", "exclude-test-class"):
            raise InvalidArgumentError(f"unknown split setting {self.setting!r}")


def resolve_data_root(cfg) -> Path:
    root = os.environ.get(ENV_DATA_ROOT) or cfg["data.root"]
    if not root:
        raise DataError(f"no dataset root: set data.root or the {ENV_DATA_ROOT} env var")
    return Path(root)


# ---------------------------------------------------------------------------
# raster reading
# ---------------------------------------------------------------------------


def _read_array(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        try:
            return np.load(path)
        except Exception as exc:
            raise CorruptDatasetError(f"cannot read {path}: {exc}") from exc
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise CorruptDatasetError(f"cannot read raster {path}")
    if raw.ndim == 3:  # BGR -> RGB for consistency with the rest of the stack
        raw = raw[:, :, ::-1]
    return raw


def read_image(path: Path) -> np.ndarray:
    return _read_array(path).astype(np.float64)


def read_label(path: Path) -> np.ndarray:
    arr = _read_array(path)
    if arr.ndim == 3:
        arr = arr[:, :, 0]
    return arr.astype(np.int64)


def read_binary_mask(path: Path) -> BinaryMask:
    """{0,255}-style rasters become {0,1} via a fixed 128 threshold."""
    return BinaryMask((read_label(path) >= 128).astype(np.uint8))


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def normalize_stack(stack: np.ndarray, mode: str, cfg) -> np.ndarray:
    """Normalize a whole volume (N,H,W) to [0, 1]; exactly idempotent.

    minmax: volume min/max scaling (constant volume -> zeros). ct-window:
    clip to the configured unit window then scale; a stack already inside
    [0, 1] is passed through so renormalizing is a no-op. percentile:
    clip at order-statistic quantiles — taking the lower sample for the low
    cut and the higher for the high cut keeps repeat application exact.
    """
    stack = stack.astype(np.float64)
    lo_v, hi_v = float(stack.min()), float(stack.max())
    if mode == "minmax":
        if hi_v == lo_v:
            return np.zeros_like(stack)
        return (stack - lo_v) / (hi_v - lo_v)
    if mode == "ct-window":
        if 0.0 <= lo_v and hi_v <= 1.0:
            return stack
        wlo, whi = (float(v) for v in cfg["data.ct_window"])
        clipped = np.clip(stack, wlo, whi)
        return (clipped - wlo) / (whi - wlo)
    if mode == "percentile":
        plo, phi = (float(v) for v in cfg["data.percentile"])
        qlo = float(np.quantile(stack, plo / 100.0, method="lower"))
        qhi = float(np.quantile(stack, phi / 100.0, method="higher"))
        if qhi == qlo:
            return np.zeros_like(stack)
        return np.clip((stack - qlo) / (qhi - qlo), 0.0, 1.0)
    raise InvalidArgumentError(f"unknown normalization mode {mode!r}")


# ---------------------------------------------------------------------------
# volume + manifest loading
# ---------------------------------------------------------------------------


def _slice_files(scan_dir: Path, prefix: str) -> dict[int, Path]:
    out: dict[int, Path] = {}
    for path in sorted(scan_dir.iterdir()):
        if not path.stem.startswith(prefix + "_"):
            continue
        if path.suffix not in (".png", ".npy"):
            continue
        try:
            idx = int(path.stem.split("_")[-1])
        except ValueError:
            raise CorruptDatasetError(f"cannot parse slice index from {path.name}")
        if idx not in out or path.suffix == ".npy":  # .npy wins when both exist
            out[idx] = path
    return out


def load_volume(
    scan_dir: str | Path, class_id: Optional[str] = None, cfg=None, normalization: Optional[str] = None
) -> list[tuple[Image2D, BinaryMask]]:
    """Ordered (image, mask) slices of one scan; mask selects ``class_id``
    (or any nonzero label when class_id is None)."""
    scan_dir = Path(scan_dir)
    if not scan_dir.is_dir():
        raise DataError(f"scan directory not found: {scan_dir}")
    images = _slice_files(scan_dir, "image")
    labels = _slice_files(scan_dir, "label")
    if not images:
        raise EmptyDatasetError(f"no image slices under {scan_dir}")
    missing = sorted(set(images) - set(labels))
    if missing:
        raise CorruptDatasetError(f"missing label file for slice {missing[0]} in {scan_dir}")

    order = sorted(images)
    stack = []
    for idx in order:
        px = read_image(images[idx])
        if px.ndim == 3:
            px = px.mean(axis=2)
        stack.append(px)
    shapes = {a.shape for a in stack}
    if len(shapes) != 1:
        raise CorruptDatasetError(f"inconsistent slice shapes {sorted(shapes)} in {scan_dir}")
    volume = np.stack(stack)

    if cfg is not None:
        volume = normalize_stack(volume, normalization or cfg["data.normalization"], cfg)

    out = []
    for pos, idx in enumerate(order):
        lab = read_label(labels[idx])
        if lab.shape != volume[pos].shape:
            raise CorruptDatasetError(f"image/label shape mismatch at slice {idx} in {scan_dir}")
        binary = (lab == int(class_id)) if class_id is not None else (lab > 0)
        out.append((Image2D(volume[pos], id=f"{scan_dir.name}/{idx}"), BinaryMask(binary.astype(np.uint8))))
    return out


def _assign_folds(scan_ids: Sequence[str], k: int) -> dict[str, int]:
    return {scan: i % k for i, scan in enumerate(sorted(scan_ids))}


def build_manifest(root: str | Path, cfg) -> DatasetManifest:
    """Enumerate a dataset tree into a deterministic manifest with fold labels."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    k = cfg["eval.folds"]

    meta_path = root / "dataset.json"
    if meta_path.is_file() and (root / "scans").is_dir():
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            raise CorruptDatasetError(f"invalid dataset.json: {exc}") from exc
        modality = meta.get("modality", "MRI")
        classes = tuple(sorted(meta.get("classes", {})))
        items: list[ManifestItem] = []
        scan_dirs = sorted(p for p in (root / "scans").iterdir() if p.is_dir())
        if not scan_dirs:
            raise EmptyDatasetError(f"no scans under {root / 'scans'}")
        for scan_dir in scan_dirs:
            images = _slice_files(scan_dir, "image")
            labels = _slice_files(scan_dir, "label")
            missing = sorted(set(images) - set(labels))
            if missing:
                raise CorruptDatasetError(f"missing label file for slice {missing[0]} in {scan_dir}")
            for idx in sorted(images):
                lab = read_label(labels[idx])
                present = tuple(sorted(str(c) for c in np.unique(lab) if c != 0))
                items.append(
                    ManifestItem(
                        image_ref=str(images[idx].relative_to(root)),
                        mask_ref=str(labels[idx].relative_to(root)),
                        scan_id=scan_dir.name,
                        slice_index=idx,
                        class_ids=present,
                    )
                )
        scan_ids = sorted({i.scan_id for i in items})
        return DatasetManifest(str(root), modality, classes, tuple(items), _assign_folds(scan_ids, k))

    img_dir, mask_dir = root / "images", root / "masks"
    if img_dir.is_dir() and mask_dir.is_dir():
        images = sorted(p for p in img_dir.iterdir() if p.suffix in (".png", ".npy"))
        if not images:
            raise EmptyDatasetError(f"no images under {img_dir}")
        items = []
        for pos, img_path in enumerate(images):
            mask_path = mask_dir / img_path.name
            if not mask_path.is_file():
                raise CorruptDatasetError(f"missing mask file {mask_path}")
            mask = read_binary_mask(mask_path)
            items.append(
                ManifestItem(
                    image_ref=str(img_path.relative_to(root)),
                    mask_ref=str(mask_path.relative_to(root)),
                    scan_id=img_path.stem,
                    slice_index=0,
                    class_ids=("1",) if mask.any() else (),
                )
            )
        scan_ids = sorted({i.scan_id for i in items})
        return DatasetManifest(str(root), "endoscopy", ("1",), tuple(items), _assign_folds(scan_ids, k))

    raise EmptyDatasetError(
        f"{root} is neither a volume layout (dataset.json + scans/) nor a pairs layout (images/ + masks/)"
    )


def filter_training_slices(manifest: DatasetManifest, split: SplitSpec) -> list[ManifestItem]:
    """Slices usable for training under the split setting; the strict setting
    drops every slice where the held-out class appears at all."""
    if split.setting == "standard":
        return list(manifest.items)
    return [item for item in manifest.items if split.held_out_class not in item.class_ids]
