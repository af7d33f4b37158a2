"""Command-line interface: infer / evaluate / ablate / finetune.

Exit codes are a stable scripting contract: 0 success, 2 usage or config
error (including missing input files), 3 data error, 4 backend unavailable,
1 any other pipeline failure. Every artifact embeds the resolved config and
seed; with stub backends and a fixed seed, outputs are bit-reproducible
(timing fields are measurements and are exempt).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np

from . import datasets, evaluation, reports, training
from .config import RunConfig, load_config
from .encoders import create_encoder
from .episodes import EpisodeParams
from .errors import (
    BackendUnavailableError,
    ConfigError,
    DataError,
    InvalidArgumentError,
    InvalidComparisonError,
    ProtoPromptError,
)
from .pipeline import build_pipeline, prepare_coarse, refine_from_coarse, run_one_shot
from .segmenters import create_segmenter
from .superpixels import FelzParams
from .types import BinaryMask, Episode, Image2D

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_BACKEND = 4

# prompt-combination sweep, in the fixed reporting order
ABLATION_COMBOS: tuple[tuple[str, ...], ...] = (
    ("cent",),
    ("conf",),
    ("cent", "conf"),
    ("bbox",),
    ("cent", "conf", "bbox"),
    ("cent", "conf", "neg", "bbox"),
)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def _load_image(path: Path, cfg: RunConfig) -> Image2D:
    px = datasets.read_image(path)
    if px.ndim == 3:
        px = px.mean(axis=2)
    px = datasets.normalize_stack(px[None], cfg["data.normalization"], cfg)[0]
    return Image2D(px, id=path.stem)


def _write_mask(path: Path, mask: BinaryMask) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), (mask.labels * 255).astype(np.uint8))


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config, args.set or [])
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "prompts", None):
        overrides["prompts.enabled"] = [p.strip() for p in args.prompts.split(",") if p.strip()]
    if getattr(args, "steps", None) is not None:
        overrides["train.steps"] = args.steps
    return cfg.with_overrides(overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def cmd_infer(args) -> int:
    cfg = _resolve_config(args)
    support_img = _load_image(_require_file(args.support_image, "support image"), cfg)
    mask_path = _require_file(args.support_mask, "support mask")
    support_mask = datasets.read_binary_mask(mask_path)
    query = _load_image(_require_file(args.query, "query image"), cfg)
    if support_img.shape != support_mask.shape:
        raise DataError(f"support image {support_img.shape} and mask {support_mask.shape} disagree")

    episode = Episode(support_img, support_mask, query)
    encoder = create_encoder(cfg)
    segmenter = create_segmenter(cfg)
    result = run_one_shot(episode, encoder, segmenter, cfg)

    out = Path(args.out)
    _write_mask(out / "mask.png", result.mask)
    sidecar = {
        "config": cfg.as_dict(),
        "seed": cfg["seed"],
        "encoder": encoder.name,
        "segmenter": segmenter.name,
        "empty_prediction": result.empty,
        "score": result.score,
        "prompts": result.bundle.to_json_dict() if result.bundle else None,
        "timings": result.timings,
    }
    _write_json(out / "result.json", sidecar)
    status = "empty prediction" if result.empty else f"mask with {result.mask.count()} px"
    print(f"infer: {status}; artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _evaluate_dataset(manifest: datasets.DatasetManifest, cfg: RunConfig, pipeline_kind: str, classes: Sequence[str]):
    pipeline = build_pipeline(cfg, pipeline_kind)
    C = cfg["eval.sections"]
    skip_empty = cfg["eval.skip_empty_pairs"]
    root = Path(manifest.root)

    jobs = []
    for fold in range(cfg["eval.folds"]):
        test_scans = manifest.scans_in_fold(fold)
        if not test_scans:
            continue
        others = [s for s in manifest.scan_ids() if s not in test_scans]
        if not others:
            raise DataError(f"fold {fold} leaves no scan to act as support")
        support_scan = cfg["eval.support_scan"] or others[0]
        if support_scan not in others:
            raise DataError(f"support scan {support_scan!r} is unavailable outside fold {fold}")
        for class_id in classes:
            for scan in test_scans:
                jobs.append((fold, class_id, support_scan, scan))

    def run_job(job):
        fold, class_id, support_scan, query_scan = job
        support = datasets.load_volume(root / "scans" / support_scan, class_id, cfg)
        queries = datasets.load_volume(root / "scans" / query_scan, class_id, cfg)
        vp = evaluation.VolumePair(
            tuple(support), tuple(queries), class_id, support_scan_id=support_scan, query_scan_id=query_scan
        )
        return evaluation.evaluate_volume(pipeline, vp, C, skip_empty_pairs=skip_empty)

    workers = max(1, cfg["workers"])
    if workers == 1:
        results = [run_job(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_job, jobs))

    volume_records, slice_records = [], []
    fold_bins: dict[tuple[int, str], list[evaluation.VolumeResult]] = {}
    for job, res in zip(jobs, results):
        fold, class_id, support_scan, query_scan = job
        volume_records.append(
            reports.VolumeRecord(fold, class_id, query_scan, support_scan, res.volume_dice, res.volume_iou)
        )
        slice_records.extend(
            reports.SliceRecord(fold, class_id, query_scan, s.index, s.dice, s.iou) for s in res.slice_scores
        )
        fold_bins.setdefault((fold, class_id), []).append(res)

    fold_scores = [
        reports.FoldScore(
            fold,
            class_id,
            dice=float(np.mean([r.volume_dice for r in rs])),
            iou=float(np.mean([r.volume_iou for r in rs])),
            n_volumes=len(rs),
        )
        for (fold, class_id), rs in sorted(fold_bins.items())
    ]
    return reports.EvalReport(
        config=cfg.as_dict(),
        seed=cfg["seed"],
        classes=tuple(classes),
        n_folds=cfg["eval.folds"],
        fold_scores=tuple(fold_scores),
        volume_records=tuple(volume_records),
        slice_records=tuple(slice_records),
    )


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    manifest = datasets.build_manifest(args.dataset, cfg)
    classes = [args.split] if args.split else list(manifest.classes)
    if not classes:
        raise DataError("dataset declares no classes to evaluate")
    unknown = [c for c in classes if c not in manifest.classes]
    if unknown:
        raise DataError(f"classes {unknown} not present in the dataset (has {list(manifest.classes)})")

    report = _evaluate_dataset(manifest, cfg, args.pipeline, classes)
    out = Path(args.out)
    reports.persist_report(report, out / "report.json")
    (out / "report.csv").write_text(reports.render_csv(report))
    reports.plot_class_means(report, out / "report.png")

    if args.wilcoxon:
        other = reports.load_report(_require_file(args.wilcoxon, "comparison report"))
        row = reports.compare_reports(report, other) | {"comparison": "this-vs-other"}
        _write_json(out / "wilcoxon.json", row)
        (out / "wilcoxon.csv").write_text(reports.render_wilcoxon_csv([row]))
        print(f"wilcoxon p={row['p_value']:.6g} over {row['n_points']} paired points")
    for class_id in classes:
        print(f"evaluate: class {class_id} dice {report.aggregate(class_id).cell(digits=4)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def _pairs_episodes(manifest: datasets.DatasetManifest, cfg: RunConfig) -> list[Episode]:
    root = Path(manifest.root)
    items = sorted(manifest.items, key=lambda i: i.scan_id)
    support_id = cfg["eval.support_scan"] or items[0].scan_id
    support_item = next((i for i in items if i.scan_id == support_id), None)
    if support_item is None:
        raise DataError(f"support scan {support_id!r} not in dataset")
    support_img = _load_image(root / support_item.image_ref, cfg)
    support_mask = datasets.read_binary_mask(root / support_item.mask_ref)
    episodes = []
    for item in items:
        if item.scan_id == support_id:
            continue
        episodes.append(
            Episode(
                support_img,
                support_mask,
                _load_image(root / item.image_ref, cfg),
                datasets.read_binary_mask(root / item.mask_ref),
                class_id="1",
            )
        )
    return episodes


def run_ablation(episodes: Sequence[Episode], cfg: RunConfig, combos=ABLATION_COMBOS) -> list[dict]:
    """Mean dice/iou per prompt combination; the coarse stage runs once per episode."""
    from .metrics import dice as dice_fn, iou as iou_fn

    if not episodes:
        raise DataError("no episodes to ablate over")
    encoder = create_encoder(cfg)
    segmenter = create_segmenter(cfg)
    sums = {combo: [0.0, 0.0] for combo in combos}
    for episode in episodes:
        if episode.query_truth is None:
            raise InvalidArgumentError("ablation episodes need query_truth")
        coarse = prepare_coarse(episode, encoder, cfg)
        for combo in combos:
            result = refine_from_coarse(coarse, segmenter, cfg, enabled=combo)
            sums[combo][0] += dice_fn(result.mask, episode.query_truth)
            sums[combo][1] += iou_fn(result.mask, episode.query_truth)
    n = len(episodes)
    return [
        {"combo": list(combo), "dice": sums[combo][0] / n, "iou": sums[combo][1] / n, "n_episodes": n}
        for combo in combos
    ]


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    manifest = datasets.build_manifest(args.dataset, cfg)
    if manifest.modality != "endoscopy":
        raise DataError("the prompt sweep expects a 2D pairs-layout dataset (images/ + masks/)")
    combos = ABLATION_COMBOS
    if args.combo:
        combos = (tuple(k.strip() for k in args.combo.split("+") if k.strip()),)
    rows = run_ablation(_pairs_episodes(manifest, cfg), cfg, combos)

    out = Path(args.out)
    _write_json(out / "ablation.json", {"config": cfg.as_dict(), "seed": cfg["seed"], "rows": rows})
    csv_lines = ["combo,dice,iou,n_episodes"] + [
        f"{'+'.join(r['combo'])},{r['dice']:.4f},{r['iou']:.4f},{r['n_episodes']}" for r in rows
    ]
    (out / "ablation.csv").write_text("\n".join(csv_lines) + "\n")
    reports.plot_ablation(rows, out / "ablation.png")
    for r in rows:
        print(f"ablate: {'+'.join(r['combo']):<22} dice {r['dice']:.4f}  iou {r['iou']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# finetune
# ---------------------------------------------------------------------------


def _training_images(manifest: datasets.DatasetManifest, cfg: RunConfig, exclude_class: Optional[str]) -> list[Image2D]:
    root = Path(manifest.root)
    items = list(manifest.items)
    if exclude_class:
        items = datasets.filter_training_slices(
            manifest, datasets.SplitSpec(exclude_class, "exclude-test-class")
        )
    images = []
    for item in items:
        images.append(_load_image(root / item.image_ref, cfg))
    if not images:
        raise DataError("no training slices left after filtering")
    return images


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    manifest = datasets.build_manifest(args.dataset, cfg)
    images = _training_images(manifest, cfg, args.exclude_class)

    backend = create_encoder(cfg)
    if not hasattr(backend, "adapter_parameters"):
        if hasattr(backend, "enable_adapters"):
            backend.enable_adapters(cfg["train.adapter_rank"])
        else:
            raise ConfigError(
                f"encoder backend {cfg['encoder.backend']!r} has no trainable adapters; "
                "use encoder.backend=trainable-stub or an adapter-capable external backend"
            )
    tc = training.TrainConfig.from_run_config(cfg)
    out = Path(args.out)
    result = training.train(
        images,
        backend,
        tc,
        episode_params=EpisodeParams.from_config(cfg),
        felz_params=FelzParams(cfg["superpixels.scale"], cfg["superpixels.sigma"], cfg["superpixels.min_size"]),
        cache_dir=cfg["superpixels.cache_dir"] or None,
        out_dir=out,
        window=(cfg["protoseg.window"], cfg["protoseg.window"]),
        threshold=cfg["protoseg.occupancy_threshold"],
        alpha=cfg["protoseg.alpha"],
        resume_from=args.resume,
    )
    _write_json(out / "run.json", {"config": cfg.as_dict(), "seed": cfg["seed"], "steps": len(result.history)})
    final = result.history[-1]
    print(f"finetune: {len(result.history)} steps, final total loss {final['total']:.4f}; artifacts in {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser / entry
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoprompt", description="One-shot segmentation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML config file (flat dotted keys)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("infer", help="segment one query from one support pair")
    common(p)
    p.add_argument("--support-image", required=True)
    p.add_argument("--support-mask", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--prompts", default=None, help="comma-separated prompt kinds (e.g. bbox,cent)")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("evaluate", help="run the volumetric k-fold protocol")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default=None, help="restrict to one class id")
    p.add_argument("--pipeline", default="one-shot", choices=["one-shot", "oracle-truth", "empty"])
    p.add_argument("--wilcoxon", default=None, help="other report.json to compare against")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="prompt-combination sweep on a 2D pairs dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--combo", default=None, help="single combination, e.g. cent+conf")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("finetune", help="episodic adapter fine-tuning")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--steps", type=int, default=None, help="override train.steps")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--exclude-class", default=None, help="drop training slices containing this class")
    p.set_defaults(fn=cmd_finetune)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.fn(args)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except (DataError, InvalidComparisonError) as exc:
        return _fail(str(exc), EXIT_DATA)
    except BackendUnavailableError as exc:
        return _fail(str(exc), EXIT_BACKEND)
    except InvalidArgumentError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except ProtoPromptError as exc:
        return _fail(str(exc), EXIT_FAIL)


def entrypoint() -> None:
    sys.exit(main())
