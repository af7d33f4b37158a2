"""End-to-end one-shot inference: coarse matching -> prompts -> refinement.

Images are resized to a square working resolution (default 672) for the
coarse stage and refinement; the final mask is mapped back to the query's
native resolution with nearest-neighbor. An empty coarse prediction
short-circuits: the segmenter is never invoked and the result is an empty
mask. The coarse stage is exposed separately from refinement so ablation
sweeps can reuse one coarse pass across prompt combinations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import protoseg
from .encoders import EncoderBackend, create_encoder
from .errors import EmptyPredictionError, InvalidArgumentError
from .prompts import PromptBundle, extract_prompts
from .segmenters import PromptableSegmenter, create_segmenter, segment
from .types import BinaryMask, Episode, Image2D, ProbabilityMask, resize


@dataclass(frozen=True)
class CoarseResult:
    """Coarse probabilities in the working frame, plus what refinement needs."""

    probs: ProbabilityMask
    query_work: Image2D
    native_shape: tuple[int, int]
    seconds: float


@dataclass(frozen=True)
class InferenceResult:
    mask: BinaryMask  # at the query's native resolution
    coarse: ProbabilityMask  # at the working resolution
    bundle: Optional[PromptBundle]
    score: float
    empty: bool
    timings: dict[str, float] = field(default_factory=dict)


def prepare_coarse(episode: Episode, encoder: EncoderBackend, cfg) -> CoarseResult:
    size = int(cfg["pipeline.image_size"])
    target = (size, size)
    t0 = time.perf_counter()
    support_img = resize(episode.support_image, target)
    support_mask = resize(episode.support_mask, target)
    query_work = resize(episode.query, target)
    probs = protoseg.coarse_segment((support_img, support_mask), query_work, encoder, cfg)
    return CoarseResult(probs, query_work, episode.query.shape, time.perf_counter() - t0)


def refine_from_coarse(
    coarse: CoarseResult,
    segmenter: PromptableSegmenter,
    cfg,
    enabled: Optional[Sequence[str]] = None,
) -> InferenceResult:
    kinds = list(enabled) if enabled is not None else list(cfg["prompts.enabled"])
    t0 = time.perf_counter()
    try:
        bundle = extract_prompts(coarse.probs, kinds, cfg)
    except EmptyPredictionError:
        empty = BinaryMask(np.zeros(coarse.native_shape, dtype=np.uint8))
        t1 = time.perf_counter()
        return InferenceResult(
            mask=empty,
            coarse=coarse.probs,
            bundle=None,
            score=0.0,
            empty=True,
            timings={"coarse_s": coarse.seconds, "prompts_s": t1 - t0, "refine_s": 0.0},
        )
    t1 = time.perf_counter()
    work_mask, score = segment(segmenter, coarse.query_work, bundle)
    native = resize(work_mask, coarse.native_shape)
    t2 = time.perf_counter()
    return InferenceResult(
        mask=native,
        coarse=coarse.probs,
        bundle=bundle,
        score=score,
        empty=False,
        timings={"coarse_s": coarse.seconds, "prompts_s": t1 - t0, "refine_s": t2 - t1},
    )


def run_one_shot(
    episode: Episode,
    encoder: EncoderBackend,
    segmenter: PromptableSegmenter,
    cfg,
    enabled: Optional[Sequence[str]] = None,
) -> InferenceResult:
    return refine_from_coarse(prepare_coarse(episode, encoder, cfg), segmenter, cfg, enabled)


PipelineFn = Callable[[Episode], BinaryMask]


def build_pipeline(cfg, kind: str = "one-shot") -> PipelineFn:
    """A pipeline closure for the evaluation harness.

    ``one-shot`` runs the real pipeline; ``oracle-truth`` returns each
    episode's ground truth (upper-bound sanity); ``empty`` always predicts
    background.
    """
    if kind == "one-shot":
        encoder = create_encoder(cfg)
        segmenter = create_segmenter(cfg)

        def run(episode: Episode) -> BinaryMask:
            return run_one_shot(episode, encoder, segmenter, cfg).mask

        return run
    if kind == "oracle-truth":

        def run(episode: Episode) -> BinaryMask:
            if episode.query_truth is None:
                raise InvalidArgumentError("oracle-truth pipeline needs episodes with query_truth")
            return episode.query_truth

        return run
    if kind == "empty":
        return lambda episode: BinaryMask(np.zeros(episode.query.shape, dtype=np.uint8))
    raise InvalidArgumentError(f"unknown pipeline kind {kind!r}")
