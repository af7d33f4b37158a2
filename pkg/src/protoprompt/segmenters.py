"""Promptable refinement backends: (image, prompts) -> (mask, score).

`StubSegmenter` gives tests a deterministic refinement stage: `box-fill`
fills the prompt box, `component-echo` returns the selected component
unchanged. External variants adapt promptable-segmentation checkpoints; the
medsam variant accepts box prompts only, matching how those weights were
trained.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from .errors import BackendUnavailableError, InvalidArgumentError, ProtoPromptError
from .prompts import BBOX, CENT, CONF, NEG, PromptBundle
from .types import NEGATIVE, BinaryMask, Image2D, tight_bounding_box


@runtime_checkable
class PromptableSegmenter(Protocol):
    name: str
    accepts: frozenset[str]

    def segment(self, img: Image2D, prompts: PromptBundle) -> tuple[BinaryMask, float]: ...


def segment(seg: PromptableSegmenter, img: Image2D, prompts: PromptBundle) -> tuple[BinaryMask, float]:
    """Run a backend, enforcing prompt-kind support and the output-shape contract."""
    unsupported = prompts.enabled - seg.accepts
    if unsupported:
        raise InvalidArgumentError(f"backend {seg.name!r} does not accept prompt kinds {sorted(unsupported)}")
    mask, score = seg.segment(img, prompts)
    if mask.shape != img.shape:
        raise ProtoPromptError(f"backend {seg.name!r} returned mask {mask.shape} for image {img.shape}")
    return mask, float(score)


class StubSegmenter:
    """Deterministic test backend; score echoes the component confidence."""

    MODES = ("box-fill", "component-echo")

    def __init__(self, mode: str = "box-fill"):
        if mode not in self.MODES:
            raise InvalidArgumentError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.mode = mode
        self.name = f"stub-{mode}"
        self.accepts = frozenset((BBOX, CENT, CONF, NEG))

    def segment(self, img: Image2D, prompts: PromptBundle) -> tuple[BinaryMask, float]:
        out = np.zeros(img.shape, dtype=np.uint8)
        if self.mode == "component-echo":
            comp = prompts.source_component
            out[comp.pixels[:, 0], comp.pixels[:, 1]] = 1
        else:
            box = prompts.bbox
            if box is None:
                # box-less bundle: fall back to the component's tight box
                box = tight_bounding_box(prompts.source_component.as_mask(img.shape))
            out[box.row_min : box.row_max + 1, box.col_min : box.col_max + 1] = 1
        return BinaryMask(out), prompts.source_component.confidence


_EXTERNAL_WEIGHTS = {
    "external-huge": "facebook/sam-vit-huge",
    "external-base": "facebook/sam-vit-base",
    "external-medsam-base": "flaviagiammarino/medsam-vit-base",
}


class ExternalSegmenter:
    """Adapter around a pretrained promptable-segmentation checkpoint.

    Multi-candidate outputs are resolved by the backend's own quality score:
    the highest-scoring candidate wins.
    """

    def __init__(self, variant: str = "external-huge", weights_path: str = "", device: str = "cpu"):
        if variant not in _EXTERNAL_WEIGHTS:
            raise InvalidArgumentError(f"unknown external segmenter variant {variant!r}")
        self.name = variant
        self.weights_path = weights_path or _EXTERNAL_WEIGHTS[variant]
        self.device = device
        if variant == "external-medsam-base":
            self.accepts = frozenset((BBOX,))  # those weights were trained on box prompts only
        else:
            self.accepts = frozenset((BBOX, CENT, CONF, NEG))
        self._model = None
        self._processor = None
        self._torch = None

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch
            from transformers import SamModel, SamProcessor
        except ImportError as exc:
            raise BackendUnavailableError(
                "external segmenter needs the optional 'transformers' extra: pip install 'protoprompt[external]'"
            ) from exc
        try:
            self._model = SamModel.from_pretrained(self.weights_path).eval().to(self.device)
            self._processor = SamProcessor.from_pretrained(self.weights_path)
        except Exception as exc:
            raise BackendUnavailableError(
                f"cannot load segmenter weights from {self.weights_path!r}: {exc}"
            ) from exc
        self._torch = torch

    def segment(self, img: Image2D, prompts: PromptBundle) -> tuple[BinaryMask, float]:
        self._load()
        torch = self._torch
        px = img.pixels
        if px.shape[2] == 1:
            px = np.repeat(px, 3, axis=2)
        lo, hi = px.min(), px.max()
        rgb = ((px - lo) / (hi - lo) * 255.0 if hi > lo else np.zeros_like(px)).astype(np.uint8)

        kwargs: dict = {}
        if prompts.bbox is not None:
            b = prompts.bbox
            kwargs["input_boxes"] = [[[float(b.col_min), float(b.row_min), float(b.col_max), float(b.row_max)]]]
        if prompts.points:
            kwargs["input_points"] = [[[float(p.col), float(p.row)] for p in prompts.points]]
            kwargs["input_labels"] = [[0 if p.polarity == NEGATIVE else 1 for p in prompts.points]]
        inputs = self._processor(rgb, return_tensors="pt", **kwargs).to(self.device)
        with torch.no_grad():
            out = self._model(**inputs, multimask_output=True)
        masks = self._processor.image_processor.post_process_masks(
            out.pred_masks.cpu(), inputs["original_sizes"].cpu(), inputs["reshaped_input_sizes"].cpu()
        )[0][0]  # (num_candidates, H, W) bool
        scores = out.iou_scores.cpu().reshape(-1)
        best = int(torch.argmax(scores))
        return BinaryMask(masks[best].numpy().astype(np.uint8)), float(scores[best])


def create_segmenter(cfg) -> PromptableSegmenter:
    """Instantiate the backend selected by ``segmenter.backend``."""
    kind = cfg["segmenter.backend"]
    if kind == "stub-box-fill":
        return StubSegmenter("box-fill")
    if kind == "stub-component-echo":
        return StubSegmenter("component-echo")
    if kind in _EXTERNAL_WEIGHTS:
        return ExternalSegmenter(kind, weights_path=cfg["segmenter.weights_path"], device=cfg["encoder.device"])
    raise BackendUnavailableError(f"unknown segmenter backend {kind!r}")
