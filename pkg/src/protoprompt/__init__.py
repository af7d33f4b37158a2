"""One-shot segmentation: prototype matching -> geometric prompts -> promptable refinement."""

from .config import RunConfig, load_config
from .encoders import EncoderBackend, StubEncoder, create_encoder, encode
from .errors import (
    BackendUnavailableError,
    ClassNotFoundError,
    ConfigError,
    CorruptDatasetError,
    DataError,
    EmptyDatasetError,
    EmptyPredictionError,
    EmptySupportError,
    InvalidArgumentError,
    InvalidComparisonError,
    NonFiniteLossError,
    ProtoPromptError,
    SchemaVersionError,
)
from .metrics import dice, iou
from .pipeline import InferenceResult, build_pipeline, run_one_shot
from .prompts import PromptBundle, extract_prompts
from .protoseg import Prototype, PrototypeSet, SimilarityMap, coarse_segment
from .segmenters import PromptableSegmenter, StubSegmenter, create_segmenter, segment
from .stats import crossval_aggregate, wilcoxon_signed_rank
from .types import (
    BinaryMask,
    BoundingBox,
    Episode,
    FeatureMap,
    Image2D,
    PointPrompt,
    ProbabilityMask,
    resize,
)

__version__ = "0.1.0"

__all__ = [
    "BackendUnavailableError",
    "BinaryMask",
    "BoundingBox",
    "ClassNotFoundError",
    "ConfigError",
    "CorruptDatasetError",
    "DataError",
    "EmptyDatasetError",
    "EmptyPredictionError",
    "EmptySupportError",
    "EncoderBackend",
    "Episode",
    "FeatureMap",
    "Image2D",
    "InferenceResult",
    "InvalidArgumentError",
    "InvalidComparisonError",
    "NonFiniteLossError",
    "PointPrompt",
    "ProbabilityMask",
    "PromptBundle",
    "PromptableSegmenter",
    "ProtoPromptError",
    "Prototype",
    "PrototypeSet",
    "RunConfig",
    "SchemaVersionError",
    "SimilarityMap",
    "StubEncoder",
    "StubSegmenter",
    "build_pipeline",
    "coarse_segment",
    "create_encoder",
    "create_segmenter",
    "crossval_aggregate",
    "dice",
    "encode",
    "extract_prompts",
    "iou",
    "load_config",
    "resize",
    "run_one_shot",
    "segment",
    "wilcoxon_signed_rank",
]
