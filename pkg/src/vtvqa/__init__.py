"""Video text VQA: spatio-temporal recovery, clue aggregation, metrics, synthetic tasks."""

__version__ = "0.1.0"

from .clues import CluesConfig, CluesModule
from .entities import (
    BoundingBox,
    EntityKind,
    EntitySequence,
    VideoSample,
    VisualEntity,
    build_entity_sequence,
    derive_granularity_boxes,
    load_annotations,
)
from .evaluation import EvalReport, anls_score, evaluate, levenshtein, vqa_accuracy
from .model import (
    ModelConfig,
    VideoTextQAModel,
    frame_local_mask,
    global_attention_mask,
    load_checkpoint,
    save_checkpoint,
)
from .spatial_bias import SpatialBias, SpatialBiasConfig, bias_tensor, pair_bias
from .synth import SynthConfig, generate_dataset, write_datasets
from .temporal_adapter import TemporalAdapter, TemporalAdapterConfig
from .training import TrainConfig, train, train_step
from .vocab import TokenVocab

__all__ = [
    "BoundingBox",
    "CluesConfig",
    "CluesModule",
    "EntityKind",
    "EntitySequence",
    "EvalReport",
    "ModelConfig",
    "SpatialBias",
    "SpatialBiasConfig",
    "SynthConfig",
    "TemporalAdapter",
    "TemporalAdapterConfig",
    "TokenVocab",
    "TrainConfig",
    "VideoSample",
    "VideoTextQAModel",
    "VisualEntity",
    "anls_score",
    "bias_tensor",
    "build_entity_sequence",
    "derive_granularity_boxes",
    "evaluate",
    "frame_local_mask",
    "generate_dataset",
    "global_attention_mask",
    "levenshtein",
    "load_annotations",
    "load_checkpoint",
    "pair_bias",
    "save_checkpoint",
    "train",
    "train_step",
    "vqa_accuracy",
    "write_datasets",
]
