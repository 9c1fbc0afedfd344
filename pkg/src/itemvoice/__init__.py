"""Item-level depression assessment from speech: segment models plus voting."""

from .corpus import MADRS, PHQ8, Manifest, Recording, ScaleDefinition, binarize_labels, load_wav, parse_manifest
from .dsp import FeatureExtractor, LogMelSpectrogram, StftConfig, build_mel_filterbank, log_mel, stft_power
from .models import CnnTrunkConfig, ItemModel, ModelSpec
from .pipeline import Dataset, Target, build_dataset
from .segmentation import GridGeometry, SegmentSequence, grid_geometry, make_cnn_samples, make_sequences
from .training import TrainConfig, TrainedItemModel, random_search, train_depression_model, train_item
from .voting import (
    CombinationRule,
    EvalReport,
    ItemDecision,
    SegmentProbabilityGrid,
    combine_items,
    export_timeline,
    f_scores,
    hard_vote,
    soft_vote,
)

__version__ = "0.1.0"

__all__ = [
    "CnnTrunkConfig",
    "CombinationRule",
    "Dataset",
    "EvalReport",
    "FeatureExtractor",
    "GridGeometry",
    "ItemDecision",
    "ItemModel",
    "LogMelSpectrogram",
    "MADRS",
    "Manifest",
    "ModelSpec",
    "PHQ8",
    "Recording",
    "ScaleDefinition",
    "SegmentProbabilityGrid",
    "SegmentSequence",
    "StftConfig",
    "Target",
    "TrainConfig",
    "TrainedItemModel",
    "binarize_labels",
    "build_dataset",
    "build_mel_filterbank",
    "combine_items",
    "export_timeline",
    "f_scores",
    "grid_geometry",
    "hard_vote",
    "load_wav",
    "log_mel",
    "make_cnn_samples",
    "make_sequences",
    "parse_manifest",
    "random_search",
    "soft_vote",
    "stft_power",
    "train_depression_model",
    "train_item",
]
