"""Segmentation quality control without ground truth.

A convolutional autoencoder trained on trusted masks reconstructs any
predicted mask into a pseudo ground truth (pGT). Dice and Hausdorff scores
against the pGT, a pixel-wise disagreement map, alert flags and model
rankings follow from that reconstruction.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import SegQCError
from .masks import CARDIAC_CLASSES, ClassSet, LabelMask, center_fit, decode_argmax, encode_one_hot
from .metrics import InconsistencyMap, StructureScore, dsc, hausdorff, pseudo_scores, xor_map
from .model import (
    ArchitectureConfig,
    AutoencoderModel,
    Checkpoint,
    TrainConfig,
    build,
    reconstruct,
    reconstruct_many,
    train,
)
from .monitor import (
    ERRONEOUS,
    OK,
    SUSPICIOUS,
    QualityRecord,
    RankingTable,
    ReferenceScore,
    Thresholds,
    flag,
    pearson_r,
    scatter_export,
    simulate_ranking,
    spearman_rs,
)
from .synth import CorruptionSpec, corrupt, synth_generate

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig", "AutoencoderModel", "CARDIAC_CLASSES", "Checkpoint", "ClassSet",
    "CorruptionSpec", "ERRONEOUS", "InconsistencyMap", "LabelMask", "OK", "QualityRecord",
    "RankingTable", "ReferenceScore", "SUSPICIOUS", "SegQCError", "StructureScore", "Thresholds",
    "TrainConfig", "build", "center_fit", "corrupt", "decode_argmax", "dsc", "encode_one_hot",
    "flag", "hausdorff", "load_checkpoint", "pearson_r", "pseudo_scores", "reconstruct",
    "reconstruct_many", "save_checkpoint", "scatter_export", "simulate_ranking", "spearman_rs",
    "synth_generate", "train", "xor_map",
]
