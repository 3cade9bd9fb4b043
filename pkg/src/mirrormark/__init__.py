"""Distortion-free multi-bit text watermarking by mirroring sampling randomness."""

from .attacks import AttackSpec, copy_paste, edit_attack
from .cabs import CabsParams, CabsScheduler, NaiveScheduler, gini
from .chunkbayes import ChunkModel, detect_then_decode, glrt_detector, marginal_detector, simulate_chunks
from .codec import DetectionReport, MessageSequence, PiModel, WatermarkParams, detect, encode
from .evalkit import auc, bit_accuracy, empirical_eer, tpr_at_fpr
from .lm import FixedSource, SyntheticSource
from .mirror import mirror, mirror_1bit, pivot
from .rng import SecretKey, prf_uniform
from .theory import eer_gumbel_asymptotic, eer_gumbel_exact, eer_tournament

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "copy_paste", "edit_attack",
    "CabsParams", "CabsScheduler", "NaiveScheduler", "gini",
    "ChunkModel", "detect_then_decode", "glrt_detector", "marginal_detector", "simulate_chunks",
    "DetectionReport", "MessageSequence", "PiModel", "WatermarkParams", "detect", "encode",
    "auc", "bit_accuracy", "empirical_eer", "tpr_at_fpr",
    "FixedSource", "SyntheticSource",
    "mirror", "mirror_1bit", "pivot",
    "SecretKey", "prf_uniform",
    "eer_gumbel_asymptotic", "eer_gumbel_exact", "eer_tournament",
]
