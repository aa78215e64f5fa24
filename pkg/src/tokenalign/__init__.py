"""Token-distribution alignment between a trainable and a frozen encoder.

Exact optimal transport with attention-learned marginals, kernel-mixture MMD,
an InfoNCE baseline, toy encoder training and modality-gap diagnostics.
"""
from .attentive import (AttentiveLossConfig, CrossAttentionParams, attention_weights,
                        attentive_ot_loss, lambda_at, shannon_entropy)
from .contrastive import ContrastiveConfig, infonce_loss
from .data import EmbeddingTable, PairedDataset, SynthConfig, filter_pairs, rank_pairs, synth_generate
from .encoders import EncoderParams, encode, load_checkpoint, save_checkpoint
from .errors import AlignError
from .gap import GapReport, gap_report, mean_pool, normalized_centroid_distance, overlap_fraction, pca_2d
from .mmd import KernelMixtureSpec, bandwidths_from_data, mmd_squared
from .ot import TransportPlan, WeightedPointCloud, cost_matrix, emd_exact, emd_loss_grad
from .training import TrainConfig, TrainHistory, desk_config, train_alignment

__version__ = "0.1.0"

__all__ = [
    "AlignError", "AttentiveLossConfig", "ContrastiveConfig", "CrossAttentionParams", "EmbeddingTable",
    "EncoderParams", "GapReport", "KernelMixtureSpec", "PairedDataset", "SynthConfig", "TrainConfig",
    "TrainHistory", "TransportPlan", "WeightedPointCloud", "attention_weights", "attentive_ot_loss",
    "bandwidths_from_data", "cost_matrix", "desk_config", "emd_exact", "emd_loss_grad", "encode",
    "filter_pairs", "gap_report", "infonce_loss", "lambda_at", "load_checkpoint", "mean_pool",
    "mmd_squared", "normalized_centroid_distance", "overlap_fraction", "pca_2d", "rank_pairs",
    "save_checkpoint", "shannon_entropy", "synth_generate", "train_alignment",
]
