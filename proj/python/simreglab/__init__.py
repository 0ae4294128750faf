"""SimReg pretraining laboratory.

Embedding-similarity regularization for next-token prediction: the combined
loss, its chunk-wise form, classification-margin diagnostics, cosine-geometry
checks, and a seeded training harness. The heavy lifting lives in the
compiled ``_simreglab`` extension.
"""

from ._simreglab import (
    average_angle_from_similarity,
    build_groups,
    ce_margin_bound_check,
    combined_loss,
    cosine_density,
    cosine_moments_mc,
    cross_entropy,
    gradcheck,
    head_share,
    kernel_check,
    lambda_for_dim,
    lr_schedule,
    margin,
    simreg_chunked,
    simreg_sequence,
    softplus,
    tokenize_bytes,
    train_from_config,
    weighted_centers,
    zipf_corpus,
)

__all__ = [
    "average_angle_from_similarity",
    "build_groups",
    "ce_margin_bound_check",
    "combined_loss",
    "cosine_density",
    "cosine_moments_mc",
    "cross_entropy",
    "gradcheck",
    "head_share",
    "kernel_check",
    "lambda_for_dim",
    "lr_schedule",
    "margin",
    "simreg_chunked",
    "simreg_sequence",
    "softplus",
    "tokenize_bytes",
    "train_from_config",
    "weighted_centers",
    "zipf_corpus",
]
