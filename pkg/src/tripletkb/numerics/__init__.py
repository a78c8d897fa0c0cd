"""Tensor arithmetic, differentiable layers, seeded randomness, gradcheck."""

from .gradcheck import DEFAULT_MAX_COORDS, DEFAULT_STEP, GradCheckReport, grad_check
from .rng import Rng, gumbel_from_uniform, gumbel_sample
from .tensor import (
    FfnWeights,
    Tensor,
    as_tensor,
    cosine_distance,
    ffn_forward,
    index_rows,
    logsumexp,
    matmul,
    pick,
    softmax,
    stack,
    take_pairs,
)

__all__ = [
    "DEFAULT_MAX_COORDS",
    "DEFAULT_STEP",
    "FfnWeights",
    "GradCheckReport",
    "Rng",
    "Tensor",
    "as_tensor",
    "cosine_distance",
    "ffn_forward",
    "grad_check",
    "gumbel_from_uniform",
    "gumbel_sample",
    "index_rows",
    "logsumexp",
    "matmul",
    "pick",
    "softmax",
    "stack",
    "take_pairs",
]
