"""Forward pass from one feature record to head/relation embeddings.

The pipeline: a bilinear object-token affinity matrix, row-max relevance
per object, hard attention over objects (Gumbel-Softmax while training,
exact argmax one-hot at evaluation), then one feed-forward network for the
attended object (head) and another for the fused vector (relation).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping

import numpy as np

from .errors import DomainError, ShapeError
from .features import SampleFeatures
from .numerics import (
    FfnWeights,
    Rng,
    Tensor,
    as_tensor,
    ffn_forward,
    matmul,
    softmax,
)

ATTENTION_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ModelDims:
    """Embedding sizes; defaults follow the full-scale configuration."""

    feature_dim: int = 768    # width of upstream encoder outputs
    affinity_dim: int = 768   # projection width for the affinity bilinear form
    ffn_hidden: int = 1024    # inner width of both feed-forward networks
    entity_dim: int = 300     # head/relation/tail embedding width


@dataclass(frozen=True)
class FfnArrays:
    """Plain-array weights of one two-layer feed-forward network."""

    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray


@dataclass
class ModelParams:
    """All learnable tensors.

    ``tail_table`` has one row per vocabulary answer and must keep exactly
    that row count at all times.
    """

    dims: ModelDims
    q_proj: np.ndarray   # (affinity_dim, feature_dim) token projection
    v_proj: np.ndarray   # (affinity_dim, feature_dim) object projection
    head_ffn: FfnArrays  # feature_dim -> ffn_hidden -> entity_dim
    rel_ffn: FfnArrays
    tail_table: np.ndarray  # (vocab, entity_dim)

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {"q_proj": self.q_proj, "v_proj": self.v_proj}
        for prefix, ffn in (("head_ffn", self.head_ffn), ("rel_ffn", self.rel_ffn)):
            out[f"{prefix}.fc1_w"] = ffn.fc1_w
            out[f"{prefix}.fc1_b"] = ffn.fc1_b
            out[f"{prefix}.fc2_w"] = ffn.fc2_w
            out[f"{prefix}.fc2_b"] = ffn.fc2_b
        out["tail_table"] = self.tail_table
        return out

    @classmethod
    def from_named(cls, dims: ModelDims,
                   arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        def ffn(prefix: str) -> FfnArrays:
            return FfnArrays(fc1_w=arrays[f"{prefix}.fc1_w"],
                             fc1_b=arrays[f"{prefix}.fc1_b"],
                             fc2_w=arrays[f"{prefix}.fc2_w"],
                             fc2_b=arrays[f"{prefix}.fc2_b"])

        return cls(dims=dims, q_proj=arrays["q_proj"], v_proj=arrays["v_proj"],
                   head_ffn=ffn("head_ffn"), rel_ffn=ffn("rel_ffn"),
                   tail_table=arrays["tail_table"])

    def as_leaves(self) -> dict[str, Tensor]:
        """Fresh gradient-tracking tensors for one optimization step."""
        return {name: Tensor(a, requires_grad=True)
                for name, a in self.named_arrays().items()}

    def copy(self) -> "ModelParams":
        return ModelParams.from_named(
            self.dims, {k: v.copy() for k, v in self.named_arrays().items()})

    def vocab_size(self) -> int:
        return self.tail_table.shape[0]

    def validate(self, vocab_size: int | None = None) -> None:
        for name, a in self.named_arrays().items():
            if not np.isfinite(a).all():
                raise DomainError(f"parameter {name} contains non-finite values")
        if vocab_size is not None and self.tail_table.shape[0] != vocab_size:
            raise ShapeError(
                f"tail table has {self.tail_table.shape[0]} rows for a "
                f"vocabulary of {vocab_size}")


class AttendMode(Enum):
    TRAIN_SAMPLE = "train_sample"
    EVAL_ARGMAX = "eval_argmax"


@dataclass
class ExtractionResult:
    """Head/relation embeddings plus attention diagnostics for one sample."""

    head: Tensor       # (entity_dim,)
    relation: Tensor   # (entity_dim,)
    attention: np.ndarray  # (K,) attention weights, sums to 1
    relevance: np.ndarray  # (K,) pre-noise relevance logits
    selected_object: int   # argmax of the attention weights


def affinity(tokens, objects, q_proj, v_proj) -> Tensor:
    """Object-token affinity: entry (i, j) = <v_proj @ v_i, q_proj @ q_j>.

    Rows are indexed by objects, columns by question tokens, so a row max
    reads "best-matching token for this object".
    """
    q = matmul(as_tensor(tokens), as_tensor(q_proj).t())   # (D, affinity_dim)
    v = matmul(as_tensor(objects), as_tensor(v_proj).t())  # (K, affinity_dim)
    return matmul(v, q.t())                                # (K, D)


def object_relevance(aff: Tensor) -> Tensor:
    """Row-wise max over tokens: one relevance logit per object."""
    aff = as_tensor(aff)
    if aff.ndim != 2:
        raise ShapeError(f"affinity matrix must be 2-D, got {aff.shape}")
    return aff.max(axis=1)


def attend(relevance, tau: float, mode: AttendMode,
           rng: Rng | None = None, noise: np.ndarray | None = None) -> Tensor:
    """Attention weights over objects.

    TRAIN_SAMPLE draws Gumbel noise (or uses the ``noise`` override) and
    returns the soft, fully differentiable sample softmax((a + g) / tau).
    EVAL_ARGMAX returns an exact one-hot at the argmax of the relevance
    logits, breaking ties toward the lowest object index.
    """
    if tau <= 0.0:
        raise DomainError(f"attention temperature must be > 0, got {tau}")
    relevance = as_tensor(relevance)
    k = relevance.size
    if mode is AttendMode.EVAL_ARGMAX:
        hard = np.zeros(k)
        hard[int(np.argmax(relevance.data))] = 1.0
        return Tensor(hard)
    if noise is None:
        if rng is None:
            raise DomainError("train-mode attention needs an rng or frozen noise")
        noise = rng.gumbels(k)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (k,):
        raise ShapeError(f"noise shape {noise.shape} does not match {k} objects")
    return softmax(relevance + noise, temperature=tau)


def head_entity(objects, alpha, ffn: FfnWeights) -> Tensor:
    """Feed the attention-weighted object vector through the head network."""
    weighted = matmul(as_tensor(alpha), as_tensor(objects))  # (feature_dim,)
    return ffn_forward(weighted, ffn)


def relation(cls, ffn: FfnWeights) -> Tensor:
    """Relation embedding from the fused cross-modal vector."""
    return ffn_forward(as_tensor(cls), ffn)


def _ffn_weights(leaves: Mapping[str, Tensor], prefix: str) -> FfnWeights:
    return FfnWeights(fc1_w=leaves[f"{prefix}.fc1_w"],
                      fc1_b=leaves[f"{prefix}.fc1_b"],
                      fc2_w=leaves[f"{prefix}.fc2_w"],
                      fc2_b=leaves[f"{prefix}.fc2_b"])


def extract_with_tensors(sample: SampleFeatures, leaves: Mapping[str, Tensor],
                         tau: float, mode: AttendMode, rng: Rng | None = None,
                         noise: np.ndarray | None = None) -> ExtractionResult:
    """Forward pass with caller-supplied parameter tensors.

    Passing gradient-tracking leaves makes the returned head/relation part
    of the caller's backward graph; the trainer relies on this.
    """
    objects = np.asarray(sample.objects, dtype=np.float64)
    tokens = np.asarray(sample.tokens, dtype=np.float64)
    cls = np.asarray(sample.cls, dtype=np.float64)

    aff = affinity(tokens, objects, leaves["q_proj"], leaves["v_proj"])
    rel_logits = object_relevance(aff)
    alpha = attend(rel_logits, tau, mode, rng=rng, noise=noise)
    head = head_entity(objects, alpha, _ffn_weights(leaves, "head_ffn"))
    rel = relation(cls, _ffn_weights(leaves, "rel_ffn"))
    return ExtractionResult(
        head=head,
        relation=rel,
        attention=alpha.data.copy(),
        relevance=rel_logits.data.copy(),
        selected_object=int(np.argmax(alpha.data)),
    )


def extract(sample: SampleFeatures, params: ModelParams, tau: float = 1.0,
            mode: AttendMode = AttendMode.EVAL_ARGMAX, rng: Rng | None = None,
            noise: np.ndarray | None = None) -> ExtractionResult:
    """Forward pass straight from stored parameters (no gradient tape)."""
    leaves = {name: Tensor(a) for name, a in params.named_arrays().items()}
    return extract_with_tensors(sample, leaves, tau, mode, rng=rng, noise=noise)
