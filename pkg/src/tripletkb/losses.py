"""The three training objectives and their batch-averaged sum.

Per instance: a margin hinge contrasts the positive tail against every
in-batch negative under cosine distance, an MSE term pins head + relation
onto the positive tail exactly, and a negative log likelihood classifies
head + relation over the whole tail table. The batch objective averages
per-instance totals, so batch size does not rescale the margin pressure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .numerics import (
    Tensor,
    as_tensor,
    cosine_distance,
    index_rows,
    logsumexp,
    matmul,
    pick,
    stack,
    take_pairs,
)


@dataclass(frozen=True)
class LossToggles:
    """Per-term enable flags (the structure-ablation switches)."""

    transe: bool = True
    consistency: bool = True
    semantic: bool = True


@dataclass
class LossInstance:
    """One training instance's embeddings plus its positive tail index."""

    head: Tensor
    relation: Tensor
    positive: int


@dataclass
class BatchLossInput:
    instances: list[LossInstance]
    tail_table: Tensor  # (vocab, entity_dim), shared across the batch
    margin: float


@dataclass
class LossBreakdown:
    """Per-term values for one batch; ``objective`` is the backward entry.

    ``total`` always equals the sum of the enabled terms. ``objective`` is
    the scalar graph node the trainer differentiates; it is not serialized.
    """

    transe: float
    consistency: float
    semantic: float
    total: float
    objective: Tensor | None = None


def mine_negatives(batch: BatchLossInput, index: int) -> list[int]:
    """Distinct tail indices of other batch instances with different answers.

    Order is first occurrence within the batch, which keeps training
    deterministic for a fixed shuffle.
    """
    if not batch.instances:
        raise DomainError("cannot mine negatives from an empty batch")
    positive = batch.instances[index].positive
    negatives: list[int] = []
    seen = {positive}
    for inst in batch.instances:
        if inst.positive not in seen:
            seen.add(inst.positive)
            negatives.append(inst.positive)
    return negatives


def transe_loss(head, relation, positives: Sequence, negatives: Sequence,
                margin: float) -> Tensor:
    """Sum of hinge terms max(0, margin + d(h+r, t+) - d(h+r, t-))."""
    if margin <= 0.0:
        raise DomainError(f"margin must be > 0, got {margin}")
    hr = as_tensor(head) + as_tensor(relation)
    total = Tensor(0.0)
    for t_pos in positives:
        d_pos = cosine_distance(hr, t_pos)
        for t_neg in negatives:
            d_neg = cosine_distance(hr, t_neg)
            total = total + (d_pos - d_neg + margin).relu()
    return total


def consistency_loss(head, relation, t_pos) -> Tensor:
    """Mean squared error between head + relation and the positive tail."""
    hr = as_tensor(head) + as_tensor(relation)
    t_pos = as_tensor(t_pos)
    if hr.shape != t_pos.shape:
        raise ShapeError(f"embedding shapes disagree: {hr.shape} vs {t_pos.shape}")
    diff = hr - t_pos
    return (diff * diff).mean()


def semantic_loss(head, relation, tail_table, positive: int) -> Tensor:
    """Negative log likelihood of the positive tail under table logits."""
    tail_table = as_tensor(tail_table)
    if not 0 <= positive < tail_table.shape[0]:
        raise DomainError(f"positive index {positive} outside table of "
                          f"{tail_table.shape[0]} rows")
    hr = as_tensor(head) + as_tensor(relation)
    logits = matmul(tail_table, hr)  # (vocab,)
    return logsumexp(logits, axis=0) - pick(logits, positive)


def _normalize_rows(x: Tensor, what: str) -> Tensor:
    norms_sq = (x * x).sum(axis=1, keepdims=True)
    if np.any(norms_sq.data <= 0.0):
        raise DomainError(f"zero-norm {what} row; cosine distance undefined")
    return x / norms_sq.sqrt()


def cosine_distance_rows(queries: Tensor, table: Tensor) -> Tensor:
    """All-pairs cosine distances between query rows and table rows."""
    qn = _normalize_rows(queries, "query")
    tn = _normalize_rows(table, "tail")
    return 1.0 - matmul(qn, tn.t())


def total_loss(batch: BatchLossInput,
               toggles: LossToggles = LossToggles()) -> LossBreakdown:
    """Batch objective: per-instance terms averaged over the batch.

    Negatives come from :func:`mine_negatives`; each instance sums its own
    hinge pairs before averaging. Disabled terms contribute exactly zero
    and route no gradient.
    """
    if not batch.instances:
        raise DomainError("cannot compute a loss over an empty batch")
    if batch.margin <= 0.0:
        raise DomainError(f"margin must be > 0, got {batch.margin}")
    n = len(batch.instances)
    vocab_size = batch.tail_table.shape[0]
    positives = np.array([inst.positive for inst in batch.instances],
                         dtype=np.intp)
    if positives.min() < 0 or positives.max() >= vocab_size:
        raise DomainError("positive tail index outside the vocabulary")

    heads = stack([inst.head for inst in batch.instances])
    rels = stack([inst.relation for inst in batch.instances])
    hr = heads + rels  # (n, entity_dim)

    zero = Tensor(0.0)
    transe_term = consistency_term = semantic_term = zero

    if toggles.transe:
        rows: list[int] = []
        pos_cols: list[int] = []
        neg_cols: list[int] = []
        for i in range(n):
            for neg in mine_negatives(batch, i):
                rows.append(i)
                pos_cols.append(int(positives[i]))
                neg_cols.append(neg)
        if rows:
            dist = cosine_distance_rows(hr, batch.tail_table)  # (n, vocab)
            d_pos = take_pairs(dist, rows, pos_cols)
            d_neg = take_pairs(dist, rows, neg_cols)
            transe_term = ((d_pos - d_neg + batch.margin).relu()).sum() * (1.0 / n)

    if toggles.consistency:
        t_pos = index_rows(batch.tail_table, positives)  # (n, entity_dim)
        diff = hr - t_pos
        consistency_term = (diff * diff).mean()

    if toggles.semantic:
        logits = matmul(hr, batch.tail_table.t())  # (n, vocab)
        nll = logsumexp(logits, axis=1) - take_pairs(logits, np.arange(n),
                                                     positives)
        semantic_term = nll.mean()

    objective = transe_term + consistency_term + semantic_term
    return LossBreakdown(
        transe=float(transe_term),
        consistency=float(consistency_term),
        semantic=float(semantic_term),
        total=float(objective),
        objective=objective,
    )
