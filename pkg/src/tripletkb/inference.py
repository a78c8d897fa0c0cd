"""Ranking inference, evaluation metrics, the ensemble rule, benchmarks.

Answer prediction is knowledge-graph completion: rank every tail-table row
by cosine distance to head + relation and take the closest. Distance ties
break toward the lower tail index, making the ranking a total order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AlignmentError, DomainError
from .extractor import AttendMode, ModelDims, extract
from .features import (
    AnswerVocab,
    Dataset,
    DatasetMeta,
    SampleFeatures,
    Split,
    load_dataset,
    write_dataset,
)
from .numerics import Rng
from .trainer import Checkpoint, init_params, load_checkpoint, save_checkpoint

DEFAULT_ENSEMBLE_THRESHOLD = 0.07


@dataclass
class RankResult:
    """Tail candidates for one query, ascending by cosine distance."""

    sample_id: str
    entries: list[tuple[int, float]]  # (tail index, distance)
    selected_object: int
    attention: np.ndarray


def rank_distances(hr: np.ndarray, tail_table: np.ndarray) -> np.ndarray:
    """Cosine distance from one query embedding to every tail row."""
    hr = np.asarray(hr, dtype=np.float64)
    table = np.asarray(tail_table, dtype=np.float64)
    q_norm = np.linalg.norm(hr)
    t_norms = np.linalg.norm(table, axis=1)
    if q_norm == 0.0 or np.any(t_norms == 0.0):
        raise DomainError("cosine distance undefined for zero-norm embedding")
    return 1.0 - (table @ hr) / (t_norms * q_norm)


def rank_against_table(hr: np.ndarray, tail_table: np.ndarray,
                       k: int) -> list[tuple[int, float]]:
    """Top-k (index, distance) pairs; stable sort keeps ties index-ordered."""
    distances = rank_distances(hr, tail_table)
    order = np.argsort(distances, kind="stable")
    top = order[:min(k, len(order))]
    return [(int(i), float(distances[i])) for i in top]


def rank_batch(hr_rows: np.ndarray, tail_table: np.ndarray,
               k: int) -> list[list[tuple[int, float]]]:
    """Rank a whole query set in one distance matrix.

    Equivalent to :func:`rank_against_table` per row (same tie rule) but
    streams the tail table once for every query instead of once per query.
    """
    hr_rows = np.asarray(hr_rows, dtype=np.float64)
    table = np.asarray(tail_table, dtype=np.float64)
    q_norms = np.linalg.norm(hr_rows, axis=1)
    t_norms = np.linalg.norm(table, axis=1)
    if np.any(q_norms == 0.0) or np.any(t_norms == 0.0):
        raise DomainError("cosine distance undefined for zero-norm embedding")
    distances = 1.0 - (hr_rows / q_norms[:, None]) @ (table / t_norms[:, None]).T
    k = min(k, table.shape[0])
    results = []
    for row in distances:
        if k < table.shape[0]:
            # ties at the k-th distance must resolve to the lowest indices
            kth = np.partition(row, k - 1)[k - 1]
            below = np.flatnonzero(row < kth)
            equal = np.flatnonzero(row == kth)
            pool = np.concatenate([below, equal[:k - below.size]])
            top = pool[np.argsort(row[pool], kind="stable")]
        else:
            top = np.argsort(row, kind="stable")[:k]
        results.append([(int(i), float(row[i])) for i in top])
    return results


def infer(sample: SampleFeatures, ckpt: Checkpoint, k: int) -> RankResult:
    """Evaluation-mode extraction followed by a full tail ranking."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if len(ckpt.vocab) == 0:
        raise DomainError("cannot rank over an empty vocabulary")
    result = extract(sample, ckpt.params, mode=AttendMode.EVAL_ARGMAX)
    hr = result.head.data + result.relation.data
    entries = rank_against_table(hr, ckpt.params.tail_table, k)
    return RankResult(sample_id=sample.sample_id, entries=entries,
                      selected_object=result.selected_object,
                      attention=result.attention)


# ----------------------------------------------------------------------
# metrics
# ----------------------------------------------------------------------


def vqa_accuracy(predicted: str, annotations: Sequence[tuple[str, int]]) -> float:
    """Soft score min(matching annotator count / 3, 1)."""
    if not annotations:
        raise DomainError("cannot score a sample without annotations")
    count = sum(c for answer, c in annotations if answer == predicted)
    return min(count / 3.0, 1.0)


def majority_answer(annotations: Sequence[tuple[str, int]]) -> str:
    """Most-annotated answer; count ties go to the lexicographically smallest."""
    if not annotations:
        raise DomainError("cannot pick a majority answer without annotations")
    return min(annotations, key=lambda ac: (-ac[1], ac[0]))[0]


@dataclass
class SamplePrediction:
    sample_id: str
    predicted: str
    majority: str
    score: float
    top1_match: bool


@dataclass
class EvalReport:
    """Aggregate metrics; ``m_accuracy`` weights every answer group equally."""

    overall_accuracy: float
    m_accuracy: float
    top1_accuracy: float
    per_answer: list[tuple[str, int, float]]  # (answer, n, accuracy)
    predictions: list[SamplePrediction] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "m_accuracy": self.m_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "per_answer": [{"accuracy": acc, "answer": a, "n": n}
                           for a, n, acc in self.per_answer],
            "top1_accuracy": self.top1_accuracy,
        }


def score_predictions(pairs: Sequence[tuple[SampleFeatures, str]],
                      answer_mode: str) -> EvalReport:
    """Aggregate (sample, predicted answer) pairs into an EvalReport.

    Samples are grouped by their majority ground-truth answer; the mean
    accuracy metric is the unweighted mean over those groups.
    """
    if not pairs:
        raise DomainError("cannot evaluate zero samples")
    predictions: list[SamplePrediction] = []
    groups: dict[str, list[float]] = {}
    for sample, predicted in pairs:
        majority = majority_answer(sample.answers)
        if answer_mode == "exact":
            score = float(predicted == majority)
        else:
            score = vqa_accuracy(predicted, sample.answers)
        predictions.append(SamplePrediction(
            sample_id=sample.sample_id, predicted=predicted, majority=majority,
            score=score, top1_match=predicted == majority))
        groups.setdefault(majority, []).append(score)

    per_answer = [(answer, len(scores), float(np.mean(scores)))
                  for answer, scores in sorted(groups.items())]
    return EvalReport(
        overall_accuracy=float(np.mean([p.score for p in predictions])),
        m_accuracy=float(np.mean([acc for _, _, acc in per_answer])),
        top1_accuracy=float(np.mean([p.top1_match for p in predictions])),
        per_answer=per_answer,
        predictions=predictions,
    )


def evaluate(data: Dataset, ckpt: Checkpoint,
             split: Split = Split.TEST) -> EvalReport:
    """Predict over one split and aggregate the metric suite."""
    samples = data.split(split)
    if not samples:
        raise DomainError(f"dataset has no {split.value} samples to evaluate")
    pairs = []
    for sample in samples:
        top = infer(sample, ckpt, k=1)
        predicted = ckpt.vocab.answer_of(top.entries[0][0])
        pairs.append((sample, predicted))
    return score_predictions(pairs, data.meta.answer_mode)


# ----------------------------------------------------------------------
# ensembling with a partner model
# ----------------------------------------------------------------------


class EnsembleSource(str, Enum):
    PRIMARY = "primary_model"
    PARTNER = "partner_model"


@dataclass(frozen=True)
class EnsembleDecision:
    chosen: str
    source: EnsembleSource
    gap: float
    threshold: float


def ensemble_from_candidates(candidates: Sequence[tuple[str, float]],
                             partner_answer: str,
                             threshold: float = DEFAULT_ENSEMBLE_THRESHOLD,
                             ) -> EnsembleDecision:
    """Trust the top candidate only when its top-2 gap clears the bar.

    ``candidates`` are (answer, distance) pairs in ascending distance order.
    ``gap`` is distance[1] - distance[0] (infinite for a single candidate);
    the primary answer wins iff gap > threshold, otherwise the partner
    model's answer is used.
    """
    if not candidates:
        raise DomainError("ensemble needs at least one ranked candidate")
    if len(candidates) == 1:
        gap = math.inf
    else:
        gap = candidates[1][1] - candidates[0][1]
    if gap > threshold:
        return EnsembleDecision(chosen=candidates[0][0],
                                source=EnsembleSource.PRIMARY, gap=gap,
                                threshold=threshold)
    return EnsembleDecision(chosen=partner_answer,
                            source=EnsembleSource.PARTNER, gap=gap,
                            threshold=threshold)


def ensemble(primary: RankResult, vocab: AnswerVocab, partner_answer: str,
             threshold: float = DEFAULT_ENSEMBLE_THRESHOLD) -> EnsembleDecision:
    """Gap rule applied to a :class:`RankResult` (see ensemble_from_candidates)."""
    candidates = [(vocab.answer_of(i), d) for i, d in primary.entries]
    return ensemble_from_candidates(candidates, partner_answer, threshold)


def oracle_ensemble(primary_answers: Sequence[str],
                    partner_answers: Sequence[str],
                    annotations: Sequence[Sequence[tuple[str, int]]]) -> float:
    """Upper bound: per sample, the better of the two models' soft scores."""
    if not (len(primary_answers) == len(partner_answers) == len(annotations)):
        raise AlignmentError(
            f"prediction lists are misaligned: {len(primary_answers)} primary, "
            f"{len(partner_answers)} partner, {len(annotations)} annotated")
    if not annotations:
        raise DomainError("cannot score zero samples")
    scores = [max(vqa_accuracy(p, ann), vqa_accuracy(q, ann))
              for p, q, ann in zip(primary_answers, partner_answers, annotations)]
    return float(np.mean(scores))


# ----------------------------------------------------------------------
# ranking-time benchmark
# ----------------------------------------------------------------------


@dataclass
class BenchRow:
    size: int
    inference_s: float
    ranking_s: float
    ratio: float  # ranking share of end-to-end inference


@dataclass
class BenchResult:
    rows: list[BenchRow]
    queries: int
    k: int
    prefix_consistent: bool

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "prefix_consistent": self.prefix_consistent,
            "queries": self.queries,
            "rows": [{"inference_s": r.inference_s, "ranking_s": r.ranking_s,
                      "ratio": r.ratio, "size": r.size} for r in self.rows],
        }


def _bench_checkpoint(size: int, full_table: np.ndarray, params_base,
                      vocab_answers: list[str]) -> Checkpoint:
    params = params_base.copy()
    params.tail_table = full_table[:size].copy()
    return Checkpoint(params=params, vocab=AnswerVocab(vocab_answers[:size]),
                      stage_history=[{"event": "train", "stage": "pretrain",
                                      "epochs": 0, "seed": 0}])


def _bench_queries(rng: Rng, dims: ModelDims, count: int,
                   num_objects: int, tokens: int) -> Dataset:
    samples = []
    for i in range(count):
        samples.append(SampleFeatures(
            sample_id=f"bench_{i:05d}",
            image_id=f"bench_img_{i:05d}",
            objects=rng.standard_normal((num_objects, dims.feature_dim)
                                        ).astype("<f4"),
            tokens=rng.standard_normal((tokens, dims.feature_dim)).astype("<f4"),
            cls=rng.standard_normal(dims.feature_dim).astype("<f4"),
            answers=(("bench", 10),),
            split=Split.TEST,
        ))
    meta = DatasetMeta(num_objects=num_objects, feature_dim=dims.feature_dim)
    return Dataset(meta=meta, samples=samples, vocab=AnswerVocab(["bench"]))


def bench_ranking(sizes: Sequence[int], queries: int, work_dir: Path | str,
                  k: int = 10, seed: int = 7,
                  dims: ModelDims | None = None) -> BenchResult:
    """Measure end-to-end inference vs. isolated ranking per tail-table size.

    For each size, a synthetic checkpoint (shared tail-table prefix across
    sizes) and a fixed query set are written to disk; the end-to-end timing
    covers loading both artifacts, extracting, ranking, and collecting
    predictions, while the ranking timer isolates the distance-plus-sort
    step. Runs single-threaded over queries for stable numbers.
    """
    if not sizes or min(sizes) < 1:
        raise DomainError("benchmark sizes must be positive")
    if queries < 1:
        raise DomainError("benchmark needs at least one query")
    dims = dims or ModelDims()
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)

    rng = Rng(seed)
    max_size = max(sizes)
    vocab_answers = [f"ans_{i:06d}" for i in range(max_size)]
    params_base = init_params(AnswerVocab(["seed"]), dims, rng)
    full_table = rng.uniform(-1.0 / np.sqrt(dims.entity_dim),
                             1.0 / np.sqrt(dims.entity_dim),
                             (max_size, dims.entity_dim))

    ds_path = work_dir / "bench_queries.mkf"
    write_dataset(_bench_queries(rng, dims, queries, num_objects=36,
                                 tokens=12), ds_path)

    rows = []
    prefix_top: dict[int, list[list[tuple[int, float]]]] = {}
    check_queries = min(3, queries)
    smallest = min(sizes)
    for size in sorted(sizes):
        ckpt_path = work_dir / f"bench_ckpt_{size}.mkc"
        save_checkpoint(_bench_checkpoint(size, full_table, params_base,
                                          vocab_answers), ckpt_path)

        start = time.perf_counter()
        ckpt = load_checkpoint(ckpt_path)
        data = load_dataset(ds_path)
        hr_rows = np.empty((len(data.samples), dims.entity_dim))
        for i, sample in enumerate(data.samples):
            result = extract(sample, ckpt.params, mode=AttendMode.EVAL_ARGMAX)
            hr_rows[i] = result.head.data + result.relation.data
        t0 = time.perf_counter()
        ranked = rank_batch(hr_rows, ckpt.params.tail_table, k)
        ranking_s = time.perf_counter() - t0
        predictions = list(zip((s.sample_id for s in data.samples), ranked))
        inference_s = time.perf_counter() - start
        rows.append(BenchRow(size=size, inference_s=inference_s,
                             ranking_s=ranking_s,
                             ratio=ranking_s / inference_s))

        # full rankings over the shared prefix for the consistency check
        prefix_top[size] = []
        for sample in data.samples[:check_queries]:
            result = extract(sample, ckpt.params, mode=AttendMode.EVAL_ARGMAX)
            hr = result.head.data + result.relation.data
            full = rank_against_table(hr, ckpt.params.tail_table, size)
            restricted = [(i, d) for i, d in full if i < smallest][:k]
            prefix_top[size].append(restricted)

    reference = prefix_top[smallest]
    prefix_consistent = all(prefix_top[size] == reference for size in sizes)
    return BenchResult(rows=rows, queries=queries, k=k,
                       prefix_consistent=prefix_consistent)
