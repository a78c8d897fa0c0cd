"""Feature interchange format (MKF-1), vocabularies, synthetic datasets.

An MKF-1 dataset is a UTF-8 text manifest plus a flat binary blob of
little-endian float32 values. The manifest starts with the magic line
``MKF-1``, followed by one canonical-JSON header line, followed by one
canonical-JSON record line per sample. Each sample's blob slice holds, in
row-major order: the object matrix (K x d_v), the token matrix (D x d_v),
then the fused cross-modal vector (d_v).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DomainError,
    FormatError,
    IntegrityError,
    SchemaError,
    VocabularyError,
)
from .numerics import Rng

FEATURE_FORMAT = "MKF-1"

DEFAULT_NUM_OBJECTS = 36
DEFAULT_FEATURE_DIM = 768


def canonical_json(obj) -> str:
    """The one JSON serialization used for every manifest we write."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True,
                      separators=(",", ":"))


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


@dataclass(frozen=True)
class SampleFeatures:
    """One VQA instance as upstream encoder outputs.

    ``objects`` is (K, d_v), ``tokens`` is (D, d_v) with D >= 1 varying per
    sample, ``cls`` is the fused (d_v,) vector. ``answers`` pairs each
    annotated answer string with its annotator count.
    """

    sample_id: str
    image_id: str
    objects: np.ndarray
    tokens: np.ndarray
    cls: np.ndarray
    answers: tuple[tuple[str, int], ...]
    split: Split

    def validate(self, num_objects: int, feature_dim: int) -> None:
        if self.objects.shape != (num_objects, feature_dim):
            raise SchemaError(
                f"sample {self.sample_id}: object matrix is {self.objects.shape}, "
                f"expected ({num_objects}, {feature_dim})")
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1 \
                or self.tokens.shape[1] != feature_dim:
            raise SchemaError(
                f"sample {self.sample_id}: token matrix is {self.tokens.shape}")
        if self.cls.shape != (feature_dim,):
            raise SchemaError(
                f"sample {self.sample_id}: fused vector is {self.cls.shape}")
        for block in (self.objects, self.tokens, self.cls):
            if not np.isfinite(block).all():
                raise IntegrityError(
                    f"sample {self.sample_id}: non-finite feature values")
        if self.split in (Split.TRAIN, Split.VAL) and not self.answers:
            raise SchemaError(
                f"sample {self.sample_id}: {self.split.value} sample without answers")
        for answer, count in self.answers:
            if count < 1:
                raise SchemaError(
                    f"sample {self.sample_id}: answer {answer!r} has count {count}")


class AnswerVocab:
    """Append-only bijection between answer strings and tail indices.

    Indices never change once assigned; stages extend the vocabulary by
    appending new answers, never by reordering.
    """

    def __init__(self, answers: Iterable[str] = ()):
        self._answers: list[str] = []
        self._index: dict[str, int] = {}
        for answer in answers:
            self.add(answer)

    def add(self, answer: str) -> int:
        idx = self._index.get(answer)
        if idx is None:
            idx = len(self._answers)
            self._answers.append(answer)
            self._index[answer] = idx
        return idx

    def index_of(self, answer: str) -> int:
        try:
            return self._index[answer]
        except KeyError:
            raise VocabularyError(f"answer {answer!r} is not in the vocabulary") from None

    def answer_of(self, index: int) -> str:
        return self._answers[index]

    @property
    def answers(self) -> tuple[str, ...]:
        return tuple(self._answers)

    def extends(self, other: "AnswerVocab") -> bool:
        """True when this vocabulary is an append-only extension of ``other``."""
        return len(self) >= len(other) and \
            self._answers[:len(other)] == list(other.answers)

    def copy(self) -> "AnswerVocab":
        return AnswerVocab(self._answers)

    def __len__(self) -> int:
        return len(self._answers)

    def __contains__(self, answer: str) -> bool:
        return answer in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, AnswerVocab) and self._answers == other._answers

    def __repr__(self) -> str:
        return f"AnswerVocab({len(self)} answers)"


@dataclass(frozen=True)
class DatasetMeta:
    num_objects: int = DEFAULT_NUM_OBJECTS
    feature_dim: int = DEFAULT_FEATURE_DIM
    answer_mode: str = "soft"  # "soft" (annotator counts) or "exact" (top-1 match)


@dataclass
class Dataset:
    """Immutable-after-load collection of samples plus their vocabulary."""

    meta: DatasetMeta
    samples: list[SampleFeatures]
    vocab: AnswerVocab

    def split(self, split: Split) -> list[SampleFeatures]:
        return [s for s in self.samples if s.split == split]

    def validate(self) -> None:
        for sample in self.samples:
            sample.validate(self.meta.num_objects, self.meta.feature_dim)
            if sample.split == Split.TRAIN:
                for answer, _ in sample.answers:
                    if answer not in self.vocab:
                        raise SchemaError(
                            f"train answer {answer!r} missing from vocabulary")


@dataclass(frozen=True)
class TrainingInstance:
    """One (sample, answer) pair; the unit the trainer iterates over."""

    sample: SampleFeatures
    answer: str
    count: int


def build_vocab(datasets: Sequence[Dataset],
                existing: AnswerVocab | None = None) -> AnswerVocab:
    """Union of training answers, preserving any existing index assignment."""
    vocab = existing.copy() if existing is not None else AnswerVocab()
    for dataset in datasets:
        for sample in dataset.split(Split.TRAIN):
            for answer, _ in sample.answers:
                vocab.add(answer)
    return vocab


def expand_annotations(dataset: Dataset) -> list[TrainingInstance]:
    """One training instance per distinct (sample, answer) pair."""
    instances = []
    for sample in dataset.split(Split.TRAIN):
        for answer, count in sample.answers:
            instances.append(TrainingInstance(sample=sample, answer=answer,
                                              count=count))
    return instances


# ----------------------------------------------------------------------
# MKF-1 reading and writing
# ----------------------------------------------------------------------


def _as_f32(block: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(block, dtype="<f4")


def write_dataset(dataset: Dataset, manifest_path: Path | str) -> list[Path]:
    """Write manifest + blob; returns the paths written."""
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    k, dv = dataset.meta.num_objects, dataset.meta.feature_dim

    records = []
    blob_parts = []
    offset = 0
    for sample in dataset.samples:
        raw = b"".join(_as_f32(b).tobytes()
                       for b in (sample.objects, sample.tokens, sample.cls))
        records.append({
            "answers": [[a, c] for a, c in sample.answers],
            "image_id": sample.image_id,
            "length": len(raw),
            "num_tokens": int(sample.tokens.shape[0]),
            "offset": offset,
            "sample_id": sample.sample_id,
            "split": sample.split.value,
        })
        blob_parts.append(raw)
        offset += len(raw)

    header = {
        "answer_mode": dataset.meta.answer_mode,
        "blob": blob_path.name,
        "blob_bytes": offset,
        "feature_dim": dv,
        "format": FEATURE_FORMAT,
        "num_objects": k,
        "num_samples": len(dataset.samples),
        "vocab": list(dataset.vocab.answers),
    }
    lines = [FEATURE_FORMAT, canonical_json(header)]
    lines += [canonical_json(r) for r in records]
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    blob_path.write_bytes(b"".join(blob_parts))
    return [manifest_path, blob_path]


def load_dataset(manifest_path: Path | str) -> Dataset:
    """Load and fully validate an MKF-1 dataset."""
    manifest_path = Path(manifest_path)
    text = manifest_path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != FEATURE_FORMAT:
        found = lines[0] if lines else "<empty>"
        raise FormatError(f"{manifest_path}: expected magic {FEATURE_FORMAT!r}, "
                          f"found {found!r}")
    if len(lines) < 2:
        raise FormatError(f"{manifest_path}: missing header line")
    try:
        header = json.loads(lines[1])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: bad header JSON: {exc}") from exc

    k = int(header["num_objects"])
    dv = int(header["feature_dim"])
    meta = DatasetMeta(num_objects=k, feature_dim=dv,
                       answer_mode=header.get("answer_mode", "soft"))
    blob_path = manifest_path.parent / header["blob"]
    blob = blob_path.read_bytes()
    if len(blob) != int(header["blob_bytes"]):
        raise IntegrityError(
            f"{blob_path}: blob is {len(blob)} bytes, manifest says "
            f"{header['blob_bytes']}")

    samples = []
    for line_no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}:{line_no}: bad record JSON") from exc
        d = int(rec["num_tokens"])
        if d < 1:
            raise SchemaError(f"{manifest_path}:{line_no}: num_tokens must be >= 1")
        expected = 4 * dv * (k + d + 1)
        if int(rec["length"]) != expected:
            raise SchemaError(
                f"{manifest_path}:{line_no}: record length {rec['length']} does "
                f"not match dims (expected {expected})")
        offset, length = int(rec["offset"]), int(rec["length"])
        if offset < 0 or offset + length > len(blob):
            raise IntegrityError(
                f"{manifest_path}:{line_no}: record [{offset}, {offset + length}) "
                f"is out of blob bounds ({len(blob)} bytes)")
        flat = np.frombuffer(blob, dtype="<f4", count=length // 4, offset=offset)
        objects = flat[:k * dv].reshape(k, dv)
        tokens = flat[k * dv:(k + d) * dv].reshape(d, dv)
        cls = flat[(k + d) * dv:]
        samples.append(SampleFeatures(
            sample_id=rec["sample_id"],
            image_id=rec["image_id"],
            objects=objects,
            tokens=tokens,
            cls=cls,
            answers=tuple((a, int(c)) for a, c in rec["answers"]),
            split=Split(rec["split"]),
        ))
    if len(samples) != int(header["num_samples"]):
        raise SchemaError(
            f"{manifest_path}: {len(samples)} records, header says "
            f"{header['num_samples']}")

    dataset = Dataset(meta=meta, samples=samples,
                      vocab=AnswerVocab(header.get("vocab", [])))
    dataset.validate()
    return dataset


# ----------------------------------------------------------------------
# synthetic datasets with a known oracle
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale synthetic dataset: one object/fused centroid pair per class.

    Each sample of class ``c`` carries its object centroid (plus noise) in a
    row determined by the class, distractor noise elsewhere, its fused
    centroid (plus noise) in ``cls``, and pure-noise tokens. The answer is
    therefore a deterministic function of the designated object row and the
    fused vector.
    """

    classes: int
    per_class: int
    noise_scale: float = 0.1
    seed: int = 7
    num_objects: int = 8
    feature_dim: int = 64
    min_tokens: int = 3
    max_tokens: int = 6
    train_fraction: float = 0.8
    class_prefix: str = "class"
    first_class_index: int = 0

    def validate(self) -> None:
        if self.classes < 2:
            raise DomainError(f"need at least 2 classes, got {self.classes}")
        if self.per_class < 1:
            raise DomainError(f"need at least 1 sample per class")
        if self.noise_scale < 0:
            raise DomainError(f"noise scale must be >= 0, got {self.noise_scale}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise DomainError("train fraction must lie in (0, 1]")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise DomainError("token count range is invalid")

    def class_name(self, c: int) -> str:
        return f"{self.class_prefix}_{self.first_class_index + c}"

    def designated_row(self, c: int) -> int:
        return c % self.num_objects

    def token_count(self, c: int) -> int:
        return self.min_tokens + c % (self.max_tokens - self.min_tokens + 1)


@dataclass(frozen=True)
class SynthOracle:
    """Ground-truth centroids backing the nearest-centroid reference model."""

    spec: SynthSpec
    object_centroids: np.ndarray  # (classes, d_v)
    cls_centroids: np.ndarray     # (classes, d_v)

    def classify(self, sample: SampleFeatures) -> str:
        spec = self.spec
        scores = np.empty(spec.classes)
        for c in range(spec.classes):
            row = sample.objects[spec.designated_row(c)].astype(np.float64)
            scores[c] = (np.sum((row - self.object_centroids[c]) ** 2)
                         + np.sum((sample.cls.astype(np.float64)
                                   - self.cls_centroids[c]) ** 2))
        return spec.class_name(int(np.argmin(scores)))


def _draw_centroids(spec: SynthSpec, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    obj = np.stack([rng.unit_vector(spec.feature_dim) for _ in range(spec.classes)])
    fused = np.stack([rng.unit_vector(spec.feature_dim) for _ in range(spec.classes)])
    return obj, fused


def synthetic_oracle(spec: SynthSpec) -> SynthOracle:
    spec.validate()
    obj, fused = _draw_centroids(spec, Rng(spec.seed))
    return SynthOracle(spec=spec, object_centroids=obj, cls_centroids=fused)


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic dataset; same spec means identical bytes."""
    spec.validate()
    rng = Rng(spec.seed)
    obj_centroids, cls_centroids = _draw_centroids(spec, rng)
    sigma = spec.noise_scale / math.sqrt(spec.feature_dim)

    n_train = int(round(spec.train_fraction * spec.per_class))
    samples = []
    for c in range(spec.classes):
        name = spec.class_name(c)
        row = spec.designated_row(c)
        d = spec.token_count(c)
        for i in range(spec.per_class):
            objects = sigma * rng.standard_normal((spec.num_objects,
                                                   spec.feature_dim))
            objects[row] += obj_centroids[c]
            cls = cls_centroids[c] + sigma * rng.standard_normal(spec.feature_dim)
            tokens = sigma * rng.standard_normal((d, spec.feature_dim))
            split = Split.TRAIN if i < n_train else Split.TEST
            samples.append(SampleFeatures(
                sample_id=f"synth_{spec.first_class_index + c:04d}_{i:04d}",
                image_id=f"img_{spec.first_class_index + c:04d}_{i:04d}",
                objects=_as_f32(objects),
                tokens=_as_f32(tokens),
                cls=_as_f32(cls),
                answers=((name, 10),),
                split=split,
            ))

    vocab = AnswerVocab(spec.class_name(c) for c in range(spec.classes))
    meta = DatasetMeta(num_objects=spec.num_objects,
                       feature_dim=spec.feature_dim, answer_mode="soft")
    dataset = Dataset(meta=meta, samples=samples, vocab=vocab)
    dataset.validate()
    return dataset
