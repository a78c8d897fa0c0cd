"""Export pipeline: region features + annotations -> MKF-1 feature files.

Source layout (one directory):
    annotations.jsonl        one JSON object per sample:
                             {"sample_id", "image_id", "question",
                              "answers": [[answer, count], ...],
                              "split": "train" | "val" | "test"}
    regions/<image_id>.npz   arrays "features" (36, 2048) float32 and
                             "boxes" (36, 4) float32, boxes normalized
                             to [0, 1] as (x1, y1, x2, y2)

The exporter runs every sample through the frozen encoder, writes the
MKF-1 manifest and blob, then re-reads the files through the engine's
loader so a failed export never leaves unvalidated artifacts behind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from tripletkb.features import (
    AnswerVocab,
    Dataset,
    DatasetMeta,
    SampleFeatures,
    Split,
    load_dataset,
    write_dataset,
)

from .encoder import ENCODER_WIDTH, CrossModalEncoder
from .errors import ExportError

NUM_REGIONS = 36
APPEARANCE_DIM = 2048
BOX_DIM = 4


@dataclass(frozen=True)
class RawRegionFeatures:
    """Detector outputs for one image: appearance vectors plus boxes."""

    features: np.ndarray  # (36, 2048)
    boxes: np.ndarray     # (36, 4), coordinates in [0, 1]

    def validate(self, image_id: str) -> None:
        if self.features.shape != (NUM_REGIONS, APPEARANCE_DIM):
            raise ExportError(
                f"image {image_id}: region features are {self.features.shape}, "
                f"expected ({NUM_REGIONS}, {APPEARANCE_DIM})")
        if self.boxes.shape != (NUM_REGIONS, BOX_DIM):
            raise ExportError(
                f"image {image_id}: boxes are {self.boxes.shape}, expected "
                f"({NUM_REGIONS}, {BOX_DIM})")
        if not np.isfinite(self.features).all():
            raise ExportError(f"image {image_id}: non-finite region features")
        if self.boxes.min() < 0.0 or self.boxes.max() > 1.0:
            raise ExportError(
                f"image {image_id}: box coordinates outside [0, 1]")


@dataclass(frozen=True)
class SourceSample:
    sample_id: str
    image_id: str
    question: str
    answers: tuple[tuple[str, int], ...]
    split: str


def load_source(source_dir: Path | str) -> list[SourceSample]:
    source_dir = Path(source_dir)
    annotations = source_dir / "annotations.jsonl"
    if not annotations.exists():
        raise ExportError(f"{annotations} is missing")
    samples = []
    for line_no, line in enumerate(
            annotations.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            samples.append(SourceSample(
                sample_id=rec["sample_id"],
                image_id=rec["image_id"],
                question=rec["question"],
                answers=tuple((a, int(c)) for a, c in rec["answers"]),
                split=rec["split"],
            ))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ExportError(
                f"{annotations}:{line_no}: bad annotation record: {exc}"
            ) from exc
    if not samples:
        raise ExportError(f"{annotations} holds no samples")
    return samples


def load_regions(source_dir: Path | str, image_id: str) -> RawRegionFeatures:
    path = Path(source_dir) / "regions" / f"{image_id}.npz"
    if not path.exists():
        raise ExportError(f"image {image_id}: region file {path} is missing")
    with np.load(path) as blob:
        try:
            regions = RawRegionFeatures(features=blob["features"],
                                        boxes=blob["boxes"])
        except KeyError as exc:
            raise ExportError(f"image {image_id}: region file lacks "
                              f"array {exc}") from exc
    regions.validate(image_id)
    return regions


def export_features(source_dir: Path | str, encoder: CrossModalEncoder,
                    out_dir: Path | str) -> list[Path]:
    """Encode every source sample and write a validated MKF-1 file set."""
    source_dir = Path(source_dir)
    out_dir = Path(out_dir)
    source_samples = load_source(source_dir)

    encoded: list[SampleFeatures] = []
    vocab = AnswerVocab()
    for src in source_samples:
        regions = load_regions(source_dir, src.image_id)
        try:
            objects, tokens, fused = encoder.encode(
                src.question, regions.features, regions.boxes)
        except ExportError:
            raise
        except Exception as exc:
            raise ExportError(
                f"sample {src.sample_id}: encoder failed: {exc}") from exc
        encoded.append(SampleFeatures(
            sample_id=src.sample_id,
            image_id=src.image_id,
            objects=objects.astype("<f4"),
            tokens=tokens.astype("<f4"),
            cls=fused.astype("<f4"),
            answers=src.answers,
            split=Split(src.split),
        ))
        if Split(src.split) == Split.TRAIN:
            for answer, _ in src.answers:
                vocab.add(answer)

    dataset = Dataset(
        meta=DatasetMeta(num_objects=NUM_REGIONS, feature_dim=ENCODER_WIDTH),
        samples=encoded, vocab=vocab)
    written = write_dataset(dataset, out_dir / "features.mkf")

    # every export must survive the engine loader's full validation
    try:
        load_dataset(out_dir / "features.mkf")
    except Exception as exc:
        raise ExportError(f"exported files failed loader validation: "
                          f"{exc}") from exc
    return written
