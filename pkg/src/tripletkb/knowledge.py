"""Accumulates extracted triplets into a persistent knowledge base.

MKB-1 files pair a text manifest (magic line, canonical-JSON header, one
JSON provenance line per triplet) with a float64 blob holding the tail
table followed by each triplet's head and relation embeddings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CompatibilityError,
    FormatError,
    IntegrityError,
    SealError,
)
from .extractor import AttendMode, extract
from .features import AnswerVocab, Dataset, canonical_json, expand_annotations
from .trainer import Checkpoint

KB_FORMAT = "MKB-1"


@dataclass(frozen=True)
class KnowledgeTriplet:
    """One accumulated fact: embeddings plus where they came from."""

    head: np.ndarray      # (entity_dim,) snapshot at accumulation time
    relation: np.ndarray  # (entity_dim,)
    tail_index: int
    sample_id: str
    image_id: str
    selected_object: int
    stage: str


class KnowledgeBase:
    """Vocabulary, tail table, and provenance-carrying triplets.

    Mutable while building; :meth:`seal` freezes it permanently. Sealed
    bases are safe for concurrent read-only querying.
    """

    def __init__(self, vocab: AnswerVocab, tail_table: np.ndarray,
                 triplets: list[KnowledgeTriplet] | None = None,
                 stage_history: list[dict] | None = None):
        self.vocab = vocab
        self.tail_table = tail_table
        self.triplets: list[KnowledgeTriplet] = list(triplets or [])
        self.stage_history = list(stage_history or [])
        self._sealed = False

    @property
    def sealed(self) -> bool:
        return self._sealed

    def seal(self) -> None:
        self._sealed = True

    def add(self, triplet: KnowledgeTriplet) -> None:
        if self._sealed:
            raise SealError("knowledge base is sealed; writes are rejected")
        if triplet.tail_index >= len(self.vocab):
            raise CompatibilityError(
                f"triplet tail index {triplet.tail_index} outside vocabulary "
                f"of {len(self.vocab)}")
        self.triplets.append(triplet)

    def counts_by_stage(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for t in self.triplets:
            counts[t.stage] = counts.get(t.stage, 0) + 1
        return counts

    def __len__(self) -> int:
        return len(self.triplets)


def accumulate(data: Dataset, ckpt: Checkpoint,
               existing: KnowledgeBase | None = None) -> KnowledgeBase:
    """Extract one triplet per training instance in evaluation mode.

    Deterministic: repeated runs over the same inputs produce element-wise
    identical triplets. The returned base carries the checkpoint's live
    vocabulary and tail table; ``existing`` contributes its triplets and is
    never mutated.
    """
    if existing is not None and not ckpt.vocab.extends(existing.vocab):
        raise CompatibilityError(
            "checkpoint vocabulary does not extend the existing knowledge base")
    stage = ckpt.last_stage()
    kb = KnowledgeBase(
        vocab=ckpt.vocab.copy(),
        tail_table=ckpt.params.tail_table.copy(),
        triplets=list(existing.triplets) if existing is not None else [],
        stage_history=list(ckpt.stage_history),
    )
    for inst in expand_annotations(data):
        tail_index = ckpt.vocab.index_of(inst.answer)
        result = extract(inst.sample, ckpt.params, mode=AttendMode.EVAL_ARGMAX)
        kb.add(KnowledgeTriplet(
            head=result.head.data.copy(),
            relation=result.relation.data.copy(),
            tail_index=tail_index,
            sample_id=inst.sample.sample_id,
            image_id=inst.sample.image_id,
            selected_object=result.selected_object,
            stage=stage,
        ))
    return kb


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------


def seal_and_save(kb: KnowledgeBase, directory: Path | str) -> list[Path]:
    """Write manifest + blob into ``directory`` and seal the base."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest_path = directory / "kb.mkb"
    blob_path = directory / "kb.bin"

    entity_dim = int(kb.tail_table.shape[1])
    parts = [np.ascontiguousarray(kb.tail_table, dtype="<f8").tobytes()]
    records = []
    for t in kb.triplets:
        parts.append(np.ascontiguousarray(t.head, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(t.relation, dtype="<f8").tobytes())
        records.append({
            "image_id": t.image_id,
            "sample_id": t.sample_id,
            "selected_object": t.selected_object,
            "stage": t.stage,
            "tail_index": t.tail_index,
        })
    blob = b"".join(parts)

    header = {
        "blob": blob_path.name,
        "blob_bytes": len(blob),
        "counts_by_stage": kb.counts_by_stage(),
        "entity_dim": entity_dim,
        "format": KB_FORMAT,
        "num_triplets": len(kb.triplets),
        "stage_history": kb.stage_history,
        "vocab": list(kb.vocab.answers),
    }
    lines = [KB_FORMAT, canonical_json(header)]
    lines += [canonical_json(r) for r in records]
    try:
        manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        blob_path.write_bytes(blob)
    except OSError as exc:
        raise IntegrityError(f"failed to write knowledge base to "
                             f"{directory}: {exc}") from exc
    kb.seal()
    return [manifest_path, blob_path]


def load_kb(directory: Path | str) -> KnowledgeBase:
    """Load a sealed knowledge base saved by :func:`seal_and_save`."""
    directory = Path(directory)
    manifest_path = directory / "kb.mkb"
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != KB_FORMAT:
        found = lines[0] if lines else "<empty>"
        raise FormatError(f"{manifest_path}: expected magic {KB_FORMAT!r}, "
                          f"found {found!r}")
    header = json.loads(lines[1])
    blob = (directory / header["blob"]).read_bytes()
    if len(blob) != int(header["blob_bytes"]):
        raise IntegrityError(
            f"{directory / header['blob']}: blob is {len(blob)} bytes, "
            f"manifest says {header['blob_bytes']}")

    vocab = AnswerVocab(header["vocab"])
    entity_dim = int(header["entity_dim"])
    row_bytes = 8 * entity_dim
    table_bytes = row_bytes * len(vocab)
    expected = table_bytes + 2 * row_bytes * int(header["num_triplets"])
    if len(blob) != expected:
        raise IntegrityError(f"{manifest_path}: blob layout does not match "
                             f"header (expected {expected} bytes)")
    tail_table = np.frombuffer(blob, dtype="<f8", count=len(vocab) * entity_dim
                               ).reshape(len(vocab), entity_dim).copy()

    triplets = []
    offset = table_bytes
    for line_no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        rec = json.loads(line)
        head = np.frombuffer(blob, dtype="<f8", count=entity_dim,
                             offset=offset).copy()
        rel = np.frombuffer(blob, dtype="<f8", count=entity_dim,
                            offset=offset + row_bytes).copy()
        offset += 2 * row_bytes
        triplets.append(KnowledgeTriplet(
            head=head, relation=rel, tail_index=int(rec["tail_index"]),
            sample_id=rec["sample_id"], image_id=rec["image_id"],
            selected_object=int(rec["selected_object"]), stage=rec["stage"]))
    if len(triplets) != int(header["num_triplets"]):
        raise IntegrityError(f"{manifest_path}: {len(triplets)} triplet records, "
                             f"header says {header['num_triplets']}")

    kb = KnowledgeBase(vocab=vocab, tail_table=tail_table, triplets=triplets,
                       stage_history=header["stage_history"])
    kb.seal()
    return kb


# ----------------------------------------------------------------------
# graph export
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class GraphNode:
    id: str
    kind: str   # "image" or "answer"
    label: str


@dataclass(frozen=True)
class GraphEdge:
    source: str  # image node id
    target: str  # answer node id
    sample_id: str
    selected_object: int
    stage: str


@dataclass
class KnowledgeGraphExport:
    """Merged view: one node per image, one per answer, one edge per triplet."""

    nodes: list[GraphNode]
    edges: list[GraphEdge]
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "edges": [{"sample_id": e.sample_id, "selected_object": e.selected_object,
                       "source": e.source, "stage": e.stage, "target": e.target}
                      for e in self.edges],
            "metadata": self.metadata,
            "nodes": [{"id": n.id, "kind": n.kind, "label": n.label}
                      for n in self.nodes],
        }

    def write(self, path: Path | str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(self.to_dict()) + "\n", encoding="utf-8")
        return path


def export_graph(kb: KnowledgeBase) -> KnowledgeGraphExport:
    """Merge tails by answer and heads by image; keep one edge per triplet.

    Duplicate (image, answer) pairs stay as separate edges; their count is
    recorded in the export metadata.
    """
    if not kb.sealed:
        raise SealError("knowledge base must be sealed before export")

    image_nodes: dict[str, GraphNode] = {}
    answer_nodes: dict[str, GraphNode] = {}
    edges: list[GraphEdge] = []
    pair_counts: dict[tuple[str, str], int] = {}
    for t in kb.triplets:
        answer = kb.vocab.answer_of(t.tail_index)
        img_id = f"img:{t.image_id}"
        ans_id = f"ans:{answer}"
        if img_id not in image_nodes:
            image_nodes[img_id] = GraphNode(id=img_id, kind="image",
                                            label=t.image_id)
        if ans_id not in answer_nodes:
            answer_nodes[ans_id] = GraphNode(id=ans_id, kind="answer",
                                             label=answer)
        edges.append(GraphEdge(source=img_id, target=ans_id,
                               sample_id=t.sample_id,
                               selected_object=t.selected_object,
                               stage=t.stage))
        pair_counts[(img_id, ans_id)] = pair_counts.get((img_id, ans_id), 0) + 1

    duplicates = sum(c - 1 for c in pair_counts.values() if c > 1)
    return KnowledgeGraphExport(
        nodes=list(image_nodes.values()) + list(answer_nodes.values()),
        edges=edges,
        metadata={"duplicate_image_answer_edges": duplicates,
                  "num_answers": len(answer_nodes),
                  "num_images": len(image_nodes)},
    )
