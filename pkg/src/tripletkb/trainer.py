"""AdamW training loop, two-stage vocabulary growth, checkpoint files.

Checkpoints use the MKC-1 layout: a text manifest (magic line + one
canonical-JSON header) next to a float64 little-endian tensor blob.
Reloading and saving a checkpoint reproduces both files byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    CompatibilityError,
    DomainError,
    FormatError,
    IntegrityError,
    StageError,
    TrainingError,
)
from .extractor import (
    AttendMode,
    FfnArrays,
    ModelDims,
    ModelParams,
    extract_with_tensors,
)
from .features import (
    AnswerVocab,
    Dataset,
    canonical_json,
    expand_annotations,
)
from .losses import BatchLossInput, LossBreakdown, LossInstance, LossToggles, total_loss
from .numerics import Rng

CHECKPOINT_FORMAT = "MKC-1"

# Extension draws must not disturb the training stream, so they use a seed
# offset derived from the config seed.
_EXTEND_SEED_SALT = 0x5EED


class Stage(str, Enum):
    PRETRAIN = "pretrain"
    FINETUNE = "finetune"


@dataclass(frozen=True)
class TrainConfig:
    stage: Stage
    learning_rate: float
    epochs: int
    batch_size: int
    temperature: float = 1.0   # Gumbel-Softmax temperature
    margin: float = 1.0        # TransE hinge margin
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 0.0     # global-norm clip; 0 disables
    seed: int = 7
    toggles: LossToggles = LossToggles()
    shuffle: bool = True

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise DomainError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch size must be >= 1")
        if self.temperature <= 0 or self.margin <= 0:
            raise DomainError("temperature and margin must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage"] = self.stage.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["stage"] = Stage(d["stage"])
        d["toggles"] = LossToggles(**d["toggles"])
        return cls(**d)


def default_config(stage: Stage, **overrides) -> TrainConfig:
    """Full-scale defaults: 200 epochs, batch 256, stage-specific rate."""
    lr = 1e-5 if stage == Stage.PRETRAIN else 1e-4
    cfg = TrainConfig(stage=stage, learning_rate=lr, epochs=200, batch_size=256)
    return replace(cfg, **overrides) if overrides else cfg


def desk_config(stage: Stage, **overrides) -> TrainConfig:
    """Small CI-friendly profile for synthetic desk-scale runs."""
    cfg = TrainConfig(stage=stage, learning_rate=2e-3, epochs=30, batch_size=64)
    return replace(cfg, **overrides) if overrides else cfg


def desk_dims(feature_dim: int) -> ModelDims:
    """Model sizes proportionate to a desk-scale feature width."""
    return ModelDims(feature_dim=feature_dim, affinity_dim=feature_dim,
                     ffn_hidden=2 * feature_dim, entity_dim=64)


# ----------------------------------------------------------------------
# initialization
# ----------------------------------------------------------------------


def _uniform_fan_in(rng: Rng, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, (rows, cols))


def _init_ffn(rng: Rng, d_in: int, hidden: int, d_out: int) -> FfnArrays:
    return FfnArrays(
        fc1_w=_uniform_fan_in(rng, hidden, d_in),
        fc1_b=np.zeros(hidden),
        fc2_w=_uniform_fan_in(rng, d_out, hidden),
        fc2_b=np.zeros(d_out),
    )


def uniform_tail_rows(rng: Rng, count: int, entity_dim: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(entity_dim)
    return rng.uniform(-bound, bound, (count, entity_dim))


def init_params(vocab: AnswerVocab, dims: ModelDims, rng: Rng) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases, uniform tail rows."""
    if len(vocab) == 0:
        raise DomainError("cannot initialize parameters for an empty vocabulary")
    return ModelParams(
        dims=dims,
        q_proj=_uniform_fan_in(rng, dims.affinity_dim, dims.feature_dim),
        v_proj=_uniform_fan_in(rng, dims.affinity_dim, dims.feature_dim),
        head_ffn=_init_ffn(rng, dims.feature_dim, dims.ffn_hidden, dims.entity_dim),
        rel_ffn=_init_ffn(rng, dims.feature_dim, dims.ffn_hidden, dims.entity_dim),
        tail_table=uniform_tail_rows(rng, len(vocab), dims.entity_dim),
    )


# ----------------------------------------------------------------------
# AdamW
# ----------------------------------------------------------------------


class AdamW:
    """Decoupled-weight-decay Adam; decay skips bias vectors."""

    def __init__(self, config: TrainConfig):
        self.config = config
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams,
             grads: Mapping[str, np.ndarray]) -> ModelParams:
        cfg = self.config
        self.t += 1
        updated: dict[str, np.ndarray] = {}
        for name, theta in params.named_arrays().items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(theta)
            elif not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for parameter {name}",
                                    diagnostics={"parameter": name, "step": self.t})
            m = self._m.setdefault(name, np.zeros_like(theta))
            v = self._v.setdefault(name, np.zeros_like(theta))
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1 ** self.t)
            v_hat = v / (1.0 - cfg.beta2 ** self.t)
            update = m_hat / (np.sqrt(v_hat) + cfg.eps)
            if cfg.weight_decay and not name.endswith("_b"):
                update = update + cfg.weight_decay * theta
            updated[name] = theta - cfg.learning_rate * update
        return ModelParams.from_named(params.dims, updated)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> None:
    """Scale all gradients in place so their global norm is <= max_norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: AnswerVocab
    stage_history: list[dict] = field(default_factory=list)
    config: TrainConfig | None = None
    rng_state: dict | None = None

    def validate(self) -> None:
        self.params.validate(vocab_size=len(self.vocab))

    def last_stage(self) -> str:
        for event in reversed(self.stage_history):
            if event.get("event") == "train":
                return event["stage"]
        return "untrained"


def save_checkpoint(ckpt: Checkpoint, manifest_path: Path | str) -> list[Path]:
    manifest_path = Path(manifest_path)
    blob_path = manifest_path.with_suffix(".bin")
    ckpt.validate()

    tensors = []
    blob_parts = []
    offset = 0
    for name, a in ckpt.params.named_arrays().items():
        raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
        tensors.append({"name": name, "offset": offset,
                        "shape": list(a.shape)})
        blob_parts.append(raw)
        offset += len(raw)

    dims = ckpt.params.dims
    header = {
        "blob": blob_path.name,
        "blob_bytes": offset,
        "config": ckpt.config.to_dict() if ckpt.config else None,
        "dims": {"affinity_dim": dims.affinity_dim,
                 "entity_dim": dims.entity_dim,
                 "feature_dim": dims.feature_dim,
                 "ffn_hidden": dims.ffn_hidden},
        "format": CHECKPOINT_FORMAT,
        "rng_state": ckpt.rng_state,
        "stage_history": ckpt.stage_history,
        "tensors": tensors,
        "vocab": list(ckpt.vocab.answers),
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(CHECKPOINT_FORMAT + "\n" + canonical_json(header)
                             + "\n", encoding="utf-8")
    blob_path.write_bytes(b"".join(blob_parts))
    return [manifest_path, blob_path]


def load_checkpoint(manifest_path: Path | str) -> Checkpoint:
    manifest_path = Path(manifest_path)
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CHECKPOINT_FORMAT:
        found = lines[0] if lines else "<empty>"
        raise FormatError(f"{manifest_path}: expected magic "
                          f"{CHECKPOINT_FORMAT!r}, found {found!r}")
    header = json.loads(lines[1])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CompatibilityError(
            f"{manifest_path}: header format {header.get('format')!r} does not "
            f"match {CHECKPOINT_FORMAT!r}")
    blob_path = manifest_path.parent / header["blob"]
    blob = blob_path.read_bytes()
    if len(blob) != int(header["blob_bytes"]):
        raise IntegrityError(f"{blob_path}: blob is {len(blob)} bytes, manifest "
                             f"says {header['blob_bytes']}")

    arrays: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(blob, dtype="<f8", count=count,
                             offset=int(spec["offset"]))
        arrays[spec["name"]] = flat.reshape(shape).copy()

    dims = ModelDims(**header["dims"])
    config = TrainConfig.from_dict(header["config"]) if header["config"] else None
    ckpt = Checkpoint(
        params=ModelParams.from_named(dims, arrays),
        vocab=AnswerVocab(header["vocab"]),
        stage_history=header["stage_history"],
        config=config,
        rng_state=header["rng_state"],
    )
    ckpt.validate()
    return ckpt


def extend_for_stage(ckpt: Checkpoint, new_vocab: AnswerVocab,
                     rng: Rng) -> Checkpoint:
    """Grow the tail table for an extended vocabulary.

    Existing rows are preserved bit-exactly; only appended answers receive
    fresh uniform rows.
    """
    if not new_vocab.extends(ckpt.vocab):
        raise StageError("new vocabulary is not an append-only extension of "
                         "the checkpoint vocabulary")
    params = ckpt.params.copy()
    added = len(new_vocab) - len(ckpt.vocab)
    if added > 0:
        fresh = uniform_tail_rows(rng, added, params.dims.entity_dim)
        params.tail_table = np.vstack([params.tail_table, fresh])
    history = list(ckpt.stage_history)
    history.append({"event": "extend", "from": len(ckpt.vocab),
                    "to": len(new_vocab)})
    return Checkpoint(params=params, vocab=new_vocab.copy(),
                      stage_history=history, config=ckpt.config,
                      rng_state=ckpt.rng_state)


# ----------------------------------------------------------------------
# the training loop
# ----------------------------------------------------------------------


def _batch_ranges(n: int, batch_size: int) -> list[tuple[int, int]]:
    # the last incomplete batch is kept
    return [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def train_stage(data: Dataset, ckpt: Checkpoint | None, config: TrainConfig,
                dims: ModelDims | None = None) -> tuple[Checkpoint, list[LossBreakdown]]:
    """Run one training stage and return the checkpoint plus epoch log.

    With ``ckpt=None`` parameters are initialized fresh from the dataset
    vocabulary; otherwise training continues from the checkpoint, whose
    vocabulary must already cover every training answer (grow it first via
    :func:`extend_for_stage`).
    """
    config.validate()
    instances = expand_annotations(data)
    if not instances:
        raise TrainingError("train split is empty")

    rng = Rng(config.seed)
    if ckpt is None:
        vocab = data.vocab.copy()
        model_dims = dims if dims is not None else ModelDims(
            feature_dim=data.meta.feature_dim)
        params = init_params(vocab, model_dims, rng)
        history: list[dict] = []
    else:
        vocab = ckpt.vocab.copy()
        for inst in instances:
            vocab.index_of(inst.answer)  # raises VocabularyError when missing
        params = ckpt.params.copy()
        history = list(ckpt.stage_history)

    positives = np.array([vocab.index_of(inst.answer) for inst in instances],
                         dtype=np.intp)
    optimizer = AdamW(config)
    epoch_log: list[LossBreakdown] = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(instances)) if config.shuffle \
            else np.arange(len(instances))
        sums = np.zeros(4)
        for lo, hi in _batch_ranges(len(instances), config.batch_size):
            batch_idx = order[lo:hi]
            leaves = params.as_leaves()
            batch_instances = []
            for i in batch_idx:
                result = extract_with_tensors(
                    instances[i].sample, leaves, config.temperature,
                    AttendMode.TRAIN_SAMPLE, rng=rng)
                batch_instances.append(LossInstance(
                    head=result.head, relation=result.relation,
                    positive=int(positives[i])))
            batch = BatchLossInput(instances=batch_instances,
                                   tail_table=leaves["tail_table"],
                                   margin=config.margin)
            breakdown = total_loss(batch, config.toggles)
            if not np.isfinite(breakdown.total):
                raise TrainingError(
                    f"loss became non-finite at epoch {epoch}",
                    diagnostics={"epoch": epoch, "batch_start": int(lo),
                                 "transe": breakdown.transe,
                                 "consistency": breakdown.consistency,
                                 "semantic": breakdown.semantic})
            breakdown.objective.backward()
            grads = {name: leaf.grad for name, leaf in leaves.items()
                     if leaf.grad is not None}
            if config.grad_clip > 0:
                clip_gradients(grads, config.grad_clip)
            params = optimizer.step(params, grads)
            weight = len(batch_idx)
            sums += weight * np.array([breakdown.transe, breakdown.consistency,
                                       breakdown.semantic, breakdown.total])
        avg = sums / len(instances)
        epoch_log.append(LossBreakdown(transe=float(avg[0]),
                                       consistency=float(avg[1]),
                                       semantic=float(avg[2]),
                                       total=float(avg[3])))

    history.append({"event": "train", "stage": config.stage.value,
                    "epochs": config.epochs, "seed": config.seed})
    out = Checkpoint(params=params, vocab=vocab, stage_history=history,
                     config=config, rng_state=rng.get_state())
    out.validate()
    return out, epoch_log


def extension_rng(config: TrainConfig) -> Rng:
    """Rng for new tail rows, decoupled from the training stream."""
    return Rng(config.seed ^ _EXTEND_SEED_SALT)
