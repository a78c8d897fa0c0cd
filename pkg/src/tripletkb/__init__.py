"""tripletkb: a trainable multimodal knowledge-triplet engine.

Extracts (head, relation, tail) embeddings from VQA-style feature records,
learns them with a margin/consistency/likelihood loss trio, accumulates
them into a queryable knowledge base, and answers questions by ranking
tail candidates under cosine distance.
"""

__version__ = "0.1.0"

from .errors import TripletKbError
from .extractor import (
    AttendMode,
    ExtractionResult,
    ModelDims,
    ModelParams,
    extract,
)
from .features import (
    AnswerVocab,
    Dataset,
    SampleFeatures,
    Split,
    SynthSpec,
    build_vocab,
    expand_annotations,
    generate_synthetic,
    load_dataset,
    write_dataset,
)
from .inference import (
    EvalReport,
    RankResult,
    bench_ranking,
    ensemble,
    evaluate,
    infer,
    oracle_ensemble,
    vqa_accuracy,
)
from .knowledge import KnowledgeBase, accumulate, export_graph, load_kb, seal_and_save
from .losses import (
    BatchLossInput,
    LossBreakdown,
    LossInstance,
    LossToggles,
    consistency_loss,
    mine_negatives,
    semantic_loss,
    total_loss,
    transe_loss,
)
from .numerics import Rng, Tensor, grad_check
from .trainer import (
    Checkpoint,
    Stage,
    TrainConfig,
    default_config,
    desk_config,
    extend_for_stage,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train_stage,
)

__all__ = [
    "AnswerVocab",
    "AttendMode",
    "BatchLossInput",
    "Checkpoint",
    "Dataset",
    "EvalReport",
    "ExtractionResult",
    "KnowledgeBase",
    "LossBreakdown",
    "LossInstance",
    "LossToggles",
    "ModelDims",
    "ModelParams",
    "RankResult",
    "Rng",
    "SampleFeatures",
    "Split",
    "Stage",
    "SynthSpec",
    "Tensor",
    "TrainConfig",
    "TripletKbError",
    "accumulate",
    "bench_ranking",
    "build_vocab",
    "consistency_loss",
    "default_config",
    "desk_config",
    "ensemble",
    "evaluate",
    "expand_annotations",
    "export_graph",
    "extend_for_stage",
    "extract",
    "generate_synthetic",
    "grad_check",
    "infer",
    "init_params",
    "load_checkpoint",
    "load_dataset",
    "load_kb",
    "mine_negatives",
    "oracle_ensemble",
    "save_checkpoint",
    "seal_and_save",
    "semantic_loss",
    "total_loss",
    "train_stage",
    "transe_loss",
    "vqa_accuracy",
    "write_dataset",
]
