"""Model-hub engine for vision-language models.

Models submitted to the hub are pre-tested against a semantic concept graph
and given a label describing what they are good at. For a downstream
zero-shot classification task, the engine matches task classes to graph
nodes by caption similarity, ranks models per class with a reuse metric,
and combines the per-class winners into an entropy-weighted ensemble.
"""

from .embedding_store import EmbeddingMatrix, StoreManifest, cosine, read_store, write_store
from .errors import (
    CorruptionError,
    DegenerateEmbeddingError,
    DuplicateIdError,
    FormatError,
    IncompleteEmbeddingsError,
    IncompleteMetadataError,
    InfeasibleFixtureError,
    InvalidInputError,
    InvalidValueError,
    NoCandidatesError,
    NoModelsError,
    StaleLabelError,
    UnresolvedReferenceError,
    VlmHubError,
)
from .model_labeling import (
    ModelHub,
    ModelLabel,
    ModelRecord,
    compute_label,
    extend_label,
    load_label,
    register_model,
    save_label,
)
from .reuse import (
    EnsemblePredictor,
    ModelTaskSpace,
    PredictionRecord,
    build_predictor,
    ensemble_confidence,
    entropy_weights,
    predict,
    predict_batch,
    zero_shot_predict,
)
from .selection import (
    SelectionResult,
    TaskSpec,
    TransferMatrix,
    build_class_caption_prompt,
    class_precision,
    match_nodes,
    node_precision,
    reuse_metric,
    select,
)
from .semantic_graph import (
    GraphNode,
    SemanticGraph,
    SynsetRecord,
    ValidationReport,
    build_graph,
    extend_graph,
    load_graph,
    make_caption,
    save_graph,
    validate_graph,
)

__version__ = "0.1.0"

__all__ = [
    "EmbeddingMatrix",
    "StoreManifest",
    "cosine",
    "read_store",
    "write_store",
    "SynsetRecord",
    "GraphNode",
    "SemanticGraph",
    "ValidationReport",
    "make_caption",
    "build_graph",
    "extend_graph",
    "validate_graph",
    "save_graph",
    "load_graph",
    "ModelRecord",
    "ModelLabel",
    "ModelHub",
    "compute_label",
    "extend_label",
    "register_model",
    "save_label",
    "load_label",
    "TaskSpec",
    "TransferMatrix",
    "SelectionResult",
    "build_class_caption_prompt",
    "match_nodes",
    "node_precision",
    "class_precision",
    "reuse_metric",
    "select",
    "ModelTaskSpace",
    "EnsemblePredictor",
    "PredictionRecord",
    "zero_shot_predict",
    "entropy_weights",
    "ensemble_confidence",
    "predict",
    "predict_batch",
    "build_predictor",
    "VlmHubError",
    "InvalidInputError",
    "DuplicateIdError",
    "UnresolvedReferenceError",
    "DegenerateEmbeddingError",
    "InvalidValueError",
    "CorruptionError",
    "FormatError",
    "IncompleteEmbeddingsError",
    "IncompleteMetadataError",
    "StaleLabelError",
    "NoCandidatesError",
    "NoModelsError",
    "InfeasibleFixtureError",
]
