"""Model registration and pre-test labeling against the semantic graph.

A model's label records, for every sampled graph node, the cosine similarity
between each sample image embedding and that node's caption embedding. The
label also keeps the model's full image and caption embedding matrices:
selection later needs cross-node similarities (sample of node v against the
caption of node v'), which the diagonal scores alone cannot provide, and
re-deriving them lazily from the stored embeddings is far cheaper than
materializing the full sample x node similarity matrix up front.

Labeling is task-independent: nothing in this module sees task classes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .embedding_store import EmbeddingMatrix, read_store, unit_rows64, write_store
from .fileio import atomic_write_text
from .errors import (
    DuplicateIdError,
    FormatError,
    IncompleteEmbeddingsError,
    InvalidInputError,
    StaleLabelError,
)
from .semantic_graph import SemanticGraph

LABEL_FORMAT_VERSION = 1
REGISTRY_FORMAT_VERSION = 1

# CLIP-family convention; only rescales zero-shot softmax values, never the argmax.
DEFAULT_TEMPERATURE = 0.01

LABEL_FILE = "label.json"
IMAGE_STORE_DIR = "images"
CAPTION_STORE_DIR = "captions"


@dataclass(frozen=True)
class ModelRecord:
    """Hub-side identity and metadata for one model."""

    model_id: str
    dim: int
    temperature: float = DEFAULT_TEMPERATURE
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not self.model_id:
            raise InvalidInputError("model_id must be non-empty")
        if self.dim <= 0:
            raise InvalidInputError("embedding dimension must be positive")
        if self.temperature <= 0:
            raise InvalidInputError("temperature must be positive")


@dataclass(frozen=True)
class ModelLabel:
    """Pre-test record: per-node diagonal scores plus the raw embedding stores.

    diag_scores maps node id -> tuple of (sample_id, score), sorted by
    sample id, with one entry for every graph node that has samples.
    """

    model_id: str
    graph_version: int
    diag_scores: Mapping[str, tuple[tuple[str, float], ...]]
    image_embeds: EmbeddingMatrix
    caption_embeds: EmbeddingMatrix


def _node_scores(
    node_id: str,
    sample_ids: tuple[str, ...],
    image_embeds: EmbeddingMatrix,
    caption_embeds: EmbeddingMatrix,
) -> tuple[tuple[str, float], ...]:
    ordered = sorted(sample_ids)
    img = unit_rows64(image_embeds, ordered)
    cap = unit_rows64(caption_embeds, [node_id])[0]
    sims = np.clip(img @ cap, -1.0, 1.0)
    return tuple((sid, float(s)) for sid, s in zip(ordered, sims))


def compute_label(
    model: ModelRecord,
    image_embeds: EmbeddingMatrix,
    caption_embeds: EmbeddingMatrix,
    graph: SemanticGraph,
) -> ModelLabel:
    """Pre-test a model: score every sampled node's images against its caption.

    `image_embeds` must cover every sample id in the graph and
    `caption_embeds` every node id, both in the model's own embedding space.
    """
    if image_embeds.dim != model.dim or caption_embeds.dim != model.dim:
        raise InvalidInputError(
            f"model {model.model_id!r} declares dim {model.dim} but stores have "
            f"dims {image_embeds.dim}/{caption_embeds.dim}"
        )
    missing_caps = [i for i in graph.node_ids() if i not in caption_embeds]
    if missing_caps:
        raise IncompleteEmbeddingsError(
            f"caption embeddings missing for nodes: {missing_caps[:8]}",
            missing=missing_caps,
        )
    missing_imgs = [s for s in graph.sample_ids() if s not in image_embeds]
    if missing_imgs:
        raise IncompleteEmbeddingsError(
            f"image embeddings missing for samples: {missing_imgs[:8]}",
            missing=missing_imgs,
        )

    diag: dict[str, tuple[tuple[str, float], ...]] = {}
    for node_id in graph.sampled_node_ids():
        node = graph.nodes[node_id]
        diag[node_id] = _node_scores(node_id, node.sample_ids, image_embeds, caption_embeds)
    return ModelLabel(
        model_id=model.model_id,
        graph_version=graph.graph_version,
        diag_scores=diag,
        image_embeds=image_embeds,
        caption_embeds=caption_embeds,
    )


def _merge_matrices(old: EmbeddingMatrix, new: EmbeddingMatrix | None) -> EmbeddingMatrix:
    if new is None or len(new) == 0:
        return old
    if new.dim != old.dim:
        raise InvalidInputError(f"dim mismatch merging stores: {old.dim} vs {new.dim}")
    overlap = [i for i in new.ids if i in old]
    if overlap:
        raise DuplicateIdError(
            f"extension embeddings repeat existing ids: {overlap[:8]}", ids=overlap
        )
    return EmbeddingMatrix(old.ids + new.ids, np.vstack([old.rows, new.rows]))


def extend_label(
    label: ModelLabel,
    graph: SemanticGraph,
    new_caption_embeds: EmbeddingMatrix | None = None,
    new_image_embeds: EmbeddingMatrix | None = None,
) -> ModelLabel:
    """Carry a label forward to a grown graph without rescoring old nodes.

    The new embeddings must cover exactly the nodes and samples that appeared
    since the label's graph version; the result equals a from-scratch
    compute_label on the extended graph, entry for entry.
    """
    if graph.graph_version <= label.graph_version:
        raise StaleLabelError(
            f"label for {label.model_id!r} is at graph version {label.graph_version}, "
            f"refusing to extend onto version {graph.graph_version}"
        )
    caption_embeds = _merge_matrices(label.caption_embeds, new_caption_embeds)
    image_embeds = _merge_matrices(label.image_embeds, new_image_embeds)

    new_nodes = [i for i in graph.node_ids() if i not in label.caption_embeds]
    missing_caps = [i for i in new_nodes if i not in caption_embeds]
    if missing_caps:
        raise IncompleteEmbeddingsError(
            f"caption embeddings missing for added nodes: {missing_caps[:8]}",
            missing=missing_caps,
        )
    missing_imgs = [s for s in graph.sample_ids() if s not in image_embeds]
    if missing_imgs:
        raise IncompleteEmbeddingsError(
            f"image embeddings missing for added samples: {missing_imgs[:8]}",
            missing=missing_imgs,
        )

    diag = dict(label.diag_scores)
    for node_id in graph.sampled_node_ids():
        if node_id in diag:
            continue
        node = graph.nodes[node_id]
        diag[node_id] = _node_scores(node_id, node.sample_ids, image_embeds, caption_embeds)
    return ModelLabel(
        model_id=label.model_id,
        graph_version=graph.graph_version,
        diag_scores=diag,
        image_embeds=image_embeds,
        caption_embeds=caption_embeds,
    )


@dataclass(frozen=True)
class ModelHub:
    """Immutable registry of models and their labels."""

    records: Mapping[str, ModelRecord] = field(default_factory=dict)
    labels: Mapping[str, ModelLabel] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def model_ids(self) -> list[str]:
        return sorted(self.records)

    def subset(self, model_ids) -> "ModelHub":
        wanted = list(model_ids)
        missing = [m for m in wanted if m not in self.records]
        if missing:
            raise InvalidInputError(f"hub does not contain models: {missing}")
        return ModelHub(
            records={m: self.records[m] for m in wanted},
            labels={m: self.labels[m] for m in wanted},
        )


def register_model(hub: ModelHub, model: ModelRecord, label: ModelLabel) -> ModelHub:
    """Return a hub with the model added; the submission stage ends here.

    No task information is consulted: registration sees only the model's
    embeddings and its pre-test scores.
    """
    if model.model_id in hub.records:
        raise DuplicateIdError(
            f"model {model.model_id!r} is already registered", ids=[model.model_id]
        )
    if label.model_id != model.model_id:
        raise InvalidInputError(
            f"label belongs to {label.model_id!r}, not {model.model_id!r}"
        )
    if label.image_embeds.dim != model.dim:
        raise InvalidInputError(
            f"label stores have dim {label.image_embeds.dim}, model declares {model.dim}"
        )
    records = dict(hub.records)
    labels = dict(hub.labels)
    records[model.model_id] = model
    labels[model.model_id] = label
    return ModelHub(records=records, labels=labels)


def label_to_json(label: ModelLabel) -> str:
    doc = {
        "format_version": LABEL_FORMAT_VERSION,
        "model_id": label.model_id,
        "graph_version": label.graph_version,
        "dim": label.image_embeds.dim,
        "image_store": IMAGE_STORE_DIR,
        "caption_store": CAPTION_STORE_DIR,
        "diag_scores": {
            node: [[sid, score] for sid, score in entries]
            for node, entries in sorted(label.diag_scores.items())
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_label(label: ModelLabel, directory: str | Path, *, overwrite: bool = False) -> None:
    """Write label.json plus the image/caption stores under `directory`."""
    directory = Path(directory)
    label_path = directory / LABEL_FILE
    if label_path.exists() and not overwrite:
        raise InvalidInputError(f"label already exists at {label_path}")
    directory.mkdir(parents=True, exist_ok=True)
    write_store(
        directory / IMAGE_STORE_DIR,
        label.image_embeds,
        owner_id=label.model_id,
        kind="image",
        overwrite=overwrite,
    )
    write_store(
        directory / CAPTION_STORE_DIR,
        label.caption_embeds,
        owner_id=label.model_id,
        kind="caption",
        overwrite=overwrite,
    )
    atomic_write_text(label_path, label_to_json(label))


def load_label(directory: str | Path) -> ModelLabel:
    directory = Path(directory)
    try:
        doc = json.loads((directory / LABEL_FILE).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"no {LABEL_FILE} under {directory}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable label file under {directory}: {exc}") from None
    if doc.get("format_version") != LABEL_FORMAT_VERSION:
        raise FormatError(f"unsupported label format_version under {directory}")
    image_embeds = read_store(directory / doc["image_store"])
    caption_embeds = read_store(directory / doc["caption_store"])
    diag = {
        node: tuple((sid, float(score)) for sid, score in entries)
        for node, entries in doc["diag_scores"].items()
    }
    return ModelLabel(
        model_id=doc["model_id"],
        graph_version=int(doc["graph_version"]),
        diag_scores=diag,
        image_embeds=image_embeds,
        caption_embeds=caption_embeds,
    )


def registry_to_json(hub: ModelHub) -> str:
    doc = {
        "format_version": REGISTRY_FORMAT_VERSION,
        "models": [
            {
                "model_id": r.model_id,
                "dim": r.dim,
                "temperature": r.temperature,
                "metadata": dict(sorted(r.metadata.items())),
            }
            for _, r in sorted(hub.records.items())
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_registry(hub: ModelHub, path: str | Path) -> None:
    atomic_write_text(path, registry_to_json(hub))


def load_registry(path: str | Path, labels_dir: str | Path | None = None) -> ModelHub:
    """Load model records, optionally hydrating labels from sibling directories."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable registry {path}: {exc}") from None
    if doc.get("format_version") != REGISTRY_FORMAT_VERSION:
        raise FormatError(f"unsupported registry format_version in {path}")
    hub = ModelHub()
    for raw in doc.get("models", []):
        record = ModelRecord(
            model_id=raw["model_id"],
            dim=int(raw["dim"]),
            temperature=float(raw["temperature"]),
            metadata=raw.get("metadata", {}),
        )
        if labels_dir is None:
            records = dict(hub.records)
            records[record.model_id] = record
            hub = ModelHub(records=records, labels=dict(hub.labels))
        else:
            label = load_label(Path(labels_dir) / record.model_id)
            hub = register_model(hub, record, label)
    return hub
