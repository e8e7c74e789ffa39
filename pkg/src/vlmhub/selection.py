"""Task-to-graph matching and per-class model ranking.

Given a downstream task, the identification stage runs in four steps:

1. Match each task class to its closest graph nodes by caption-embedding
   cosine similarity and build the sparse transfer matrix Z over the union
   of matched nodes.
2. For each model, compute per-node precision: the fraction of a node's
   sample images whose nearest selected-node caption (in the model's own
   embedding space) is that node.
3. Propagate node precisions to classes through Z.
4. Blend class-specific and mean precision into the reuse metric and rank
   models per class.

All tie-breaks are lexicographic on ids so results are reproducible across
runs and platforms.
"""

from __future__ import annotations

import json
import os
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .embedding_store import EmbeddingMatrix, unit_rows64
from .fileio import atomic_write_text
from .errors import (
    FormatError,
    InvalidInputError,
    NoCandidatesError,
    NoModelsError,
    StaleLabelError,
)
from .model_labeling import ModelHub, ModelLabel
from .semantic_graph import SemanticGraph

TASK_FORMAT_VERSION = 1
SELECTION_FORMAT_VERSION = 1

DEFAULT_ALPHA = 0.7
DEFAULT_K_MATCH = 5
DEFAULT_K_REUSE = 1

CAPTION_PROMPT_TEMPLATE = (
    'Generate long detailed caption for the {domain} of {cls} in the {task}. '
    'e.g., "The {domain} of {cls}, which is ... ". '
    'Generate long caption for {cls} within {limit} words.'
)

# Environment variables honored by the live caption client.
CAPTION_API_KEY_ENV = "VLMHUB_CAPTION_API_KEY"
CAPTION_ENDPOINT_ENV = "VLMHUB_CAPTION_ENDPOINT"
CAPTION_MODEL_ENV = "VLMHUB_CAPTION_MODEL"


def build_class_caption_prompt(
    class_name: str, domain_text: str, task_text: str, word_limit: int
) -> str:
    """Render the caption-generation prompt for one task class."""
    if not class_name.strip() or not domain_text.strip() or not task_text.strip():
        raise InvalidInputError("prompt fields must be non-empty")
    if word_limit <= 0:
        raise InvalidInputError("word_limit must be positive")
    return CAPTION_PROMPT_TEMPLATE.format(
        domain=domain_text, cls=class_name, task=task_text, limit=word_limit
    )


@dataclass(frozen=True)
class TaskSpec:
    """User-supplied description of a downstream classification task."""

    task_id: str
    classes: tuple[str, ...]
    domain_text: str
    task_text: str
    class_captions: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.classes:
            raise InvalidInputError("a task needs at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise InvalidInputError("task classes must be unique")
        extra = sorted(set(self.class_captions) - set(self.classes))
        if extra:
            raise InvalidInputError(f"captions given for unknown classes: {extra}")

    def missing_captions(self) -> list[str]:
        return [c for c in self.classes if c not in self.class_captions]


class FixtureCaptionClient:
    """Reads pre-generated class captions from a JSON file; fully offline."""

    def __init__(self, path: str | Path):
        try:
            self._captions = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"unparseable caption fixture {path}: {exc}") from None

    def caption(self, class_name: str, domain_text: str, task_text: str, word_limit: int = 50) -> str:
        try:
            return self._captions[class_name]
        except KeyError:
            raise InvalidInputError(
                f"caption fixture has no entry for class {class_name!r}"
            ) from None


class LiveCaptionClient:
    """Calls an external text-generation service with the caption prompt.

    Never exercised by the engine's own tests; requires endpoint and API key
    via environment variables.
    """

    def __init__(self, endpoint: str | None = None, api_key: str | None = None, model: str | None = None):
        self.endpoint = endpoint or os.environ.get(CAPTION_ENDPOINT_ENV)
        self.api_key = api_key or os.environ.get(CAPTION_API_KEY_ENV)
        self.model = model or os.environ.get(CAPTION_MODEL_ENV, "gpt-4")
        if not self.endpoint or not self.api_key:
            raise InvalidInputError(
                f"live caption mode needs {CAPTION_ENDPOINT_ENV} and {CAPTION_API_KEY_ENV} set"
            )

    def caption(self, class_name: str, domain_text: str, task_text: str, word_limit: int = 50) -> str:
        prompt = build_class_caption_prompt(class_name, domain_text, task_text, word_limit)
        payload = json.dumps(
            {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        ).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint,
            data=payload,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self.api_key}",
            },
        )
        with urllib.request.urlopen(request, timeout=60) as response:
            body = json.loads(response.read().decode("utf-8"))
        return body["choices"][0]["message"]["content"].strip()


def fill_captions(task: TaskSpec, client, word_limit: int = 50) -> TaskSpec:
    """Return a task with every class caption populated via the client."""
    captions = dict(task.class_captions)
    for cls in task.missing_captions():
        captions[cls] = client.caption(cls, task.domain_text, task.task_text, word_limit)
    return TaskSpec(
        task_id=task.task_id,
        classes=task.classes,
        domain_text=task.domain_text,
        task_text=task.task_text,
        class_captions=captions,
    )


@dataclass(frozen=True)
class TransferMatrix:
    """Sparse node x class weights linking matched graph nodes to task classes.

    Each class column holds the weights of its top-k matched nodes. In the
    default mode negative similarities are clamped to zero and each column is
    normalized to sum 1 (uniform over the matched nodes when every clamped
    weight is zero), so class precision stays a convex combination. raw mode
    keeps the unclamped similarities.
    """

    selected_nodes: tuple[str, ...]
    classes: tuple[str, ...]
    entries: Mapping[tuple[str, str], float]
    k_match: int
    raw: bool = False

    def column(self, cls: str) -> dict[str, float]:
        return {v: z for (v, c), z in self.entries.items() if c == cls}

    def support(self, cls: str) -> list[str]:
        return sorted(v for (v, c), z in self.entries.items() if c == cls and z != 0.0)


def match_nodes(
    task_caption_embeds: EmbeddingMatrix,
    node_caption_embeds: EmbeddingMatrix,
    k_match: int,
    *,
    raw: bool = False,
) -> TransferMatrix:
    """Match task classes to graph nodes by caption cosine similarity.

    Both matrices must come from the same text-embedding backend (one shared
    dim). The ids of `task_caption_embeds` are the class names; the ids of
    `node_caption_embeds` are the candidate node ids (unsampled nodes must
    already be excluded by the caller). Ties on similarity break toward the
    lexicographically smaller node id.
    """
    if k_match < 1:
        raise InvalidInputError("k_match must be >= 1")
    if len(node_caption_embeds) == 0:
        raise NoCandidatesError("no sampled graph nodes available for matching")
    if task_caption_embeds.dim != node_caption_embeds.dim:
        raise InvalidInputError(
            f"caption embedding dims differ: task {task_caption_embeds.dim} vs "
            f"nodes {node_caption_embeds.dim}"
        )

    node_ids = list(node_caption_embeds.ids)
    node_rows = unit_rows64(node_caption_embeds)
    entries: dict[tuple[str, str], float] = {}
    for cls in task_caption_embeds.ids:
        sims = np.clip(node_rows @ unit_rows64(task_caption_embeds, [cls])[0], -1.0, 1.0)
        order = sorted(range(len(node_ids)), key=lambda i: (-sims[i], node_ids[i]))
        top = order[: min(k_match, len(node_ids))]
        if raw:
            for i in top:
                if sims[i] != 0.0:
                    entries[(node_ids[i], cls)] = float(sims[i])
            continue
        clamped = [max(float(sims[i]), 0.0) for i in top]
        total = sum(clamped)
        if total > 0.0:
            weights = [z / total for z in clamped]
        else:
            weights = [1.0 / len(top)] * len(top)
        for i, w in zip(top, weights):
            if w != 0.0:
                entries[(node_ids[i], cls)] = w

    selected = tuple(sorted({v for v, _ in entries}))
    return TransferMatrix(
        selected_nodes=selected,
        classes=tuple(task_caption_embeds.ids),
        entries=entries,
        k_match=k_match,
        raw=raw,
    )


def node_precision(label: ModelLabel, selected_nodes: Sequence[str]) -> dict[str, float]:
    """Fraction of each selected node's samples won by that node's caption.

    For node v, a sample counts when v is the argmax over all selected nodes
    of the sample-image / node-caption cosine similarity, recomputed from the
    label's stored embeddings. Argmax ties break toward the lexicographically
    smaller node id.
    """
    selected = sorted(set(selected_nodes))
    if not selected:
        raise InvalidInputError("selected node set must be non-empty")
    missing = [v for v in selected if v not in label.diag_scores]
    if missing:
        raise InvalidInputError(
            f"selected nodes without samples in label {label.model_id!r}: {missing[:8]}"
        )
    cap_rows = unit_rows64(label.caption_embeds, selected)

    precisions: dict[str, float] = {}
    for pos, node_id in enumerate(selected):
        sample_ids = [sid for sid, _ in label.diag_scores[node_id]]
        img_rows = unit_rows64(label.image_embeds, sample_ids)
        sims = np.clip(img_rows @ cap_rows.T, -1.0, 1.0)
        # argmax returns the first maximum; columns are in sorted node order,
        # which realizes the lexicographic tie-break.
        hits = int(np.count_nonzero(sims.argmax(axis=1) == pos))
        precisions[node_id] = hits / len(sample_ids)
    return precisions


def class_precision(
    node_precisions: Mapping[str, float], transfer: TransferMatrix
) -> dict[str, float]:
    """Propagate one model's node precisions to task classes through Z."""
    out: dict[str, float] = {}
    for cls in transfer.classes:
        total = 0.0
        for (v, c), z in transfer.entries.items():
            if c != cls or z == 0.0:
                continue
            if v not in node_precisions:
                raise InvalidInputError(
                    f"no node precision for {v!r} required by class {cls!r}"
                )
            total += node_precisions[v] * z
        out[cls] = total if transfer.raw else float(min(max(total, 0.0), 1.0))
    return out


def reuse_metric(class_precisions: Mapping[str, float], alpha: float) -> dict[str, float]:
    """Blend class-specific precision with the model's mean precision.

    r(y) = alpha * p(y) + (1 - alpha) * mean over classes of p.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    if not class_precisions:
        raise InvalidInputError("class precision map must be non-empty")
    mean = sum(class_precisions.values()) / len(class_precisions)
    return {
        cls: float(min(max(alpha * p + (1.0 - alpha) * mean, 0.0), 1.0))
        for cls, p in class_precisions.items()
    }


@dataclass(frozen=True)
class SelectionResult:
    """Per-class model rankings plus every intermediate quantity behind them."""

    task_id: str
    classes: tuple[str, ...]
    model_ids: tuple[str, ...]
    node_precisions: Mapping[str, Mapping[str, float]]  # model -> node -> p
    class_precisions: Mapping[str, Mapping[str, float]]  # model -> class -> p
    reuse_metrics: Mapping[str, Mapping[str, float]]  # model -> class -> r
    rankings: Mapping[str, tuple[str, ...]]  # class -> models, best first
    alpha: float
    k_match: int
    k_reuse: int
    transfer: TransferMatrix

    def members(self, cls: str) -> tuple[str, ...]:
        """The per-class ensemble: the top k_reuse ranked models."""
        return self.rankings[cls][: self.k_reuse]

    def member_union(self) -> list[str]:
        out: set[str] = set()
        for cls in self.classes:
            out.update(self.members(cls))
        return sorted(out)


def _score_model(
    label: ModelLabel,
    transfer: TransferMatrix,
    alpha: float,
    per_class_nodes: bool,
) -> tuple[dict[str, float], dict[str, float], dict[str, float]]:
    if per_class_nodes:
        # Sensitivity variant: restrict the argmax competition per class to
        # that class's own matched nodes instead of the global union.
        node_p: dict[str, float] = {}
        cls_p: dict[str, float] = {}
        for cls in transfer.classes:
            support = transfer.support(cls)
            local = node_precision(label, support) if support else {}
            cls_p[cls] = class_precision(
                local,
                TransferMatrix(
                    selected_nodes=tuple(support),
                    classes=(cls,),
                    entries={(v, c): z for (v, c), z in transfer.entries.items() if c == cls},
                    k_match=transfer.k_match,
                    raw=transfer.raw,
                ),
            )[cls]
        return node_p, cls_p, reuse_metric(cls_p, alpha)
    node_p = node_precision(label, transfer.selected_nodes)
    cls_p = class_precision(node_p, transfer)
    return node_p, cls_p, reuse_metric(cls_p, alpha)


def select(
    task: TaskSpec,
    hub: ModelHub,
    graph: SemanticGraph,
    node_caption_embeds: EmbeddingMatrix,
    task_caption_embeds: EmbeddingMatrix,
    *,
    alpha: float = DEFAULT_ALPHA,
    k_reuse: int = DEFAULT_K_REUSE,
    k_match: int = DEFAULT_K_MATCH,
    raw_z: bool = False,
    allow_stale: bool = False,
    per_class_nodes: bool = False,
    threads: int = 1,
) -> SelectionResult:
    """Rank every hub model per task class by the reuse metric.

    `node_caption_embeds` and `task_caption_embeds` are the text-embedding
    backend's vectors for graph-node captions and task-class captions; the
    task matrix ids must be the class names. Rankings sort by reuse metric
    descending, then lexicographic model id.
    """
    if len(hub) == 0:
        raise NoModelsError("the hub holds no models")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    if k_reuse < 1:
        raise InvalidInputError("k_reuse must be >= 1")
    missing_classes = [c for c in task.classes if c not in task_caption_embeds]
    if missing_classes:
        raise InvalidInputError(
            f"task caption embeddings missing for classes: {missing_classes}"
        )
    if not allow_stale:
        stale = [
            m
            for m in hub.model_ids()
            if hub.labels[m].graph_version != graph.graph_version
        ]
        if stale:
            raise StaleLabelError(
                f"labels out of date with graph version {graph.graph_version}: {stale}"
            )

    sampled = graph.sampled_node_ids()
    if not sampled:
        raise NoCandidatesError("every graph node is unsampled; nothing to match")
    candidates = EmbeddingMatrix(
        tuple(sampled), node_caption_embeds.take(sampled).astype(np.float32)
    )
    class_matrix = EmbeddingMatrix(
        tuple(task.classes), task_caption_embeds.take(task.classes).astype(np.float32)
    )
    transfer = match_nodes(class_matrix, candidates, k_match, raw=raw_z)

    model_ids = hub.model_ids()

    def run(model_id: str):
        return _score_model(hub.labels[model_id], transfer, alpha, per_class_nodes)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(run, model_ids))
    else:
        scored = [run(m) for m in model_ids]

    node_p = {m: s[0] for m, s in zip(model_ids, scored)}
    cls_p = {m: s[1] for m, s in zip(model_ids, scored)}
    metrics = {m: s[2] for m, s in zip(model_ids, scored)}

    rankings = {
        cls: tuple(sorted(model_ids, key=lambda m: (-metrics[m][cls], m)))
        for cls in task.classes
    }
    return SelectionResult(
        task_id=task.task_id,
        classes=task.classes,
        model_ids=tuple(model_ids),
        node_precisions=node_p,
        class_precisions=cls_p,
        reuse_metrics=metrics,
        rankings=rankings,
        alpha=alpha,
        k_match=k_match,
        k_reuse=min(k_reuse, len(model_ids)),
        transfer=transfer,
    )


def task_to_json(task: TaskSpec) -> str:
    doc = {
        "format_version": TASK_FORMAT_VERSION,
        "task_id": task.task_id,
        "classes": list(task.classes),
        "domain_text": task.domain_text,
        "task_text": task.task_text,
        "class_captions": dict(sorted(task.class_captions.items())),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_task(task: TaskSpec, path: str | Path) -> None:
    atomic_write_text(path, task_to_json(task))


def load_task(path: str | Path) -> TaskSpec:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable task file {path}: {exc}") from None
    if doc.get("format_version") != TASK_FORMAT_VERSION:
        raise FormatError(f"unsupported task format_version in {path}")
    return TaskSpec(
        task_id=doc["task_id"],
        classes=tuple(doc["classes"]),
        domain_text=doc["domain_text"],
        task_text=doc["task_text"],
        class_captions=doc.get("class_captions", {}),
    )


def selection_to_json(result: SelectionResult) -> str:
    transfer_entries: dict[str, dict[str, float]] = {}
    for (v, c), z in sorted(result.transfer.entries.items()):
        transfer_entries.setdefault(v, {})[c] = z
    doc = {
        "format_version": SELECTION_FORMAT_VERSION,
        "task_id": result.task_id,
        "alpha": result.alpha,
        "k_match": result.k_match,
        "k_reuse": result.k_reuse,
        "classes": list(result.classes),
        "models": sorted(result.model_ids),
        "node_precisions": {
            m: dict(sorted(ps.items())) for m, ps in sorted(result.node_precisions.items())
        },
        "class_precisions": {
            m: dict(sorted(ps.items())) for m, ps in sorted(result.class_precisions.items())
        },
        "reuse_metrics": {
            m: dict(sorted(rs.items())) for m, rs in sorted(result.reuse_metrics.items())
        },
        "rankings": {cls: list(models) for cls, models in sorted(result.rankings.items())},
        "transfer": {
            "selected_nodes": list(result.transfer.selected_nodes),
            "entries": transfer_entries,
            "k_match": result.transfer.k_match,
            "raw": result.transfer.raw,
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_selection(result: SelectionResult, path: str | Path) -> None:
    atomic_write_text(path, selection_to_json(result))
