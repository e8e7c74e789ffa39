"""On-disk workspace layout binding graphs, labels, stores, and tasks together.

    <root>/
      graph.json
      labels/
        models.json                  model registry
        <model>/label.json           + images/ + captions/ stores
      stores/
        node_captions/               backend caption store (ids = node ids)
        tasks/<task>/captions/       backend task-caption store (ids = classes)
        tasks/<task>/<model>/images/   per-model task-sample embeddings
        tasks/<task>/<model>/prompts/  per-model class-prompt embeddings
      tasks/
        <task>/task.json
        <task>/truth.json            optional ground-truth labels

The CLI reads and writes exactly this layout; the harness uses it to move
whole bundles between memory and disk.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import FormatError, InvalidInputError
from .fileio import atomic_write_text
from .harness import HubBundle, TaskBundle
from .embedding_store import read_store, write_store
from .model_labeling import ModelHub, load_registry, save_label, save_registry
from .selection import load_task, save_task
from .semantic_graph import load_graph, save_graph

TRUTH_FORMAT_VERSION = 1

GRAPH_FILE = "graph.json"
LABELS_DIR = "labels"
REGISTRY_FILE = "models.json"
STORES_DIR = "stores"
TASKS_DIR = "tasks"
NODE_CAPTIONS_STORE = "node_captions"


def save_truth(labels: dict[str, str], path: str | Path, *, task_id: str) -> None:
    doc = {
        "format_version": TRUTH_FORMAT_VERSION,
        "task_id": task_id,
        "labels": dict(sorted(labels.items())),
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_truth(path: str | Path) -> dict[str, str]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable truth file {path}: {exc}") from None
    if doc.get("format_version") != TRUTH_FORMAT_VERSION:
        raise FormatError(f"unsupported truth format_version in {path}")
    return dict(doc["labels"])


def materialize_bundle(bundle: HubBundle, root: str | Path, *, overwrite: bool = False) -> Path:
    """Write a whole bundle to a fresh workspace directory."""
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not overwrite:
        raise InvalidInputError(f"workspace {root} exists and is not empty")
    root.mkdir(parents=True, exist_ok=True)

    save_graph(bundle.graph, root / GRAPH_FILE)

    labels_dir = root / LABELS_DIR
    labels_dir.mkdir(exist_ok=True)
    save_registry(bundle.hub, labels_dir / REGISTRY_FILE)
    for model_id in bundle.hub.model_ids():
        save_label(bundle.hub.labels[model_id], labels_dir / model_id, overwrite=overwrite)

    stores_dir = root / STORES_DIR
    write_store(
        stores_dir / NODE_CAPTIONS_STORE,
        bundle.node_caption_embeds,
        owner_id="text-backend",
        kind="caption",
        overwrite=overwrite,
    )

    tasks_dir = root / TASKS_DIR
    for task in bundle.tasks:
        tid = task.spec.task_id
        (tasks_dir / tid).mkdir(parents=True, exist_ok=True)
        save_task(task.spec, tasks_dir / tid / "task.json")
        save_truth(dict(task.ground_truth), tasks_dir / tid / "truth.json", task_id=tid)
        write_store(
            stores_dir / TASKS_DIR / tid / "captions",
            task.caption_embeds,
            owner_id="text-backend",
            kind="task-caption",
            overwrite=overwrite,
        )
        for model_id, matrix in sorted(task.image_embeds.items()):
            write_store(
                stores_dir / TASKS_DIR / tid / model_id / "images",
                matrix,
                owner_id=model_id,
                kind="image",
                overwrite=overwrite,
            )
        for model_id, matrix in sorted(task.prompt_embeds.items()):
            write_store(
                stores_dir / TASKS_DIR / tid / model_id / "prompts",
                matrix,
                owner_id=model_id,
                kind="class-prompt",
                overwrite=overwrite,
            )
    return root


def load_task_bundle(root: str | Path, task_id: str, model_ids: list[str]) -> TaskBundle:
    root = Path(root)
    task_dir = root / TASKS_DIR / task_id
    spec = load_task(task_dir / "task.json")
    truth_path = task_dir / "truth.json"
    ground_truth = load_truth(truth_path) if truth_path.exists() else {}
    store_base = root / STORES_DIR / TASKS_DIR / task_id
    return TaskBundle(
        spec=spec,
        ground_truth=ground_truth,
        caption_embeds=read_store(store_base / "captions"),
        image_embeds={
            m: read_store(store_base / m / "images")
            for m in model_ids
            if (store_base / m / "images").exists()
        },
        prompt_embeds={
            m: read_store(store_base / m / "prompts")
            for m in model_ids
            if (store_base / m / "prompts").exists()
        },
    )


def load_hub(root: str | Path) -> ModelHub:
    root = Path(root)
    return load_registry(root / LABELS_DIR / REGISTRY_FILE, labels_dir=root / LABELS_DIR)


def load_bundle(root: str | Path, task_ids: list[str] | None = None) -> HubBundle:
    """Load a full workspace back into memory."""
    root = Path(root)
    graph = load_graph(root / GRAPH_FILE)
    hub = load_hub(root)
    node_captions = read_store(root / STORES_DIR / NODE_CAPTIONS_STORE)
    if task_ids is None:
        tasks_root = root / TASKS_DIR
        task_ids = sorted(p.name for p in tasks_root.iterdir() if p.is_dir()) if tasks_root.exists() else []
    tasks = tuple(load_task_bundle(root, tid, hub.model_ids()) for tid in task_ids)
    return HubBundle(
        hub=hub,
        graph=graph,
        node_caption_embeds=node_captions,
        tasks=tasks,
    )
