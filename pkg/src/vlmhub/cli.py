"""Command-line surface for the hub: submission-stage and identification-stage flows.

Commands wrap the library modules one-to-one:

    graph build|extend|validate     maintain the semantic graph
    label compute|extend            pre-test a model and file its label
    select                          rank models per task class
    predict                         run the per-class ensemble over a task
    eval                            score predictions against ground truth
    bench scaling|ablate            reproduce the scaling / ablation protocols
    synth                           materialize a synthetic workspace

Exit codes: 0 success, 1 I/O or environment failure, 2 user or validation
error. Diagnostics go to stderr; data goes to files (and the select table to
stdout). Every command is deterministic given identical inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

from . import harness, workspace
from .embedding_store import read_store
from .errors import InvalidInputError, VlmHubError
from .model_labeling import (
    DEFAULT_TEMPERATURE,
    ModelHub,
    ModelRecord,
    compute_label,
    extend_label,
    load_label,
    load_registry,
    save_label,
    save_registry,
)
from .reuse import (
    DEFAULT_REUSE_TEMPERATURE,
    EnsemblePredictor,
    ModelTaskSpace,
    load_predictions,
    predict_batch,
    save_predictions,
)
from .selection import (
    DEFAULT_ALPHA,
    DEFAULT_K_MATCH,
    DEFAULT_K_REUSE,
    FixtureCaptionClient,
    LiveCaptionClient,
    fill_captions,
    load_task,
    save_selection,
    select,
)
from .semantic_graph import (
    SynsetRecord,
    build_graph,
    extend_graph,
    load_graph,
    save_graph,
    validate_graph,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USER = 2


@dataclass
class EngineConfig:
    """Engine-wide defaults; a config file can set any of these, flags win."""

    graph: str | None = None
    labels: str | None = None
    stores: str | None = None
    alpha: float = DEFAULT_ALPHA
    k_reuse: int = DEFAULT_K_REUSE
    k_match: int = DEFAULT_K_MATCH
    reuse_temperature: float = DEFAULT_REUSE_TEMPERATURE
    seed: int = 0
    threads: int = 1
    captions: str = "fixture"

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {unknown}")
        return cls(**raw)


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from --config; explicit flags keep priority."""
    if not getattr(args, "config", None):
        return args
    config = EngineConfig.load(args.config)
    for f in fields(EngineConfig):
        if getattr(args, f.name, None) is None and getattr(config, f.name) is not None:
            setattr(args, f.name, getattr(config, f.name))
    return args


def _defaulted(args, name, fallback):
    value = getattr(args, name, None)
    return fallback if value is None else value


def _load_synsets(path: str) -> list[SynsetRecord]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        SynsetRecord(
            synset_id=r["synset_id"],
            name=r["name"],
            definition=r["definition"],
            hypernym_ids=tuple(r.get("hypernym_ids", ())),
        )
        for r in raw
    ]


def _load_samples(path: str | None) -> dict[str, list[str]]:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


def _cmd_graph(args) -> int:
    if args.action == "build":
        graph = build_graph(_load_synsets(args.synsets), _load_samples(args.samples))
        save_graph(graph, args.out)
        print(f"graph: {len(graph)} nodes -> {args.out}", file=sys.stderr)
        return EXIT_OK
    if args.action == "extend":
        graph = load_graph(args.graph)
        extended = extend_graph(
            graph, _load_synsets(args.synsets), _load_samples(args.samples)
        )
        save_graph(extended, args.out)
        print(
            f"graph: {len(graph)} -> {len(extended)} nodes, version "
            f"{extended.graph_version} -> {args.out}",
            file=sys.stderr,
        )
        return EXIT_OK
    # validate
    report = validate_graph(load_graph(args.graph))
    if report.ok:
        print("graph: valid", file=sys.stderr)
        return EXIT_OK
    for node in report.unsampled:
        print(f"unsampled: {node}", file=sys.stderr)
    for node, missing in report.unresolved:
        print(f"unresolved edge: {node} -> {missing}", file=sys.stderr)
    for node, sample in report.duplicate_samples:
        print(f"duplicate sample: {node} lists {sample} twice", file=sys.stderr)
    return EXIT_USER


# ---------------------------------------------------------------------------
# label
# ---------------------------------------------------------------------------


def _registry_upsert(labels_dir: Path, record: ModelRecord) -> None:
    registry_path = labels_dir / workspace.REGISTRY_FILE
    hub = load_registry(registry_path) if registry_path.exists() else ModelHub()
    if record.model_id in hub.records:
        records = {m: r for m, r in hub.records.items() if m != record.model_id}
        hub = ModelHub(records=records, labels={})
    records = dict(hub.records)
    records[record.model_id] = record
    save_registry(ModelHub(records=records, labels={}), registry_path)


def _cmd_label(args) -> int:
    labels_dir = Path(args.labels)
    graph = load_graph(args.graph)
    if args.action == "compute":
        if not args.dim or not args.images or not args.captions:
            raise InvalidInputError(
                "label compute requires --dim, --images, and --captions"
            )
        record = ModelRecord(
            model_id=args.model_id,
            dim=args.dim,
            temperature=args.temperature,
            metadata=json.loads(args.metadata) if args.metadata else {},
        )
        label = compute_label(
            record, read_store(args.images), read_store(args.captions), graph
        )
        target = labels_dir / args.model_id
        if (target / "label.json").exists() and not args.force:
            raise InvalidInputError(
                f"label for {args.model_id!r} already exists; pass --force to overwrite"
            )
        save_label(label, target, overwrite=args.force)
        _registry_upsert(labels_dir, record)
        print(
            f"label: {args.model_id} over {len(label.diag_scores)} nodes -> {target}",
            file=sys.stderr,
        )
        return EXIT_OK
    # extend
    label = load_label(labels_dir / args.model_id)
    extended = extend_label(
        label,
        graph,
        new_caption_embeds=read_store(args.new_captions) if args.new_captions else None,
        new_image_embeds=read_store(args.new_images) if args.new_images else None,
    )
    save_label(extended, labels_dir / args.model_id, overwrite=True)
    print(
        f"label: {args.model_id} extended to graph version {extended.graph_version}",
        file=sys.stderr,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# select / predict / eval
# ---------------------------------------------------------------------------


def _resolve_task(args):
    task = load_task(args.task)
    if task.missing_captions():
        mode = _defaulted(args, "captions", "fixture")
        if mode == "fixture":
            if not args.caption_fixtures:
                raise InvalidInputError(
                    "task is missing class captions; pass --caption-fixtures"
                )
            client = FixtureCaptionClient(args.caption_fixtures)
        else:
            client = LiveCaptionClient()
        task = fill_captions(task, client)
    return task


def _require_paths(args, names) -> None:
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise InvalidInputError(
            f"missing required paths (flags or config): {', '.join('--' + n for n in missing)}"
        )


def _cmd_select(args) -> int:
    args = _apply_config(args)
    _require_paths(args, ("graph", "labels", "stores"))
    task = _resolve_task(args)
    graph = load_graph(args.graph)
    labels_dir = Path(args.labels)
    hub = load_registry(labels_dir / workspace.REGISTRY_FILE, labels_dir=labels_dir)
    stores = Path(args.stores)
    node_captions = read_store(stores / workspace.NODE_CAPTIONS_STORE)
    task_captions = read_store(stores / workspace.TASKS_DIR / task.task_id / "captions")

    result = select(
        task,
        hub,
        graph,
        node_captions,
        task_captions,
        alpha=_defaulted(args, "alpha", DEFAULT_ALPHA),
        k_reuse=_defaulted(args, "k_reuse", DEFAULT_K_REUSE),
        k_match=_defaulted(args, "k_match", DEFAULT_K_MATCH),
        raw_z=args.raw_z,
        allow_stale=args.allow_stale,
        threads=_defaulted(args, "threads", 1),
    )
    if args.out:
        save_selection(result, args.out)

    print("class\tmembers")
    for cls in result.classes:
        members = "\t".join(
            f"{m}:{result.reuse_metrics[m][cls]:.4f}" for m in result.members(cls)
        )
        print(f"{cls}\t{members}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    args = _apply_config(args)
    _require_paths(args, ("stores",))
    task = load_task(args.task)
    selection_doc = json.loads(Path(args.selection).read_text(encoding="utf-8"))
    k_reuse = _defaulted(args, "k_reuse", None) or selection_doc["k_reuse"]
    members = {
        cls: tuple(ranked[:k_reuse])
        for cls, ranked in selection_doc["rankings"].items()
    }
    stores = Path(args.stores) / workspace.TASKS_DIR / task.task_id
    needed = sorted({m for team in members.values() for m in team})
    spaces = {
        m: ModelTaskSpace(
            image_embeds=read_store(stores / m / "images"),
            prompt_embeds=read_store(stores / m / "prompts"),
        )
        for m in needed
    }
    temperature = _defaulted(args, "reuse_temperature", DEFAULT_REUSE_TEMPERATURE)
    predictor = EnsemblePredictor(
        classes=task.classes,
        members={c: members[c] for c in task.classes},
        spaces=spaces,
        temperature=temperature,
    )
    sample_ids = sorted(spaces[needed[0]].image_embeds.ids)
    records = predict_batch(sample_ids, predictor)
    save_predictions(records, args.out, task_id=task.task_id, temperature=temperature)
    print(f"predict: {len(records)} samples -> {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_eval(args) -> int:
    task = load_task(args.task)
    records = load_predictions(args.predictions)
    truth = workspace.load_truth(args.truth)
    selection_doc = (
        json.loads(Path(args.selection).read_text(encoding="utf-8"))
        if args.selection
        else None
    )
    cost = 0.0
    if selection_doc:
        union = {
            m
            for ranked in selection_doc["rankings"].values()
            for m in ranked[: selection_doc["k_reuse"]]
        }
        cost = float(len(union))
    report = harness.evaluate(
        records, truth, classes=task.classes, task_id=task.task_id, cost=cost
    )
    out = Path(args.out)
    out.with_suffix(".json").write_text(
        harness.eval_report_to_json(report), encoding="utf-8"
    )
    out.with_suffix(".txt").write_text(
        harness.eval_report_rows([report]), encoding="utf-8"
    )
    print(
        f"eval: {report.task_id} accuracy={report.accuracy:.4f} "
        f"({report.correct}/{report.total})",
        file=sys.stderr,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench / synth
# ---------------------------------------------------------------------------


def _load_workspace_bundle(args) -> harness.HubBundle:
    root = Path(args.workspace)
    task_ids = args.tasks.split(",") if args.tasks else None
    return workspace.load_bundle(root, task_ids=task_ids)


def _cmd_bench(args) -> int:
    args = _apply_config(args)
    bundle = _load_workspace_bundle(args)
    out = Path(args.out)
    if args.action == "scaling":
        curve = harness.scaling_experiment(
            bundle,
            permutations=args.permutations,
            seed=_defaulted(args, "seed", 0),
            alpha=_defaulted(args, "alpha", DEFAULT_ALPHA),
            k_reuse=_defaulted(args, "k_reuse", DEFAULT_K_REUSE),
            k_match=_defaulted(args, "k_match", DEFAULT_K_MATCH),
            temperature=_defaulted(args, "reuse_temperature", DEFAULT_REUSE_TEMPERATURE),
        )
        out.with_suffix(".json").write_text(harness.scaling_to_json(curve), encoding="utf-8")
        out.with_suffix(".txt").write_text(harness.scaling_to_text(curve), encoding="utf-8")
        print(f"bench scaling: {len(curve.orders)} schemes -> {out}.*", file=sys.stderr)
        return EXIT_OK
    # ablate
    alphas = [float(a) for a in args.alphas.split(",")]
    ks = [int(k) for k in args.ks.split(",")]
    report = harness.ablate(
        bundle,
        alphas,
        ks,
        alpha_for_k=_defaulted(args, "alpha", DEFAULT_ALPHA),
        k_for_alpha=_defaulted(args, "k_reuse", DEFAULT_K_REUSE),
        k_match=_defaulted(args, "k_match", DEFAULT_K_MATCH),
        temperature=_defaulted(args, "reuse_temperature", DEFAULT_REUSE_TEMPERATURE),
    )
    out.with_suffix(".json").write_text(harness.ablation_to_json(report), encoding="utf-8")
    out.with_suffix(".alpha.txt").write_text(harness.alpha_table_text(report), encoding="utf-8")
    out.with_suffix(".k.txt").write_text(harness.k_table_text(report), encoding="utf-8")
    print(f"bench ablate: {len(alphas)} alphas x {len(ks)} ks -> {out}.*", file=sys.stderr)
    return EXIT_OK


def _cmd_synth(args) -> int:
    bundle = harness.specialist_fixture(
        num_classes=args.classes,
        generalist_accuracy=args.generalist_accuracy,
        samples_per_node=args.samples_per_node,
        task_samples_per_class=args.task_samples_per_class,
        seed=args.seed if args.seed is not None else 0,
    )
    workspace.materialize_bundle(bundle, args.out, overwrite=args.force)
    print(
        f"synth: {len(bundle.hub)} models, {len(bundle.graph)} nodes -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--k-reuse", dest="k_reuse", type=int, default=None)
    parser.add_argument("--k-match", dest="k_match", type=int, default=None)
    parser.add_argument(
        "--reuse-temperature", dest="reuse_temperature", type=float, default=None
    )
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlmhub",
        description="Label, select, and reuse vision-language models from a hub.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_graph = sub.add_parser("graph", help="build, extend, or validate the semantic graph")
    p_graph.add_argument("action", choices=["build", "extend", "validate"])
    p_graph.add_argument("--synsets", help="JSON list of synset records")
    p_graph.add_argument("--samples", help="JSON map synset id -> sample ids")
    p_graph.add_argument("--graph", help="existing graph file (extend/validate)")
    p_graph.add_argument("--out", help="output graph file")
    p_graph.set_defaults(func=_cmd_graph)

    p_label = sub.add_parser("label", help="compute or extend a model label")
    p_label.add_argument("action", choices=["compute", "extend"])
    p_label.add_argument("--model-id", dest="model_id", required=True)
    p_label.add_argument("--dim", type=int)
    p_label.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    p_label.add_argument("--metadata", help="JSON object of model metadata")
    p_label.add_argument("--graph", required=True)
    p_label.add_argument("--labels", required=True, help="labels directory")
    p_label.add_argument("--images", help="image embedding store (compute)")
    p_label.add_argument("--captions", help="caption embedding store (compute)")
    p_label.add_argument("--new-images", dest="new_images", help="store for added samples")
    p_label.add_argument("--new-captions", dest="new_captions", help="store for added nodes")
    p_label.add_argument("--force", action="store_true")
    p_label.set_defaults(func=_cmd_label)

    p_select = sub.add_parser("select", help="rank models per task class")
    p_select.add_argument("--graph", help="graph file (or via --config)")
    p_select.add_argument("--labels", help="labels directory (or via --config)")
    p_select.add_argument("--stores", help="stores directory (or via --config)")
    p_select.add_argument("--task", required=True, help="task spec file")
    p_select.add_argument("--raw-z", dest="raw_z", action="store_true")
    p_select.add_argument("--allow-stale", dest="allow_stale", action="store_true")
    p_select.add_argument(
        "--captions", choices=["live", "fixture"], default=None,
        help="caption client for tasks without captions",
    )
    p_select.add_argument("--caption-fixtures", dest="caption_fixtures")
    p_select.add_argument("--out", help="selection result file")
    _add_common(p_select)
    p_select.set_defaults(func=_cmd_select)

    p_predict = sub.add_parser("predict", help="run the per-class ensemble")
    p_predict.add_argument("--task", required=True)
    p_predict.add_argument("--selection", required=True)
    p_predict.add_argument("--stores", help="stores directory (or via --config)")
    p_predict.add_argument("--out", required=True)
    _add_common(p_predict)
    p_predict.set_defaults(func=_cmd_predict)

    p_eval = sub.add_parser("eval", help="score predictions against ground truth")
    p_eval.add_argument("--task", required=True)
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--selection", help="selection file, for cost accounting")
    p_eval.add_argument("--out", required=True, help="report path prefix")
    p_eval.set_defaults(func=_cmd_eval)

    p_bench = sub.add_parser("bench", help="scaling and ablation experiments")
    p_bench.add_argument("action", choices=["scaling", "ablate"])
    p_bench.add_argument("--workspace", required=True, help="workspace root directory")
    p_bench.add_argument("--tasks", help="comma-separated task ids (default: all)")
    p_bench.add_argument("--permutations", type=int, default=harness.DEFAULT_SCALING_PERMUTATIONS)
    p_bench.add_argument("--alphas", default="0.5,0.6,0.7,0.8,0.9")
    p_bench.add_argument("--ks", default="1,2,3,4,5,6")
    p_bench.add_argument("--out", required=True, help="report path prefix")
    _add_common(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_synth = sub.add_parser("synth", help="materialize a synthetic specialist workspace")
    p_synth.add_argument("--classes", type=int, default=5)
    p_synth.add_argument(
        "--generalist-accuracy", dest="generalist_accuracy", type=float, default=0.6
    )
    p_synth.add_argument("--samples-per-node", dest="samples_per_node", type=int, default=5)
    p_synth.add_argument(
        "--task-samples-per-class", dest="task_samples_per_class", type=int, default=5
    )
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--force", action="store_true")
    p_synth.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VlmHubError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
