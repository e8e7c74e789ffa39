"""Evaluation and experiment harness.

Provides accuracy / per-class F1 scoring, the ImageNet-accuracy baseline,
hub-scaling and hyperparameter-ablation experiments, a synthetic-hub fixture
generator whose cosine argmax behavior is forced by construction, and naive
brute-force reimplementations of selection and ensemble prediction used as
independent oracles by the test suite.

Every operation here is a pure function of its inputs and seed; reports are
written in both a tabular text layout and a JSON variant. Inference cost is
counted in model-forward equivalents (distinct member models per sample),
which is portable across machines; wall-clock time is kept out of report
files so reruns stay byte-identical.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .embedding_store import EmbeddingMatrix
from .errors import (
    IncompleteMetadataError,
    InfeasibleFixtureError,
    InvalidInputError,
    NoCandidatesError,
    NoModelsError,
)
from .model_labeling import ModelHub, ModelRecord, compute_label, register_model
from .reuse import (
    DEFAULT_REUSE_TEMPERATURE,
    EnsemblePredictor,
    ModelTaskSpace,
    PredictionRecord,
    predict_batch,
)
from .selection import (
    DEFAULT_ALPHA,
    DEFAULT_K_MATCH,
    DEFAULT_K_REUSE,
    SelectionResult,
    TaskSpec,
    TransferMatrix,
    select,
)
from .semantic_graph import SemanticGraph, SynsetRecord, build_graph

REPORT_FORMAT_VERSION = 1

DEFAULT_SCALING_PERMUTATIONS = 30


# ---------------------------------------------------------------------------
# Bundles: everything needed to run a task end to end, in memory.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskBundle:
    """A task plus the embeddings and ground truth needed to run and score it."""

    spec: TaskSpec
    ground_truth: Mapping[str, str]  # sample id -> true class
    caption_embeds: EmbeddingMatrix  # backend space, ids = class names
    image_embeds: Mapping[str, EmbeddingMatrix]  # model id -> task-sample rows
    prompt_embeds: Mapping[str, EmbeddingMatrix]  # model id -> class-prompt rows

    def sample_ids(self) -> list[str]:
        return sorted(self.ground_truth)


@dataclass(frozen=True)
class HubBundle:
    """A hub, its graph, backend node captions, and one or more tasks."""

    hub: ModelHub
    graph: SemanticGraph
    node_caption_embeds: EmbeddingMatrix  # backend space, ids = node ids
    tasks: tuple[TaskBundle, ...]

    def task(self, task_id: str) -> TaskBundle:
        for t in self.tasks:
            if t.spec.task_id == task_id:
                return t
        raise InvalidInputError(f"bundle has no task {task_id!r}")


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Accuracy, one-vs-rest F1 per class, confusion counts, and cost."""

    task_id: str
    accuracy: float
    correct: int
    total: int
    per_class_f1: Mapping[str, float]
    confusion: Mapping[str, Mapping[str, int]]  # true -> predicted -> count
    cost: float  # model-forward equivalents per sample
    wall_seconds: float = 0.0  # informational only; never serialized


def evaluate(
    predictions,
    ground_truth: Mapping[str, str],
    *,
    classes: Sequence[str] | None = None,
    task_id: str = "",
    cost: float = 0.0,
    wall_seconds: float = 0.0,
) -> EvalReport:
    """Exact counting of a prediction set against ground truth.

    `predictions` is either a list of PredictionRecord or a sample -> class
    mapping. Every predicted sample must have a ground-truth label, and all
    labels must belong to the task's class set.
    """
    if isinstance(predictions, Mapping):
        predicted = dict(predictions)
    else:
        predicted = {r.sample_id: r.predicted for r in predictions}
    if not predicted:
        raise InvalidInputError("nothing to evaluate")

    class_set = list(classes) if classes is not None else sorted(set(ground_truth.values()))
    known = set(class_set)
    confusion: dict[str, dict[str, int]] = {c: {} for c in class_set}
    correct = 0
    for sid in sorted(predicted):
        if sid not in ground_truth:
            raise InvalidInputError(f"sample {sid!r} has no ground-truth label")
        truth, guess = ground_truth[sid], predicted[sid]
        if truth not in known:
            raise InvalidInputError(f"ground-truth label {truth!r} not in class set")
        if guess not in known:
            raise InvalidInputError(f"predicted label {guess!r} not in class set")
        confusion[truth][guess] = confusion[truth].get(guess, 0) + 1
        if truth == guess:
            correct += 1
    total = len(predicted)

    f1: dict[str, float] = {}
    for cls in class_set:
        tp = confusion[cls].get(cls, 0)
        fp = sum(confusion[t].get(cls, 0) for t in class_set if t != cls)
        fn = sum(n for p, n in confusion[cls].items() if p != cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1[cls] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0

    return EvalReport(
        task_id=task_id,
        accuracy=correct / total,
        correct=correct,
        total=total,
        per_class_f1=f1,
        confusion=confusion,
        cost=cost,
        wall_seconds=wall_seconds,
    )


def inb_select(hub: ModelHub, k: int) -> list[str]:
    """Baseline ranking: the k models with the best ImageNet accuracy.

    Requires `imagenet_acc` in every model's metadata; ties break toward the
    lexicographically smaller model id.
    """
    if len(hub) == 0:
        raise NoModelsError("the hub holds no models")
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    missing = [m for m in hub.model_ids() if "imagenet_acc" not in hub.records[m].metadata]
    if missing:
        raise IncompleteMetadataError(f"models lack imagenet_acc metadata: {missing}")
    ranked = sorted(
        hub.model_ids(), key=lambda m: (-float(hub.records[m].metadata["imagenet_acc"]), m)
    )
    return ranked[:k]


# ---------------------------------------------------------------------------
# End-to-end runs
# ---------------------------------------------------------------------------


def evaluate_members(
    task: TaskBundle,
    members: Mapping[str, tuple[str, ...]],
    *,
    temperature: float = DEFAULT_REUSE_TEMPERATURE,
) -> tuple[list[PredictionRecord], EvalReport]:
    """Predict and score a task with an explicit per-class member assignment."""
    needed = sorted({m for team in members.values() for m in team})
    spaces = {
        m: ModelTaskSpace(
            image_embeds=task.image_embeds[m], prompt_embeds=task.prompt_embeds[m]
        )
        for m in needed
    }
    predictor = EnsemblePredictor(
        classes=task.spec.classes,
        members={c: tuple(members[c]) for c in task.spec.classes},
        spaces=spaces,
        temperature=temperature,
    )
    start = time.perf_counter()
    records = predict_batch(task.sample_ids(), predictor)
    wall = time.perf_counter() - start
    report = evaluate(
        records,
        task.ground_truth,
        classes=task.spec.classes,
        task_id=task.spec.task_id,
        cost=float(len(predictor.member_union())),
        wall_seconds=wall,
    )
    return records, report


def run_task(
    bundle: HubBundle,
    task: TaskBundle,
    *,
    model_ids: Sequence[str] | None = None,
    alpha: float = DEFAULT_ALPHA,
    k_reuse: int = DEFAULT_K_REUSE,
    k_match: int = DEFAULT_K_MATCH,
    temperature: float = DEFAULT_REUSE_TEMPERATURE,
    raw_z: bool = False,
    threads: int = 1,
) -> tuple[SelectionResult, list[PredictionRecord], EvalReport]:
    """Select models for a task, predict every sample, and score the result."""
    hub = bundle.hub if model_ids is None else bundle.hub.subset(model_ids)
    selection = select(
        task.spec,
        hub,
        bundle.graph,
        bundle.node_caption_embeds,
        task.caption_embeds,
        alpha=alpha,
        k_reuse=k_reuse,
        k_match=k_match,
        raw_z=raw_z,
        threads=threads,
    )
    members = {cls: selection.members(cls) for cls in selection.classes}
    records, report = evaluate_members(task, members, temperature=temperature)
    return selection, records, report


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingCurve:
    """Accuracy as the hub grows, over seeded random expansion orders."""

    seed: int
    hub_sizes: tuple[int, ...]
    orders: tuple[tuple[str, ...], ...]  # one model permutation per scheme
    task_ids: tuple[str, ...]
    # accuracies[scheme][size index][task index]
    accuracies: tuple[tuple[tuple[float, ...], ...], ...]

    def scheme_means(self) -> list[list[float]]:
        """Mean accuracy over tasks, per scheme and hub size."""
        return [[sum(at) / len(at) for at in scheme] for scheme in self.accuracies]

    def mean_by_size(self) -> list[float]:
        per_scheme = self.scheme_means()
        return [
            sum(scheme[i] for scheme in per_scheme) / len(per_scheme)
            for i in range(len(self.hub_sizes))
        ]


def scaling_experiment(
    bundle: HubBundle,
    *,
    permutations: int = DEFAULT_SCALING_PERMUTATIONS,
    seed: int = 0,
    alpha: float = DEFAULT_ALPHA,
    k_reuse: int = DEFAULT_K_REUSE,
    k_match: int = DEFAULT_K_MATCH,
    temperature: float = DEFAULT_REUSE_TEMPERATURE,
) -> ScalingCurve:
    """Grow the hub one model at a time along seeded random orders.

    For every expansion scheme and every prefix size, selection and
    prediction run with only the prefix models; per-task accuracies are
    recorded at each step.
    """
    model_ids = bundle.hub.model_ids()
    if not model_ids:
        raise NoModelsError("the hub holds no models")
    if permutations < 1:
        raise InvalidInputError("permutations must be >= 1")
    rng = np.random.default_rng(seed)
    orders = tuple(
        tuple(model_ids[i] for i in rng.permutation(len(model_ids)))
        for _ in range(permutations)
    )
    sizes = tuple(range(1, len(model_ids) + 1))
    all_acc: list[tuple[tuple[float, ...], ...]] = []
    for order in orders:
        by_size: list[tuple[float, ...]] = []
        for s in sizes:
            prefix = sorted(order[:s])
            accs = []
            for task in bundle.tasks:
                _, _, report = run_task(
                    bundle,
                    task,
                    model_ids=prefix,
                    alpha=alpha,
                    k_reuse=k_reuse,
                    k_match=k_match,
                    temperature=temperature,
                )
                accs.append(report.accuracy)
            by_size.append(tuple(accs))
        all_acc.append(tuple(by_size))
    return ScalingCurve(
        seed=seed,
        hub_sizes=sizes,
        orders=orders,
        task_ids=tuple(t.spec.task_id for t in bundle.tasks),
        accuracies=tuple(all_acc),
    )


@dataclass(frozen=True)
class AblationReport:
    """Grid results for the blend weight and the per-class ensemble size."""

    alphas: tuple[float, ...]
    alpha_accuracy: Mapping[float, float]  # mean accuracy over tasks
    alpha_k_reuse: int
    ks: tuple[int, ...]
    k_accuracy: Mapping[int, float]
    k_cost: Mapping[int, float]  # mean forwards per sample
    k_relative_cost: Mapping[int, float]  # vs k=1 (or the smallest k in the grid)
    k_alpha: float


def ablate(
    bundle: HubBundle,
    alphas: Sequence[float],
    ks: Sequence[int],
    *,
    alpha_for_k: float = DEFAULT_ALPHA,
    k_for_alpha: int = DEFAULT_K_REUSE,
    k_match: int = DEFAULT_K_MATCH,
    temperature: float = DEFAULT_REUSE_TEMPERATURE,
) -> AblationReport:
    """Sweep the blend weight and ensemble size over all bundle tasks.

    Cost per grid point counts, for each sample, the distinct member models
    its prediction touches; the k table reports that count relative to the
    k=1 baseline.
    """
    if not alphas or not ks:
        raise InvalidInputError("ablation grids must be non-empty")

    alpha_acc: dict[float, float] = {}
    for a in alphas:
        accs = []
        for task in bundle.tasks:
            _, _, report = run_task(
                bundle, task, alpha=a, k_reuse=k_for_alpha, k_match=k_match,
                temperature=temperature,
            )
            accs.append(report.accuracy)
        alpha_acc[a] = sum(accs) / len(accs)

    k_acc: dict[int, float] = {}
    k_cost: dict[int, float] = {}
    for k in ks:
        accs = []
        forwards = 0.0
        samples = 0
        for task in bundle.tasks:
            _, records, report = run_task(
                bundle, task, alpha=alpha_for_k, k_reuse=k, k_match=k_match,
                temperature=temperature,
            )
            accs.append(report.accuracy)
            forwards += report.cost * report.total
            samples += report.total
        k_acc[k] = sum(accs) / len(accs)
        k_cost[k] = forwards / samples

    baseline_k = 1 if 1 in k_cost else min(k_cost)
    baseline = k_cost[baseline_k]
    rel = {k: c / baseline for k, c in k_cost.items()}
    return AblationReport(
        alphas=tuple(alphas),
        alpha_accuracy=alpha_acc,
        alpha_k_reuse=k_for_alpha,
        ks=tuple(ks),
        k_accuracy=k_acc,
        k_cost=k_cost,
        k_relative_cost=rel,
        k_alpha=alpha_for_k,
    )


# ---------------------------------------------------------------------------
# Synthetic hubs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthModelSpec:
    """Requested behavior for one synthetic model.

    node_competence[i] is the fraction of node i's samples (and class i's
    task samples) the model must place correctly; realized fractions are
    round(q * n) / n. correct_strength is the cosine of a correct task-time
    embedding toward its class axis. Missed task samples either point at the
    cyclically next class axis ("cyclic") or lean weakly toward the model's
    own home axis ("home", for specialists that claim everything a little).
    """

    model_id: str
    node_competence: tuple[float, ...]
    imagenet_acc: float
    correct_strength: float = 1.0
    miss_mode: str = "cyclic"
    home_axis: int | None = None
    claim_strength: float = 0.3

    def __post_init__(self):
        if self.miss_mode not in ("cyclic", "home"):
            raise InvalidInputError(f"unknown miss_mode {self.miss_mode!r}")
        if self.miss_mode == "home" and self.home_axis is None:
            raise InvalidInputError("home miss_mode requires home_axis")
        if not 0.0 < self.correct_strength <= 1.0:
            raise InvalidInputError("correct_strength must lie in (0, 1]")
        for q in self.node_competence:
            if not 0.0 <= q <= 1.0:
                raise InvalidInputError("competence values must lie in [0, 1]")


@dataclass(frozen=True)
class SynthHubSpec:
    """Profile for a synthetic hub: one graph node and one task class per concept."""

    models: tuple[SynthModelSpec, ...]
    num_classes: int
    samples_per_node: int = 5
    task_samples_per_class: int = 5
    dim: int | None = None  # model-space dim; auto-sized when None
    backend_dim: int | None = None
    task_id: str = "synthetic"
    domain_text: str = "natural picture"
    task_text: str = "image classification"


def _axes(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=np.float32)


def _tilted(axis: int, strength: float, slack_axis: int, dim: int) -> np.ndarray:
    vec = np.zeros(dim, dtype=np.float64)
    vec[axis] = strength
    if strength < 1.0:
        vec[slack_axis] = math.sqrt(1.0 - strength * strength)
    return vec


def synth_hub(spec: SynthHubSpec, seed: int = 0) -> HubBundle:
    """Materialize a hub whose cosine argmax behavior matches the profile.

    Concept c owns one orthogonal axis; node captions, class captions, and
    class prompts all sit on their concept's axis, so matching is exact and
    a sample is argmax-correct iff its image embedding points at the right
    axis. Which samples a model gets right is drawn with the given seed.
    """
    C = spec.num_classes
    if C < 1 or spec.samples_per_node < 1 or spec.task_samples_per_class < 1:
        raise InvalidInputError("profile dimensions must be positive")
    if not spec.models:
        raise InvalidInputError("profile lists no models")
    for m in spec.models:
        if len(m.node_competence) != C:
            raise InvalidInputError(
                f"model {m.model_id!r} has {len(m.node_competence)} competence values "
                f"for {C} concepts"
            )
        if m.home_axis is not None and not 0 <= m.home_axis < C:
            raise InvalidInputError(f"model {m.model_id!r} home_axis out of range")

    needs_slack = any(
        m.correct_strength < 1.0 or m.miss_mode == "home" for m in spec.models
    )
    needs_miss = any(q < 1.0 for m in spec.models for q in m.node_competence)
    if needs_miss and C < 2:
        raise InfeasibleFixtureError(
            "a profile with misses needs at least 2 concepts to point a miss at"
        )
    required_dim = C + 1 if needs_slack else C
    dim = spec.dim if spec.dim is not None else required_dim
    if dim < required_dim:
        raise InfeasibleFixtureError(
            f"profile requires {required_dim} mutually orthogonal axes, dim={dim}"
        )
    backend_dim = spec.backend_dim if spec.backend_dim is not None else max(C, 2)
    if backend_dim < C:
        raise InfeasibleFixtureError(
            f"backend needs {C} orthogonal caption axes, backend_dim={backend_dim}"
        )

    rng = np.random.default_rng(seed)
    slack_axis = dim - 1 if needs_slack else 0

    node_ids = [f"n{c:08d}" for c in range(C)]
    classes = tuple(f"class_{c:02d}" for c in range(C))
    records = [
        SynsetRecord(
            synset_id=node_ids[c],
            name=f"concept {c:02d}",
            definition=f"synthetic visual concept number {c}",
        )
        for c in range(C)
    ]
    samples = {
        node_ids[c]: [f"{node_ids[c]}_s{i:03d}" for i in range(spec.samples_per_node)]
        for c in range(C)
    }
    graph = build_graph(records, samples)

    task_samples = {
        classes[c]: [f"x_{c:02d}_{i:03d}" for i in range(spec.task_samples_per_class)]
        for c in range(C)
    }
    ground_truth = {sid: cls for cls, sids in task_samples.items() for sid in sids}

    backend_axes = _axes(backend_dim)
    node_caption_embeds = EmbeddingMatrix(tuple(node_ids), backend_axes[:C].copy())
    task_caption_embeds = EmbeddingMatrix(classes, backend_axes[:C].copy())

    model_axes = _axes(dim)
    hub = ModelHub()
    image_by_model: dict[str, EmbeddingMatrix] = {}
    prompt_by_model: dict[str, EmbeddingMatrix] = {}
    for mspec in spec.models:
        caption_embeds = EmbeddingMatrix(tuple(node_ids), model_axes[:C].copy())
        prompt_embeds = EmbeddingMatrix(classes, model_axes[:C].copy())

        # Graph-time image embeddings: exact axes, wrong samples point at the
        # cyclically next node so the argmax is decisively wrong.
        g_ids: list[str] = []
        g_rows: list[np.ndarray] = []
        for c in range(C):
            sids = sorted(samples[node_ids[c]])
            n_correct = int(round(mspec.node_competence[c] * len(sids)))
            hit = set(rng.choice(len(sids), size=n_correct, replace=False).tolist())
            for i, sid in enumerate(sids):
                axis = c if i in hit else (c + 1) % C
                g_ids.append(sid)
                g_rows.append(model_axes[axis].astype(np.float64))

        # Task-time image embeddings follow the same competence, with the
        # profile's strengths deciding how assertive hits and misses are.
        t_ids: list[str] = []
        t_rows: list[np.ndarray] = []
        for c in range(C):
            sids = sorted(task_samples[classes[c]])
            n_correct = int(round(mspec.node_competence[c] * len(sids)))
            hit = set(rng.choice(len(sids), size=n_correct, replace=False).tolist())
            for i, sid in enumerate(sids):
                if i in hit:
                    row = _tilted(c, mspec.correct_strength, slack_axis, dim)
                elif mspec.miss_mode == "cyclic":
                    row = _tilted((c + 1) % C, mspec.correct_strength, slack_axis, dim)
                else:
                    row = _tilted(mspec.home_axis, mspec.claim_strength, slack_axis, dim)
                t_ids.append(sid)
                t_rows.append(row)

        image_embeds = EmbeddingMatrix.from_rows(g_ids, np.array(g_rows), normalize=False)
        record = ModelRecord(
            model_id=mspec.model_id,
            dim=dim,
            metadata={"imagenet_acc": mspec.imagenet_acc},
        )
        label = compute_label(record, image_embeds, caption_embeds, graph)
        hub = register_model(hub, record, label)
        image_by_model[mspec.model_id] = EmbeddingMatrix.from_rows(
            t_ids, np.array(t_rows), normalize=False
        )
        prompt_by_model[mspec.model_id] = prompt_embeds

    task = TaskBundle(
        spec=TaskSpec(
            task_id=spec.task_id,
            classes=classes,
            domain_text=spec.domain_text,
            task_text=spec.task_text,
            class_captions={
                c: f"The {spec.domain_text} of {c}, which is synthetic concept "
                f"{i} rendered as an orthogonal axis."
                for i, c in enumerate(classes)
            },
        ),
        ground_truth=ground_truth,
        caption_embeds=task_caption_embeds,
        image_embeds=image_by_model,
        prompt_embeds=prompt_by_model,
    )
    return HubBundle(
        hub=hub,
        graph=graph,
        node_caption_embeds=node_caption_embeds,
        tasks=(task,),
    )


def specialist_fixture(
    num_classes: int = 5,
    generalist_accuracy: float = 0.6,
    *,
    samples_per_node: int = 5,
    task_samples_per_class: int = 5,
    seed: int = 0,
) -> HubBundle:
    """One perfect specialist per class plus one mediocre generalist.

    Specialists dominate their own class's reuse metric, the generalist wins
    the ImageNet-accuracy baseline, and per-class selection over the full hub
    classifies the task perfectly while the generalist alone scores exactly
    its configured accuracy (choose sample counts so q * n is integral).

    The strengths enforce a strict confidence ordering with 5 classes:
    a specialist on its own samples (cosine 1.0 -> prob 0.405) beats the
    generalist's hits (0.9 -> 0.381), which beat specialists' weak foreign
    claims (0.3 -> 0.252), which beat everything a wrong model says about a
    class (<= 0.229). No ties means no lexicographic luck, so every hub
    prefix scores exactly (covered + q * uncovered) / classes and the
    scaling curves are monotone for every permutation.
    """
    specialists = tuple(
        SynthModelSpec(
            model_id=f"spc_{c:02d}",
            node_competence=tuple(1.0 if i == c else 0.0 for i in range(num_classes)),
            imagenet_acc=0.50 + 0.001 * c,
            correct_strength=1.0,
            miss_mode="home",
            home_axis=c,
            claim_strength=0.3,
        )
        for c in range(num_classes)
    )
    generalist = SynthModelSpec(
        model_id="gen_00",
        node_competence=(generalist_accuracy,) * num_classes,
        imagenet_acc=0.90,
        correct_strength=0.9,
        miss_mode="cyclic",
    )
    return synth_hub(
        SynthHubSpec(
            models=specialists + (generalist,),
            num_classes=num_classes,
            samples_per_node=samples_per_node,
            task_samples_per_class=task_samples_per_class,
        ),
        seed=seed,
    )


def random_bundle(
    seed: int,
    *,
    max_models: int = 5,
    max_nodes: int = 12,
    max_classes: int = 6,
    max_samples: int = 8,
    max_dim: int = 16,
) -> tuple[HubBundle, dict]:
    """A fully random tiny instance for oracle-equivalence testing.

    Returns the bundle plus the randomized run parameters (alpha, k_match,
    k_reuse, temperature). Embeddings are random unit vectors; a few nodes
    may be unsampled to exercise matching eligibility.
    """
    rng = np.random.default_rng(seed)
    C = int(rng.integers(2, max_classes + 1))
    N = int(rng.integers(2, max_nodes + 1))
    M = int(rng.integers(1, max_models + 1))
    dim = int(rng.integers(3, max_dim + 1))
    backend_dim = int(rng.integers(3, max_dim + 1))

    node_ids = [f"n{i:08d}" for i in range(N)]
    records = []
    samples: dict[str, list[str]] = {}
    for i, nid in enumerate(node_ids):
        hypers = [node_ids[j] for j in range(i) if rng.random() < 0.25]
        records.append(
            SynsetRecord(
                synset_id=nid,
                name=f"concept {i:02d}",
                definition=f"randomized concept number {i}",
                hypernym_ids=tuple(hypers),
            )
        )
        if i < 2 or rng.random() > 0.15:  # keep at least two nodes sampled
            count = int(rng.integers(1, max_samples + 1))
            samples[nid] = [f"{nid}_s{j:03d}" for j in range(count)]
    graph = build_graph(records, samples)

    def unit_rows(n: int, d: int) -> np.ndarray:
        return rng.normal(size=(n, d))

    classes = tuple(f"class_{i:02d}" for i in range(C))
    node_caption_embeds = EmbeddingMatrix.from_rows(
        node_ids, unit_rows(N, backend_dim)
    )
    task_caption_embeds = EmbeddingMatrix.from_rows(
        list(classes), unit_rows(C, backend_dim)
    )

    task_samples: dict[str, list[str]] = {}
    for i, cls in enumerate(classes):
        count = int(rng.integers(1, 7))
        task_samples[cls] = [f"x_{i:02d}_{j:03d}" for j in range(count)]
    ground_truth = {sid: cls for cls, sids in task_samples.items() for sid in sids}
    all_task_samples = sorted(ground_truth)

    hub = ModelHub()
    image_by_model: dict[str, EmbeddingMatrix] = {}
    prompt_by_model: dict[str, EmbeddingMatrix] = {}
    graph_sample_ids = graph.sample_ids()
    for m in range(M):
        model_id = f"m_{m:02d}"
        record = ModelRecord(
            model_id=model_id,
            dim=dim,
            metadata={"imagenet_acc": float(rng.uniform(0.2, 0.9))},
        )
        caption_embeds = EmbeddingMatrix.from_rows(node_ids, unit_rows(N, dim))
        image_embeds = EmbeddingMatrix.from_rows(
            graph_sample_ids, unit_rows(len(graph_sample_ids), dim)
        )
        label = compute_label(record, image_embeds, caption_embeds, graph)
        hub = register_model(hub, record, label)
        image_by_model[model_id] = EmbeddingMatrix.from_rows(
            all_task_samples, unit_rows(len(all_task_samples), dim)
        )
        prompt_by_model[model_id] = EmbeddingMatrix.from_rows(
            list(classes), unit_rows(C, dim)
        )

    task = TaskBundle(
        spec=TaskSpec(
            task_id=f"random_{seed}",
            classes=classes,
            domain_text="natural picture",
            task_text="image classification",
            class_captions={c: f"The natural picture of {c}, which is random." for c in classes},
        ),
        ground_truth=ground_truth,
        caption_embeds=task_caption_embeds,
        image_embeds=image_by_model,
        prompt_embeds=prompt_by_model,
    )
    bundle = HubBundle(
        hub=hub,
        graph=graph,
        node_caption_embeds=node_caption_embeds,
        tasks=(task,),
    )
    params = {
        "alpha": float(rng.uniform()),
        "k_match": int(rng.integers(1, 5)),
        "k_reuse": int(rng.integers(1, 4)),
        "temperature": float(rng.choice([0.5, 1.0, 2.0])),
    }
    return bundle, params


# ---------------------------------------------------------------------------
# Brute-force oracles (test-only; no shared math with the engine modules)
# ---------------------------------------------------------------------------


def _o_row(matrix: EmbeddingMatrix, id_: str) -> list[float]:
    return [float(x) for x in matrix.row(id_)]


def _o_unit(v: Sequence[float]) -> list[float]:
    norm = math.sqrt(math.fsum(x * x for x in v))
    return [x / norm for x in v]


def _o_cos(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine of two pre-unit-normalized vectors, clipped to [-1, 1]."""
    s = math.fsum(x * y for x, y in zip(a, b))
    return min(1.0, max(-1.0, s))


def _o_softmax(scores: Sequence[float]) -> list[float]:
    top = max(scores)
    exp = [math.exp(s - top) for s in scores]
    denom = math.fsum(exp)
    return [e / denom for e in exp]


def _o_entropy(probs: Sequence[float]) -> float:
    return -math.fsum(p * math.log(p) for p in probs if p > 0.0)


def oracle_select(
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
) -> SelectionResult:
    """Naive-loop reimplementation of the whole selection pipeline.

    Same contract as selection.select, written with explicit per-pair loops
    and fsum accumulation; used only to cross-check the engine.
    """
    if len(hub) == 0:
        raise NoModelsError("the hub holds no models")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    sampled = sorted(v for v in graph.nodes if graph.nodes[v].sample_ids)
    if not sampled:
        raise NoCandidatesError("every graph node is unsampled; nothing to match")

    entries: dict[tuple[str, str], float] = {}
    for cls in task.classes:
        cvec = _o_unit(_o_row(task_caption_embeds, cls))
        scored = sorted(
            (
                (_o_cos(_o_unit(_o_row(node_caption_embeds, v)), cvec), v)
                for v in sampled
            ),
            key=lambda t: (-t[0], t[1]),
        )[: min(k_match, len(sampled))]
        if raw_z:
            for s, v in scored:
                if s != 0.0:
                    entries[(v, cls)] = s
            continue
        clamped = [(max(s, 0.0), v) for s, v in scored]
        total = math.fsum(s for s, _ in clamped)
        if total > 0.0:
            weighted = [(s / total, v) for s, v in clamped]
        else:
            weighted = [(1.0 / len(clamped), v) for _, v in clamped]
        for w, v in weighted:
            if w != 0.0:
                entries[(v, cls)] = w
    selected = sorted({v for v, _ in entries})

    node_p: dict[str, dict[str, float]] = {}
    cls_p: dict[str, dict[str, float]] = {}
    metrics: dict[str, dict[str, float]] = {}
    for model_id in hub.model_ids():
        label = hub.labels[model_id]
        caps = {v: _o_unit(_o_row(label.caption_embeds, v)) for v in selected}
        per_node: dict[str, float] = {}
        for v in selected:
            hits = 0
            sample_ids = [sid for sid, _ in label.diag_scores[v]]
            for sid in sample_ids:
                img = _o_unit(_o_row(label.image_embeds, sid))
                best_v = None
                best_s = None
                for v2 in selected:  # sorted: first strict max realizes lex ties
                    s = _o_cos(img, caps[v2])
                    if best_s is None or s > best_s:
                        best_s, best_v = s, v2
                if best_v == v:
                    hits += 1
            per_node[v] = hits / len(sample_ids)
        per_cls: dict[str, float] = {}
        for cls in task.classes:
            total = math.fsum(
                per_node[v] * z for (v, c), z in entries.items() if c == cls
            )
            per_cls[cls] = total if raw_z else min(max(total, 0.0), 1.0)
        mean = math.fsum(per_cls.values()) / len(per_cls)
        metrics[model_id] = {
            cls: min(max(alpha * p + (1.0 - alpha) * mean, 0.0), 1.0)
            for cls, p in per_cls.items()
        }
        node_p[model_id] = per_node
        cls_p[model_id] = per_cls

    model_ids = hub.model_ids()
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
        transfer=TransferMatrix(
            selected_nodes=tuple(selected),
            classes=task.classes,
            entries=entries,
            k_match=k_match,
            raw=raw_z,
        ),
    )


def oracle_predict(
    task: TaskBundle,
    members: Mapping[str, tuple[str, ...]],
    *,
    temperature: float = DEFAULT_REUSE_TEMPERATURE,
) -> list[PredictionRecord]:
    """Naive-loop ensemble prediction over all task samples."""
    classes = list(task.spec.classes)
    union = sorted({m for team in members.values() for m in team})
    out: list[PredictionRecord] = []
    for sid in sorted(task.ground_truth):
        sims: dict[str, list[float]] = {}
        probs: dict[str, list[float]] = {}
        for m in union:
            img = _o_unit(_o_row(task.image_embeds[m], sid))
            sims[m] = [
                _o_cos(img, _o_unit(_o_row(task.prompt_embeds[m], cls)))
                for cls in classes
            ]
            probs[m] = _o_softmax([s / temperature for s in sims[m]])
        confidences: dict[str, float] = {}
        weights: dict[str, dict[str, float]] = {}
        for ci, cls in enumerate(classes):
            team = members[cls]
            entropies = {m: _o_entropy(probs[m]) for m in team}
            total = math.fsum(entropies[m] for m in team)
            if total < 1e-12:
                w = {m: 1.0 / len(team) for m in team}
            else:
                w = {m: h / total for m, h in entropies.items()}
            confidences[cls] = math.fsum(w[m] * probs[m][ci] for m in team)
            weights[cls] = w
        predicted = min(classes, key=lambda c: (-confidences[c], c))
        out.append(
            PredictionRecord(
                sample_id=sid,
                predicted=predicted,
                confidences=confidences,
                weights=weights,
            )
        )
    return out


def oracle_zero_shot(
    image_vec: Sequence[float],
    prompt_embeds: EmbeddingMatrix,
    tau: float,
) -> tuple[str, dict[str, float]]:
    """Naive-loop single-model zero-shot prediction."""
    if tau <= 0:
        raise InvalidInputError("temperature must be positive")
    img = _o_unit([float(x) for x in image_vec])
    classes = list(prompt_embeds.ids)
    sims = [_o_cos(img, _o_unit(_o_row(prompt_embeds, c))) for c in classes]
    probs = _o_softmax([s / tau for s in sims])
    dist = dict(zip(classes, probs))
    return min(classes, key=lambda c: (-dist[c], c)), dist


# ---------------------------------------------------------------------------
# Report serialization
# ---------------------------------------------------------------------------


def eval_report_to_json(report: EvalReport) -> str:
    doc = {
        "format_version": REPORT_FORMAT_VERSION,
        "task_id": report.task_id,
        "accuracy": report.accuracy,
        "correct": report.correct,
        "total": report.total,
        "per_class_f1": dict(sorted(report.per_class_f1.items())),
        "confusion": {
            t: dict(sorted(row.items())) for t, row in sorted(report.confusion.items())
        },
        "cost": report.cost,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def eval_report_rows(reports: Sequence[EvalReport]) -> str:
    """One tabular row per task: id, accuracy, forward-equivalent cost."""
    lines = ["task\taccuracy\tcost"]
    for r in reports:
        lines.append(f"{r.task_id}\t{r.accuracy:.4f}\t{r.cost:.3f}")
    return "\n".join(lines) + "\n"


def scaling_to_json(curve: ScalingCurve) -> str:
    doc = {
        "format_version": REPORT_FORMAT_VERSION,
        "seed": curve.seed,
        "hub_sizes": list(curve.hub_sizes),
        "task_ids": list(curve.task_ids),
        "orders": [list(o) for o in curve.orders],
        "accuracies": [
            [list(by_task) for by_task in scheme] for scheme in curve.accuracies
        ],
        "scheme_means": curve.scheme_means(),
        "mean_by_size": curve.mean_by_size(),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def scaling_to_text(curve: ScalingCurve) -> str:
    """One row per hub size: size, mean accuracy, min/max over schemes."""
    per_scheme = curve.scheme_means()
    lines = ["hub_size\tmean_accuracy\tmin_scheme\tmax_scheme"]
    for i, size in enumerate(curve.hub_sizes):
        at_size = [scheme[i] for scheme in per_scheme]
        mean = sum(at_size) / len(at_size)
        lines.append(f"{size}\t{mean:.4f}\t{min(at_size):.4f}\t{max(at_size):.4f}")
    return "\n".join(lines) + "\n"


def ablation_to_json(report: AblationReport) -> str:
    doc = {
        "format_version": REPORT_FORMAT_VERSION,
        "alpha": {
            "k_reuse": report.alpha_k_reuse,
            "grid": [
                {"alpha": a, "accuracy": report.alpha_accuracy[a]} for a in report.alphas
            ],
        },
        "k": {
            "alpha": report.k_alpha,
            "grid": [
                {
                    "k": k,
                    "accuracy": report.k_accuracy[k],
                    "cost": report.k_cost[k],
                    "relative_cost": report.k_relative_cost[k],
                }
                for k in report.ks
            ],
        },
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def alpha_table_text(report: AblationReport) -> str:
    """Blend-weight sweep in the row layout of the published ablation."""
    header = "alpha\t" + "\t".join(f"{a:g}" for a in report.alphas)
    row = "Avg.\t" + "\t".join(f"{report.alpha_accuracy[a]:.4f}" for a in report.alphas)
    return header + "\n" + row + "\n"


def k_table_text(report: AblationReport) -> str:
    """Ensemble-size sweep: accuracy plus inference cost relative to k=1."""
    lines = ["k\tavg_accuracy\tcost_vs_k1"]
    for k in report.ks:
        lines.append(
            f"{k}\t{report.k_accuracy[k]:.4f}\t{report.k_relative_cost[k]:.3f}"
        )
    return "\n".join(lines) + "\n"
