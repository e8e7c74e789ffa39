from __future__ import annotations

import numpy as np
import pytest

from vlmhub.errors import (
    IncompleteMetadataError,
    InfeasibleFixtureError,
    InvalidInputError,
)
from vlmhub.harness import (
    SynthHubSpec,
    SynthModelSpec,
    ablate,
    alpha_table_text,
    eval_report_rows,
    evaluate,
    evaluate_members,
    inb_select,
    k_table_text,
    oracle_predict,
    oracle_select,
    random_bundle,
    run_task,
    scaling_experiment,
    scaling_to_json,
    specialist_fixture,
    synth_hub,
)
from vlmhub.model_labeling import ModelHub, ModelRecord
from vlmhub.selection import select


# -- evaluate -----------------------------------------------------------------


def test_all_correct_predictions():
    truth = {"s1": "a", "s2": "b", "s3": "a"}
    report = evaluate(dict(truth), truth)
    assert report.accuracy == 1.0
    assert all(f1 == 1.0 for f1 in report.per_class_f1.values())


def test_constant_prediction_on_balanced_task():
    truth = {f"s{i}": ("a" if i < 4 else "b") for i in range(8)}
    predictions = {s: "a" for s in truth}
    report = evaluate(predictions, truth)
    assert report.accuracy == 0.5
    assert report.per_class_f1["a"] == pytest.approx(2 / 3, abs=1e-12)
    assert report.per_class_f1["b"] == 0.0


def test_evaluate_matches_confusion_recount():
    rng = np.random.default_rng(0)
    classes = ["a", "b", "c"]
    truth = {f"s{i}": classes[int(rng.integers(3))] for i in range(60)}
    predictions = {s: classes[int(rng.integers(3))] for s in truth}
    report = evaluate(predictions, truth, classes=classes)

    counts = {(t, p): 0 for t in classes for p in classes}
    for s, t in truth.items():
        counts[(t, predictions[s])] += 1
    assert report.correct == sum(counts[(c, c)] for c in classes)
    for t in classes:
        for p in classes:
            assert report.confusion[t].get(p, 0) == counts[(t, p)]
    for c in classes:
        tp = counts[(c, c)]
        fp = sum(counts[(t, c)] for t in classes if t != c)
        fn = sum(counts[(c, p)] for p in classes if p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        expected = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        assert report.per_class_f1[c] == pytest.approx(expected, abs=1e-12)


def test_evaluate_rejects_unknown_labels():
    with pytest.raises(InvalidInputError):
        evaluate({"s1": "zz"}, {"s1": "a"}, classes=["a"])
    with pytest.raises(InvalidInputError):
        evaluate({"s9": "a"}, {"s1": "a"}, classes=["a"])


def test_report_rows_layout():
    truth = {"s1": "a", "s2": "a"}
    report = evaluate(dict(truth), truth, task_id="toy", cost=2.0)
    text = eval_report_rows([report])
    assert text.splitlines()[0] == "task\taccuracy\tcost"
    assert text.splitlines()[1] == "toy\t1.0000\t2.000"


# -- the ImageNet-accuracy baseline --------------------------------------------


def _metadata_hub(model_zoo_metadata):
    records = {
        meta["model_id"]: ModelRecord(
            model_id=meta["model_id"],
            dim=4,
            metadata={"imagenet_acc": meta["imagenet_acc"]},
        )
        for meta in model_zoo_metadata
    }
    return ModelHub(records=records, labels={})


def test_inb_top1_from_published_metadata(model_zoo_metadata):
    hub = _metadata_hub(model_zoo_metadata)
    top = inb_select(hub, 1)
    assert top == ["ViT-H-14-378-quickgelu.dfn5b"]
    acc = hub.records[top[0]].metadata["imagenet_acc"]
    assert acc == 0.8437


def test_inb_top3_ordering(model_zoo_metadata):
    hub = _metadata_hub(model_zoo_metadata)
    top3 = inb_select(hub, 3)
    accs = [hub.records[m].metadata["imagenet_acc"] for m in top3]
    assert accs == sorted(accs, reverse=True)
    assert len(top3) == 3


def test_inb_single_model_hub():
    hub = ModelHub(
        records={"only": ModelRecord("only", 4, metadata={"imagenet_acc": 0.5})},
        labels={},
    )
    assert inb_select(hub, 1) == ["only"]


def test_inb_ties_break_lexicographically():
    hub = ModelHub(
        records={
            "zz": ModelRecord("zz", 4, metadata={"imagenet_acc": 0.5}),
            "aa": ModelRecord("aa", 4, metadata={"imagenet_acc": 0.5}),
        },
        labels={},
    )
    assert inb_select(hub, 2) == ["aa", "zz"]


def test_inb_requires_metadata():
    hub = ModelHub(records={"m": ModelRecord("m", 4)}, labels={})
    with pytest.raises(IncompleteMetadataError):
        inb_select(hub, 1)


# -- synthetic hubs -------------------------------------------------------------


def test_specialists_beat_global_baseline():
    bundle = specialist_fixture(num_classes=5, generalist_accuracy=0.6)
    task = bundle.tasks[0]
    _, _, per_class_report = run_task(bundle, task)
    assert per_class_report.accuracy == 1.0
    inb_members = {cls: tuple(inb_select(bundle.hub, 1)) for cls in task.spec.classes}
    _, inb_report = evaluate_members(task, inb_members)
    assert inb_report.accuracy == 0.6


def test_minimal_profile_one_model_one_node():
    bundle = synth_hub(
        SynthHubSpec(
            models=(SynthModelSpec("solo", (1.0,), imagenet_acc=0.5),),
            num_classes=1,
            samples_per_node=2,
            task_samples_per_class=2,
        )
    )
    assert bundle.hub.model_ids() == ["solo"]
    assert len(bundle.graph) == 1
    _, _, report = run_task(bundle, bundle.tasks[0])
    assert report.accuracy == 1.0


def test_profile_needs_enough_orthogonal_axes():
    with pytest.raises(InfeasibleFixtureError):
        synth_hub(
            SynthHubSpec(
                models=(SynthModelSpec("m", (1.0,) * 5, imagenet_acc=0.5),),
                num_classes=5,
                dim=3,
            )
        )


def test_profile_with_misses_needs_second_concept():
    with pytest.raises(InfeasibleFixtureError):
        synth_hub(
            SynthHubSpec(
                models=(SynthModelSpec("m", (0.5,), imagenet_acc=0.5),),
                num_classes=1,
            )
        )


def test_synth_hub_realizes_requested_competence():
    q = (1.0, 0.5, 0.0)
    bundle = synth_hub(
        SynthHubSpec(
            models=(SynthModelSpec("m", q, imagenet_acc=0.5),),
            num_classes=3,
            samples_per_node=4,
        ),
        seed=9,
    )
    task = bundle.tasks[0]
    result = select(
        task.spec, bundle.hub, bundle.graph, bundle.node_caption_embeds, task.caption_embeds
    )
    for i, node in enumerate(sorted(bundle.graph.nodes)):
        assert result.node_precisions["m"][node] == q[i]


def test_synth_hub_deterministic_under_seed():
    a = specialist_fixture(seed=5)
    b = specialist_fixture(seed=5)
    assert a.hub.model_ids() == b.hub.model_ids()
    for m in a.hub.model_ids():
        assert (
            a.hub.labels[m].image_embeds.rows.tobytes()
            == b.hub.labels[m].image_embeds.rows.tobytes()
        )
        assert dict(a.hub.labels[m].diag_scores) == dict(b.hub.labels[m].diag_scores)


# -- scaling ---------------------------------------------------------------------


def test_scaling_monotone_on_specialists():
    bundle = specialist_fixture()
    curve = scaling_experiment(bundle, permutations=5, seed=3)
    for scheme in curve.scheme_means():
        assert all(b >= a - 1e-12 for a, b in zip(scheme, scheme[1:]))
        assert scheme[-1] == 1.0


def test_scaling_single_model_single_permutation():
    bundle, _ = random_bundle(20, max_models=1)
    curve = scaling_experiment(bundle, permutations=1, seed=0)
    assert curve.hub_sizes == (1,)
    _, _, full = run_task(bundle, bundle.tasks[0])
    assert curve.accuracies[0][0][0] == full.accuracy


def test_scaling_same_seed_same_curve():
    bundle = specialist_fixture(num_classes=3)
    a = scaling_experiment(bundle, permutations=4, seed=11)
    b = scaling_experiment(bundle, permutations=4, seed=11)
    assert scaling_to_json(a) == scaling_to_json(b)
    c = scaling_experiment(bundle, permutations=4, seed=12)
    assert scaling_to_json(a) != scaling_to_json(c)


# -- ablation ----------------------------------------------------------------------


def test_ablation_tables_shape_and_costs():
    bundle = specialist_fixture()
    report = ablate(bundle, alphas=(0.5, 0.6, 0.7, 0.8, 0.9), ks=(1, 2, 3))
    assert report.k_relative_cost[1] == 1.0
    assert report.k_relative_cost[3] < 3.0

    alpha_text = alpha_table_text(report)
    lines = alpha_text.splitlines()
    assert lines[0] == "alpha\t0.5\t0.6\t0.7\t0.8\t0.9"
    assert lines[1].startswith("Avg.\t")
    assert len(lines[1].split("\t")) == 6

    k_text = k_table_text(report)
    lines = k_text.splitlines()
    assert lines[0] == "k\tavg_accuracy\tcost_vs_k1"
    assert lines[1].split("\t") == ["1", f"{report.k_accuracy[1]:.4f}", "1.000"]
    assert len(lines) == 4


def test_ablation_rejects_empty_grids():
    bundle = specialist_fixture(num_classes=2)
    with pytest.raises(InvalidInputError):
        ablate(bundle, alphas=(), ks=(1,))


# -- oracle comparisons ---------------------------------------------------------


def test_engine_matches_oracle_on_random_instances():
    for seed in range(25):
        bundle, params = random_bundle(seed)
        task = bundle.tasks[0]
        engine = select(
            task.spec, bundle.hub, bundle.graph, bundle.node_caption_embeds,
            task.caption_embeds, alpha=params["alpha"], k_reuse=params["k_reuse"],
            k_match=params["k_match"],
        )
        oracle = oracle_select(
            task.spec, bundle.hub, bundle.graph, bundle.node_caption_embeds,
            task.caption_embeds, alpha=params["alpha"], k_reuse=params["k_reuse"],
            k_match=params["k_match"],
        )
        assert engine.rankings == oracle.rankings
        assert engine.transfer.selected_nodes == oracle.transfer.selected_nodes
        for m in engine.model_ids:
            for v, p in engine.node_precisions[m].items():
                assert abs(p - oracle.node_precisions[m][v]) <= 1e-9
            for c in engine.classes:
                assert abs(engine.class_precisions[m][c] - oracle.class_precisions[m][c]) <= 1e-9
                assert abs(engine.reuse_metrics[m][c] - oracle.reuse_metrics[m][c]) <= 1e-9

        members = {c: engine.members(c) for c in engine.classes}
        engine_records, _ = evaluate_members(task, members, temperature=params["temperature"])
        oracle_records = oracle_predict(task, members, temperature=params["temperature"])
        for er, orec in zip(engine_records, oracle_records):
            assert er.sample_id == orec.sample_id
            assert er.predicted == orec.predicted
            for c in engine.classes:
                assert abs(er.confidences[c] - orec.confidences[c]) <= 1e-9


def test_oracle_raw_z_agrees_too():
    bundle, params = random_bundle(77)
    task = bundle.tasks[0]
    engine = select(
        task.spec, bundle.hub, bundle.graph, bundle.node_caption_embeds,
        task.caption_embeds, k_match=params["k_match"], raw_z=True,
    )
    oracle = oracle_select(
        task.spec, bundle.hub, bundle.graph, bundle.node_caption_embeds,
        task.caption_embeds, k_match=params["k_match"], raw_z=True,
    )
    assert engine.rankings == oracle.rankings
    assert set(engine.transfer.entries) == set(oracle.transfer.entries)
    for key, z in engine.transfer.entries.items():
        assert abs(z - oracle.transfer.entries[key]) <= 1e-9
