from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from conftest import unit_matrix

from vlmhub.cli import main
from vlmhub.embedding_store import write_store
from vlmhub.harness import specialist_fixture
from vlmhub.workspace import materialize_bundle


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _tree_hash(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): _sha(p) for p in sorted(root.rglob("*")) if p.is_file()
    }


@pytest.fixture
def synset_inputs(tmp_path):
    synsets = [
        {"synset_id": "n001", "name": "animal", "definition": "a living organism"},
        {"synset_id": "n002", "name": "cat", "definition": "a feline mammal", "hypernym_ids": ["n001"]},
    ]
    samples = {"n001": ["s1", "s2"], "n002": ["s3"]}
    synsets_path = tmp_path / "synsets.json"
    samples_path = tmp_path / "samples.json"
    synsets_path.write_text(json.dumps(synsets))
    samples_path.write_text(json.dumps(samples))
    return synsets_path, samples_path


@pytest.fixture
def workspace_dir(tmp_path):
    root = tmp_path / "ws"
    materialize_bundle(specialist_fixture(), root)
    return root


def test_graph_build_and_validate(tmp_path, synset_inputs):
    synsets, samples = synset_inputs
    out = tmp_path / "graph.json"
    assert main(["graph", "build", "--synsets", str(synsets), "--samples", str(samples), "--out", str(out)]) == 0
    assert out.exists()
    assert main(["graph", "validate", "--graph", str(out)]) == 0


def test_graph_build_is_byte_deterministic(tmp_path, synset_inputs):
    synsets, samples = synset_inputs
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    main(["graph", "build", "--synsets", str(synsets), "--samples", str(samples), "--out", str(a)])
    main(["graph", "build", "--synsets", str(synsets), "--samples", str(samples), "--out", str(b)])
    assert _sha(a) == _sha(b)


def test_graph_build_duplicate_exits_2(tmp_path):
    synsets = tmp_path / "synsets.json"
    synsets.write_text(
        json.dumps(
            [
                {"synset_id": "n001", "name": "a", "definition": "first thing"},
                {"synset_id": "n001", "name": "b", "definition": "second thing"},
            ]
        )
    )
    out = tmp_path / "graph.json"
    assert main(["graph", "build", "--synsets", str(synsets), "--out", str(out)]) == 2


def test_graph_validate_dangling_edge_exits_2(tmp_path, synset_inputs, capsys):
    synsets, samples = synset_inputs
    out = tmp_path / "graph.json"
    main(["graph", "build", "--synsets", str(synsets), "--samples", str(samples), "--out", str(out)])
    doc = json.loads(out.read_text())
    doc["nodes"][0]["hypernym_ids"] = ["n404"]
    out.write_text(json.dumps(doc))
    assert main(["graph", "validate", "--graph", str(out)]) == 2
    assert "n404" in capsys.readouterr().err


def test_graph_extend_cli(tmp_path, synset_inputs):
    synsets, samples = synset_inputs
    graph_path = tmp_path / "graph.json"
    main(["graph", "build", "--synsets", str(synsets), "--samples", str(samples), "--out", str(graph_path)])
    more = tmp_path / "more.json"
    more.write_text(
        json.dumps([{"synset_id": "n003", "name": "dog", "definition": "a canine mammal"}])
    )
    more_samples = tmp_path / "more_samples.json"
    more_samples.write_text(json.dumps({"n003": ["s4"]}))
    out2 = tmp_path / "graph2.json"
    assert main([
        "graph", "extend", "--graph", str(graph_path), "--synsets", str(more),
        "--samples", str(more_samples), "--out", str(out2),
    ]) == 0
    assert json.loads(out2.read_text())["graph_version"] == 2


def test_label_compute_force_and_determinism(tmp_path, synset_inputs):
    synsets, samples = synset_inputs
    graph_path = tmp_path / "graph.json"
    main(["graph", "build", "--synsets", str(synsets), "--samples", str(samples), "--out", str(graph_path)])

    rng = np.random.default_rng(0)
    write_store(tmp_path / "img", unit_matrix(["s1", "s2", "s3"], rng, 4), owner_id="m1", kind="image")
    write_store(tmp_path / "cap", unit_matrix(["n001", "n002"], rng, 4), owner_id="m1", kind="caption")

    labels = tmp_path / "labels"
    argv = [
        "label", "compute", "--model-id", "m1", "--dim", "4",
        "--graph", str(graph_path), "--labels", str(labels),
        "--images", str(tmp_path / "img"), "--captions", str(tmp_path / "cap"),
    ]
    assert main(argv) == 0
    first = _sha(labels / "m1" / "label.json")
    assert main(argv) == 2  # refuses to overwrite
    assert main(argv + ["--force"]) == 0
    assert _sha(labels / "m1" / "label.json") == first
    registry = json.loads((labels / "models.json").read_text())
    assert [m["model_id"] for m in registry["models"]] == ["m1"]


def test_select_prints_specialists_and_writes_result(workspace_dir, tmp_path, capsys):
    out = tmp_path / "selection.json"
    code = main([
        "select",
        "--graph", str(workspace_dir / "graph.json"),
        "--labels", str(workspace_dir / "labels"),
        "--stores", str(workspace_dir / "stores"),
        "--task", str(workspace_dir / "tasks" / "synthetic" / "task.json"),
        "--out", str(out),
    ])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "class\tmembers"
    for i, line in enumerate(lines[1:]):
        cls, first = line.split("\t")[:2]
        assert cls == f"class_{i:02d}"
        assert first.startswith(f"spc_{i:02d}:")
    assert json.loads(out.read_text())["k_reuse"] == 1


def test_select_rejects_out_of_range_alpha(workspace_dir, tmp_path):
    code = main([
        "select",
        "--graph", str(workspace_dir / "graph.json"),
        "--labels", str(workspace_dir / "labels"),
        "--stores", str(workspace_dir / "stores"),
        "--task", str(workspace_dir / "tasks" / "synthetic" / "task.json"),
        "--alpha", "1.5",
        "--out", str(tmp_path / "sel.json"),
    ])
    assert code == 2


def test_select_k3_lists_three_members_per_class(workspace_dir, tmp_path, capsys):
    code = main([
        "select",
        "--graph", str(workspace_dir / "graph.json"),
        "--labels", str(workspace_dir / "labels"),
        "--stores", str(workspace_dir / "stores"),
        "--task", str(workspace_dir / "tasks" / "synthetic" / "task.json"),
        "--k-reuse", "3",
        "--out", str(tmp_path / "sel.json"),
    ])
    assert code == 0
    for line in capsys.readouterr().out.strip().splitlines()[1:]:
        assert len(line.split("\t")) == 1 + 3


def _run_pipeline(workspace_dir, tmp_path):
    task_file = workspace_dir / "tasks" / "synthetic" / "task.json"
    selection = tmp_path / "selection.json"
    predictions = tmp_path / "predictions.json"
    report = tmp_path / "report"
    assert main([
        "select",
        "--graph", str(workspace_dir / "graph.json"),
        "--labels", str(workspace_dir / "labels"),
        "--stores", str(workspace_dir / "stores"),
        "--task", str(task_file),
        "--out", str(selection),
    ]) == 0
    assert main([
        "predict",
        "--task", str(task_file),
        "--selection", str(selection),
        "--stores", str(workspace_dir / "stores"),
        "--out", str(predictions),
    ]) == 0
    assert main([
        "eval",
        "--task", str(task_file),
        "--predictions", str(predictions),
        "--truth", str(workspace_dir / "tasks" / "synthetic" / "truth.json"),
        "--selection", str(selection),
        "--out", str(report),
    ]) == 0
    return selection, predictions, report


def test_end_to_end_specialists_reach_full_accuracy(workspace_dir, tmp_path):
    _, _, report = _run_pipeline(workspace_dir, tmp_path)
    doc = json.loads(report.with_suffix(".json").read_text())
    assert doc["accuracy"] == 1.0
    rows = report.with_suffix(".txt").read_text().splitlines()
    assert rows[0] == "task\taccuracy\tcost"
    assert rows[1].startswith("synthetic\t1.0000")


def test_eval_with_mismatched_truth_exits_2(workspace_dir, tmp_path):
    selection, predictions, _ = _run_pipeline(workspace_dir, tmp_path)
    bad_truth = tmp_path / "bad_truth.json"
    bad_truth.write_text(
        json.dumps({"format_version": 1, "task_id": "synthetic", "labels": {"zz": "class_00"}})
    )
    code = main([
        "eval",
        "--task", str(workspace_dir / "tasks" / "synthetic" / "task.json"),
        "--predictions", str(predictions),
        "--truth", str(bad_truth),
        "--out", str(tmp_path / "bad_report"),
    ])
    assert code == 2


def test_pipeline_outputs_are_byte_deterministic(workspace_dir, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    files_a = _run_pipeline(workspace_dir, tmp_path / "a")
    files_b = _run_pipeline(workspace_dir, tmp_path / "b")
    for fa, fb in zip(files_a, files_b):
        if fa.suffix:
            assert _sha(fa) == _sha(fb)


def test_bench_scaling_rerun_is_byte_identical(workspace_dir, tmp_path):
    argv = [
        "bench", "scaling",
        "--workspace", str(workspace_dir),
        "--permutations", "3",
        "--seed", "5",
    ]
    a = tmp_path / "scaling_a"
    b = tmp_path / "scaling_b"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert _sha(a.with_suffix(".json")) == _sha(b.with_suffix(".json"))
    assert _sha(a.with_suffix(".txt")) == _sha(b.with_suffix(".txt"))
    header = a.with_suffix(".txt").read_text().splitlines()[0]
    assert header == "hub_size\tmean_accuracy\tmin_scheme\tmax_scheme"


def test_bench_ablate_writes_both_tables(workspace_dir, tmp_path):
    out = tmp_path / "ablation"
    assert main([
        "bench", "ablate",
        "--workspace", str(workspace_dir),
        "--alphas", "0.5,0.7",
        "--ks", "1,2",
        "--out", str(out),
    ]) == 0
    assert out.with_suffix(".alpha.txt").read_text().splitlines()[0] == "alpha\t0.5\t0.7"
    k_lines = out.with_suffix(".k.txt").read_text().splitlines()
    assert k_lines[0] == "k\tavg_accuracy\tcost_vs_k1"
    assert k_lines[1].endswith("1.000")


def test_synth_command_is_deterministic(tmp_path):
    a = tmp_path / "ws_a"
    b = tmp_path / "ws_b"
    assert main(["synth", "--classes", "3", "--seed", "2", "--out", str(a)]) == 0
    assert main(["synth", "--classes", "3", "--seed", "2", "--out", str(b)]) == 0
    assert _tree_hash(a) == _tree_hash(b)


def test_config_file_supplies_defaults_and_paths(workspace_dir, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "k_reuse": 2,
                "graph": str(workspace_dir / "graph.json"),
                "labels": str(workspace_dir / "labels"),
                "stores": str(workspace_dir / "stores"),
            }
        )
    )
    assert main([
        "select",
        "--config", str(config),
        "--task", str(workspace_dir / "tasks" / "synthetic" / "task.json"),
        "--out", str(tmp_path / "sel.json"),
    ]) == 0
    for line in capsys.readouterr().out.strip().splitlines()[1:]:
        assert len(line.split("\t")) == 1 + 2


def test_flags_override_config_values(workspace_dir, tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"k_reuse": 2}))
    assert main([
        "select",
        "--config", str(config),
        "--k-reuse", "3",
        "--graph", str(workspace_dir / "graph.json"),
        "--labels", str(workspace_dir / "labels"),
        "--stores", str(workspace_dir / "stores"),
        "--task", str(workspace_dir / "tasks" / "synthetic" / "task.json"),
        "--out", str(tmp_path / "sel.json"),
    ]) == 0
    for line in capsys.readouterr().out.strip().splitlines()[1:]:
        assert len(line.split("\t")) == 1 + 3


def test_select_fills_missing_captions_from_fixture_file(workspace_dir, tmp_path):
    task_doc = json.loads((workspace_dir / "tasks" / "synthetic" / "task.json").read_text())
    task_doc["class_captions"] = {}
    bare_task = tmp_path / "bare_task.json"
    bare_task.write_text(json.dumps(task_doc))

    fixtures = tmp_path / "fixtures.json"
    fixtures.write_text(
        json.dumps({c: f"The natural picture of {c}, which is synthetic." for c in task_doc["classes"]})
    )
    out = tmp_path / "sel.json"
    assert main([
        "select",
        "--graph", str(workspace_dir / "graph.json"),
        "--labels", str(workspace_dir / "labels"),
        "--stores", str(workspace_dir / "stores"),
        "--task", str(bare_task),
        "--captions", "fixture",
        "--caption-fixtures", str(fixtures),
        "--out", str(out),
    ]) == 0

    # without fixtures the captionless task cannot be selected against
    assert main([
        "select",
        "--graph", str(workspace_dir / "graph.json"),
        "--labels", str(workspace_dir / "labels"),
        "--stores", str(workspace_dir / "stores"),
        "--task", str(bare_task),
        "--out", str(tmp_path / "sel2.json"),
    ]) == 2
