from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from vlmhub.embedding_store import EmbeddingMatrix
from vlmhub.semantic_graph import SynsetRecord, build_graph

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def tiny_graph():
    """Three nodes in a hypernym chain, two samples each."""
    records = [
        SynsetRecord("n001", "animal", "a living organism that feeds on organic matter"),
        SynsetRecord("n002", "cat", "feline mammal usually having thick soft fur", ("n001",)),
        SynsetRecord("n003", "dog", "a domesticated carnivorous mammal", ("n001",)),
    ]
    samples = {
        "n001": ["s_a1", "s_a2"],
        "n002": ["s_c1", "s_c2"],
        "n003": ["s_d1", "s_d2"],
    }
    return build_graph(records, samples)


@pytest.fixture
def model_zoo_metadata():
    return json.loads((FIXTURES / "model_zoo_metadata.json").read_text())


def unit_matrix(ids, rng, dim):
    """Random unit-row matrix used all over the tests."""
    return EmbeddingMatrix.from_rows(list(ids), rng.normal(size=(len(ids), dim)))


def basis_matrix(ids, axes, dim):
    """Rows set to canonical basis vectors: ids[i] -> e_{axes[i]}."""
    rows = np.zeros((len(ids), dim), dtype=np.float32)
    for i, a in enumerate(axes):
        rows[i, a] = 1.0
    return EmbeddingMatrix(tuple(ids), rows)
