"""Semantic concept graph: the task-independent substrate models are pre-tested on.

Nodes are WordNet-style synsets carrying a derived caption and the ids of
their representative sample images. Graphs are immutable values; extension
produces a new graph with a bumped version. Serialization is canonical
(sorted node ids, sorted id lists) so byte-equality is meaningful.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .fileio import atomic_write_text
from .errors import (
    DuplicateIdError,
    FormatError,
    InvalidInputError,
    UnresolvedReferenceError,
)

GRAPH_FORMAT_VERSION = 1

CAPTION_JOINER = " which is "


def make_caption(name: str, definition: str) -> str:
    """Derive a node caption from the concept name and its gloss.

    The caption is `<name> which is <definition>`, exactly, with no added
    punctuation. Both fields must be non-empty after trimming.
    """
    name = name.strip()
    definition = definition.strip()
    if not name or not definition:
        raise InvalidInputError("caption requires a non-empty name and definition")
    return f"{name}{CAPTION_JOINER}{definition}"


@dataclass(frozen=True)
class SynsetRecord:
    """Pre-extracted synset: id, name, one-sentence gloss, hypernym ids."""

    synset_id: str
    name: str
    definition: str
    hypernym_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.synset_id:
            raise InvalidInputError("synset_id must be non-empty")
        if self.synset_id in self.hypernym_ids:
            raise InvalidInputError(f"synset {self.synset_id!r} lists itself as hypernym")
        object.__setattr__(self, "hypernym_ids", tuple(self.hypernym_ids))


@dataclass(frozen=True)
class GraphNode:
    """A concept node with derived caption and representative sample ids."""

    synset_id: str
    name: str
    definition: str
    caption: str
    hypernym_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]


@dataclass(frozen=True)
class ValidationReport:
    """Findings from a graph scan; an empty report means the graph is valid."""

    unsampled: tuple[str, ...] = ()
    unresolved: tuple[tuple[str, str], ...] = ()  # (node, missing hypernym)
    duplicate_samples: tuple[tuple[str, str], ...] = ()  # (node, sample id)

    @property
    def ok(self) -> bool:
        return not (self.unsampled or self.unresolved or self.duplicate_samples)


@dataclass(frozen=True)
class SemanticGraph:
    """Immutable id-indexed node collection with a monotonic version."""

    nodes: Mapping[str, GraphNode]
    graph_version: int

    def __len__(self) -> int:
        return len(self.nodes)

    def node_ids(self) -> list[str]:
        return sorted(self.nodes)

    def sampled_node_ids(self) -> list[str]:
        return sorted(i for i, n in self.nodes.items() if n.sample_ids)

    def sample_ids(self) -> list[str]:
        """All sample ids referenced anywhere in the graph, sorted."""
        out: set[str] = set()
        for node in self.nodes.values():
            out.update(node.sample_ids)
        return sorted(out)

    def edges(self) -> list[tuple[str, str]]:
        return sorted(
            (n.synset_id, h) for n in self.nodes.values() for h in n.hypernym_ids
        )


def _build_nodes(
    records: Sequence[SynsetRecord],
    samples: Mapping[str, Sequence[str]],
    known_ids: set[str],
) -> dict[str, GraphNode]:
    counts = Counter(r.synset_id for r in records)
    dupes = sorted(i for i, c in counts.items() if c > 1)
    if dupes:
        raise DuplicateIdError(f"duplicate synset ids in input: {dupes}", ids=dupes)

    unknown_sample_keys = sorted(set(samples) - known_ids)
    if unknown_sample_keys:
        raise InvalidInputError(
            f"sample map references synsets absent from the records: {unknown_sample_keys}"
        )

    dangling = sorted(
        {(r.synset_id, h) for r in records for h in r.hypernym_ids if h not in known_ids}
    )
    if dangling:
        raise UnresolvedReferenceError(
            f"hypernym ids do not resolve: {dangling}",
            ids=[h for _, h in dangling],
        )

    nodes: dict[str, GraphNode] = {}
    for rec in records:
        sample_ids = tuple(samples.get(rec.synset_id, ()))
        if len(set(sample_ids)) != len(sample_ids):
            seen: set[str] = set()
            dup = [s for s in sample_ids if s in seen or seen.add(s)]  # type: ignore[func-returns-value]
            raise DuplicateIdError(
                f"node {rec.synset_id!r} lists duplicate sample ids: {sorted(set(dup))}",
                ids=sorted(set(dup)),
            )
        nodes[rec.synset_id] = GraphNode(
            synset_id=rec.synset_id,
            name=rec.name,
            definition=rec.definition,
            caption=make_caption(rec.name, rec.definition),
            hypernym_ids=tuple(sorted(rec.hypernym_ids)),
            sample_ids=tuple(sorted(sample_ids)),
        )
    return nodes


def build_graph(
    records: Sequence[SynsetRecord],
    samples: Mapping[str, Sequence[str]] | None = None,
) -> SemanticGraph:
    """Construct a graph from synset records and a synset -> sample-ids map.

    Nodes absent from `samples` get an empty sample set; they stay legal in
    the graph but are excluded from matching later on.
    """
    if not records:
        raise InvalidInputError("cannot build a graph from zero records")
    samples = samples or {}
    known = {r.synset_id for r in records}
    return SemanticGraph(nodes=_build_nodes(records, samples, known), graph_version=1)


def extend_graph(
    graph: SemanticGraph,
    new_records: Sequence[SynsetRecord],
    new_samples: Mapping[str, Sequence[str]] | None = None,
) -> SemanticGraph:
    """Return a superset graph with the new nodes added and version bumped.

    Existing nodes are carried over unchanged; new hypernym ids may point at
    either old or new nodes.
    """
    new_samples = new_samples or {}
    collisions = sorted({r.synset_id for r in new_records} & set(graph.nodes))
    if collisions:
        raise DuplicateIdError(
            f"new synset ids collide with existing nodes: {collisions}", ids=collisions
        )
    known = set(graph.nodes) | {r.synset_id for r in new_records}
    added = _build_nodes(new_records, new_samples, known)
    merged = dict(graph.nodes)
    merged.update(added)
    return SemanticGraph(nodes=merged, graph_version=graph.graph_version + 1)


def validate_graph(graph: SemanticGraph) -> ValidationReport:
    """Scan for unsampled nodes, unresolved edges, and duplicate sample ids."""
    unsampled = tuple(sorted(i for i, n in graph.nodes.items() if not n.sample_ids))
    unresolved = tuple(
        sorted(
            (n.synset_id, h)
            for n in graph.nodes.values()
            for h in n.hypernym_ids
            if h not in graph.nodes
        )
    )
    dupes: list[tuple[str, str]] = []
    for node in graph.nodes.values():
        seen: set[str] = set()
        for s in node.sample_ids:
            if s in seen:
                dupes.append((node.synset_id, s))
            seen.add(s)
    return ValidationReport(
        unsampled=unsampled,
        unresolved=unresolved,
        duplicate_samples=tuple(sorted(dupes)),
    )


def graph_to_json(graph: SemanticGraph) -> str:
    """Canonical serialization: sorted node ids, sorted id lists, stable keys."""
    doc = {
        "format_version": GRAPH_FORMAT_VERSION,
        "graph_version": graph.graph_version,
        "nodes": [
            {
                "synset_id": n.synset_id,
                "name": n.name,
                "definition": n.definition,
                "caption": n.caption,
                "hypernym_ids": sorted(n.hypernym_ids),
                "sample_ids": sorted(n.sample_ids),
            }
            for _, n in sorted(graph.nodes.items())
        ],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_graph(graph: SemanticGraph, path: str | Path) -> None:
    atomic_write_text(path, graph_to_json(graph))


def load_graph(path: str | Path) -> SemanticGraph:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable graph file {path}: {exc}") from None
    if doc.get("format_version") != GRAPH_FORMAT_VERSION:
        raise FormatError(f"unsupported graph format_version in {path}")
    nodes: dict[str, GraphNode] = {}
    for raw in doc.get("nodes", []):
        node = GraphNode(
            synset_id=raw["synset_id"],
            name=raw["name"],
            definition=raw["definition"],
            caption=raw["caption"],
            hypernym_ids=tuple(raw["hypernym_ids"]),
            sample_ids=tuple(raw["sample_ids"]),
        )
        if node.caption != make_caption(node.name, node.definition):
            raise FormatError(
                f"node {node.synset_id!r} carries a caption that does not match its "
                f"name/definition"
            )
        if node.synset_id in nodes:
            raise DuplicateIdError(
                f"duplicate node {node.synset_id!r} in {path}", ids=[node.synset_id]
            )
        nodes[node.synset_id] = node
    graph = SemanticGraph(nodes=nodes, graph_version=int(doc["graph_version"]))
    report = validate_graph(graph)
    if report.unresolved:
        raise UnresolvedReferenceError(
            f"graph file {path} has unresolved edges: {report.unresolved[:8]}",
            ids=[h for _, h in report.unresolved],
        )
    return graph
