"""Region adjacency graph data model and file ingestion.

Superpixels are abstract nodes; the classification unit is the boundary
between two adjacent superpixels, carried here as an edge with an opaque
feature vector.  Groundtruth, when present, is a body id per node and a
``+1`` (true boundary) / ``-1`` (spurious boundary) label per edge.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

POS, NEG = 1, -1
VALID_LABELS = (NEG, POS)


class GraphFormatError(ValueError):
    """A graph file failed to parse or validate.

    ``line`` is the 1-based line number of the offending record when known.
    """

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class AlreadyLabeledError(ValueError):
    """An answer was supplied for an edge that is already labeled."""


class UnknownEdgeError(ValueError):
    """An answer referenced an edge id outside the graph."""


@dataclass(frozen=True)
class SuperpixelNode:
    id: int
    size: int
    true_body: Optional[int] = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"node {self.id}: size must be >= 1, got {self.size}")
        if self.true_body is not None and self.true_body < 0:
            raise ValueError(f"node {self.id}: true_body must be >= 0")


@dataclass(frozen=True)
class BoundarySample:
    """One shared boundary between two superpixels; endpoints are ordered u < v."""

    id: int
    u: int
    v: int
    x: np.ndarray
    true_label: Optional[int] = None

    def __post_init__(self):
        if self.u == self.v:
            raise ValueError(f"edge {self.id}: endpoints must be distinct")
        if self.u > self.v:
            lo, hi = self.v, self.u
            object.__setattr__(self, "u", lo)
            object.__setattr__(self, "v", hi)
        if self.true_label is not None and self.true_label not in VALID_LABELS:
            raise ValueError(f"edge {self.id}: true_label must be -1 or +1")
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"edge {self.id}: features must be a flat vector")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"edge {self.id}: features contain non-finite values")
        object.__setattr__(self, "x", x)

    @property
    def endpoints(self) -> Tuple[int, int]:
        return (self.u, self.v)


class RegionGraph:
    """Immutable superpixel adjacency structure.

    Node ids must be 0..N-1 and edge ids 0..|E|-1; the contiguous numbering is
    what makes block-matrix indexing and set ordering reproducible everywhere
    downstream.
    """

    def __init__(self, nodes: Sequence[SuperpixelNode], edges: Sequence[BoundarySample]):
        nodes = list(nodes)
        edges = list(edges)
        if len(nodes) < 2:
            raise ValueError("a region graph needs at least 2 nodes")
        if len(edges) < 1:
            raise ValueError("a region graph needs at least 1 edge")

        n = len(nodes)
        if sorted(nd.id for nd in nodes) != list(range(n)):
            raise ValueError("node ids must be exactly 0..N-1")
        nodes.sort(key=lambda nd: nd.id)

        bodies = [nd.true_body is not None for nd in nodes]
        if any(bodies) and not all(bodies):
            raise ValueError("true_body must be present on all nodes or none")

        if sorted(e.id for e in edges) != list(range(len(edges))):
            raise ValueError("edge ids must be exactly 0..|E|-1")
        edges.sort(key=lambda e: e.id)

        d = edges[0].x.shape[0]
        seen: set = set()
        for e in edges:
            if e.x.shape[0] != d:
                raise ValueError(
                    f"edge {e.id}: feature dimension {e.x.shape[0]} != {d}"
                )
            if not (0 <= e.u < n and 0 <= e.v < n):
                raise ValueError(f"edge {e.id}: endpoint out of range")
            key = (e.u, e.v)
            if key in seen:
                raise ValueError(f"edge {e.id}: duplicate boundary {key}")
            seen.add(key)

        self.nodes: List[SuperpixelNode] = nodes
        self.edges: List[BoundarySample] = edges
        self._features = np.vstack([e.x for e in edges])
        self._features.setflags(write=False)

        adjacency: List[List[int]] = [[] for _ in range(n)]
        for e in edges:
            adjacency[e.u].append(e.id)
            adjacency[e.v].append(e.id)
        self.adjacency: List[Tuple[int, ...]] = [tuple(a) for a in adjacency]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self._features.shape[1]

    @property
    def features(self) -> np.ndarray:
        """(n_edges, d) read-only feature matrix, row i = edge i."""
        return self._features

    @property
    def node_sizes(self) -> np.ndarray:
        return np.array([nd.size for nd in self.nodes], dtype=np.int64)

    @property
    def has_groundtruth_bodies(self) -> bool:
        return self.nodes[0].true_body is not None

    @property
    def true_bodies(self) -> np.ndarray:
        if not self.has_groundtruth_bodies:
            raise ValueError("graph carries no groundtruth bodies")
        return np.array([nd.true_body for nd in self.nodes], dtype=np.int64)

    @property
    def has_full_labels(self) -> bool:
        return all(e.true_label is not None for e in self.edges)

    @property
    def true_labels(self) -> np.ndarray:
        """Per-edge labels in {-1, +1}; requires every edge to be labeled."""
        if not self.has_full_labels:
            raise ValueError("graph does not carry a label for every edge")
        return np.array([e.true_label for e in self.edges], dtype=np.int8)

    def endpoints_array(self) -> np.ndarray:
        """(n_edges, 2) array of node ids, column 0 < column 1."""
        return np.array([[e.u, e.v] for e in self.edges], dtype=np.int64)


@dataclass(frozen=True)
class LabelState:
    """Partition of the edge set into labeled and unlabeled, with labels.

    Both id sets are kept in ascending order so block-matrix layouts derived
    from them are reproducible.
    """

    n_edges: int
    labels: Mapping[int, int]

    def __post_init__(self):
        for eid, lab in self.labels.items():
            if not 0 <= eid < self.n_edges:
                raise UnknownEdgeError(f"edge id {eid} out of range")
            if lab not in VALID_LABELS:
                raise ValueError(f"edge {eid}: label must be -1 or +1, got {lab}")

    @classmethod
    def initial(cls, n_edges: int) -> "LabelState":
        return cls(n_edges=n_edges, labels={})

    @property
    def labeled_ids(self) -> Tuple[int, ...]:
        return tuple(sorted(self.labels))

    @property
    def unlabeled_ids(self) -> Tuple[int, ...]:
        labeled = self.labels
        return tuple(i for i in range(self.n_edges) if i not in labeled)

    @property
    def n_labeled(self) -> int:
        return len(self.labels)

    def label_vector(self) -> np.ndarray:
        """Labels of the labeled set, aligned with ``labeled_ids``."""
        return np.array([self.labels[i] for i in self.labeled_ids], dtype=np.float64)


def apply_labels(state: LabelState, answers: Mapping[int, int]) -> LabelState:
    """Move answered edges from the unlabeled pool into the labeled set."""
    if not answers:
        return state
    for eid, lab in answers.items():
        if not 0 <= eid < state.n_edges:
            raise UnknownEdgeError(f"edge id {eid} out of range")
        if eid in state.labels:
            raise AlreadyLabeledError(f"edge {eid} is already labeled")
        if lab not in VALID_LABELS:
            raise ValueError(f"edge {eid}: label must be -1 or +1, got {lab}")
    merged = dict(state.labels)
    merged.update({int(k): int(v) for k, v in answers.items()})
    return LabelState(n_edges=state.n_edges, labels=merged)


# ---------------------------------------------------------------------------
# File ingestion.  JSONL: one object per line, a header first; CSV: a
# row_type column distinguishes the header/node/edge records.
# ---------------------------------------------------------------------------

def _node_from_record(rec: dict, line: int) -> SuperpixelNode:
    try:
        true_body = rec.get("true_body")
        return SuperpixelNode(
            id=int(rec["id"]),
            size=int(rec["size"]),
            true_body=None if true_body is None else int(true_body),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"bad node record: {exc}", line) from exc


def _edge_from_record(rec: dict, feature_dim: int, line: int) -> BoundarySample:
    try:
        x = np.asarray(rec["x"], dtype=np.float64)
        true_label = rec.get("true_label")
        edge = BoundarySample(
            id=int(rec["id"]),
            u=int(rec["u"]),
            v=int(rec["v"]),
            x=x,
            true_label=None if true_label is None else int(true_label),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"bad edge record: {exc}", line) from exc
    if edge.x.shape[0] != feature_dim:
        raise GraphFormatError(
            f"edge {edge.id}: feature dimension {edge.x.shape[0]} != header's {feature_dim}",
            line,
        )
    return edge


def _build_graph(nodes, edges, n_nodes_declared, line_of_edge) -> RegionGraph:
    for e in edges:
        if not (0 <= e.u < n_nodes_declared and 0 <= e.v < n_nodes_declared):
            raise GraphFormatError(
                f"edge {e.id}: endpoint ({e.u}, {e.v}) references a missing node",
                line_of_edge.get(e.id),
            )
    try:
        return RegionGraph(nodes, edges)
    except ValueError as exc:
        raise GraphFormatError(str(exc)) from exc


def load_region_graph(path, format: str = "jsonl") -> RegionGraph:
    """Load and validate a region graph from a JSONL or CSV file."""
    if format == "jsonl":
        return _load_jsonl(path)
    if format == "csv":
        return _load_csv(path)
    raise ValueError(f"unknown format {format!r} (expected 'jsonl' or 'csv')")


def _load_jsonl(path) -> RegionGraph:
    nodes: List[SuperpixelNode] = []
    edges: List[BoundarySample] = []
    header = None
    line_of_edge: Dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"invalid JSON: {exc.msg}", lineno) from exc
            kind = rec.get("type")
            if kind == "header":
                if header is not None:
                    raise GraphFormatError("duplicate header", lineno)
                header = rec
            elif kind == "node":
                nodes.append(_node_from_record(rec, lineno))
            elif kind == "edge":
                if header is None:
                    raise GraphFormatError("edge record before header", lineno)
                edge = _edge_from_record(rec, int(header["feature_dim"]), lineno)
                line_of_edge[edge.id] = lineno
                edges.append(edge)
            else:
                raise GraphFormatError(f"unknown record type {kind!r}", lineno)
    if header is None:
        raise GraphFormatError("missing header line")
    if len(nodes) != int(header["n_nodes"]):
        raise GraphFormatError(
            f"header declares {header['n_nodes']} nodes, found {len(nodes)}"
        )
    return _build_graph(nodes, edges, int(header["n_nodes"]), line_of_edge)


def save_region_graph(graph: RegionGraph, path, format: str = "jsonl") -> None:
    """Write a graph in the schema understood by :func:`load_region_graph`."""
    if format == "jsonl":
        _save_jsonl(graph, path)
    elif format == "csv":
        _save_csv(graph, path)
    else:
        raise ValueError(f"unknown format {format!r} (expected 'jsonl' or 'csv')")


def _save_jsonl(graph: RegionGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({
            "type": "header",
            "feature_dim": graph.feature_dim,
            "n_nodes": graph.n_nodes,
        }) + "\n")
        for nd in graph.nodes:
            rec = {"type": "node", "id": nd.id, "size": nd.size}
            if nd.true_body is not None:
                rec["true_body"] = nd.true_body
            fh.write(json.dumps(rec) + "\n")
        for e in graph.edges:
            rec = {"type": "edge", "id": e.id, "u": e.u, "v": e.v,
                   "x": [float(v) for v in e.x]}
            if e.true_label is not None:
                rec["true_label"] = e.true_label
            fh.write(json.dumps(rec) + "\n")


_CSV_FIXED = ["row_type", "id", "u", "v", "size", "true_body", "true_label"]


def _save_csv(graph: RegionGraph, path) -> None:
    d = graph.feature_dim
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIXED + [f"x{i}" for i in range(d)])
        writer.writerow(["header", "", "", "", "", "", ""] + [""] * d)
        for nd in graph.nodes:
            writer.writerow(
                ["node", nd.id, "", "", nd.size,
                 "" if nd.true_body is None else nd.true_body, ""] + [""] * d
            )
        for e in graph.edges:
            writer.writerow(
                ["edge", e.id, e.u, e.v, "",
                 "", "" if e.true_label is None else e.true_label]
                + [repr(float(v)) for v in e.x]
            )


def _load_csv(path) -> RegionGraph:
    nodes: List[SuperpixelNode] = []
    edges: List[BoundarySample] = []
    line_of_edge: Dict[int, int] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise GraphFormatError("empty file") from None
        if columns[: len(_CSV_FIXED)] != _CSV_FIXED:
            raise GraphFormatError("unexpected CSV column layout", 1)
        d = len(columns) - len(_CSV_FIXED)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            kind = row[0]
            if kind == "header":
                continue
            if kind == "node":
                rec = {"id": row[1], "size": row[4],
                       "true_body": row[5] or None}
                nodes.append(_node_from_record(rec, lineno))
            elif kind == "edge":
                xs = row[len(_CSV_FIXED):]
                if len(xs) != d or any(v == "" for v in xs):
                    raise GraphFormatError(
                        f"edge {row[1]}: expected {d} feature values", lineno
                    )
                rec = {"id": row[1], "u": row[2], "v": row[3],
                       "x": [float(v) for v in xs],
                       "true_label": row[6] or None}
                edge = _edge_from_record(rec, d, lineno)
                line_of_edge[edge.id] = lineno
                edges.append(edge)
            else:
                raise GraphFormatError(f"unknown row type {kind!r}", lineno)
    if not nodes:
        raise GraphFormatError("no node rows found")
    return _build_graph(nodes, edges, len(nodes), line_of_edge)
