"""Heterogeneous graph view of a relational database.

One node type per table and one node per row. Each foreign-key column gives
two edge types: ``forward`` (FK holder -> referenced row) and ``reverse``.
Node indices are row positions, so they are stable for a given CSV order.
"""
from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import IntegrityError, InvalidNode, TypeMismatch
from .relational import Database, DatabaseSchema, validate_integrity

NodeType = str


class Direction(enum.Enum):
    FORWARD = "forward"
    REVERSE = "reverse"


@dataclass(frozen=True)
class EdgeType:
    name: str
    source_type: NodeType
    target_type: NodeType
    fk_column: str
    direction: Direction

    @property
    def is_forward(self) -> bool:
        return self.direction is Direction.FORWARD

    def __str__(self):
        return self.name


class NodeId(NamedTuple):
    node_type: NodeType
    index: int


def _forward_name(table: str, fk: str, target: str) -> str:
    return f"{table}__{fk}__{target}"


def schema_graph(schema: DatabaseSchema) -> tuple[list[NodeType], list[EdgeType]]:
    """Node and edge types in schema order; each forward type is followed by its reverse."""
    node_types = [t.name for t in schema.tables]
    edge_types = []
    for t in schema.tables:
        for fk in t.foreign_keys:
            name = _forward_name(t.name, fk.name, fk.target)
            edge_types.append(EdgeType(name, t.name, fk.target, fk.name, Direction.FORWARD))
            edge_types.append(EdgeType("rev_" + name, fk.target, t.name, fk.name, Direction.REVERSE))
    return node_types, edge_types


def reverse_of(et: EdgeType) -> EdgeType:
    name = et.name[4:] if et.name.startswith("rev_") else "rev_" + et.name
    direction = Direction.FORWARD if et.direction is Direction.REVERSE else Direction.REVERSE
    return EdgeType(name, et.target_type, et.source_type, et.fk_column, direction)


class HeteroGraph:
    """Immutable typed graph with a back-reference to the source database.

    ``edges[et]`` is a pair of int arrays ``(src, dst)`` ordered by FK-holder
    row position.
    """

    def __init__(self, db: Database, node_types, edge_types, edges, times):
        self.db = db
        self.node_types: list[NodeType] = node_types
        self.edge_types: list[EdgeType] = edge_types
        self.node_counts = {t: len(db.tables[t]) for t in node_types}
        self.edges: dict[EdgeType, tuple[np.ndarray, np.ndarray]] = edges
        self.times: dict[NodeType, np.ndarray | None] = times
        for src, dst in edges.values():
            src.flags.writeable = False
            dst.flags.writeable = False

    @property
    def schema(self) -> DatabaseSchema:
        return self.db.schema

    @property
    def num_nodes(self) -> int:
        return sum(self.node_counts.values())

    def edge_type(self, name: str) -> EdgeType:
        for et in self.edge_types:
            if et.name == name:
                return et
        raise KeyError(name)

    def row(self, v: NodeId):
        self._check(v)
        return self.db.tables[v.node_type][v.index]

    def _check(self, v: NodeId):
        n = self.node_counts.get(v.node_type)
        if n is None or not 0 <= v.index < n:
            raise InvalidNode(f"{v} is not a node of this graph")

    @cached_property
    def incoming(self) -> dict[EdgeType, tuple[np.ndarray, np.ndarray]]:
        """CSR adjacency keyed by target: ``(indptr, sources)`` per edge type."""
        out = {}
        for et, (src, dst) in self.edges.items():
            order = np.lexsort((src, dst))
            counts = np.bincount(dst, minlength=self.node_counts[et.target_type])
            indptr = np.zeros(len(counts) + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            sources = src[order]
            sources.flags.writeable = False
            out[et] = (indptr, sources)
        return out

    def in_neighbors(self, et: EdgeType, index: int) -> np.ndarray:
        indptr, sources = self.incoming[et]
        return sources[indptr[index]:indptr[index + 1]]

    @cached_property
    def edge_sets(self) -> dict[EdgeType, set[tuple[int, int]]]:
        return {et: set(zip(src.tolist(), dst.tolist())) for et, (src, dst) in self.edges.items()}

    def has_edge(self, et: EdgeType, u: int, v: int) -> bool:
        return (u, v) in self.edge_sets[et]

    def to_dict(self) -> dict:
        return {
            "node_counts": {t: self.node_counts[t] for t in self.node_types},
            "edges": {
                et.name: [self.edges[et][0].tolist(), self.edges[et][1].tolist()]
                for et in self.edge_types
            },
            "times": {
                t: None if self.times[t] is None else self.times[t].tolist()
                for t in self.node_types
            },
        }


def build_graph(db: Database) -> HeteroGraph:
    report = validate_integrity(db)
    if not report.is_clean:
        raise IntegrityError("; ".join(report.lines()[:10]))
    node_types, edge_types = schema_graph(db.schema)
    pk_index = db.pk_index
    edges = {}
    for t in db.schema.tables:
        rows = db.tables[t.name]
        for fk in t.foreign_keys:
            i = t.index(fk.name)
            lookup = pk_index[fk.target]
            src, dst = [], []
            for pos, row in enumerate(rows):
                if row[i] is not None:
                    src.append(pos)
                    dst.append(lookup[row[i]])
            src = np.asarray(src, dtype=np.int64)
            dst = np.asarray(dst, dtype=np.int64)
            fwd = next(e for e in edge_types
                       if e.is_forward and e.source_type == t.name and e.fk_column == fk.name)
            edges[fwd] = (src, dst)
            edges[reverse_of(fwd)] = (dst.copy(), src.copy())
    times = {}
    for t in db.schema.tables:
        if t.time_attribute is None:
            times[t.name] = None
        else:
            i = t.index(t.time_attribute)
            # a missing timestamp means "always known"
            col = [row[i] if row[i] is not None else np.iinfo(np.int64).min for row in db.tables[t.name]]
            arr = np.asarray(col, dtype=np.int64)
            arr.flags.writeable = False
            times[t.name] = arr
    return HeteroGraph(db, node_types, edge_types, edges, times)


def node_time(g: HeteroGraph, v: NodeId) -> int | None:
    g._check(v)
    ts = g.times[v.node_type]
    if ts is None:
        return None
    t = int(ts[v.index])
    return None if t == np.iinfo(np.int64).min else t


def neighbors(g: HeteroGraph, v: NodeId, et: EdgeType) -> list[NodeId]:
    """Sources ``u`` of all edges ``(u, v)`` of type ``et``, in row order."""
    g._check(v)
    if v.node_type != et.target_type:
        raise TypeMismatch(f"{v} is not a target of edge type {et.name}")
    return [NodeId(et.source_type, int(u)) for u in g.in_neighbors(et, v.index)]


def dump_graph(g: HeteroGraph, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(g.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
