"""Subgraph samplers.

``hg_sample`` is an HGSampling-style sampler for pretraining. It keeps node
types balanced by giving every non-seed type its own budget per round.
``neighbor_sample`` is a fanout-limited breadth-first sampler for
fine-tuning. It builds one disjoint tree per seed so per-seed time cutoffs
cannot leak through shared nodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGraph, InvalidSeed, UnknownSeedType
from .graph import EdgeType, HeteroGraph, NodeId, NodeType
from .relational import DatabaseSchema


@dataclass
class Subgraph:
    """Sampled nodes (global row indices in local order) and edges in local indices.

    ``seeds`` holds local references. ``tree`` is set by ``neighbor_sample``
    and gives, per type, the position of the seed each local node belongs to.
    """

    nodes: dict[NodeType, np.ndarray]
    edges: dict[EdgeType, tuple[np.ndarray, np.ndarray]]
    seeds: list[NodeId] = field(default_factory=list)
    tree: dict[NodeType, np.ndarray] | None = None

    @property
    def node_types(self) -> list[NodeType]:
        return list(self.nodes)

    @property
    def num_nodes(self) -> int:
        return sum(len(v) for v in self.nodes.values())

    def num_edges(self, forward_only: bool = False) -> int:
        return sum(len(s) for et, (s, _) in self.edges.items() if et.is_forward or not forward_only)

    def count(self, t: NodeType) -> int:
        return len(self.nodes.get(t, ()))

    def global_to_local(self, t: NodeType) -> dict[int, int]:
        if self.tree is not None:
            raise ValueError("global_to_local is ambiguous for disjoint per-seed trees")
        return {int(g): i for i, g in enumerate(self.nodes[t])}

    def global_edges(self, et: EdgeType) -> set[tuple[int, int]]:
        src, dst = self.edges.get(et, (np.zeros(0, np.int64), np.zeros(0, np.int64)))
        gs = self.nodes[et.source_type][src]
        gd = self.nodes[et.target_type][dst]
        return set(zip(gs.tolist(), gd.tolist()))

    def census(self) -> dict:
        return {
            "nodes": {t: int(len(v)) for t, v in self.nodes.items()},
            "edges": {et.name: int(len(s)) for et, (s, _) in self.edges.items()},
            "seeds": len(self.seeds),
        }


@dataclass(frozen=True)
class HgSamplerConfig:
    seed_type: NodeType
    per_type_budget: int = 64
    iterations: int = 3
    seed_count: int = 64
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.per_type_budget, self.iterations, self.seed_count) < 1:
            raise ValueError("budgets, iterations and seed_count must be >= 1")


@dataclass(frozen=True)
class NeighborSamplerConfig:
    fanout: int = 128
    depth: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.fanout < 1 or self.depth < 1:
            raise ValueError("fanout and depth must be >= 1")


def pick_seed_type(schema: DatabaseSchema) -> NodeType:
    """Table with the most foreign-key columns; earliest in schema order on ties."""
    if not schema.tables:
        raise EmptyGraph("schema has no tables")
    best = schema.tables[0]
    for t in schema.tables[1:]:
        if len(t.foreign_keys) > len(best.foreign_keys):
            best = t
    return best.name


def induced_subgraph(g: HeteroGraph, nodes: dict[NodeType, np.ndarray], seeds=()) -> Subgraph:
    """Subgraph on ``nodes`` containing every parent edge between included nodes."""
    local = {}
    for t in g.node_types:
        idx = np.asarray(nodes.get(t, np.zeros(0, np.int64)), dtype=np.int64)
        pos = np.full(g.node_counts[t], -1, dtype=np.int64)
        pos[idx] = np.arange(len(idx))
        local[t] = pos
    edges = {}
    for et in g.edge_types:
        src, dst = g.edges[et]
        ls = local[et.source_type][src]
        ld = local[et.target_type][dst]
        keep = (ls >= 0) & (ld >= 0)
        edges[et] = (ls[keep], ld[keep])
    full_nodes = {t: np.asarray(nodes.get(t, np.zeros(0, np.int64)), dtype=np.int64) for t in g.node_types}
    seed_refs = [NodeId(t, int(local[t][i])) for t, i in seeds]
    return Subgraph(full_nodes, edges, seed_refs)


def _frontier_weights(g: HeteroGraph, t: NodeType, included: dict[NodeType, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Candidate nodes of type ``t`` adjacent to the current subgraph, with edge counts + 1."""
    counts = np.zeros(g.node_counts[t], dtype=np.int64)
    for et in g.edge_types:
        if et.source_type != t:
            continue
        inc = included[et.target_type]
        if not len(inc):
            continue
        indptr, sources = g.incoming[et]
        starts, stops = indptr[inc], indptr[inc + 1]
        if not (stops - starts).any():
            continue
        srcs = np.concatenate([sources[a:b] for a, b in zip(starts, stops)])
        counts += np.bincount(srcs, minlength=len(counts))
    counts[included[t]] = 0
    cand = np.flatnonzero(counts)
    return cand, counts[cand] + 1


def hg_sample(g: HeteroGraph, cfg: HgSamplerConfig, rng: np.random.Generator | None = None) -> Subgraph:
    """Type-balanced subgraph.

    Seeds are drawn uniformly from ``cfg.seed_type``. Each round, every other
    type adds up to ``per_type_budget`` nodes from its frontier, drawn without
    replacement with probability proportional to (edges into the subgraph + 1).
    Frontiers are computed from the subgraph as it stood at the start of the
    round. The seed type is not expanded.
    """
    if g.num_nodes == 0:
        raise EmptyGraph("graph has no nodes")
    if cfg.seed_type not in g.node_counts:
        raise UnknownSeedType(cfg.seed_type)
    n_seed = g.node_counts[cfg.seed_type]
    if n_seed == 0:
        raise EmptyGraph(f"seed type {cfg.seed_type!r} has no nodes")
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)

    seeds = rng.choice(n_seed, size=min(cfg.seed_count, n_seed), replace=False)
    included = {t: np.zeros(0, dtype=np.int64) for t in g.node_types}
    included[cfg.seed_type] = np.sort(seeds)
    for _ in range(cfg.iterations):
        snapshot = dict(included)
        for t in g.node_types:
            if t == cfg.seed_type:
                continue
            cand, w = _frontier_weights(g, t, snapshot)
            if not len(cand):
                continue
            k = min(cfg.per_type_budget, len(cand))
            picked = rng.choice(cand, size=k, replace=False, p=w / w.sum())
            included[t] = np.sort(np.concatenate([included[t], picked]))
    return induced_subgraph(g, included, [(cfg.seed_type, int(s)) for s in seeds])


def bfs_sample(g: HeteroGraph, seeds: list[NodeId], depth: int) -> Subgraph:
    """Unrestricted breadth-first expansion over all edge types (no fanout, no budget).

    Only used as the unbalanced reference point for ``hg_sample``.
    """
    included = {t: set() for t in g.node_types}
    frontier = {t: set() for t in g.node_types}
    for s in seeds:
        included[s.node_type].add(s.index)
        frontier[s.node_type].add(s.index)
    for _ in range(depth):
        nxt = {t: set() for t in g.node_types}
        for et in g.edge_types:
            for v in frontier[et.target_type]:
                for u in g.in_neighbors(et, v).tolist():
                    if u not in included[et.source_type]:
                        nxt[et.source_type].add(u)
        for t in g.node_types:
            included[t] |= nxt[t]
        frontier = nxt
    nodes = {t: np.array(sorted(v), dtype=np.int64) for t, v in included.items()}
    return induced_subgraph(g, nodes, [(s.node_type, s.index) for s in seeds])


def neighbor_sample(
    g: HeteroGraph,
    seeds: list[NodeId],
    cfg: NeighborSamplerConfig,
    cutoffs: list[int] | None = None,
    rng: np.random.Generator | None = None,
) -> Subgraph:
    """Fanout-limited temporal neighborhood sampling, one disjoint tree per seed.

    For each frontier node and each incoming edge type, up to ``cfg.fanout``
    admissible neighbors are drawn uniformly without replacement. With
    ``cutoffs``, a neighbor of a timestamped table is admissible only if its
    time does not exceed its seed's cutoff. Edges point from the sampled
    neighbor to the node that was expanded.
    """
    if cutoffs is not None and len(cutoffs) != len(seeds):
        raise InvalidSeed(f"{len(cutoffs)} cutoffs for {len(seeds)} seeds")
    for s in seeds:
        n = g.node_counts.get(s.node_type)
        if n is None or not 0 <= s.index < n:
            raise InvalidSeed(f"{s} is not a node of the graph")
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)

    by_target: dict[NodeType, list[EdgeType]] = {t: [] for t in g.node_types}
    for et in g.edge_types:
        by_target[et.target_type].append(et)

    nodes: dict[NodeType, list[int]] = {t: [] for t in g.node_types}
    tree: dict[NodeType, list[int]] = {t: [] for t in g.node_types}
    edges: dict[EdgeType, tuple[list[int], list[int]]] = {et: ([], []) for et in g.edge_types}
    seed_refs = []

    for pos, seed in enumerate(seeds):
        cutoff = None if cutoffs is None else cutoffs[pos]
        local: dict[tuple[NodeType, int], int] = {}

        def add(t, gi):
            li = len(nodes[t])
            nodes[t].append(gi)
            tree[t].append(pos)
            local[(t, gi)] = li
            return li

        seed_refs.append(NodeId(seed.node_type, add(seed.node_type, seed.index)))
        frontier = [(seed.node_type, seed.index)]
        for _ in range(cfg.depth):
            nxt = []
            for t, v in frontier:
                lv = local[(t, v)]
                for et in by_target[t]:
                    nbrs = g.in_neighbors(et, v)
                    if cutoff is not None:
                        ts = g.times[et.source_type]
                        if ts is not None and len(nbrs):
                            nbrs = nbrs[ts[nbrs] <= cutoff]
                    if len(nbrs) > cfg.fanout:
                        nbrs = rng.choice(nbrs, size=cfg.fanout, replace=False)
                    src_list, dst_list = edges[et]
                    for u in nbrs.tolist():
                        key = (et.source_type, u)
                        lu = local.get(key)
                        if lu is None:
                            lu = add(et.source_type, u)
                            nxt.append(key)
                        src_list.append(lu)
                        dst_list.append(lv)
            frontier = nxt

    return Subgraph(
        {t: np.asarray(v, dtype=np.int64) for t, v in nodes.items()},
        {et: (np.asarray(s, dtype=np.int64), np.asarray(d, dtype=np.int64)) for et, (s, d) in edges.items()},
        seed_refs,
        {t: np.asarray(v, dtype=np.int64) for t, v in tree.items()},
    )

