"""Row-, link- and context-level contrastive losses and their combination.

Every loss has the InfoNCE form ``-log softmax(logits)[positive]`` where the
candidate set is the positive plus its sampled negatives. Negatives come from
the current subgraph. Per-anchor losses are divided by ``log(1 + #negatives)``
before averaging, so a uniform-logit loss contributes exactly 1. Anchors
without negatives have no defined normalizer and are left out of both the sum
and the count of their level.

Local node references are ``NodeId(type, local_index)`` into a ``Subgraph``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import (
    EmptyMarginal,
    EmptySubgraph,
    NegativeIsLinked,
    TypeMismatch,
    UndefinedContext,
)
from .graph import EdgeType, NodeId, NodeType
from .relational import ColumnMarginal, TableSchema
from .sampler import Subgraph

ROW, LINK, CONTEXT = "row", "link", "context"


@dataclass(frozen=True)
class CorruptionConfig:
    p: float = 0.4
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"corruption probability must lie in [0, 1], got {self.p}")


@dataclass(frozen=True)
class NegativeConfig:
    n_max: int = 256

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")


# --- corruption -----------------------------------------------------------

def corrupt_rows(
    rows: Sequence[tuple],
    table: TableSchema,
    marginals: dict[str, ColumnMarginal],
    cfg: CorruptionConfig,
    rng: np.random.Generator | None = None,
    return_mask: bool = False,
):
    """Resample a random subset of non-key cells from their column marginals.

    Each non-key cell is selected independently with probability ``cfg.p``
    and replaced by a uniform draw from the column's observed values (which
    may coincide with the original). Key cells are never touched. With
    ``return_mask`` the boolean ``(rows, feature columns)`` selection mask is
    returned as well.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
    feats = table.feature_attributes
    pools = []
    for a in feats:
        m = marginals.get(a.name)
        values = m.observed_values if m is not None else ()
        if cfg.p > 0 and not values:
            raise EmptyMarginal(f"{table.name}.{a.name} has no observed values to resample from")
        pools.append(values)
    n = len(rows)
    mask = rng.random((n, len(feats))) < cfg.p
    out = [list(r) for r in rows]
    for j, a in enumerate(feats):
        sel = np.flatnonzero(mask[:, j])
        if not len(sel):
            continue
        col = table.index(a.name)
        picks = rng.integers(0, len(pools[j]), size=len(sel))
        for i, k in zip(sel.tolist(), picks.tolist()):
            out[i][col] = pools[j][k]
    result = [tuple(r) for r in out]
    return (result, mask) if return_mask else result


# --- parameters -----------------------------------------------------------

class ContrastiveParams:
    """Similarity matrices: per node type (row), per forward edge type (link), per node type (context)."""

    def __init__(self, node_types: Sequence[NodeType], edge_types: Sequence[EdgeType], dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)

        def near_identity():
            return np.eye(dim) + rng.uniform(-0.01, 0.01, (dim, dim))

        self.w_row = {t: Parameter(f"ctr.row.{t}", near_identity()) for t in node_types}
        self.w_link = {et: Parameter(f"ctr.link.{et.name}", near_identity()) for et in edge_types if et.is_forward}
        self.w_context = {t: Parameter(f"ctr.ctx.{t}", near_identity()) for t in node_types}

    def parameters(self) -> list[Parameter]:
        return [*self.w_row.values(), *self.w_link.values(), *self.w_context.values()]


def norm_factor(n_neg: int) -> float:
    """``-log(1 / (n_neg + 1))``."""
    if n_neg < 0:
        raise ValueError("n_neg must be >= 0")
    return math.log(n_neg + 1)


# --- single-anchor losses -------------------------------------------------

def _infonce(logits: Tensor) -> Tensor:
    """``logsumexp(logits) - logits[0]`` for a ``(1, k)`` row of logits."""
    lse = ad.logsumexp_rows(logits)
    return ad.reshape(ad.sub(lse, ad.reshape(ad.slice_cols(logits, 0, 1), (1,))), ())


def _check_negatives(anchor: NodeId, negs: Sequence[NodeId], node_type: NodeType):
    for w in negs:
        if w.node_type != node_type:
            raise TypeMismatch(f"negative {w} is not of type {node_type}")
    if anchor in negs:
        raise ValueError(f"anchor {anchor} listed among its own negatives")


def row_loss(v: NodeId, h: dict[NodeType, Tensor], h_corrupt: dict[NodeType, Tensor],
             negs: Sequence[NodeId], w: Tensor) -> Tensor:
    """Clean embedding of ``v`` against corrupted embeddings of ``v`` and its negatives."""
    _check_negatives(v, negs, v.node_type)
    t = v.node_type
    hv = ad.take_rows(h[t], [v.index])
    cand = ad.take_rows(h_corrupt[t], [v.index] + [u.index for u in negs])
    logits = ad.transpose(ad.matmul(cand, ad.matmul(w, ad.transpose(hv))))
    return _infonce(logits)


def link_loss(sg: Subgraph, et: EdgeType, u: int, v: int, h: dict[NodeType, Tensor],
              negs: Sequence[NodeId], w: Tensor) -> Tensor:
    """True source ``u`` of edge ``(u, v)`` against unlinked same-type sources."""
    if not et.is_forward:
        raise TypeMismatch(f"link loss is defined on forward edge types, got {et.name}")
    _check_negatives(NodeId(et.source_type, u), negs, et.source_type)
    src, dst = sg.edges[et]
    linked = set(src[dst == v].tolist())
    for x in negs:
        if x.index in linked:
            raise NegativeIsLinked(f"{x} is linked to target {v} by {et.name}")
    hv = ad.take_rows(h[et.target_type], [v])
    cand = ad.take_rows(h[et.source_type], [u] + [x.index for x in negs])
    logits = ad.transpose(ad.matmul(cand, ad.matmul(w, ad.transpose(hv))))
    return _infonce(logits)


def context_sources(sg: Subgraph, v: NodeId) -> list[tuple[EdgeType, np.ndarray]]:
    """In-neighbors of ``v`` over forward edge types, grouped by edge type."""
    out = []
    for et, (src, dst) in sg.edges.items():
        if et.is_forward and et.target_type == v.node_type:
            s = src[dst == v.index]
            if len(s):
                out.append((et, s))
    return out


def context_embedding(v: NodeId, sg: Subgraph, h: dict[NodeType, Tensor],
                      w_context: dict[NodeType, Tensor]) -> Tensor | None:
    """Mean of ``h_u @ W_type(u)`` over forward in-neighbors ``u``; ``None`` if there are none."""
    groups = context_sources(sg, v)
    if not groups:
        return None
    total = None
    count = 0
    for et, s in groups:
        part = ad.sum_rows(ad.matmul(ad.take_rows(h[et.source_type], s), w_context[et.source_type]))
        total = part if total is None else ad.add(total, part)
        count += len(s)
    return ad.reshape(ad.scale(total, 1.0 / count), (1, -1))


def context_loss(v: NodeId, contexts: dict[NodeId, Tensor], h: dict[NodeType, Tensor],
                 negs: Sequence[NodeId]) -> Tensor:
    """``h_v`` against its own context embedding and those of same-type negatives."""
    _check_negatives(v, negs, v.node_type)
    for x in [v, *negs]:
        if contexts.get(x) is None:
            raise UndefinedContext(f"{x} has no context embedding")
    hv = ad.take_rows(h[v.node_type], [v.index])
    cand = ad.concat([contexts[x] for x in [v, *negs]], axis=0)
    logits = ad.transpose(ad.matmul(cand, ad.transpose(hv)))
    return _infonce(logits)


# --- negative sampling ----------------------------------------------------

def has_context(sg: Subgraph) -> dict[NodeType, np.ndarray]:
    out = {t: np.zeros(len(idx), dtype=bool) for t, idx in sg.nodes.items()}
    for et, (_, dst) in sg.edges.items():
        if et.is_forward and len(dst):
            out[et.target_type][dst] = True
    return out


def _draw(pool: np.ndarray, n_max: int, rng: np.random.Generator) -> np.ndarray:
    if len(pool) <= n_max:
        return rng.permutation(pool)
    return rng.choice(pool, size=n_max, replace=False)


def _link_pool(sg: Subgraph, et: EdgeType, u: int, v: int) -> np.ndarray:
    src, dst = sg.edges[et]
    eligible = np.ones(sg.count(et.source_type), dtype=bool)
    eligible[src[dst == v]] = False
    eligible[u] = False
    return np.flatnonzero(eligible)


def sample_negatives(sg: Subgraph, anchor, kind: str, n_max: int, rng: np.random.Generator) -> list[NodeId]:
    """Uniform draw without replacement from the anchor's eligible set, capped at ``n_max``.

    ``anchor`` is a ``NodeId`` for row and context negatives and an
    ``(edge_type, u, v)`` triple for link negatives.
    """
    if kind == LINK:
        et, u, v = anchor
        pool = _link_pool(sg, et, u, v)
        t = et.source_type
    elif kind in (ROW, CONTEXT):
        t = anchor.node_type
        ok = np.ones(sg.count(t), dtype=bool) if kind == ROW else has_context(sg)[t].copy()
        ok[anchor.index] = False
        pool = np.flatnonzero(ok)
    else:
        raise ValueError(f"unknown negative kind {kind!r}")
    return [NodeId(t, int(i)) for i in _draw(pool, n_max, rng)]


@dataclass
class AnchorSet:
    """Flattened candidate lists for a batch of anchors of one node/edge type.

    ``anchor`` and ``target`` index the logit matrix of the level (row: the
    same node twice; link: source and target of the edge). ``cand`` holds the
    positive followed by the negatives of each anchor; ``seg`` maps each
    candidate to its anchor.
    """

    anchor: np.ndarray
    target: np.ndarray
    cand: np.ndarray
    seg: np.ndarray
    n_neg: np.ndarray

    @classmethod
    def build(cls, anchors, targets, neg_lists) -> "AnchorSet":
        cand, seg = [], []
        for k, (a, negs) in enumerate(zip(anchors, neg_lists)):
            cand.append(np.concatenate([[a], negs]).astype(np.int64))
            seg.append(np.full(len(negs) + 1, k, dtype=np.int64))
        cat = (lambda xs: np.concatenate(xs) if xs else np.zeros(0, np.int64))
        return cls(np.asarray(anchors, dtype=np.int64), np.asarray(targets, dtype=np.int64),
                   cat(cand), cat(seg), np.asarray([len(n) for n in neg_lists], dtype=np.int64))

    def negatives(self, k: int) -> np.ndarray:
        return self.cand[self.seg == k][1:]


@dataclass
class NegativePlan:
    row: dict[NodeType, AnchorSet] = field(default_factory=dict)
    link: dict[EdgeType, AnchorSet] = field(default_factory=dict)
    context: dict[NodeType, AnchorSet] = field(default_factory=dict)


def plan_negatives(sg: Subgraph, n_max: int, rng: np.random.Generator) -> NegativePlan:
    """Draw negatives for every row anchor, forward edge and context anchor of ``sg``."""
    plan = NegativePlan()
    ctx = has_context(sg)
    for t, idx in sg.nodes.items():
        n = len(idx)
        if not n:
            continue
        anchors = np.arange(n)
        negs = []
        for v in anchors:
            pool = np.delete(anchors, v)
            negs.append(_draw(pool, n_max, rng))
        plan.row[t] = AnchorSet.build(anchors, anchors, negs)
    for et, (src, dst) in sg.edges.items():
        if not et.is_forward or not len(src):
            continue
        negs = [_draw(_link_pool(sg, et, u, v), n_max, rng) for u, v in zip(src.tolist(), dst.tolist())]
        plan.link[et] = AnchorSet.build(src, dst, negs)
    for t, defined in ctx.items():
        anchors = np.flatnonzero(defined)
        if not len(anchors):
            continue
        negs = [_draw(anchors[anchors != v], n_max, rng) for v in anchors]
        plan.context[t] = AnchorSet.build(anchors, anchors, negs)
    return plan


# --- combined loss --------------------------------------------------------

def _level_terms(scores: Tensor, s: AnchorSet):
    """Sum over anchors with negatives of ``loss / mu`` and the number of such anchors."""
    keep = s.n_neg > 0
    if not keep.any():
        return None, 0
    # drop anchors without negatives before building the tape
    k_idx = np.flatnonzero(keep)
    remap = -np.ones(len(keep), dtype=np.int64)
    remap[k_idx] = np.arange(len(k_idx))
    entry = keep[s.seg]
    seg = remap[s.seg[entry]]
    cand = s.cand[entry]
    tgt = s.target[k_idx][seg]
    flat = ad.take(scores, cand, tgt)
    lse = ad.segment_logsumexp(flat, seg, len(k_idx))
    pos = ad.take(scores, s.anchor[k_idx], s.target[k_idx])
    per_anchor = ad.sub(lse, pos)
    mu = np.log(s.n_neg[k_idx] + 1.0)
    return ad.dot_const(per_anchor, 1.0 / mu), len(k_idx)


def context_matrix(sg: Subgraph, h: dict[NodeType, Tensor], w_context: dict[NodeType, Tensor],
                   t: NodeType) -> Tensor:
    """Context embeddings of all type-``t`` nodes; rows without forward in-neighbors are zero."""
    n = sg.count(t)
    total = None
    deg = np.zeros(n)
    for et, (src, dst) in sg.edges.items():
        if not et.is_forward or et.target_type != t or not len(src):
            continue
        proj = ad.matmul(h[et.source_type], w_context[et.source_type])
        part = ad.segment_sum(ad.take_rows(proj, src), dst, n)
        total = part if total is None else ad.add(total, part)
        deg += np.bincount(dst, minlength=n)
    if total is None:
        return Tensor(np.zeros((n, h[t].shape[1])))
    return ad.scale_rows(total, 1.0 / np.maximum(deg, 1.0))


def combined_loss_from_plan(sg: Subgraph, h: dict[NodeType, Tensor], h_corrupt: dict[NodeType, Tensor],
                            params: ContrastiveParams, plan: NegativePlan) -> Tensor:
    """Level-wise normalized average of row, link and context losses for fixed negatives."""
    if sg.num_nodes == 0:
        raise EmptySubgraph("subgraph has no nodes")
    levels = []

    acc, count = [], 0
    for t, s in plan.row.items():
        # scores[u, v] = hc_u . W h_v
        scores = ad.matmul(ad.matmul(h_corrupt[t], params.w_row[t]), ad.transpose(h[t]))
        term, k = _level_terms(scores, s)
        if k:
            acc.append(term)
            count += k
    levels.append((acc, count))

    acc, count = [], 0
    for et, s in plan.link.items():
        # scores[w, v] = h_w . W h_v
        scores = ad.matmul(ad.matmul(h[et.source_type], params.w_link[et]), ad.transpose(h[et.target_type]))
        term, k = _level_terms(scores, s)
        if k:
            acc.append(term)
            count += k
    levels.append((acc, count))

    acc, count = [], 0
    for t, s in plan.context.items():
        c = context_matrix(sg, h, params.w_context, t)
        # scores[u, v] = c_u . h_v
        scores = ad.matmul(c, ad.transpose(h[t]))
        term, k = _level_terms(scores, s)
        if k:
            acc.append(term)
            count += k
    levels.append((acc, count))

    loss = None
    for acc, count in levels:
        if not count:
            continue
        level = acc[0]
        for x in acc[1:]:
            level = ad.add(level, x)
        level = ad.scale(level, 1.0 / count)
        loss = level if loss is None else ad.add(loss, level)
    return loss if loss is not None else Tensor(0.0)


def combined_loss(sg: Subgraph, h, h_corrupt, params: ContrastiveParams, neg_cfg: NegativeConfig,
                  rng: np.random.Generator) -> Tensor:
    return combined_loss_from_plan(sg, h, h_corrupt, params, plan_negatives(sg, neg_cfg.n_max, rng))
