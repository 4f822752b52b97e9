"""Independent reference implementations used as test oracles.

Everything here is written with plain loops, ``math.exp`` and ``math.log``
(no max-subtraction), so it shares no code path with the library.
"""
from __future__ import annotations

import math

import numpy as np

from relcontrast.graph import Direction, EdgeType
from relcontrast.sampler import Subgraph


# --- random instances -----------------------------------------------------

def random_subgraph(rng: np.random.Generator, max_nodes: int = 50, n_types: int | None = None,
                    edge_p: float | None = None) -> Subgraph:
    """Random typed subgraph with forward edge types and their reverse twins."""
    k = n_types or int(rng.integers(1, 4))
    types = [f"t{i}" for i in range(k)]
    budget = int(rng.integers(k, max_nodes + 1))
    cuts = np.sort(rng.choice(np.arange(1, budget), size=k - 1, replace=False)) if k > 1 else []
    sizes = np.diff(np.concatenate([[0], cuts, [budget]])).astype(int)
    nodes = {t: np.arange(int(n), dtype=np.int64) for t, n in zip(types, sizes)}
    edges = {}
    n_fk = int(rng.integers(0, 4))
    for j in range(n_fk):
        s, d = rng.choice(types), rng.choice(types)
        name = f"{s}__fk{j}__{d}"
        fwd = EdgeType(name, s, d, f"fk{j}", Direction.FORWARD)
        rev = EdgeType("rev_" + name, d, s, f"fk{j}", Direction.REVERSE)
        p = edge_p if edge_p is not None else rng.uniform(0.05, 0.6)
        src, dst = [], []
        # each source row references at most one target, like a foreign key
        for u in range(len(nodes[s])):
            if rng.random() < p and len(nodes[d]):
                src.append(u)
                dst.append(int(rng.integers(0, len(nodes[d]))))
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        edges[fwd] = (src, dst)
        edges[rev] = (dst.copy(), src.copy())
    return Subgraph(nodes, edges, [])


def random_embeddings(rng, sg: Subgraph, d: int, scale: float = 0.5) -> dict[str, np.ndarray]:
    return {t: rng.normal(0.0, scale, (len(idx), d)) for t, idx in sg.nodes.items()}


# --- losses ---------------------------------------------------------------

def dot(a, b) -> float:
    return float(sum(float(x) * float(y) for x, y in zip(a, b)))


def bilinear(x, w, y) -> float:
    """x^T W y by explicit double sum."""
    total = 0.0
    for i in range(len(x)):
        for j in range(len(y)):
            total += float(x[i]) * float(w[i][j]) * float(y[j])
    return total


def infonce(pos: float, logits: list[float]) -> float:
    """-log(exp(pos) / sum(exp(l))) with no stabilisation; ``logits`` includes ``pos``."""
    return -math.log(math.exp(pos) / sum(math.exp(l) for l in logits))


def row_loss(h, hc, t, v, negs, w) -> float:
    hv = h[t][v]
    pos = bilinear(hc[t][v], w, hv)
    return infonce(pos, [pos] + [bilinear(hc[t][u], w, hv) for u in negs])


def link_loss(h, et: EdgeType, u, v, negs, w) -> float:
    hv = h[et.target_type][v]
    pos = bilinear(h[et.source_type][u], w, hv)
    return infonce(pos, [pos] + [bilinear(h[et.source_type][x], w, hv) for x in negs])


def context_vector(sg: Subgraph, h, w_context, t, v):
    """Mean of h_u W_type(u) over forward in-neighbours, or None."""
    acc, count = None, 0
    for et, (src, dst) in sg.edges.items():
        if et.direction is not Direction.FORWARD or et.target_type != t:
            continue
        for s, d_ in zip(src.tolist(), dst.tolist()):
            if d_ != v:
                continue
            hu = h[et.source_type][s]
            w = w_context[et.source_type]
            vec = [sum(float(hu[i]) * float(w[i][j]) for i in range(len(hu))) for j in range(len(hu))]
            acc = vec if acc is None else [a + b for a, b in zip(acc, vec)]
            count += 1
    if acc is None:
        return None
    return [a / count for a in acc]


def context_loss(ctx, h, t, v, negs) -> float:
    hv = h[t][v]
    pos = dot(ctx[(t, v)], hv)
    return infonce(pos, [pos] + [dot(ctx[(t, u)], hv) for u in negs])


def mu(n_neg: int) -> float:
    return -math.log(1.0 / (n_neg + 1))


def check_plan(sg: Subgraph, plan, n_max: int) -> None:
    """Eligibility rules of every negative set, checked from the raw edge lists."""
    for t, s in plan.row.items():
        for k, v in enumerate(s.anchor.tolist()):
            negs = s.negatives(k).tolist()
            assert v not in negs and len(set(negs)) == len(negs) <= n_max
            assert len(negs) == min(n_max, len(sg.nodes[t]) - 1)
    for et, s in plan.link.items():
        src, dst = sg.edges[et]
        for k, (u, v) in enumerate(zip(s.anchor.tolist(), s.target.tolist())):
            negs = s.negatives(k).tolist()
            linked = {a for a, b in zip(src.tolist(), dst.tolist()) if b == v}
            assert u not in negs and not (set(negs) & linked)
            assert len(set(negs)) == len(negs) <= n_max
    for t, s in plan.context.items():
        for k, v in enumerate(s.anchor.tolist()):
            negs = s.negatives(k).tolist()
            assert v not in negs and len(set(negs)) == len(negs) <= n_max


def combined_loss(sg: Subgraph, h, hc, w_row, w_link, w_context, plan) -> float:
    """Sum of the three level averages of normalized per-anchor losses.

    Anchors with no negatives are skipped and not counted.
    """
    total = 0.0

    terms = []
    for t, s in plan.row.items():
        for k, v in enumerate(s.anchor.tolist()):
            negs = s.negatives(k).tolist()
            if negs:
                terms.append(row_loss(h, hc, t, v, negs, w_row[t]) / mu(len(negs)))
    if terms:
        total += sum(terms) / len(terms)

    terms = []
    for et, s in plan.link.items():
        for k, (u, v) in enumerate(zip(s.anchor.tolist(), s.target.tolist())):
            negs = s.negatives(k).tolist()
            if negs:
                terms.append(link_loss(h, et, u, v, negs, w_link[et]) / mu(len(negs)))
    if terms:
        total += sum(terms) / len(terms)

    terms = []
    ctx = {}
    for t, idx in sg.nodes.items():
        for v in range(len(idx)):
            c = context_vector(sg, h, w_context, t, v)
            if c is not None:
                ctx[(t, v)] = c
    for t, s in plan.context.items():
        for k, v in enumerate(s.anchor.tolist()):
            negs = s.negatives(k).tolist()
            if negs:
                terms.append(context_loss(ctx, h, t, v, negs) / mu(len(negs)))
    if terms:
        total += sum(terms) / len(terms)
    return total


# --- message passing ------------------------------------------------------

def sage_layer(sg: Subgraph, h, msg_w, upd_w, aggregation: str):
    """Edge-by-edge, coordinate-by-coordinate message passing."""
    out = {}
    for t, ht in h.items():
        n, d = ht.shape
        res = np.zeros((n, upd_w[t].shape[1]))
        for v in range(n):
            m = [0.0] * d
            deg = 0
            for et, (src, dst) in sg.edges.items():
                if et.target_type != t:
                    continue
                for s, dd in zip(src.tolist(), dst.tolist()):
                    if dd != v:
                        continue
                    hu = h[et.source_type][s]
                    w = msg_w[et]
                    for j in range(d):
                        m[j] += sum(float(hu[i]) * float(w[i][j]) for i in range(d))
                    deg += 1
            if aggregation == "mean" and deg:
                m = [x / deg for x in m]
            z = list(ht[v]) + m
            u = upd_w[t]
            for j in range(u.shape[1]):
                res[v, j] = max(0.0, sum(float(z[i]) * float(u[i][j]) for i in range(len(z))))
        out[t] = res
    return out


# --- metrics --------------------------------------------------------------

def auc_pairs(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly; ties count one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    good = 0.0
    for p in pos:
        for q in neg:
            good += 1.0 if p > q else 0.5 if p == q else 0.0
    return good / (len(pos) * len(neg))


def mae_loop(pred, target) -> float:
    total = 0.0
    for a, b in zip(pred, target):
        total += abs(float(a) - float(b))
    return total / len(pred)
