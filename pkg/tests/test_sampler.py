import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relcontrast.errors import EmptyGraph, InvalidSeed, UnknownSeedType
from relcontrast.graph import NodeId, build_graph
from relcontrast.relational import Attribute, DatabaseSchema, SType, TableSchema, make_database
from relcontrast.sampler import (
    HgSamplerConfig,
    NeighborSamplerConfig,
    bfs_sample,
    hg_sample,
    neighbor_sample,
    pick_seed_type,
)
from relcontrast.synth import SynthConfig, generate
from relcontrast.training import assert_temporal_safety


def brute_closure(g, sg):
    """All parent edges whose endpoints are both included, in global ids."""
    out = {}
    for et in g.edge_types:
        inc_s = set(sg.nodes[et.source_type].tolist())
        inc_d = set(sg.nodes[et.target_type].tolist())
        src, dst = g.edges[et]
        out[et] = {(u, v) for u, v in zip(src.tolist(), dst.tolist()) if u in inc_s and v in inc_d}
    return out


def test_pick_seed_type_rules(synth):
    assert pick_seed_type(synth.db.schema) == "events"
    a = TableSchema("a", (Attribute("id", SType.PRIMARY_KEY, False),))
    t1 = TableSchema("t1", (Attribute("id", SType.PRIMARY_KEY, False), Attribute("x", SType.FOREIGN_KEY, True, "a"),
                            Attribute("y", SType.FOREIGN_KEY, True, "a")))
    t2 = TableSchema("t2", (Attribute("id", SType.PRIMARY_KEY, False), Attribute("x", SType.FOREIGN_KEY, True, "a"),
                            Attribute("y", SType.FOREIGN_KEY, True, "a")))
    assert pick_seed_type(DatabaseSchema((a, t1, t2))) == "t1"


def test_hg_budget_bounds_dense(graph):
    cfg = HgSamplerConfig("events", per_type_budget=64, iterations=3, seed_count=64, rng_seed=1)
    sg = hg_sample(graph, cfg)
    assert sg.count("events") == 64
    for t in ("users", "items"):
        assert 0 < sg.count(t) <= 192
    assert len(sg.seeds) == 64 and all(s.node_type == "events" for s in sg.seeds)


def test_hg_budget_bounds_when_every_type_is_reachable():
    # each event owns its user and item, and users have many reviews, so
    # every non-seed type can supply at least one full budget
    ev = TableSchema("events", (Attribute("id", SType.PRIMARY_KEY, False),
                                Attribute("u", SType.FOREIGN_KEY, True, "users"),
                                Attribute("i", SType.FOREIGN_KEY, True, "items")))
    us = TableSchema("users", (Attribute("id", SType.PRIMARY_KEY, False),))
    it = TableSchema("items", (Attribute("id", SType.PRIMARY_KEY, False),))
    rv = TableSchema("reviews", (Attribute("id", SType.PRIMARY_KEY, False),
                                 Attribute("u", SType.FOREIGN_KEY, True, "users")))
    n = 300
    db = make_database(DatabaseSchema((ev, us, it, rv)), {
        "events": [(f"e{k}", f"u{k}", f"i{k}") for k in range(n)],
        "users": [(f"u{k}",) for k in range(n)],
        "items": [(f"i{k}",) for k in range(n)],
        "reviews": [(f"r{k}", f"u{k % n}") for k in range(10 * n)],
    })
    g = build_graph(db)
    for s in range(5):
        sg = hg_sample(g, HgSamplerConfig("events", 64, 3, 64, rng_seed=s))
        for t in ("users", "items", "reviews"):
            assert 64 <= sg.count(t) <= 192


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 20), st.integers(1, 4), st.integers(1, 30))
def test_hg_closure_budget_determinism(seed, budget, iters, seeds):
    data = generate(SynthConfig(rng_seed=seed % 7, n_users=40, n_items=30, n_events=120))
    g = build_graph(data.db)
    cfg = HgSamplerConfig("events", budget, iters, seeds, rng_seed=seed)
    sg = hg_sample(g, cfg)
    assert g.num_nodes <= 200
    assert sg.count("events") == min(seeds, 120)
    for t in ("users", "items"):
        assert sg.count(t) <= iters * budget
        assert len(set(sg.nodes[t].tolist())) == sg.count(t)
    closure = brute_closure(g, sg)
    for et in g.edge_types:
        assert sg.global_edges(et) == closure[et]
    again = hg_sample(g, cfg)
    for t in sg.nodes:
        np.testing.assert_array_equal(sg.nodes[t], again.nodes[t])


def test_hg_star_single_round():
    hub = TableSchema("hub", (Attribute("id", SType.PRIMARY_KEY, False),
                              Attribute("s1", SType.FOREIGN_KEY, True, "spoke1"),
                              Attribute("s2", SType.FOREIGN_KEY, True, "spoke2")))
    s1 = TableSchema("spoke1", (Attribute("id", SType.PRIMARY_KEY, False),))
    s2 = TableSchema("spoke2", (Attribute("id", SType.PRIMARY_KEY, False),))
    rng = np.random.default_rng(0)
    hubs = [(f"h{i}", f"a{rng.integers(0, 50)}", f"b{rng.integers(0, 5)}") for i in range(80)]
    db = make_database(DatabaseSchema((hub, s1, s2)), {
        "hub": hubs, "spoke1": [(f"a{i}",) for i in range(50)], "spoke2": [(f"b{i}",) for i in range(5)]})
    g = build_graph(db)
    for budget in (3, 10, 40):
        sg = hg_sample(g, HgSamplerConfig("hub", budget, 1, 30, rng_seed=budget))
        seed_rows = [db.tables["hub"][i] for i in sg.nodes["hub"]]
        for t, col in (("spoke1", 1), ("spoke2", 2)):
            reachable = {r[col] for r in seed_rows}
            assert sg.count(t) == min(budget, len(reachable))
            got = {db.tables[t][i][0] for i in sg.nodes[t]}
            assert got <= reachable


def test_hg_edgeless_and_errors():
    solo = TableSchema("solo", (Attribute("id", SType.PRIMARY_KEY, False),))
    db = make_database(DatabaseSchema((solo,)), {"solo": [(f"s{i}",) for i in range(10)]})
    g = build_graph(db)
    sg = hg_sample(g, HgSamplerConfig("solo", 4, 2, 5))
    assert sg.count("solo") == 5 and sg.num_edges() == 0
    with pytest.raises(UnknownSeedType):
        hg_sample(g, HgSamplerConfig("nope"))
    empty = build_graph(make_database(DatabaseSchema((solo,)), {"solo": []}))
    with pytest.raises(EmptyGraph):
        hg_sample(empty, HgSamplerConfig("solo"))


def test_balance_vs_bfs(graph):
    ratios = []
    for s in range(5):
        sg = hg_sample(graph, HgSamplerConfig("events", rng_seed=s))
        counts = [sg.count(t) for t in graph.node_types]
        ratios.append(max(counts) / min(counts))
    assert max(ratios) <= 3
    sg = hg_sample(graph, HgSamplerConfig("events", rng_seed=0))
    bfs = bfs_sample(graph, sg.seeds and [NodeId("events", int(sg.nodes["events"][s.index])) for s in sg.seeds], 3)
    counts = [bfs.count(t) for t in graph.node_types]
    assert max(counts) / min(counts) > 10


# --- neighbour sampling ---------------------------------------------------

def chain_db():
    c = TableSchema("c", (Attribute("id", SType.PRIMARY_KEY, False),))
    b = TableSchema("b", (Attribute("id", SType.PRIMARY_KEY, False), Attribute("c", SType.FOREIGN_KEY, True, "c")))
    a = TableSchema("a", (Attribute("id", SType.PRIMARY_KEY, False), Attribute("b", SType.FOREIGN_KEY, True, "b")))
    return make_database(DatabaseSchema((c, b, a)), {"c": [("c0",)], "b": [("b0", "c0")], "a": [("a0", "b0")]})


def test_neighbor_two_hops():
    g = build_graph(chain_db())
    sg = neighbor_sample(g, [NodeId("a", 0)], NeighborSamplerConfig(depth=2))
    assert sg.count("c") == 1 and sg.count("b") == 1
    sg1 = neighbor_sample(g, [NodeId("a", 0)], NeighborSamplerConfig(depth=1))
    assert sg1.count("c") == 0


def test_neighbor_fanout(graph):
    item = NodeId("items", 0)
    fwd = next(e for e in graph.edge_types if e.is_forward and e.target_type == "items")
    deg = len(graph.in_neighbors(fwd, 0))
    sg = neighbor_sample(graph, [item], NeighborSamplerConfig(fanout=128, depth=1))
    assert sg.count("events") == deg
    sg = neighbor_sample(graph, [item], NeighborSamplerConfig(fanout=2, depth=1))
    assert sg.count("events") == min(2, deg)


def test_neighbor_time_cutoff():
    u = TableSchema("u", (Attribute("id", SType.PRIMARY_KEY, False),))
    e = TableSchema("e", (Attribute("id", SType.PRIMARY_KEY, False), Attribute("u", SType.FOREIGN_KEY, True, "u"),
                          Attribute("t", SType.TIMESTAMP)), time_attribute="t")
    db = make_database(DatabaseSchema((u, e)), {"u": [("u0",)], "e": [("e0", "u0", 99), ("e1", "u0", 101)]})
    g = build_graph(db)
    sg = neighbor_sample(g, [NodeId("u", 0)], NeighborSamplerConfig(depth=1), cutoffs=[100])
    assert sg.nodes["e"].tolist() == [0]


def test_neighbor_errors(graph):
    with pytest.raises(InvalidSeed):
        neighbor_sample(graph, [NodeId("users", 10**6)], NeighborSamplerConfig())
    with pytest.raises(InvalidSeed):
        neighbor_sample(graph, [NodeId("users", 0)], NeighborSamplerConfig(), cutoffs=[1, 2])


def test_neighbor_edges_exist_in_parent(graph):
    seeds = [NodeId("users", i) for i in range(10)]
    sg = neighbor_sample(graph, seeds, NeighborSamplerConfig(fanout=5, depth=2, rng_seed=3))
    for et, (src, dst) in sg.edges.items():
        for s, d in zip(src.tolist(), dst.tolist()):
            assert graph.has_edge(et, int(sg.nodes[et.source_type][s]), int(sg.nodes[et.target_type][d]))
    again = neighbor_sample(graph, seeds, NeighborSamplerConfig(fanout=5, depth=2, rng_seed=3))
    for t in sg.nodes:
        np.testing.assert_array_equal(sg.nodes[t], again.nodes[t])


def test_temporal_safety_many_batches(graph):
    rng = np.random.default_rng(0)
    times = graph.times["events"]
    lo, hi = int(times.min()), int(times.max())
    cfg = NeighborSamplerConfig(fanout=8, depth=2)
    for _ in range(200):
        users = rng.choice(graph.node_counts["users"], size=4, replace=False)
        cutoffs = rng.integers(lo, hi, size=4).tolist()
        sg = neighbor_sample(graph, [NodeId("users", int(u)) for u in users], cfg, cutoffs, rng)
        assert_temporal_safety(graph, sg, cutoffs)
        ts = times[sg.nodes["events"]]
        assert (ts <= np.asarray(cutoffs)[sg.tree["events"]]).all()
