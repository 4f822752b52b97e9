"""Type-balanced subgraph sampling versus breadth-first expansion,
and time-respecting neighbourhoods for labelled entities."""
# %%
import numpy as np

from relcontrast.graph import NodeId, build_graph
from relcontrast.sampler import HgSamplerConfig, NeighborSamplerConfig, bfs_sample, hg_sample, neighbor_sample
from relcontrast.synth import SynthConfig, generate
from relcontrast.training import assert_temporal_safety

data = generate(SynthConfig())
g = build_graph(data.db)

# %% budgeted sampler: 64 seed events, at most 64 new nodes per type per round
sg = hg_sample(g, HgSamplerConfig("events", per_type_budget=64, iterations=3, seed_count=64, rng_seed=0))
print("budgeted:", sg.census()["nodes"])

# three hops of BFS from the same seeds swamps the subgraph with events
seeds = [NodeId("events", int(i)) for i in sg.nodes["events"]]
print("bfs     :", bfs_sample(g, seeds, 3).census()["nodes"])

# %% neighbour sampling with per-seed cutoffs never looks into the future
rng = np.random.default_rng(0)
users = [NodeId("users", i) for i in range(4)]
cutoffs = [int(np.median(g.times["events"]))] * 4
nsg = neighbor_sample(g, users, NeighborSamplerConfig(fanout=16, depth=2), cutoffs, rng)
assert_temporal_safety(g, nsg, cutoffs)
print("neighbourhood:", nsg.census()["nodes"])
print("newest event seen:", g.times["events"][nsg.nodes["events"]].max(), "<= cutoff", cutoffs[0])
