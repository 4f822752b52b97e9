"""The three contrastive levels on a toy graph, plus feature corruption."""
# %%
import math

import numpy as np

from relcontrast.autodiff import Tensor
from relcontrast.contrastive import (
    ContrastiveParams, CorruptionConfig, NegativeConfig, combined_loss, corrupt_rows, norm_factor, row_loss,
)
from relcontrast.graph import Direction, EdgeType, NodeId
from relcontrast.relational import table_marginals
from relcontrast.sampler import Subgraph
from relcontrast.synth import SynthConfig, generate

# %% with identical logits each InfoNCE term is log(K+1), so each normalised level is 1
h = {"a": Tensor(np.ones((8, 4)))}
loss = row_loss(NodeId("a", 0), h, h, [NodeId("a", i) for i in range(1, 8)], Tensor(np.eye(4)))
print(loss.item(), math.log(8), norm_factor(7))

# %% a six-row table pointing at three targets
fwd = EdgeType("a__fk__b", "a", "b", "fk", Direction.FORWARD)
rev = EdgeType("rev_a__fk__b", "b", "a", "fk", Direction.REVERSE)
src, dst = np.arange(6), np.arange(6) % 3
sg = Subgraph({"a": np.arange(6), "b": np.arange(3)}, {fwd: (src, dst), rev: (dst, src)})
params = ContrastiveParams(["a", "b"], [fwd, rev], dim=4, seed=0)
rng = np.random.default_rng(0)
emb = {"a": Tensor(rng.normal(size=(6, 4))), "b": Tensor(rng.normal(size=(3, 4)))}
noisy = {t: Tensor(x.data + 0.1 * rng.normal(size=x.shape)) for t, x in emb.items()}
print("combined loss:", combined_loss(sg, emb, noisy, params, NegativeConfig(4), rng).item())

# %% corruption resamples about p of the feature cells and leaves keys alone
db = generate(SynthConfig()).db
events = db.schema.table("events")
rows = db.tables["events"][:5]
out, mask = corrupt_rows(rows, events, table_marginals(db, "events"), CorruptionConfig(0.4, rng_seed=1),
                         return_mask=True)
for before, after in zip(rows, out):
    print(before[:3] == after[:3], before[3:], "->", after[3:])
print("selected fraction:", mask.mean())
