"""Pretrain on a pruned database, then compare the three fine-tuning regimes.

Kept small so it runs in well under a minute; the acceptance suite runs the
full-size comparison.
"""
# %%
from relcontrast.backbone import BackboneConfig
from relcontrast.relational import temporal_prune
from relcontrast.sampler import HgSamplerConfig
from relcontrast.synth import SynthConfig, generate
from relcontrast.training import FinetuneConfig, PretrainConfig, TaskTable, finetune, pretrain

cfg = SynthConfig(rng_seed=0, n_users=120, n_events=1200, signal_strength=0.7)
data = generate(cfg)
task = TaskTable.from_rows("user-label", "users", "binary", data.tasks["user-label"])
bcfg = BackboneConfig(hidden_dim=32, attr_dim=16, text_buckets=256)

# %% pretraining only sees rows up to the training cutoff
pre = pretrain(temporal_prune(data.db, cfg.split_times["train"]), bcfg,
               PretrainConfig(max_steps=60, val_every=20, val_samples=10,
                              sampler=HgSamplerConfig("events", 32, 3, 32)))
print(f"contrastive val loss {pre.initial_val:.3f} -> {pre.best_val:.3f}")

# %% same budget for every regime
for regime, init in (("baseline", None), ("frozen", pre.checkpoint), ("finetune", pre.checkpoint)):
    res = finetune(data.db, task, init, bcfg, FinetuneConfig(regime=regime, max_steps=40, val_every=10, lr=1e-3))
    test_auc = res.run.metric("test")
    print(f"{regime:9s} val AUC {res.best_metric:.3f}  test AUC {test_auc:.3f}")
