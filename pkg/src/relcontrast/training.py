"""Contrastive pretraining, task fine-tuning and evaluation."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, BatchNormStats, Parameter, Tensor
from .backbone import BackboneConfig, BackboneModel
from .checkpoint import Checkpoint
from .contrastive import ContrastiveParams, CorruptionConfig, NegativeConfig, combined_loss, corrupt_rows
from .encoders import AttributeEncoders, FeatureStore
from .errors import (
    IntegrityError,
    ParseError,
    RegimeMismatch,
    TimeLimitExceeded,
    VersionMismatch,
)
from .graph import HeteroGraph, NodeId, build_graph
from .metrics import auc_roc, mae
from .relational import Database, table_marginals, temporal_prune
from .sampler import HgSamplerConfig, NeighborSamplerConfig, Subgraph, hg_sample, neighbor_sample, pick_seed_type

log = logging.getLogger(__name__)

BASELINE, FROZEN, FINETUNE = "baseline", "frozen", "finetune"
REGIMES = (BASELINE, FROZEN, FINETUNE)


# --- task tables ----------------------------------------------------------

@dataclass
class TaskTable:
    name: str
    entity_table: str
    label_kind: str  # "binary" | "regression"
    keys: list[str]
    labels: np.ndarray
    timestamps: np.ndarray | None
    splits: np.ndarray
    entity_fk_column: str = "entity_key"

    def __post_init__(self):
        if self.label_kind not in ("binary", "regression"):
            raise ValueError(f"unknown label kind {self.label_kind!r}")
        if self.label_kind == "binary" and not np.isin(self.labels, (0.0, 1.0)).all():
            raise ParseError(f"task {self.name}: binary labels must be 0 or 1")

    @classmethod
    def from_rows(cls, name: str, entity_table: str, label_kind: str, rows) -> "TaskTable":
        """Build from ``(entity_key, label, timestamp, split)`` tuples."""
        keys, labels, ts, splits = zip(*rows) if rows else ((), (), (), ())
        return cls(name, entity_table, label_kind, list(keys), np.asarray(labels, dtype=np.float64),
                   np.asarray(ts, dtype=np.int64), np.asarray(splits))

    def rows(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.splits == split)

    def entity_index(self, db: Database) -> np.ndarray:
        lookup = db.pk_index[self.entity_table]
        missing = [k for k in self.keys if k not in lookup]
        if missing:
            raise IntegrityError(f"task {self.name}: {len(missing)} entity keys missing from "
                                 f"{self.entity_table}, e.g. {missing[0]!r}")
        return np.array([lookup[k] for k in self.keys], dtype=np.int64)


def load_task_table(path, name: str, entity_table: str, label_kind: str) -> TaskTable:
    """Read ``entity_key,label[,timestamp,split]``; rows without a split go to ``train``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if fields[:2] != ["entity_key", "label"]:
            raise ParseError(f"{path}: expected header entity_key,label[,timestamp,split], got {fields}")
        keys, labels, ts, splits = [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            try:
                labels.append(float(rec["label"]))
                if "timestamp" in fields:
                    ts.append(int(rec["timestamp"]))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            keys.append(rec["entity_key"])
            splits.append(rec.get("split") or "train")
    return TaskTable(name, entity_table, label_kind, keys, np.asarray(labels),
                     np.asarray(ts, dtype=np.int64) if "timestamp" in fields else None,
                     np.asarray(splits))


# --- configs and records --------------------------------------------------

@dataclass
class PretrainConfig:
    lr: float = 1e-3
    max_steps: int = 2000
    val_every: int = 50
    patience: int = 10
    val_samples: int = 50
    sampler: HgSamplerConfig | None = None  # seed type picked from the schema when None
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    negatives: NegativeConfig = field(default_factory=NegativeConfig)
    time_limit_seconds: float | None = None
    seed: int = 0


@dataclass
class FinetuneConfig:
    lr: float = 1e-4
    max_steps: int = 2000
    val_every: int = 100
    patience: int = 5
    batch_size: int = 512
    sampler: NeighborSamplerConfig | None = None  # depth follows the backbone when None
    regime: str = BASELINE
    head_hidden: int = 128
    eval_batch_size: int = 512
    time_limit_seconds: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")


@dataclass
class MetricsRecord:
    step: int
    split: str
    loss: float | None = None
    auc_roc: float | None = None
    mae: float | None = None
    wall_clock: float = 0.0

    def to_json(self) -> str:
        # wall-clock time is kept out of the metrics stream so reruns are byte-identical
        d = {k: v for k, v in asdict(self).items() if v is not None and k != "wall_clock"}
        return json.dumps(d, sort_keys=True)


class MetricsLog:
    """Append-only JSON-lines metrics, with wall-clock times in a sidecar file."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.records: list[MetricsRecord] = []
        self.path = Path(path) if path else None
        self.t0 = time.perf_counter()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")
            self.timing_path = self.path.with_name(self.path.stem + ".timings.jsonl")
            self.timing_path.write_text("")

    def add(self, rec: MetricsRecord) -> MetricsRecord:
        rec.wall_clock = time.perf_counter() - self.t0
        self.records.append(rec)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")
            with open(self.timing_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"step": rec.step, "split": rec.split, "wall_clock": rec.wall_clock}) + "\n")
        return rec


def _jsonable_sampler(cfg) -> dict | None:
    return None if cfg is None else asdict(cfg)


# --- pretraining ----------------------------------------------------------

class Pretrainer:
    """Holds the model, the data views and the RNG streams of one pretraining run."""

    def __init__(self, db: Database, bcfg: BackboneConfig, cfg: PretrainConfig):
        self.db = db
        self.bcfg = bcfg
        self.cfg = cfg
        self.graph = build_graph(db)
        self.encoders = AttributeEncoders.fit(db, bcfg.attr_dim, bcfg.text_buckets)
        self.model = BackboneModel(db.schema, self.encoders, bcfg, seed=cfg.seed)
        self.ctr = ContrastiveParams(self.model.node_types, self.model.edge_types, bcfg.hidden_dim, seed=cfg.seed + 1)
        self.store = FeatureStore(db, self.encoders)
        self.marginals = {t.name: table_marginals(db, t.name) for t in db.schema.tables}
        self.sampler = cfg.sampler or HgSamplerConfig(seed_type=pick_seed_type(db.schema), rng_seed=cfg.seed)
        train_ss, val_ss = np.random.SeedSequence(cfg.seed).spawn(2)
        self.train_rng = np.random.default_rng(train_ss)
        self.val_rng = np.random.default_rng(val_ss)
        self.adam = AdamState(lr=cfg.lr)

    def parameters(self) -> list[Parameter]:
        return self.model.parameters() + self.ctr.parameters()

    def corrupted_features(self, sg: Subgraph, rng):
        feats = {}
        for t, idx in sg.nodes.items():
            tschema = self.db.schema.table(t)
            rows = [self.db.tables[t][i] for i in idx.tolist()]
            crow = corrupt_rows(rows, tschema, self.marginals[t], self.cfg.corruption, rng)
            feats[t] = self.encoders.featurize(tschema, crow)
        return feats

    def sample_loss(self, rng) -> Tensor:
        sg = hg_sample(self.graph, self.sampler, rng)
        h = self.model.forward(sg, self.store.gather(sg.nodes))
        hc = self.model.forward(sg, self.corrupted_features(sg, rng))
        return combined_loss(sg, h, hc, self.ctr, self.cfg.negatives, rng)

    def step(self) -> float:
        loss = self.sample_loss(self.train_rng)
        if loss.requires_grad:
            params = self.parameters()
            grads = ad.backward(loss, params)
            ad.adam_step(params, grads, self.adam)
        return loss.item()

    def validate(self) -> float:
        self.model.eval()
        try:
            with ad.no_grad():
                vals = [self.sample_loss(self.val_rng).item() for _ in range(self.cfg.val_samples)]
        finally:
            self.model.train()
        return float(np.mean(vals))

    def snapshot(self) -> dict[str, np.ndarray]:
        out = self.model.state()
        out.update({p.name: p.data.copy() for p in self.ctr.parameters()})
        return out

    def restore(self, state: dict[str, np.ndarray]) -> None:
        self.model.load_state(state)
        for p in self.ctr.parameters():
            p.data[...] = state[p.name]


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    model: BackboneModel
    contrastive: ContrastiveParams
    records: list[MetricsRecord]
    initial_val: float
    best_val: float
    best_step: int
    steps_run: int
    stopped: str


def pretrain(db: Database, bcfg: BackboneConfig, cfg: PretrainConfig,
             metrics_path=None) -> PretrainResult:
    """Optimize the combined contrastive loss with early stopping on fresh validation samples.

    The database should already be pruned to the pretraining cutoff. The
    returned model and checkpoint hold the best-validation parameters.
    """
    run = Pretrainer(db, bcfg, cfg)
    mlog = MetricsLog(metrics_path)
    t_start = time.perf_counter()

    best = run.validate()
    initial = best
    mlog.add(MetricsRecord(0, "val", loss=best))
    best_state, best_step, bad = run.snapshot(), 0, 0
    stopped, step = "max_steps", 0
    for step in range(1, cfg.max_steps + 1):
        loss = run.step()
        mlog.add(MetricsRecord(step, "train", loss=loss))
        over_time = cfg.time_limit_seconds is not None and time.perf_counter() - t_start > cfg.time_limit_seconds
        if step % cfg.val_every == 0 or step == cfg.max_steps or over_time:
            v = run.validate()
            mlog.add(MetricsRecord(step, "val", loss=v))
            if v < best:
                best, best_state, best_step, bad = v, run.snapshot(), step, 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    stopped = "early_stopping"
                    break
        if over_time:
            stopped = "time_limit"
            log.warning("%s", TimeLimitExceeded(f"pretraining stopped after {step} steps"))
            break
    run.restore(best_state)
    manifest = {
        "kind": "pretrain",
        "config_hash": bcfg.digest(),
        "backbone_config": bcfg.to_dict(),
        "encoders": run.encoders.to_dict(),
        "step": best_step,
        "steps_run": step,
        "rng_state": run.train_rng.bit_generator.state,
        "pretrain_config": {
            "lr": cfg.lr, "max_steps": cfg.max_steps, "val_every": cfg.val_every, "patience": cfg.patience,
            "val_samples": cfg.val_samples, "sampler": _jsonable_sampler(run.sampler),
            "corruption": asdict(cfg.corruption), "negatives": asdict(cfg.negatives), "seed": cfg.seed,
        },
        "best_val": best,
        "initial_val": initial,
        "stopped": stopped,
    }
    ckpt = Checkpoint(best_state, manifest)
    return PretrainResult(ckpt, run.model, run.ctr, mlog.records, initial, best, best_step, step, stopped)


def backbone_from_checkpoint(ckpt: Checkpoint, db: Database, bcfg: BackboneConfig) -> BackboneModel:
    if ckpt.config_hash != bcfg.digest():
        raise VersionMismatch(
            f"checkpoint was trained with backbone config {ckpt.manifest.get('backbone_config')}, "
            f"requested {bcfg.to_dict()}"
        )
    enc = AttributeEncoders.from_dict(ckpt.manifest["encoders"])
    model = BackboneModel(db.schema, enc, bcfg)
    model.load_state(ckpt.tensors)
    return model


# --- task head ------------------------------------------------------------

class TaskHead:
    """``linear -> batch norm -> relu -> linear`` producing one logit/value per entity."""

    def __init__(self, in_dim: int, hidden: int = 128, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.params = {
            "head.w1": Parameter("head.w1", ad.glorot(rng, in_dim, hidden)),
            "head.b1": Parameter("head.b1", np.zeros(hidden)),
            "head.bn_gamma": Parameter("head.bn_gamma", np.ones(hidden)),
            "head.bn_beta": Parameter("head.bn_beta", np.zeros(hidden)),
            "head.w2": Parameter("head.w2", ad.glorot(rng, hidden, 1)),
            "head.b2": Parameter("head.b2", np.zeros(1)),
        }
        self.bn = BatchNormStats.create(hidden)
        self.training = True

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def __call__(self, x: Tensor) -> Tensor:
        p = self.params
        z = ad.add(ad.matmul(x, p["head.w1"]), p["head.b1"])
        z = ad.relu(ad.batch_norm_1d(z, p["head.bn_gamma"], p["head.bn_beta"], self.bn, self.training))
        out = ad.add(ad.matmul(z, p["head.w2"]), p["head.b2"])
        return ad.reshape(out, (x.shape[0],))

    def state(self) -> dict[str, np.ndarray]:
        out = {k: p.data.copy() for k, p in self.params.items()}
        out["head.bn.running_mean"] = self.bn.running_mean.copy()
        out["head.bn.running_var"] = self.bn.running_var.copy()
        return out

    def load_state(self, state) -> None:
        for k, p in self.params.items():
            p.data[...] = state[k]
        self.bn.running_mean = state["head.bn.running_mean"].copy()
        self.bn.running_var = state["head.bn.running_var"].copy()


# --- fine-tuning ----------------------------------------------------------

def assert_temporal_safety(g: HeteroGraph, sg: Subgraph, cutoffs) -> None:
    """Raise if any non-seed node of a timestamped table is newer than its seed's cutoff."""
    if cutoffs is None:
        return
    cutoffs = np.asarray(cutoffs, dtype=np.int64)
    seed_local = {(s.node_type, s.index) for s in sg.seeds}
    for t, idx in sg.nodes.items():
        ts = g.times[t]
        if ts is None or not len(idx):
            continue
        bad = ts[idx] > cutoffs[sg.tree[t]]
        for i in np.flatnonzero(bad):
            if (t, int(i)) not in seed_local:
                raise AssertionError(f"temporal leak: {t} row {idx[i]} is newer than its seed's cutoff")


class FinetuneRun:
    def __init__(self, db: Database, task: TaskTable, init: Checkpoint | None,
                 bcfg: BackboneConfig, cfg: FinetuneConfig):
        if cfg.regime == BASELINE and init is not None:
            raise RegimeMismatch("baseline regime trains from scratch; do not pass a checkpoint")
        if cfg.regime in (FROZEN, FINETUNE) and init is None:
            raise RegimeMismatch(f"regime {cfg.regime!r} needs a pretrained checkpoint")
        self.db, self.task, self.bcfg, self.cfg = db, task, bcfg, cfg
        if init is None:
            fit_db = db
            train_rows = task.rows("train")
            if task.timestamps is not None and len(train_rows):
                fit_db = temporal_prune(db, int(task.timestamps[train_rows].max()))
            enc = AttributeEncoders.fit(fit_db, bcfg.attr_dim, bcfg.text_buckets)
            self.model = BackboneModel(db.schema, enc, bcfg, seed=cfg.seed)
        else:
            self.model = backbone_from_checkpoint(init, db, bcfg)
        if cfg.regime == FROZEN:
            self.model.set_trainable(False)
            self.model.eval()
        self.head = TaskHead(bcfg.hidden_dim, cfg.head_hidden, seed=cfg.seed + 7)
        self.graph = build_graph(db)
        self.store = FeatureStore(db, self.model.encoders)
        self.entities = task.entity_index(db)
        self.sampler = cfg.sampler or NeighborSamplerConfig(fanout=128, depth=bcfg.num_layers, rng_seed=cfg.seed)
        train = task.rows("train")
        if task.label_kind == "regression":
            self.y_mean = float(task.labels[train].mean())
            std = float(task.labels[train].std())
            self.y_std = std if std > 0 else 1.0
        else:
            self.y_mean, self.y_std = 0.0, 1.0
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        self.adam = AdamState(lr=cfg.lr)

    def trainable(self) -> list[Parameter]:
        return [p for p in self.model.parameters() + self.head.parameters() if p.trainable]

    def _embed(self, rows: np.ndarray, rng) -> Tensor:
        et = self.task.entity_table
        seeds = [NodeId(et, int(i)) for i in self.entities[rows]]
        cutoffs = None if self.task.timestamps is None else self.task.timestamps[rows].tolist()
        sg = neighbor_sample(self.graph, seeds, self.sampler, cutoffs, rng)
        assert_temporal_safety(self.graph, sg, cutoffs)
        h = self.model.forward(sg, self.store.gather(sg.nodes))
        return ad.take_rows(h[et], [s.index for s in sg.seeds])

    def step(self) -> float:
        train = self.task.rows("train")
        rows = self.rng.choice(train, size=min(self.cfg.batch_size, len(train)), replace=False)
        out = self.head(self._embed(rows, self.rng))
        y = self.task.labels[rows]
        if self.task.label_kind == "binary":
            loss = ad.bce_with_logits(out, y)
        else:
            loss = ad.mse(out, (y - self.y_mean) / self.y_std)
        params = self.trainable()
        grads = ad.backward(loss, params)
        ad.adam_step(params, grads, self.adam)
        return loss.item()

    def predict(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        """Scores (probabilities or de-normalized values) and labels for one split."""
        rows = self.task.rows(split)
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 2]))
        was_training = self.model.training
        self.model.eval()
        self.head.training = False
        outs = []
        try:
            with ad.no_grad():
                for k in range(0, len(rows), self.cfg.eval_batch_size):
                    batch = rows[k:k + self.cfg.eval_batch_size]
                    outs.append(self.head(self._embed(batch, rng)).data)
        finally:
            self.model.train(was_training)
            self.head.training = True
        raw = np.concatenate(outs) if outs else np.zeros(0)
        if self.task.label_kind == "binary":
            scores = ad.sigmoid(Tensor(raw)).data
        else:
            scores = raw * self.y_std + self.y_mean
        return scores, self.task.labels[rows]

    def metric(self, split: str) -> float:
        scores, labels = self.predict(split)
        return auc_roc(scores, labels) if self.task.label_kind == "binary" else mae(scores, labels)

    def better(self, a: float, b: float) -> bool:
        return a > b if self.task.label_kind == "binary" else a < b

    def state(self) -> dict[str, np.ndarray]:
        out = self.model.state()
        out.update(self.head.state())
        return out

    def load_state(self, state) -> None:
        self.model.load_state(state)
        self.head.load_state(state)

    def checkpoint(self, state, step: int, metric: float) -> Checkpoint:
        return Checkpoint(state, {
            "kind": "finetune",
            "config_hash": self.bcfg.digest(),
            "backbone_config": self.bcfg.to_dict(),
            "encoders": self.model.encoders.to_dict(),
            "task": self.task.name,
            "regime": self.cfg.regime,
            "head_hidden": self.cfg.head_hidden,
            "label_mean": self.y_mean,
            "label_std": self.y_std,
            "step": step,
            "best_val_metric": metric,
            "rng_state": self.rng.bit_generator.state,
        })


@dataclass
class FinetuneResult:
    run: FinetuneRun
    records: list[MetricsRecord]
    best_metric: float
    best_step: int
    steps_run: int
    checkpoint: Checkpoint


def finetune(db: Database, task: TaskTable, init: Checkpoint | None, bcfg: BackboneConfig,
             cfg: FinetuneConfig, metrics_path=None) -> FinetuneResult:
    """Train a task head (and, unless frozen, the backbone); keep the best validation snapshot."""
    run = FinetuneRun(db, task, init, bcfg, cfg)
    mlog = MetricsLog(metrics_path)
    key = "auc_roc" if task.label_kind == "binary" else "mae"
    t_start = time.perf_counter()
    best, best_state, best_step, bad = None, run.state(), 0, 0
    step = 0
    for step in range(1, cfg.max_steps + 1):
        loss = run.step()
        mlog.add(MetricsRecord(step, "train", loss=loss))
        over_time = cfg.time_limit_seconds is not None and time.perf_counter() - t_start > cfg.time_limit_seconds
        if step % cfg.val_every == 0 or step == cfg.max_steps or over_time:
            m = run.metric("val")
            mlog.add(MetricsRecord(step, "val", **{key: m}))
            if best is None or run.better(m, best):
                best, best_state, best_step, bad = m, run.state(), step, 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
        if over_time:
            log.warning("%s", TimeLimitExceeded(f"fine-tuning stopped after {step} steps"))
            break
    run.load_state(best_state)
    return FinetuneResult(run, mlog.records, best, best_step, step, run.checkpoint(best_state, best_step, best))


def run_from_checkpoint(db: Database, task: TaskTable, ckpt: Checkpoint, cfg: FinetuneConfig) -> FinetuneRun:
    """Rebuild a fine-tuned model (backbone + head) for evaluation."""
    if ckpt.manifest.get("kind") != "finetune":
        raise VersionMismatch("evaluation needs a fine-tuned checkpoint")
    bcfg = BackboneConfig(**ckpt.manifest["backbone_config"])
    cfg = replace(cfg, head_hidden=int(ckpt.manifest["head_hidden"]), regime=FINETUNE)
    run = FinetuneRun(db, task, Checkpoint(ckpt.tensors, {**ckpt.manifest, "kind": "pretrain"}), bcfg, cfg)
    run.load_state(ckpt.tensors)
    run.y_mean = float(ckpt.manifest["label_mean"])
    run.y_std = float(ckpt.manifest["label_std"])
    return run
