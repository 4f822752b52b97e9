"""Seeded synthetic relational database with a planted relational signal.

Three tables: ``users``, ``items`` and ``events`` (events reference both).
Every user has a hidden taste; events pick items with probability that grows
with ``taste * quality``. Task labels depend on the average quality of the
items a user interacted with up to the task timestamp, so they can only be
recovered by looking through ``events`` into ``items``. A user's own columns
carry no signal.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .relational import (
    Attribute,
    Database,
    DatabaseSchema,
    SType,
    TableSchema,
    make_database,
    save_schema,
    write_database,
)

DAY = 86400
T0 = 1_577_836_800  # 2020-01-01T00:00:00Z
_WORDS = ("red blue green fast slow bright dark small large vintage modern classic "
          "soft hard light heavy smart simple deluxe basic").split()
_TAGS = ("a", "b", "c", "d", "e", "f")

_PREFIX = {
    SType.NUMERICAL: "num",
    SType.CATEGORICAL: "cat",
    SType.MULTI_CATEGORICAL: "tags",
    SType.TEXT: "text",
    SType.TIMESTAMP: "ts",
}

DEFAULT_COLUMNS = {
    "users": {"numerical": 1, "categorical": 1, "timestamp": 1},
    "items": {"numerical": 1, "categorical": 1, "multi_categorical": 1, "text": 1},
    "events": {"numerical": 1, "categorical": 1},
}


@dataclass
class SynthConfig:
    rng_seed: int = 0
    n_users: int = 200
    n_items: int = 100
    n_events: int = 2000
    columns: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_COLUMNS.items()})
    signal_strength: float = 1.0
    null_rate: float = 0.05
    days: int = 365
    affinity: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if not 0.0 <= self.null_rate < 1.0:
            raise ValueError("null_rate must lie in [0, 1)")

    @property
    def split_times(self) -> dict[str, int]:
        span = self.days * DAY
        return {"train": T0 + int(0.6 * span), "val": T0 + int(0.8 * span), "test": T0 + span}


@dataclass
class TaskSpec:
    name: str
    file: str
    entity_table: str
    label_kind: str  # "binary" | "regression"


def synth_schema(cfg: SynthConfig) -> DatabaseSchema:
    def cols(table):
        out = []
        for stype, count in cfg.columns.get(table, {}).items():
            st = SType(stype)
            for k in range(count):
                out.append(Attribute(f"{_PREFIX[st]}{k}", st, True))
        return out

    users = TableSchema("users", (Attribute("user_id", SType.PRIMARY_KEY, False), *cols("users")))
    items = TableSchema("items", (
        Attribute("item_id", SType.PRIMARY_KEY, False),
        Attribute("quality", SType.NUMERICAL, False),
        *cols("items"),
    ))
    events = TableSchema("events", (
        Attribute("event_id", SType.PRIMARY_KEY, False),
        Attribute("user_id", SType.FOREIGN_KEY, False, "users"),
        Attribute("item_id", SType.FOREIGN_KEY, False, "items"),
        Attribute("time", SType.TIMESTAMP, False),
        *cols("events"),
    ), time_attribute="time")
    return DatabaseSchema((users, items, events))


def _noise_value(st: SType, rng: np.random.Generator, k: int):
    if st is SType.NUMERICAL:
        return float(np.round(rng.normal(10.0 * (k + 1), 3.0), 6))
    if st is SType.CATEGORICAL:
        return f"c{rng.integers(0, 5)}"
    if st is SType.MULTI_CATEGORICAL:
        n = int(rng.integers(1, 4))
        return frozenset(str(x) for x in rng.choice(_TAGS, size=n, replace=False))
    if st is SType.TEXT:
        n = int(rng.integers(2, 5))
        return " ".join(str(x) for x in rng.choice(_WORDS, size=n))
    if st is SType.TIMESTAMP:
        return int(T0 - int(rng.integers(0, 1000)) * DAY)
    raise ValueError(st)


def _fill(table: TableSchema, fixed: dict, rng: np.random.Generator, null_rate: float) -> tuple:
    row = []
    counters: dict[SType, int] = {}
    for a in table.attributes:
        if a.name in fixed:
            row.append(fixed[a.name])
            continue
        k = counters.get(a.stype, 0)
        counters[a.stype] = k + 1
        v = _noise_value(a.stype, rng, k)
        if rng.random() < null_rate:
            v = None
        row.append(v)
    return tuple(row)


@dataclass
class SynthData:
    db: Database
    tasks: dict[str, list[tuple]]  # task name -> rows (entity_key, label, timestamp, split)
    aggregates: dict[str, np.ndarray]  # split -> noiseless relational aggregate per user
    specs: list[TaskSpec]


def generate(cfg: SynthConfig) -> SynthData:
    rng = np.random.default_rng(cfg.rng_seed)
    schema = synth_schema(cfg)
    users_t, items_t, events_t = schema.tables

    quality = np.round(rng.normal(0.0, 1.0, cfg.n_items), 6)
    taste = rng.normal(0.0, 1.0, cfg.n_users)

    users = [_fill(users_t, {"user_id": f"u{i}"}, rng, cfg.null_rate) for i in range(cfg.n_users)]
    items = [_fill(items_t, {"item_id": f"i{j}", "quality": float(quality[j])}, rng, cfg.null_rate)
             for j in range(cfg.n_items)]

    ev_user = rng.integers(0, cfg.n_users, cfg.n_events)
    ev_time = np.sort(T0 + rng.integers(0, cfg.days * DAY, cfg.n_events))
    ev_item = np.empty(cfg.n_events, dtype=np.int64)
    for e in range(cfg.n_events):
        logits = cfg.affinity * taste[ev_user[e]] * quality
        p = np.exp(logits - logits.max())
        ev_item[e] = rng.choice(cfg.n_items, p=p / p.sum())
    events = [
        _fill(events_t, {"event_id": f"e{e}", "user_id": f"u{ev_user[e]}", "item_id": f"i{ev_item[e]}",
                         "time": int(ev_time[e])}, rng, cfg.null_rate)
        for e in range(cfg.n_events)
    ]
    db = make_database(schema, {"users": users, "items": items, "events": events})

    binary, regression, aggregates = [], [], {}
    noise = {s: rng.normal(0.0, 1.0, cfg.n_users) for s in cfg.split_times}
    s = cfg.signal_strength
    threshold = None
    for split, ts in cfg.split_times.items():
        visible = ev_time <= ts
        sums = np.bincount(ev_user[visible], weights=quality[ev_item[visible]], minlength=cfg.n_users)
        counts = np.bincount(ev_user[visible], minlength=cfg.n_users)
        agg = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        aggregates[split] = agg
        score = s * agg + (1.0 - s) * noise[split]
        if threshold is None:
            threshold = float(np.median(score))
        for i in range(cfg.n_users):
            binary.append((f"u{i}", int(score[i] > threshold), int(ts), split))
            regression.append((f"u{i}", float(np.round(5.0 + 3.0 * score[i], 6)), int(ts), split))
    specs = [
        TaskSpec("user-label", "task_user_label.csv", "users", "binary"),
        TaskSpec("user-score", "task_user_score.csv", "users", "regression"),
    ]
    return SynthData(db, {"user-label": binary, "user-score": regression}, aggregates, specs)


def write_task_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity_key", "label", "timestamp", "split"])
        for key, label, ts, split in rows:
            w.writerow([key, repr(label) if isinstance(label, float) else label, ts, split])


def gen_synth_db(cfg: SynthConfig, out_dir: str | os.PathLike) -> SynthData:
    """Write ``schema.json``, one CSV per table, task CSVs and ``tasks.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(cfg)
    save_schema(data.db.schema, out / "schema.json")
    write_database(data.db, out)
    for spec in data.specs:
        write_task_csv(data.tasks[spec.name], out / spec.file)
    meta = {
        "tasks": {sp.name: {"file": sp.file, "entity_table": sp.entity_table, "label_kind": sp.label_kind}
                  for sp in data.specs},
        "split_times": cfg.split_times,
        "synth_config": asdict(cfg),
    }
    (out / "tasks.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return data
