"""Multi-modal attribute encoders.

Encoding happens in two steps. :meth:`AttributeEncoders.featurize` turns raw
rows into constant numeric arrays using statistics fitted on training data
(z-scores, vocabulary indices, hashed token counts, cyclical time features).
:meth:`AttributeEncoders.embed` maps those arrays through learnable
parameters to one ``attr_dim`` vector per non-key attribute. Missing cells
take the attribute's learned null vector.
"""
from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import UnfittedEncoder
from .relational import Database, SType, TableSchema

_TOKEN = re.compile(r"[a-z0-9]+")
SECONDS_PER_DAY = 86400


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def token_bucket(token: str, buckets: int) -> int:
    # crc32 rather than hash(): stable across interpreter runs
    return zlib.crc32(token.encode("utf-8")) % buckets


def time_features(seconds: np.ndarray, mean: float, std: float) -> np.ndarray:
    """Day-of-week and day-of-year on the unit circle plus a z-scored linear term."""
    seconds = np.asarray(seconds, dtype=np.int64)
    days = seconds.astype("datetime64[s]").astype("datetime64[D]")
    dow = (days.astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday; Monday = 0
    doy = (days - days.astype("datetime64[Y]").astype("datetime64[D]")).astype(np.int64)
    a = 2 * np.pi * dow / 7.0
    b = 2 * np.pi * doy / 365.25
    lin = (seconds.astype(np.float64) - mean) / std
    return np.stack([np.sin(a), np.cos(a), np.sin(b), np.cos(b), lin], axis=1)


@dataclass
class ColumnStats:
    """Training-data statistics for one attribute."""

    stype: SType
    mean: float = 0.0
    std: float = 1.0
    vocab: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stype": self.stype.value, "mean": self.mean, "std": self.std, "vocab": list(self.vocab)}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnStats":
        return cls(SType(d["stype"]), float(d["mean"]), float(d["std"]), list(d["vocab"]))


@dataclass
class AttrFeatures:
    """Constant inputs for one attribute over a batch of rows."""

    stype: SType
    valid: np.ndarray            # bool, False where the cell is missing
    values: np.ndarray | sp.csr_matrix  # z-scores, indices, counts or time features

    def take(self, idx: np.ndarray) -> "AttrFeatures":
        return AttrFeatures(self.stype, self.valid[idx], self.values[idx])


@dataclass
class TableFeatures:
    table: str
    attrs: list[AttrFeatures]
    n: int

    def take(self, idx) -> "TableFeatures":
        idx = np.asarray(idx, dtype=np.int64)
        return TableFeatures(self.table, [a.take(idx) for a in self.attrs], len(idx))


class AttributeEncoders:
    """Fitted statistics plus learnable parameters for every non-key attribute."""

    def __init__(self, stats: dict[str, dict[str, ColumnStats]], attr_dim: int = 32, text_buckets: int = 2048):
        self.stats = stats
        self.attr_dim = attr_dim
        self.text_buckets = text_buckets
        self.params: dict[str, Parameter] = {}

    @classmethod
    def fit(cls, db: Database, attr_dim: int = 32, text_buckets: int = 2048) -> "AttributeEncoders":
        stats: dict[str, dict[str, ColumnStats]] = {}
        for t in db.schema.tables:
            tstats = {}
            for a in t.feature_attributes:
                col = [v for v in db.column(t.name, a.name) if v is not None]
                s = ColumnStats(a.stype)
                if a.stype in (SType.NUMERICAL, SType.TIMESTAMP) and col:
                    arr = np.asarray(col, dtype=np.float64)
                    s.mean = float(arr.mean())
                    std = float(arr.std())
                    s.std = std if std > 0 else 1.0
                elif a.stype is SType.CATEGORICAL:
                    s.vocab = list(dict.fromkeys(col))
                elif a.stype is SType.MULTI_CATEGORICAL:
                    s.vocab = list(dict.fromkeys(tok for v in col for tok in sorted(v)))
                tstats[a.name] = s
            stats[t.name] = tstats
        return cls(stats, attr_dim, text_buckets)

    # --- parameters -------------------------------------------------------

    def init_params(self, schema, rng: np.random.Generator) -> dict[str, Parameter]:
        d = self.attr_dim
        emb = np.sqrt(6.0 / (1 + d))
        params = {}
        for t in schema.tables:
            for a in t.feature_attributes:
                s = self.stats[t.name][a.name]
                pre = f"enc.{t.name}.{a.name}"
                if s.stype is SType.NUMERICAL:
                    params[pre + ".w"] = Parameter(pre + ".w", ad.glorot(rng, 1, d))
                    params[pre + ".b"] = Parameter(pre + ".b", np.zeros(d))
                elif s.stype is SType.TIMESTAMP:
                    params[pre + ".w"] = Parameter(pre + ".w", ad.glorot(rng, 5, d))
                    params[pre + ".b"] = Parameter(pre + ".b", np.zeros(d))
                elif s.stype in (SType.CATEGORICAL, SType.MULTI_CATEGORICAL):
                    # row 0 is the out-of-vocabulary slot
                    params[pre + ".emb"] = Parameter(pre + ".emb", rng.uniform(-emb, emb, (len(s.vocab) + 1, d)))
                elif s.stype is SType.TEXT:
                    params[pre + ".emb"] = Parameter(pre + ".emb", rng.uniform(-emb, emb, (self.text_buckets, d)))
                params[pre + ".null"] = Parameter(pre + ".null", rng.uniform(-emb, emb, d))
        self.params = params
        return params

    # --- featurization ----------------------------------------------------

    def featurize(self, table: TableSchema, rows: Sequence[tuple]) -> TableFeatures:
        if table.name not in self.stats:
            raise UnfittedEncoder(f"no statistics for table {table.name!r}")
        n = len(rows)
        feats = []
        for a in table.feature_attributes:
            s = self.stats[table.name].get(a.name)
            if s is None:
                raise UnfittedEncoder(f"no statistics for {table.name}.{a.name}")
            i = table.index(a.name)
            col = [r[i] for r in rows]
            valid = np.array([v is not None for v in col], dtype=bool)
            if s.stype is SType.NUMERICAL:
                z = np.array([(v - s.mean) / s.std if v is not None else 0.0 for v in col])
                feats.append(AttrFeatures(s.stype, valid, z))
            elif s.stype is SType.TIMESTAMP:
                raw = np.array([v if v is not None else 0 for v in col], dtype=np.int64)
                tf = time_features(raw, s.mean, s.std) if n else np.zeros((0, 5))
                tf[~valid] = 0.0
                feats.append(AttrFeatures(s.stype, valid, tf))
            elif s.stype is SType.CATEGORICAL:
                lookup = {v: k + 1 for k, v in enumerate(s.vocab)}
                idx = np.array([lookup.get(v, 0) if v is not None else 0 for v in col], dtype=np.int64)
                feats.append(AttrFeatures(s.stype, valid, idx))
            elif s.stype is SType.MULTI_CATEGORICAL:
                lookup = {v: k + 1 for k, v in enumerate(s.vocab)}
                r_, c_ = [], []
                for row, v in enumerate(col):
                    for tok in sorted(v or ()):
                        r_.append(row)
                        c_.append(lookup.get(tok, 0))
                m = sp.csr_matrix((np.ones(len(r_)), (r_, c_)), shape=(n, len(s.vocab) + 1))
                feats.append(AttrFeatures(s.stype, valid, m))
            elif s.stype is SType.TEXT:
                r_, c_, w_ = [], [], []
                for row, v in enumerate(col):
                    toks = tokenize(v) if v is not None else []
                    for tok in toks:
                        r_.append(row)
                        c_.append(token_bucket(tok, self.text_buckets))
                        w_.append(1.0 / len(toks))
                m = sp.csr_matrix((w_, (r_, c_)), shape=(n, self.text_buckets))
                feats.append(AttrFeatures(s.stype, valid, m))
        return TableFeatures(table.name, feats, n)

    # --- embedding --------------------------------------------------------

    def embed(self, table: TableSchema, feats: TableFeatures) -> list[Tensor]:
        """One ``(n, attr_dim)`` tensor per non-key attribute."""
        if not self.params:
            raise UnfittedEncoder("encoder parameters not initialised")
        out = []
        d = self.attr_dim
        for a, f in zip(table.feature_attributes, feats.attrs):
            pre = f"enc.{table.name}.{a.name}"
            p = self.params
            if f.stype is SType.NUMERICAL:
                x = ad.add(ad.matmul(f.values.reshape(-1, 1), p[pre + ".w"]), p[pre + ".b"])
            elif f.stype is SType.TIMESTAMP:
                x = ad.add(ad.matmul(f.values, p[pre + ".w"]), p[pre + ".b"])
            elif f.stype is SType.CATEGORICAL:
                x = ad.take_rows(p[pre + ".emb"], f.values)
            else:
                x = ad.sparse_matmul(f.values, p[pre + ".emb"])
            valid = f.valid.astype(np.float64)
            x = ad.scale_rows(x, valid)
            if not f.valid.all():
                missing = (1.0 - valid).reshape(-1, 1)
                x = ad.add(x, ad.matmul(missing, ad.reshape(p[pre + ".null"], (1, d))))
            out.append(x)
        return out

    def to_dict(self) -> dict:
        return {
            "attr_dim": self.attr_dim,
            "text_buckets": self.text_buckets,
            "stats": {t: {a: s.to_dict() for a, s in cols.items()} for t, cols in self.stats.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AttributeEncoders":
        stats = {t: {a: ColumnStats.from_dict(s) for a, s in cols.items()} for t, cols in d["stats"].items()}
        return cls(stats, int(d["attr_dim"]), int(d["text_buckets"]))


def encode_attributes(rows: Sequence[tuple], table: TableSchema, enc: AttributeEncoders) -> Tensor:
    """Attribute embedding tensor of shape ``(len(rows), n_features, attr_dim)``."""
    parts = enc.embed(table, enc.featurize(table, rows))
    if not parts:
        return Tensor(np.zeros((len(rows), 0, enc.attr_dim)))
    return ad.stack(parts, axis=1)


class FeatureStore:
    """Featurized copy of every table, so subgraph batches are row gathers."""

    def __init__(self, db: Database, enc: AttributeEncoders):
        self.db = db
        self.enc = enc
        self.tables = {t.name: enc.featurize(t, db.tables[t.name]) for t in db.schema.tables}

    def gather(self, nodes: dict[str, np.ndarray]) -> dict[str, TableFeatures]:
        return {t: self.tables[t].take(idx) for t, idx in nodes.items()}
