"""RDL backbone: attribute encoders -> table encoder -> heterogeneous SAGE layers."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormStats, Parameter, Tensor
from .encoders import AttributeEncoders, TableFeatures
from .errors import ShapeMismatch
from .graph import EdgeType, NodeType, schema_graph
from .relational import Database, DatabaseSchema
from .sampler import Subgraph

AGGREGATIONS = ("sum", "mean")
TABLE_ENCODERS = ("linear", "resnet")


@dataclass(frozen=True)
class BackboneConfig:
    hidden_dim: int = 128
    num_layers: int = 2
    aggregation: str = "mean"
    table_encoder: str = "linear"
    resnet_blocks: int = 2
    attr_dim: int = 32
    text_buckets: int = 2048

    def __post_init__(self):
        if self.hidden_dim <= 0 or self.num_layers < 1 or self.attr_dim <= 0:
            raise ValueError("hidden_dim, attr_dim and num_layers must be positive")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.table_encoder not in TABLE_ENCODERS:
            raise ValueError(f"table_encoder must be one of {TABLE_ENCODERS}")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


# --- stage 2: table encoders ----------------------------------------------

def table_linear(attrs: Sequence[Tensor], w: Parameter | None, b: Parameter, n: int) -> Tensor:
    """``concat(attribute embeddings) @ w + b``; tables without features get ``b`` alone."""
    if not attrs:
        return ad.matmul(np.ones((n, 1)), ad.reshape(b, (1, b.shape[0])))
    x = ad.concat(attrs, axis=1) if len(attrs) > 1 else attrs[0]
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"table_linear: input width {x.shape[1]} vs weight {w.shape}")
    return ad.add(ad.matmul(x, w), b)


def table_resnet(attrs: Sequence[Tensor], params: dict[str, Parameter], bns: list[BatchNormStats],
                 prefix: str, n: int, training: bool) -> Tensor:
    """Stem linear, then residual blocks ``h + linear(relu(batch_norm(h)))``."""
    h = table_linear(attrs, params.get(prefix + ".w"), params[prefix + ".b"], n)
    if n == 0:
        return h
    for k, stats in enumerate(bns):
        bp = f"{prefix}.block{k}"
        y = ad.batch_norm_1d(h, params[bp + ".bn_gamma"], params[bp + ".bn_beta"], stats, training)
        y = ad.relu(y)
        y = ad.add(ad.matmul(y, params[bp + ".w"]), params[bp + ".b"])
        h = ad.add(h, y)
    return h


# --- stage 3: message passing ---------------------------------------------

def sage_layer(
    sg: Subgraph,
    h: dict[NodeType, Tensor],
    msg_weights: dict[EdgeType, Parameter],
    update_weights: dict[NodeType, Parameter],
    aggregation: str,
) -> dict[NodeType, Tensor]:
    """One heterogeneous GraphSAGE layer.

    Messages ``h_u @ W_et`` flow along each edge ``(u, v)``; every node sums
    (or averages) its incoming messages over all edge types, and updates to
    ``relu(concat(h_v, M_v) @ U_type)``. Nodes without messages use ``M_v = 0``.
    """
    out = {}
    for t, ht in h.items():
        n = ht.shape[0]
        d = ht.shape[1]
        msgs = None
        deg = np.zeros(n)
        for et, (src, dst) in sg.edges.items():
            if et.target_type != t or not len(src):
                continue
            m = ad.take_rows(ad.matmul(h[et.source_type], msg_weights[et]), src)
            m = ad.segment_sum(m, dst, n)
            msgs = m if msgs is None else ad.add(msgs, m)
            deg += np.bincount(dst, minlength=n)
        if msgs is None:
            msgs = Tensor(np.zeros((n, d)))
        elif aggregation == "mean":
            msgs = ad.scale_rows(msgs, 1.0 / np.maximum(deg, 1.0))
        out[t] = ad.relu(ad.matmul(ad.concat([ht, msgs], axis=1), update_weights[t]))
    return out


class BackboneModel:
    """Parameter container and forward pass for stages 1-3."""

    def __init__(self, schema: DatabaseSchema, encoders: AttributeEncoders, cfg: BackboneConfig, seed: int = 0):
        self.schema = schema
        self.encoders = encoders
        self.cfg = cfg
        self.node_types, self.edge_types = schema_graph(schema)
        self.training = True
        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = dict(encoders.init_params(schema, rng))
        self.bn: dict[str, BatchNormStats] = {}
        H = cfg.hidden_dim
        for t in schema.tables:
            width = len(t.feature_attributes) * cfg.attr_dim
            pre = f"table.{t.name}"
            if width:
                self._add(pre + ".w", ad.glorot(rng, width, H))
            self._add(pre + ".b", np.zeros(H))
            if cfg.table_encoder == "resnet":
                for k in range(cfg.resnet_blocks):
                    bp = f"{pre}.block{k}"
                    self._add(bp + ".bn_gamma", np.ones(H))
                    self._add(bp + ".bn_beta", np.zeros(H))
                    self._add(bp + ".w", ad.glorot(rng, H, H))
                    self._add(bp + ".b", np.zeros(H))
                    self.bn[bp] = BatchNormStats.create(H)
        for layer in range(cfg.num_layers):
            for et in self.edge_types:
                self._add(f"sage{layer}.msg.{et.name}", ad.glorot(rng, H, H))
            for t in self.node_types:
                self._add(f"sage{layer}.upd.{t}", ad.glorot(rng, 2 * H, H))

    def _add(self, name, data):
        self.params[name] = Parameter(name, data)

    # --- bookkeeping ------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def train(self, flag: bool = True) -> "BackboneModel":
        self.training = flag
        return self

    def eval(self) -> "BackboneModel":
        return self.train(False)

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.set_trainable(flag)

    def state(self) -> dict[str, np.ndarray]:
        """Copies of all parameters and batch-norm buffers."""
        out = {name: p.data.copy() for name, p in self.params.items()}
        for name, s in self.bn.items():
            out[f"{name}.running_mean"] = s.running_mean.copy()
            out[f"{name}.running_var"] = s.running_var.copy()
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: stored {state[name].shape}, model {p.shape}")
            p.data[...] = state[name]
        for name, s in self.bn.items():
            s.running_mean = state[f"{name}.running_mean"].copy()
            s.running_var = state[f"{name}.running_var"].copy()

    # --- forward ----------------------------------------------------------

    def encode_table(self, t: NodeType, feats: TableFeatures) -> Tensor:
        tschema = self.schema.table(t)
        attrs = self.encoders.embed(tschema, feats)
        pre = f"table.{t}"
        if self.cfg.table_encoder == "linear":
            return table_linear(attrs, self.params.get(pre + ".w"), self.params[pre + ".b"], feats.n)
        bns = [self.bn[f"{pre}.block{k}"] for k in range(self.cfg.resnet_blocks)]
        return table_resnet(attrs, self.params, bns, pre, feats.n, self.training)

    def layer_weights(self, layer: int):
        msg = {et: self.params[f"sage{layer}.msg.{et.name}"] for et in self.edge_types}
        upd = {t: self.params[f"sage{layer}.upd.{t}"] for t in self.node_types}
        return msg, upd

    def forward(self, sg: Subgraph, feats: dict[NodeType, TableFeatures]) -> dict[NodeType, Tensor]:
        """Final-layer embeddings for every subgraph node, keyed by type (local order)."""
        h = {}
        for t in self.node_types:
            n = sg.count(t)
            if n:
                h[t] = self.encode_table(t, feats[t])
            else:
                h[t] = Tensor(np.zeros((0, self.cfg.hidden_dim)))
        for layer in range(self.cfg.num_layers):
            msg, upd = self.layer_weights(layer)
            h = sage_layer(sg, h, msg, upd, self.cfg.aggregation)
        return h


def build_backbone(db: Database, cfg: BackboneConfig, seed: int = 0) -> BackboneModel:
    enc = AttributeEncoders.fit(db, cfg.attr_dim, cfg.text_buckets)
    return BackboneModel(db.schema, enc, cfg, seed)
