"""The asymmetric GNN: paired outgoing/incoming stacks, fusion, and heads."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from agnn import linalg
from agnn.autodiff import Tape, Variable
from agnn.errors import ConfigError, DimensionError, InputError
from agnn.graph import PropagationOperators
from agnn.linalg import SparseMatrix, Tensor

FUSIONS = ("sum", "max", "mean", "concat")
MODES = ("directed", "undirected")
HEADS = ("node", "graph")
CHECKPOINT_VERSION = 1


@dataclass
class LayerParams:
    W1: Variable
    W2: Variable

    def __post_init__(self):
        if self.W1.shape != self.W2.shape:
            raise DimensionError(f"W1 {self.W1.shape} and W2 {self.W2.shape} differ")


@dataclass
class LayerActivation:
    S: Variable
    R: Variable
    agg_out: Variable
    agg_in: Variable


@dataclass
class GraphReadout:
    """FC over [R || S], sum pooling, then a linear map to one output."""

    fc_W: Variable
    fc_b: Variable
    out_W: Variable
    out_b: Variable


@dataclass
class AgnnModel:
    widths: list[int]
    layers: list[LayerParams]
    fusion: str = "sum"
    head: str = "node"
    mode: str = "directed"
    dropout_rate: float = 0.0
    projection: Variable | None = None
    readout: GraphReadout | None = None

    @property
    def tied(self) -> bool:
        return self.mode == "undirected"

    @property
    def num_classes(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[Variable]:
        """Trainable leaves in a fixed order, tied weights listed once."""
        params, seen = [], set()
        candidates = [w for layer in self.layers for w in (layer.W1, layer.W2)]
        if self.projection is not None:
            candidates.append(self.projection)
        if self.readout is not None:
            r = self.readout
            candidates += [r.fc_W, r.fc_b, r.out_W, r.out_b]
        for p in candidates:
            if id(p) not in seen:
                seen.add(id(p))
                params.append(p)
        return params

    def get_weights(self) -> list[Tensor]:
        return [p.value.copy() for p in self.parameters()]

    def set_weights(self, values: list[Tensor]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise DimensionError(f"{len(values)} arrays for {len(params)} parameters")
        for p, v in zip(params, values):
            if p.shape != v.shape:
                raise DimensionError(f"{p.name}: {v.shape} vs {p.shape}")
            p.value = np.array(v, dtype=np.float64)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Variable:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Variable(rng.uniform(-limit, limit, size=(fan_in, fan_out)), trainable=True, name=name)


def _bias(width: int, name: str) -> Variable:
    return Variable(np.zeros((1, width)), trainable=True, name=name)


def init_weights(
    widths,
    seed: int,
    *,
    fusion: str = "sum",
    head: str = "node",
    mode: str = "directed",
    dropout_rate: float = 0.0,
    readout_width: int | None = None,
) -> AgnnModel:
    """Draw a model with Glorot-uniform weights from ``seed``.

    ``widths`` lists the feature dimension followed by each layer's output
    width, so ``[4, 8, 3]`` makes two layers (4x8, 8x3).
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ConfigError("widths needs the input width and at least one layer")
    if any(w <= 0 for w in widths):
        raise ConfigError(f"widths must be positive, got {widths}")
    if fusion not in FUSIONS:
        raise ConfigError(f"unknown fusion {fusion!r}; choose from {FUSIONS}")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {MODES}")
    if head not in HEADS:
        raise ConfigError(f"unknown head {head!r}; choose from {HEADS}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {dropout_rate}")

    rng = np.random.default_rng(seed)
    layers = []
    for l, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:]), start=1):
        W1 = _glorot(rng, d_in, d_out, f"W1_{l}")
        if mode == "undirected":
            W2 = W1
        else:
            W2 = _glorot(rng, d_in, d_out, f"W2_{l}")
        layers.append(LayerParams(W1, W2))

    model = AgnnModel(widths, layers, fusion, head, mode, dropout_rate)
    d = widths[-1]
    if head == "node" and fusion == "concat":
        model.projection = _glorot(rng, 2 * d, d, "proj")
    if head == "graph":
        r = readout_width or d
        model.readout = GraphReadout(
            fc_W=_glorot(rng, 2 * d, r, "fc_W"),
            fc_b=_bias(r, "fc_b"),
            out_W=_glorot(rng, r, 1, "out_W"),
            out_b=_bias(1, "out_b"),
        )
    return model


def forward_layers(
    model: AgnnModel,
    ops: PropagationOperators,
    X,
    tape: Tape,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> list[LayerActivation]:
    x = X if isinstance(X, Variable) else tape.constant(X, name="X")
    if x.shape[1] != model.widths[0]:
        raise DimensionError(f"features have width {x.shape[1]}, model expects {model.widths[0]}")
    if x.shape[0] != ops.A_tilde.rows:
        raise DimensionError(f"{x.shape[0]} feature rows for {ops.A_tilde.rows} nodes")
    use_dropout = training and model.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ConfigError("training with dropout needs a random generator")

    S, R = x, x
    acts = []
    last = len(model.layers) - 1
    for l, layer in enumerate(model.layers):
        s_in, r_in = S, R
        if use_dropout:
            s_in = tape.record("dropout", S, rate=model.dropout_rate, rng=rng)
            r_in = tape.record("dropout", R, rate=model.dropout_rate, rng=rng)
        # (A S) W evaluated as A (S W): identical product, cheaper when d_in > d_out
        agg_out = tape.record("spmm", tape.record("matmul", s_in, layer.W1), sparse=ops.A_tilde)
        agg_in = tape.record("spmm", tape.record("matmul", r_in, layer.W2), sparse=ops.A_hat)
        if l < last:
            S = tape.record("relu", agg_out)
            R = tape.record("relu", agg_in)
        else:
            S, R = agg_out, agg_in
        acts.append(LayerActivation(S, R, agg_out, agg_in))
    return acts


def forward(model, ops, X, tape, training=False, rng=None) -> tuple[Variable, Variable]:
    """Final-layer (S, R): outgoing and incoming embeddings, one row per node."""
    act = forward_layers(model, ops, X, tape, training, rng)[-1]
    return act.S, act.R


def fuse(S: Variable, R: Variable, fusion: str, tape: Tape) -> Variable:
    if S.shape != R.shape:
        raise DimensionError(f"S {S.shape} vs R {R.shape}")
    if fusion == "sum":
        return tape.record("add", R, S)
    if fusion == "mean":
        return tape.record("scale", tape.record("add", R, S), factor=0.5)
    if fusion == "max":
        return tape.record("maximum", S, R)
    if fusion == "concat":
        return tape.record("concat", R, S, axis=1)
    raise ConfigError(f"unknown fusion {fusion!r}")


def node_logits(model: AgnnModel, S: Variable, R: Variable, tape: Tape) -> Variable:
    fused = fuse(S, R, model.fusion, tape)
    if model.projection is not None:
        fused = tape.record("matmul", fused, model.projection)
    return fused


def node_head(fused, num_classes: int) -> Tensor:
    """Class probabilities per node."""
    value = fused.value if isinstance(fused, Variable) else linalg.as_tensor(fused)
    if value.shape[1] != num_classes:
        raise ConfigError(f"head width {value.shape[1]} != {num_classes} classes")
    return linalg.row_softmax(value)


def pooling_matrix(owner: np.ndarray, num_graphs: int) -> SparseMatrix:
    """Sum-pooling operator: row g has a 1 for each node belonging to graph g."""
    owner = np.asarray(owner, dtype=np.int64)
    return SparseMatrix.from_coo(num_graphs, len(owner), owner, np.arange(len(owner)), np.ones(len(owner)))


def graph_embedding(readout: GraphReadout, S: Variable, R: Variable, pool: SparseMatrix, tape: Tape) -> Variable:
    """Sum-pooled FC([R || S]); one row per graph."""
    cat = tape.record("concat", R, S, axis=1)
    if cat.shape[1] != readout.fc_W.shape[0]:
        raise DimensionError(f"readout expects width {readout.fc_W.shape[0]}, got {cat.shape[1]}")
    Z = tape.record("add", tape.record("matmul", cat, readout.fc_W), readout.fc_b)
    return tape.record("spmm", Z, sparse=pool)


def graph_head(readout: GraphReadout, S: Variable, R: Variable, pool: SparseMatrix, tape: Tape) -> Variable:
    ZG = graph_embedding(readout, S, R, pool, tape)
    return tape.record("add", tape.record("matmul", ZG, readout.out_W), readout.out_b)


def predict_proba(model: AgnnModel, ops: PropagationOperators, X) -> Tensor:
    tape = Tape()
    S, R = forward(model, ops, X, tape)
    return node_head(node_logits(model, S, R, tape), model.num_classes)


def save_checkpoint(model: AgnnModel, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "widths": model.widths,
        "fusion": model.fusion,
        "head": model.head,
        "mode": model.mode,
        "dropout_rate": model.dropout_rate,
        "readout_width": model.readout.fc_W.shape[1] if model.readout else None,
        "names": [p.name for p in model.parameters()],
    }
    arrays = {f"p{i}": p.value for i, p in enumerate(model.parameters())}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> AgnnModel:
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise InputError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        model = init_weights(
            meta["widths"], 0,
            fusion=meta["fusion"], head=meta["head"], mode=meta["mode"],
            dropout_rate=meta["dropout_rate"], readout_width=meta["readout_width"],
        )
        names = [p.name for p in model.parameters()]
        if names != meta["names"]:
            raise InputError(f"{path}: parameter layout mismatch")
        model.set_weights([data[f"p{i}"] for i in range(len(names))])
    return model
