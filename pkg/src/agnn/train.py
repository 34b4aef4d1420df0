"""Optimization loop, splits, metrics, and repeated runs."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from agnn import graph as graph_mod
from agnn.autodiff import Tape, Variable
from agnn.data import GRAPH_TASK, DatasetBundle, GraphSet
from agnn.errors import ConfigError, ContractError, NonFiniteError
from agnn.graph import DirectedGraph, PropagationOperators
from agnn.linalg import Tensor
from agnn.loss import (
    LabelSet,
    cross_entropy,
    regression_loss,
    regularization_loss,
    regularization_loss_sampled,
    total_loss,
)
from agnn.model import (
    AgnnModel,
    forward,
    graph_head,
    init_weights,
    node_logits,
    pooling_matrix,
)

log = logging.getLogger(__name__)

REGULARIZERS = ("exact", "sampled", "off")


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    hidden: int = 64
    layers: int = 2
    max_epochs: int = 1000
    patience: int = 200  # 0 disables early stopping
    lam: float = 0.0
    seed: int = 0
    fusion: str = "sum"
    mode: str = "directed"
    symmetrize: bool = False
    regularizer: str = "exact"
    negatives: int = 5
    per_class: int = 20
    val_size: int = 500
    batch_size: int = 32

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.hidden <= 0 or self.layers <= 0:
            raise ConfigError("hidden width and layer count must be positive")
        if self.max_epochs <= 0:
            raise ConfigError("max_epochs must be positive")
        if self.patience < 0 or self.patience > self.max_epochs:
            raise ConfigError("patience must be in [0, max_epochs]")
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(f"regularizer must be one of {REGULARIZERS}")
        if self.batch_size <= 0 or self.negatives <= 0:
            raise ConfigError("batch size and negatives must be positive")

    @classmethod
    def for_regression(cls, **overrides) -> "TrainConfig":
        base = dict(lr=0.001, hidden=64, max_epochs=100, patience=0, dropout=0.5, weight_decay=0.0)
        base.update(overrides)
        return cls(**base)

    def as_dict(self) -> dict:
        return asdict(self)


def symmetrized_baseline(config: TrainConfig) -> TrainConfig:
    """Undirected GCN reference: symmetrized graph with tied weights."""
    return replace(config, mode="undirected", symmetrize=True)


@dataclass
class Split:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        sets = [set(self.train_idx.tolist()), set(self.val_idx.tolist()), set(self.test_idx.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ContractError("train, validation and test sets overlap")


def make_split(labels: LabelSet, per_class: int = 20, val_size: int = 500, seed: int = 0) -> Split:
    """``per_class`` training nodes per class, then ``val_size`` validation
    nodes from the rest; everything else is test."""
    rng = np.random.default_rng(seed)
    notes = []
    train = []
    for c, members in labels.by_class().items():
        take = per_class
        if len(members) < per_class:
            take = math.ceil(len(members) / 2)
            msg = f"class {c} has {len(members)} nodes (< {per_class}); training on {take}"
            log.warning(msg)
            notes.append(msg)
        train.append(rng.choice(members, size=take, replace=False))
    train_idx = np.sort(np.concatenate(train)) if train else np.empty(0, np.int64)
    rest = np.setdiff1d(labels.indices, train_idx)
    rest = rng.permutation(rest)
    n_val = min(val_size, len(rest))
    if n_val < val_size:
        notes.append(f"validation set shrunk to {n_val}")
    return Split(train_idx, np.sort(rest[:n_val]), np.sort(rest[n_val:]), notes)


class Adam:
    """Adam with weight decay added to the gradient (coupled, as in GCN baselines)."""

    def __init__(self, lr=0.01, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[int, Tensor] = {}
        self.v: dict[int, Tensor] = {}

    def step(self, params: list[Variable], grads: dict[Variable, Tensor]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in enumerate(params):
            g = grads.get(p)
            if g is None:
                g = np.zeros_like(p.value)
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            if k not in self.m:
                self.m[k] = np.zeros_like(p.value)
                self.v[k] = np.zeros_like(p.value)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(state: Adam, weights: list[Variable], grads, lr=None, weight_decay=None) -> list[Variable]:
    if lr is not None:
        state.lr = lr
    if weight_decay is not None:
        state.weight_decay = weight_decay
    state.step(weights, grads)
    return weights


@dataclass
class EpochRecord:
    epoch: int
    error: float
    reg: float
    total: float
    val_acc: float
    val_loss: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    model: AgnnModel
    history: list[EpochRecord]
    best_epoch: int
    best_val_acc: float


def accuracy(logits: Tensor, labels: LabelSet) -> float:
    if len(labels) == 0:
        raise ContractError("accuracy over an empty set")
    pred = np.argmax(logits[labels.indices], axis=1)
    return float(np.mean(pred == labels.labels))


def _eval_logits(model: AgnnModel, ops: PropagationOperators, X) -> tuple[Tensor, Tape, Variable]:
    tape = Tape()
    S, R = forward(model, ops, X, tape, training=False)
    logits = node_logits(model, S, R, tape)
    return logits.value, tape, logits


def evaluate_classification(model: AgnnModel, graph: DirectedGraph, X, labels: LabelSet) -> float:
    """Fraction of ``labels`` whose argmax prediction is correct."""
    logits, _, _ = _eval_logits(model, graph.operators, X)
    return accuracy(logits, labels)


def _reg_term(config, S, R, A, tape, rng):
    if config.regularizer == "off":
        return None
    if config.regularizer == "sampled":
        return regularization_loss_sampled(S, R, A, tape, rng, config.negatives)
    return regularization_loss(S, R, A, tape)


def fit(
    model: AgnnModel,
    graph: DirectedGraph,
    X,
    labels: LabelSet,
    split: Split,
    config: TrainConfig,
    seed: int | None = None,
    on_epoch=None,
) -> FitResult:
    """Full-batch training with validation-accuracy early stopping.

    The returned model carries the weights of the best validation epoch
    (ties broken by lower validation loss).
    """
    ops = graph.operators
    params = model.parameters()
    opt = Adam(config.lr, config.weight_decay)
    seed = config.seed if seed is None else seed
    dropout_rng = np.random.default_rng([seed, 1])
    sample_rng = np.random.default_rng([seed, 2])
    train_labels = labels.subset(split.train_idx)
    val_labels = labels.subset(split.val_idx) if len(split.val_idx) else train_labels

    history: list[EpochRecord] = []
    best = (-1.0, math.inf)
    best_epoch = -1
    best_weights = model.get_weights()
    last_improved = 0
    for epoch in range(config.max_epochs):
        try:
            tape = Tape()
            S, R = forward(model, ops, X, tape, training=True, rng=dropout_rng)
            logits = node_logits(model, S, R, tape)
            err = cross_entropy(logits, train_labels, tape)
            reg = _reg_term(config, S, R, graph.A, tape, sample_rng)
            total, report = total_loss(err, reg, config.lam, tape)
            if not math.isfinite(report.total):
                raise NonFiniteError("total loss is not finite")
            grads = tape.backward(total, wrt=params)
            opt.step(params, grads)

            eval_logits, etape, evar = _eval_logits(model, ops, X)
            val_acc = accuracy(eval_logits, val_labels)
            val_loss = cross_entropy(evar, val_labels, etape).item()
        except NonFiniteError as exc:
            raise NonFiniteError(f"training diverged at epoch {epoch}: {exc}") from exc

        rec = EpochRecord(epoch, report.error_term, report.reg_term, report.total, val_acc, val_loss)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if val_acc > best[0]:
            last_improved = epoch
        if val_acc > best[0] or (val_acc == best[0] and val_loss < best[1]):
            best = (val_acc, val_loss)
            best_epoch = epoch
            best_weights = model.get_weights()
        if config.patience and epoch - last_improved >= config.patience:
            break

    model.set_weights(best_weights)
    return FitResult(model, history, best_epoch, best[0])


@dataclass
class RegressionMetrics:
    rmse: float
    mae: float
    mape: float
    mape_excluded: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate_regression(preds, targets) -> RegressionMetrics:
    """RMSE, MAE and MAPE; zero targets are left out of MAPE and counted."""
    p = np.ravel(np.asarray(preds, dtype=np.float64))
    t = np.ravel(np.asarray(targets, dtype=np.float64))
    if p.shape != t.shape:
        raise ContractError(f"{p.size} predictions for {t.size} targets")
    if p.size == 0:
        raise ContractError("no samples")
    err = p - t
    nz = t != 0
    mape = float(np.mean(np.abs(err[nz] / t[nz]))) if nz.any() else float("nan")
    return RegressionMetrics(
        float(np.sqrt(np.mean(err * err))),
        float(np.mean(np.abs(err))),
        mape,
        int((~nz).sum()),
    )


def _batch(graphs: list[DatasetBundle]):
    union, owner = graph_mod.disjoint_union([b.graph for b in graphs])
    pool = pooling_matrix(owner, len(graphs))
    targets = np.array([[b.target] for b in graphs], dtype=np.float64)
    return union, pool, targets


def predict_graphs(model: AgnnModel, graphs: list[DatasetBundle], batch_size: int = 256) -> np.ndarray:
    out = []
    for start in range(0, len(graphs), batch_size):
        union, pool, _ = _batch(graphs[start:start + batch_size])
        tape = Tape()
        S, R = forward(model, union.operators, union.features, tape)
        out.append(graph_head(model.readout, S, R, pool, tape).value[:, 0])
    return np.concatenate(out) if out else np.empty(0)


@dataclass
class RegressionResult:
    model: AgnnModel
    history: list[dict]
    test_metrics: RegressionMetrics
    baseline_metrics: RegressionMetrics


def fit_regression(gs: GraphSet, config: TrainConfig, seed: int | None = None, on_epoch=None) -> RegressionResult:
    """Mini-batch MSE training on the training graphs, scored on the held-out ones.

    Each batch is the disjoint union of its graphs, so one sparse multiply
    propagates all of them and sum pooling is a sparse graph-by-node matrix.
    With a nonzero lambda the regularizer runs over the whole union, where
    cross-graph pairs count as observed non-edges.
    """
    if not gs.graphs or gs.graphs[0].task != GRAPH_TASK:
        raise ConfigError("graph regression needs a graph-set dataset")
    seed = config.seed if seed is None else seed
    d = gs.graphs[0].graph.features.shape[1]
    widths = [d] + [config.hidden] * config.layers
    model = init_weights(widths, seed, fusion="concat", head="graph", mode=config.mode,
                         dropout_rate=config.dropout)
    params = model.parameters()
    opt = Adam(config.lr, config.weight_decay)
    shuffle_rng = np.random.default_rng([seed, 3])
    dropout_rng = np.random.default_rng([seed, 1])
    sample_rng = np.random.default_rng([seed, 2])
    train = [gs.graphs[i] for i in gs.train_idx]
    test = [gs.graphs[i] for i in gs.test_idx]
    history = []
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            chunk = [train[i] for i in order[start:start + config.batch_size]]
            union, pool, targets = _batch(chunk)
            tape = Tape()
            S, R = forward(model, union.operators, union.features, tape, training=True, rng=dropout_rng)
            pred = graph_head(model.readout, S, R, pool, tape)
            err = regression_loss(pred, targets, tape)
            reg = _reg_term(config, S, R, union.A, tape, sample_rng) if config.lam > 0 else None
            total, report = total_loss(err, reg, config.lam, tape)
            if not math.isfinite(report.total):
                raise NonFiniteError(f"training diverged at epoch {epoch}")
            opt.step(params, tape.backward(total, wrt=params))
            losses.append(report.error_term)
        rec = {"epoch": epoch, "train_mse": float(np.mean(losses))}
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)

    train_mean = float(np.mean([b.target for b in train]))
    test_targets = np.array([b.target for b in test])
    metrics = evaluate_regression(predict_graphs(model, test), test_targets)
    baseline = evaluate_regression(np.full(len(test), train_mean), test_targets)
    return RegressionResult(model, history, metrics, baseline)


@dataclass
class RunOutcome:
    repeat: int
    seed: int
    test_acc: float
    best_epoch: int
    best_val_acc: float
    history: list[EpochRecord] = field(repr=False, default_factory=list)
    model: AgnnModel | None = field(repr=False, default=None)


@dataclass
class RepeatedResult:
    runs: list[RunOutcome]

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.test_acc for r in sorted(self.runs, key=lambda r: r.repeat)])

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return sample_std(self.accuracies)


def sample_std(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def repeat_seeds(master: int, repeats: int) -> list[int]:
    children = np.random.SeedSequence(master).spawn(repeats)
    return [int(c.generate_state(1)[0]) for c in children]


def prepare_graph(bundle: DatasetBundle, config: TrainConfig) -> DirectedGraph:
    g = bundle.graph
    return graph_mod.symmetrize(g) if config.symmetrize else g


def run_once(bundle: DatasetBundle, config: TrainConfig, seed: int, on_epoch=None) -> RunOutcome:
    """One split + one initialization, both drawn from ``seed``."""
    g = prepare_graph(bundle, config)
    X = bundle.feature_matrix()
    labels = bundle.labels
    split = make_split(labels, config.per_class, config.val_size, seed=seed)
    widths = [X.shape[1]] + [config.hidden] * (config.layers - 1) + [labels.num_classes]
    model = init_weights(widths, seed, fusion=config.fusion, mode=config.mode, dropout_rate=config.dropout)
    result = fit(model, g, X, labels, split, config, seed=seed, on_epoch=on_epoch)
    if len(split.test_idx) == 0:
        raise ContractError("split left no test nodes")
    acc = evaluate_classification(result.model, g, X, labels.subset(split.test_idx))
    return RunOutcome(0, seed, acc, result.best_epoch, result.best_val_acc, result.history, result.model)


def run_repeated(bundle: DatasetBundle, config: TrainConfig, repeats: int = 20, on_epoch=None) -> RepeatedResult:
    """Repeat training over fresh splits and initializations; seeds derive
    from ``config.seed``."""
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    runs = []
    for k, seed in enumerate(repeat_seeds(config.seed, repeats)):
        cb = None if on_epoch is None else (lambda rec, k=k: on_epoch(k, rec))
        out = run_once(bundle, config, seed, on_epoch=cb)
        out.repeat = k
        if k > 0:
            out.model = None
        runs.append(out)
    return RepeatedResult(runs)
