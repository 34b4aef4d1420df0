"""Command-line entry points.

    agnn train        --edges E --labels L [--features F] [...]
    agnn sweep-lambda --edges E --labels L --lambdas 0,1e-3,1e-2
    agnn sweep-fusion --edges E --labels L --fusions sum,max,mean,concat
    agnn regress      --graphs manifest.tsv
    agnn gen-sbm      --blocks 150,150 --probs "0.05,0.09;0.01,0.05" --out DIR
    agnn gen-dag      --count 500 --out DIR
    agnn eval         --checkpoint model.npz --edges E --labels L

Settings come from built-in defaults, then ``--config file.json``, then
explicit flags. Output goes to ``--out``, else ``$AGNN_OUT_DIR``, else ``runs``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from agnn import __version__
from agnn.data import (
    GraphSet,
    SbmSpec,
    generate_dag_regression,
    generate_directed_sbm,
    load_edge_list_dataset,
    load_graph_set,
    write_edges,
    write_graph_set,
    write_labels,
)
from agnn.errors import AgnnError, ConfigError
from agnn.graph import symmetrize
from agnn.model import FUSIONS, MODES, load_checkpoint, save_checkpoint
from agnn.train import (
    TrainConfig,
    evaluate_classification,
    fit_regression,
    make_split,
    run_repeated,
)

log = logging.getLogger("agnn")

OUT_ENV = "AGNN_OUT_DIR"

# flag name -> TrainConfig field
TRAIN_FLAGS = {
    "hidden": "hidden",
    "layers": "layers",
    "lr": "lr",
    "weight_decay": "weight_decay",
    "dropout": "dropout",
    "lam": "lam",
    "fusion": "fusion",
    "mode": "mode",
    "epochs": "max_epochs",
    "patience": "patience",
    "seed": "seed",
    "symmetrize": "symmetrize",
    "regularizer": "regularizer",
    "negatives": "negatives",
    "per_class": "per_class",
    "val_size": "val_size",
    "batch_size": "batch_size",
}


@dataclass
class ExperimentConfig:
    command: str
    train: TrainConfig
    edges: str | None = None
    features: str | None = None
    labels: str | None = None
    graphs: str | None = None
    lambdas: list[float] = field(default_factory=list)
    fusions: list[str] = field(default_factory=list)
    repeats: int = 20
    out: str = "runs"
    checkpoint: str | None = None

    def __post_init__(self):
        sources = [self.edges is not None, self.graphs is not None]
        if self.command in ("train", "sweep-lambda", "sweep-fusion", "regress", "eval") and sum(sources) != 1:
            raise ConfigError("give exactly one dataset source: --edges (node task) or --graphs (graph set)")
        if self.repeats < 1:
            raise ConfigError("--repeats must be at least 1")

    def echo(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "train"}
        d["train"] = self.train.as_dict()
        return d


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_words(text: str) -> list[str]:
    return [x.strip().lower() for x in text.split(",") if x.strip()]


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("dataset")
    g.add_argument("--edges")
    g.add_argument("--features")
    g.add_argument("--labels")
    g.add_argument("--graphs", help="graph-set manifest (regression)")
    t = p.add_argument_group("training")
    t.add_argument("--hidden", type=int)
    t.add_argument("--layers", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--dropout", type=float)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--fusion", choices=FUSIONS)
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=int, help="0 disables early stopping")
    t.add_argument("--seed", type=int)
    t.add_argument("--symmetrize", action="store_const", const=True)
    t.add_argument("--regularizer", choices=("exact", "sampled", "off"))
    t.add_argument("--negatives", type=int)
    t.add_argument("--per-class", type=int)
    t.add_argument("--val-size", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--repeats", type=int)
    p.add_argument("--config", help="JSON file with any of the flag names as keys")
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agnn", description="Asymmetric GNNs for directed graphs")
    parser.add_argument("--version", action="version", version=f"agnn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("train", "sweep-lambda", "sweep-fusion", "regress", "eval"):
        p = sub.add_parser(name)
        _add_train_flags(p)
        if name == "sweep-lambda":
            p.add_argument("--lambdas", type=_csv_floats, required=True)
        if name == "sweep-fusion":
            p.add_argument("--fusions", type=_csv_words, default=list(FUSIONS))
        if name == "eval":
            p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gen-sbm", help="write a directed SBM dataset")
    p.add_argument("--blocks", type=lambda s: [int(x) for x in s.split(",")], required=True)
    p.add_argument("--probs", required=True, help="rows separated by ';', entries by ','")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("gen-dag", help="write a DAG longest-path regression set")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--min-size", type=int, default=4)
    p.add_argument("--max-size", type=int, default=12)
    p.add_argument("--edge-prob", type=_csv_floats, default=[0.1, 0.5])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    return parser


def _train_defaults(command: str) -> dict:
    if command == "regress":
        return TrainConfig.for_regression().as_dict()
    return TrainConfig().as_dict()


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    file_cfg: dict = {}
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
        if "lambda" in file_cfg:
            file_cfg["lam"] = file_cfg.pop("lambda")

    def pick(name, default=None):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        return file_cfg.get(name, default)

    train_kw = _train_defaults(args.command)
    for flag, attr in TRAIN_FLAGS.items():
        if attr in file_cfg:
            train_kw[attr] = file_cfg[attr]
        if flag in file_cfg:
            train_kw[attr] = file_cfg[flag]
        value = getattr(args, flag, None)
        if value is not None:
            train_kw[attr] = value
    try:
        train = TrainConfig(**train_kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    return ExperimentConfig(
        command=args.command,
        train=train,
        edges=pick("edges"),
        features=pick("features"),
        labels=pick("labels"),
        graphs=pick("graphs"),
        lambdas=list(pick("lambdas", []) or []),
        fusions=list(pick("fusions", []) or []),
        repeats=int(pick("repeats", 20)),
        out=pick("out") or os.environ.get(OUT_ENV) or "runs",
        checkpoint=pick("checkpoint"),
    )


def _atomic_write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def _load_node_dataset(cfg: ExperimentConfig):
    if cfg.graphs is not None:
        raise ConfigError(f"{cfg.command} needs a node-classification dataset (--edges/--labels)")
    if cfg.labels is None:
        raise ConfigError("--labels is required for node classification")
    return load_edge_list_dataset(cfg.edges, cfg.features, cfg.labels)


def _repeated(cfg: ExperimentConfig, bundle, train: TrainConfig, log_fh=None, tag=None):
    def on_epoch(k, rec):
        if log_fh is not None:
            row = {"repeat": k, **rec.as_dict()}
            if tag is not None:
                row.update(tag)
            log_fh.write(json.dumps(row, sort_keys=True) + "\n")

    return run_repeated(bundle, train, cfg.repeats, on_epoch=on_epoch)


def _runs_payload(result) -> list[dict]:
    return [
        {"repeat": r.repeat, "seed": r.seed, "test_acc": r.test_acc,
         "best_epoch": r.best_epoch, "best_val_acc": r.best_val_acc}
        for r in sorted(result.runs, key=lambda r: r.repeat)
    ]


def _report(cfg: ExperimentConfig, body: dict, started: float) -> dict:
    return {
        "engine": f"agnn {__version__}",
        "command": cfg.command,
        "seed": cfg.train.seed,
        "config": cfg.echo(),
        **body,
        "wall_clock_s": round(time.time() - started, 3),
    }


def cmd_train(cfg: ExperimentConfig) -> Path:
    started = time.time()
    bundle = _load_node_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "epochs.jsonl", "w", encoding="utf-8") as log_fh:
        result = _repeated(cfg, bundle, cfg.train, log_fh)
    body = {
        "dataset": {"name": bundle.name, "nodes": bundle.graph.n, "edges": bundle.graph.num_edges,
                    "classes": bundle.labels.num_classes},
        "runs": _runs_payload(result),
        "aggregate": {"mean_acc": result.mean, "std_acc": result.std, "repeats": cfg.repeats},
    }
    if result.runs and result.runs[0].model is not None:
        save_checkpoint(result.runs[0].model, out / "model.npz")
    report = _report(cfg, body, started)
    return _atomic_write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return _atomic_write(path, buf.getvalue())


def cmd_sweep_lambda(cfg: ExperimentConfig) -> Path:
    if not cfg.lambdas:
        raise ConfigError("--lambdas must list at least one value")
    if any(lam < 0 for lam in cfg.lambdas):
        raise ConfigError("lambda values must be non-negative")
    bundle = _load_node_dataset(cfg)
    rows = []
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep_lambda_epochs.jsonl", "w", encoding="utf-8") as log_fh:
        for lam in sorted(set(cfg.lambdas)):
            train = TrainConfig(**{**cfg.train.as_dict(), "lam": lam})
            res = _repeated(cfg, bundle, train, log_fh, {"lambda": lam})
            rows.append([repr(lam), repr(res.mean), repr(res.std)])
    return _write_csv(out / "sweep_lambda.csv", ["lambda", "mean_acc", "std_acc"], rows)


def cmd_sweep_fusion(cfg: ExperimentConfig) -> Path:
    unknown = [f for f in cfg.fusions if f not in FUSIONS]
    if unknown:
        raise ConfigError(f"unknown fusion tag(s) {unknown}; choose from {FUSIONS}")
    if not cfg.fusions:
        raise ConfigError("--fusions must list at least one tag")
    bundle = _load_node_dataset(cfg)
    rows = []
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep_fusion_epochs.jsonl", "w", encoding="utf-8") as log_fh:
        for fusion in [f for f in FUSIONS if f in set(cfg.fusions)]:
            train = TrainConfig(**{**cfg.train.as_dict(), "fusion": fusion})
            res = _repeated(cfg, bundle, train, log_fh, {"fusion": fusion})
            rows.append([fusion, repr(res.mean), repr(res.std)])
    return _write_csv(out / "sweep_fusion.csv", ["fusion", "mean_acc", "std_acc"], rows)


def cmd_regression(cfg: ExperimentConfig) -> Path:
    if cfg.graphs is None:
        raise ConfigError("regress needs a graph-set manifest (--graphs), not a node-task dataset")
    started = time.time()
    gs: GraphSet = load_graph_set(cfg.graphs, seed=cfg.train.seed)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "epochs.jsonl", "w", encoding="utf-8") as log_fh:
        res = fit_regression(gs, cfg.train, on_epoch=lambda rec: log_fh.write(json.dumps(rec, sort_keys=True) + "\n"))
    save_checkpoint(res.model, out / "model.npz")
    body = {
        "dataset": {"name": gs.name, "graphs": len(gs), "train": len(gs.train_idx), "test": len(gs.test_idx)},
        "test_metrics": res.test_metrics.as_dict(),
        "mean_predictor_metrics": res.baseline_metrics.as_dict(),
    }
    report = _report(cfg, body, started)
    return _atomic_write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")


def cmd_eval(cfg: ExperimentConfig) -> Path:
    """Accuracy of a saved model on the test part of a fresh split (seeded)."""
    started = time.time()
    bundle = _load_node_dataset(cfg)
    model = load_checkpoint(cfg.checkpoint)
    g = bundle.graph
    if cfg.train.symmetrize:
        g = symmetrize(g)
    split = make_split(bundle.labels, cfg.train.per_class, cfg.train.val_size, seed=cfg.train.seed)
    X = bundle.feature_matrix()
    body = {
        "accuracy_all_labeled": evaluate_classification(model, g, X, bundle.labels),
        "accuracy_test_split": evaluate_classification(model, g, X, bundle.labels.subset(split.test_idx)),
    }
    out = Path(cfg.out)
    return _atomic_write(out / "eval.json", json.dumps(_report(cfg, body, started), indent=2, sort_keys=True) + "\n")


def _parse_probs(text: str) -> np.ndarray:
    try:
        return np.array([[float(x) for x in row.split(",")] for row in text.split(";")])
    except ValueError:
        raise ConfigError(f"cannot parse probability matrix {text!r}") from None


def cmd_gen_sbm(args) -> Path:
    spec = SbmSpec(args.blocks, _parse_probs(args.probs), args.seed)
    bundle = generate_directed_sbm(spec)
    out = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    out.mkdir(parents=True, exist_ok=True)
    write_edges(bundle.graph, out / "edges.tsv")
    write_labels(bundle.labels, out / "labels.tsv")
    return out / "edges.tsv"


def cmd_gen_dag(args) -> Path:
    prob = args.edge_prob[0] if len(args.edge_prob) == 1 else tuple(args.edge_prob[:2])
    gs = generate_dag_regression(args.count, (args.min_size, args.max_size), args.seed, prob)
    return write_graph_set(gs, Path(args.out or os.environ.get(OUT_ENV) or "runs"))


COMMANDS = {
    "train": cmd_train,
    "sweep-lambda": cmd_sweep_lambda,
    "sweep-fusion": cmd_sweep_fusion,
    "regress": cmd_regression,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-sbm":
            path = cmd_gen_sbm(args)
        elif args.command == "gen-dag":
            path = cmd_gen_dag(args)
        else:
            path = COMMANDS[args.command](config_from_args(args))
    except (AgnnError, OSError) as exc:
        print(f"agnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
