"""Run configuration, training/evaluation drivers, ablations and metrics files."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .contrast import VARIANTS
from .estimator import HoraceEmbedder
from .evaluation import knn_eval
from .hetgraph import load_graph, synthetic_hg

__all__ = [
    "RunConfig",
    "TrainResult",
    "build_graph",
    "train",
    "evaluate",
    "run",
    "ablate",
    "load_trained",
    "metrics_rows",
    "write_metrics_csv",
    "format_table",
    "METRIC_COLUMNS",
]

METRIC_COLUMNS = ("variant", "seed", "split", "micro_f1", "macro_f1", "final_loss", "epochs_run")

_ESTIMATOR_FIELDS = (
    "metapaths", "n_heads", "dim", "att_dim", "tau", "n_synth", "top_t", "alpha",
    "variant", "pool", "ppr_c", "pe_k", "lr", "epochs", "patience", "min_delta", "seed",
)


@dataclass
class RunConfig:
    """Everything that determines a run. ``seed`` drives every random stream
    (parameter init, mixup, splits and, unless ``synthetic`` pins its own
    seed, the generated graph)."""

    graph: str | None = None
    synthetic: dict | None = None
    metapaths: list | None = None
    n_heads: int = 4
    dim: int = 64
    att_dim: int = 128
    tau: float = 0.5
    n_synth: int | str = "auto"
    top_t: int | None = None
    alpha: float = 1.0
    variant: str = "pe"
    pool: str = "candidates"
    ppr_c: float = 0.15
    pe_k: int = 8
    lr: float = 0.005
    epochs: int = 400
    patience: int = 50
    min_delta: float = 1e-4
    seed: int = 0
    knn_k: int = 5
    train_frac: float = 0.2
    repeats: int = 10
    output_dir: str | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.graph is None and self.synthetic is None:
            raise ValueError("config needs either 'graph' or 'synthetic'")
        if self.synthetic is not None:
            # JSON-native form so configs compare equal after a round trip
            self.synthetic = {k: list(v) if isinstance(v, tuple) else v for k, v in self.synthetic.items()}

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def estimator_params(self):
        return {name: getattr(self, name) for name in _ESTIMATOR_FIELDS}


@dataclass
class TrainResult:
    model: HoraceEmbedder
    embedding: np.ndarray
    labels: np.ndarray | None
    loss_curve: list
    epochs_run: int
    runtime: float

    @property
    def final_loss(self):
        return self.loss_curve[-1] if self.loss_curve else float("nan")


def build_graph(cfg):
    if cfg.graph is not None:
        return load_graph(cfg.graph)
    params = dict(cfg.synthetic)
    params.setdefault("seed", cfg.seed)
    if "n_bridge_per_type" in params and isinstance(params["n_bridge_per_type"], list):
        params["n_bridge_per_type"] = tuple(params["n_bridge_per_type"])
    return synthetic_hg(**params)


def train(cfg, graph=None):
    """Fit the embedder; persists a checkpoint when ``cfg.output_dir`` is set."""
    graph = build_graph(cfg) if graph is None else graph
    start = time.perf_counter()
    model = HoraceEmbedder(**cfg.estimator_params()).fit(graph)
    result = TrainResult(
        model=model,
        embedding=model.embedding_,
        labels=graph.labels,
        loss_curve=list(model.loss_curve_),
        epochs_run=model.n_epochs_,
        runtime=time.perf_counter() - start,
    )
    if cfg.output_dir:
        arrays = dict(model.state_dict())
        arrays["embedding"] = model.embedding_
        meta = {
            "config": cfg.to_dict(),
            "loss_curve": result.loss_curve,
            "epochs_run": result.epochs_run,
            "metapaths": model.metapath_names_,
            "semantic_weights": model.semantic_weights_.tolist(),
        }
        save_checkpoint(cfg.output_dir, arrays, meta)
    return result


def load_trained(directory, graph=None):
    """Rebuild a fitted embedder from a checkpoint directory."""
    arrays, meta = load_checkpoint(directory)
    cfg = RunConfig.from_dict(meta["config"])
    graph = build_graph(cfg) if graph is None else graph
    model = HoraceEmbedder(**cfg.estimator_params()).init_for(graph)
    model.load_state_dict({k: v for k, v in arrays.items() if k != "embedding"})
    model.loss_curve_ = list(meta["loss_curve"])
    model.n_epochs_ = meta["epochs_run"]
    model.embedding_ = arrays["embedding"]
    return model, cfg, meta


def evaluate(cfg, embedding, labels, loss_curve=()):
    if labels is None:
        raise ValueError("graph has no labels to evaluate against")
    return knn_eval(
        embedding, labels, k=cfg.knn_k, train_frac=cfg.train_frac,
        repeats=cfg.repeats, seed=cfg.seed, loss_curve=loss_curve,
    )


def run(cfg, graph=None):
    result = train(cfg, graph)
    return result, evaluate(cfg, result.embedding, result.labels, result.loss_curve)


def metrics_rows(variant, seed, report, final_loss, epochs_run):
    return [
        {
            "variant": variant,
            "seed": seed,
            "split": split,
            "micro_f1": mi,
            "macro_f1": ma,
            "final_loss": final_loss,
            "epochs_run": epochs_run,
        }
        for split, (mi, ma) in enumerate(zip(report.micro_f1, report.macro_f1))
    ]


def ablate(cfg, variants=VARIANTS, seeds=None):
    """Train and evaluate every variant for every seed; returns metric rows."""
    seeds = [cfg.seed] if seeds is None else list(seeds)
    rows = []
    for seed in seeds:
        graph = build_graph(cfg.replace(seed=seed))
        for variant in variants:
            vcfg = cfg.replace(seed=seed, variant=variant, output_dir=None)
            result, report = run(vcfg, graph)
            rows.extend(metrics_rows(variant, seed, report, result.final_loss, result.epochs_run))
    return rows


def _fmt(value):
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def write_metrics_csv(rows, path=None):
    """Write rows with the fixed column order; returns the CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def format_table(rows):
    """Per-variant mean and std of Mi-F1 / Ma-F1 over all seeds and splits."""
    order = list(dict.fromkeys(r["variant"] for r in rows))
    lines = [f"{'variant':<10}{'Mi-F1':>18}{'Ma-F1':>18}{'runs':>6}"]
    for v in order:
        sel = [r for r in rows if r["variant"] == v]
        mi = np.array([r["micro_f1"] for r in sel])
        ma = np.array([r["macro_f1"] for r in sel])
        runs = len({r["seed"] for r in sel})
        lines.append(
            f"{v:<10}{mi.mean():>11.4f} ±{mi.std():.4f}{ma.mean():>11.4f} ±{ma.std():.4f}{runs:>6}"
        )
    return "\n".join(lines)
