"""Command line entry point: ``horace {generate,index,train,eval,ablate}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

from .contrast import VARIANTS
from .hetgraph import GraphFormatError, load_graph, save_graph, semantic_views, synthetic_hg
from .pipeline import (
    RunConfig,
    ablate,
    build_graph,
    evaluate,
    format_table,
    load_trained,
    metrics_rows,
    train,
    write_metrics_csv,
)
from .structure import StructureIndex, default_top_t

log = logging.getLogger("horace")

# flags that override RunConfig fields; parsers per field type
_SKIP = {"graph", "synthetic", "output_dir", "metapaths", "n_synth", "top_t"}


def _n_synth(value):
    return value if value == "auto" else int(value)


def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    p.add_argument("--graph", type=Path, help="graph JSON file (overrides config)")
    p.add_argument("--metapaths", nargs="+", help="metapath names to use")
    p.add_argument("--n-synth", type=_n_synth, help="synthesized negatives per anchor, or 'auto'")
    p.add_argument("--top-t", type=int, help="candidate list length")
    hints = typing.get_type_hints(RunConfig)
    for f in dataclasses.fields(RunConfig):
        if f.name in _SKIP:
            continue
        kind = hints[f.name]
        conv = {int: int, float: float, str: str}.get(kind, str)
        extra = {"choices": VARIANTS} if f.name == "variant" else {}
        p.add_argument("--" + f.name.replace("_", "-"), type=conv, dest=f.name, **extra)


def _config_from_args(args):
    doc = json.loads(args.config.read_text()) if args.config else {}
    if args.graph:
        doc["graph"] = str(args.graph)
        doc.pop("synthetic", None)
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None and f.name not in ("graph",):
            doc[f.name] = value
    return RunConfig.from_dict(doc)


def _cmd_generate(args):
    params = {}
    if args.config:
        doc = json.loads(args.config.read_text())
        params.update(doc.get("synthetic", doc))
    flags = {
        "n_anchor": args.n_anchor,
        "n_bridge_per_type": tuple(args.n_bridge) if args.n_bridge else None,
        "n_classes": args.n_classes,
        "p_in": args.p_in,
        "p_out": args.p_out,
        "feature_dim": args.feature_dim,
        "noise": args.noise,
        "seed": args.seed,
    }
    params.update({k: v for k, v in flags.items() if v is not None})
    if isinstance(params.get("n_bridge_per_type"), list):
        params["n_bridge_per_type"] = tuple(params["n_bridge_per_type"])
    g = synthetic_hg(**params)
    save_graph(g, args.out)
    print(f"wrote {args.out}: " + ", ".join(f"{t}={c}" for t, c in g.counts.items()))
    return 0


def _cmd_index(args):
    g = load_graph(args.graph)
    views = semantic_views(g, args.metapaths)
    out = {"variant": args.variant, "views": []}
    if args.variant == "ppr":
        out["c"] = args.ppr_c
    else:
        out["k"] = args.pe_k
    for v in views:
        idx = StructureIndex(v, args.variant, c=args.ppr_c, k=args.pe_k)
        top_t = default_top_t(v.n_nodes) if args.top_t is None else args.top_t
        entry = {
            "metapath": v.metapath.name,
            "n_nodes": v.n_nodes,
            "top_t": top_t,
            "candidates": idx.candidates(top_t).lists.tolist(),
        }
        if args.variant == "ppr":
            entry["iterations"] = idx.ppr.iterations
            entry["residuals"] = idx.ppr.residuals.tolist()
            if args.dump:
                entry["ppr"] = idx.ppr.scores.tolist()
        else:
            entry["eigenvalues"] = idx.pe.eigenvalues.tolist()
            entry["n_components"] = idx.pe.n_components
            if args.dump:
                entry["pe"] = idx.pe.vectors.tolist()
        out["views"].append(entry)
        if args.variant == "ppr":
            summary = f"max residual {idx.ppr.residuals.max():.2e} after {idx.ppr.iterations} iterations"
        else:
            summary = "eigenvalues " + " ".join(f"{x:.4f}" for x in idx.pe.eigenvalues)
        print(f"{v.metapath.name}: n={v.n_nodes} T={top_t} {summary}", file=sys.stderr)
    text = json.dumps(out)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def _cmd_train(args):
    cfg = _config_from_args(args)
    if args.out:
        cfg = cfg.replace(output_dir=str(args.out))
    result = train(cfg)
    print(
        f"trained {cfg.variant}: {result.epochs_run} epochs, loss {result.loss_curve[0]:.4f} -> "
        f"{result.final_loss:.4f} ({result.runtime:.1f}s)"
    )
    if cfg.output_dir:
        print(f"checkpoint written to {cfg.output_dir}")
    return 0


def _cmd_eval(args):
    graph = load_graph(args.graph) if args.graph else None
    model, cfg, meta = load_trained(args.run, graph)
    labels = (graph if graph is not None else build_graph(cfg)).labels
    if args.repeats is not None:
        cfg = cfg.replace(repeats=args.repeats)
    if args.knn_k is not None:
        cfg = cfg.replace(knn_k=args.knn_k)
    report = evaluate(cfg, model.embedding_, labels, model.loss_curve_)
    rows = metrics_rows(cfg.variant, cfg.seed, report, model.loss_curve_[-1], model.n_epochs_)
    _emit(rows, args.metrics)
    return 0


def _cmd_ablate(args):
    cfg = _config_from_args(args)
    rows = ablate(cfg, variants=args.variants, seeds=args.seeds)
    _emit(rows, args.metrics)
    return 0


def _emit(rows, path):
    text = write_metrics_csv(rows, path)
    if path is None:
        sys.stdout.write(text)
    else:
        print(f"metrics written to {path}")
    print(format_table(rows))


def build_parser():
    parser = argparse.ArgumentParser(prog="horace", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a planted-partition synthetic graph")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, help="JSON with synthetic_hg parameters (or a 'synthetic' block)")
    p.add_argument("--n-anchor", type=int)
    p.add_argument("--n-bridge", type=int, nargs="+", help="bridge nodes per bridge type")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--p-in", type=float)
    p.add_argument("--p-out", type=float)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("index", help="build the structural hardness index")
    p.add_argument("--graph", type=Path, required=True)
    p.add_argument("--variant", choices=("ppr", "pe"), default="pe")
    p.add_argument("--metapaths", nargs="+")
    p.add_argument("--ppr-c", type=float, default=0.15)
    p.add_argument("--pe-k", type=int, default=8)
    p.add_argument("--top-t", type=int)
    p.add_argument("--dump", action="store_true", help="include full PPR rows / PE vectors")
    p.add_argument("--out", type=Path, help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("train", help="train and write a checkpoint")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, help="checkpoint directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="kNN evaluation of a trained checkpoint")
    p.add_argument("--run", type=Path, required=True, help="checkpoint directory")
    p.add_argument("--graph", type=Path, help="graph with labels (defaults to the run's config)")
    p.add_argument("--repeats", type=int)
    p.add_argument("--knn-k", type=int)
    p.add_argument("--metrics", type=Path, help="CSV output path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="compare variants over seeds")
    _add_config_flags(p)
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.add_argument("--seeds", nargs="+", type=int)
    p.add_argument("--metrics", type=Path, help="CSV output path")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (GraphFormatError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"horace: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
