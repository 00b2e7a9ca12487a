"""Command-line entry point.

Subcommands: synth (generate benchmark data), pretrain, features, train,
detect, eval, sweep. Every subcommand accepts --config with a JSON (or, on
Python 3.11+, TOML) file whose keys override flag defaults; flags given on
the command line take precedence. Exit code is nonzero on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import extra_trees, metrics as metrics_mod, pretrain as pretrain_mod, synth_flows
from .comm_graph import save_graph
from .flow_ingest import (
    derive_node_labels,
    filter_tcp_udp,
    parse_flow_file,
    slice_windows,
    write_flows_csv,
)
from .flow_features import FEATURE_NAMES, extract_node_features
from .fusion_pipeline import PipelineConfig, detect, train_detector
from .gcn_core import load_model, save_model
from .pretrain import ARCH_DEPTH, TrainConfig


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError as exc:
            raise ValueError(
                "TOML config requires Python 3.11+; use a JSON config instead"
            ) from exc
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    with open(p, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a single object of key/value pairs")
    return cfg


def _apply_config(args: argparse.Namespace, sub: argparse.ArgumentParser) -> None:
    """Config values win over defaults; explicit flags win over config."""
    if not getattr(args, "config", None):
        return
    cfg = _load_config_file(args.config)
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            raise ValueError(f"unknown config key {key!r}")
        if getattr(args, dest) == sub.get_default(dest):
            setattr(args, dest, value)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--config", help="JSON (or TOML on 3.11+) file of option defaults")


def _load_windows(args) -> list:
    result = parse_flow_file(args.flows, format_descriptor=args.format)
    records = filter_tcp_udp(result.records)
    windows = slice_windows(records, window_len=args.window_len, stride=args.stride)
    if not windows:
        raise ValueError("no windows produced from the input flows")
    return windows


def cmd_synth(args) -> int:
    if args.kind == "graphs":
        n_background = args.n_background if args.n_background is not None else 880
        n_bots = args.n_bots if args.n_bots is not None else 110
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i in range(args.n_graphs):
            spec = pretrain_mod.default_graph_spec(
                args.arch,
                seed=args.seed + i,
                n_background=n_background,
                n_bots=n_bots,
            )
            g = pretrain_mod.generate_synthetic_graph(spec)
            save_graph(g, out_dir / f"graph_{args.arch}_{i:03d}.json")
        print(f"wrote {args.n_graphs} graphs to {out_dir}")
        return 0

    spec = synth_flows.FlowBenchSpec(
        architecture=args.arch,
        n_background=args.n_background if args.n_background is not None else 400,
        n_bots=args.n_bots if args.n_bots is not None else 16,
        duration=args.duration,
        seed=args.seed,
    )
    records = synth_flows.generate_flow_benchmark(spec)
    write_flows_csv(records, args.out)
    print(f"wrote {len(records)} flows to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    if args.data == "synth":
        dataset = pretrain_mod.default_pretrain_dataset(
            args.arch, n_graphs=args.n_graphs, seed=args.seed
        )
    else:
        dataset = pretrain_mod.load_graph_dataset(args.data)
    depth = args.depth if args.depth is not None else ARCH_DEPTH[args.arch]
    config = TrainConfig(
        lr=args.lr,
        max_epochs=args.max_epochs,
        patience=args.patience,
        val_fraction=args.val_fraction,
        seed=args.seed,
    )
    report: list = []
    model = pretrain_mod.pretrain_gcn(dataset, depth, config, report=report)
    save_model(model, args.out)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            for row in report:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    best = max(r["val_acc"] for r in report)
    print(f"pretrained depth-{depth} {args.arch} model: best val_acc={best:.4f} "
          f"over {len(report)} epochs -> {args.out}")
    return 0


def cmd_features(args) -> int:
    windows = _load_windows(args)
    out = sys.stdout if args.out is None else open(args.out, "w", encoding="utf-8")
    try:
        for w in windows:
            feats = extract_node_features(w)
            obj = {
                "window_start": w.window_start,
                "features": {
                    node: dict(zip(FEATURE_NAMES, nf.as_vector().tolist()))
                    for node, nf in sorted(feats.items())
                },
            }
            out.write(json.dumps(obj, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_train(args) -> int:
    windows = _load_windows(args)
    model = load_model(args.model)
    ensemble = train_detector(
        windows,
        model,
        norm_mode=args.norm_mode,
        n_trees=args.n_trees,
        seed=args.seed,
    )
    extra_trees.save_ensemble(ensemble, args.out)
    print(f"trained {ensemble.n_trees}-tree ensemble on {len(windows)} windows -> {args.out}")
    return 0


def cmd_detect(args) -> int:
    windows = _load_windows(args)
    model = load_model(args.model)
    ensemble = extra_trees.load_ensemble(args.ensemble)
    config = PipelineConfig(
        architecture=args.arch,
        depth=model.depth,
        window_len=args.window_len,
        stride=args.stride,
        norm_mode=args.norm_mode,
        threshold=args.threshold,
    )
    report = detect(windows, model, ensemble, config)
    payload = report.to_json_lines(include_timings=not args.no_timings)
    if args.out is None:
        sys.stdout.write(payload)
    else:
        Path(args.out).write_text(payload, encoding="utf-8")
    flagged = sum(w.n_flagged for w in report.windows)
    total = sum(w.n_nodes for w in report.windows)
    print(f"flagged {flagged} of {total} node-windows across {len(report.windows)} windows",
          file=sys.stderr)
    return 0


def _pooled_embeddings(args, model):
    windows = _load_windows(args)
    pooled = [r for w in windows for r in w.records]
    node_labels = derive_node_labels(pooled)
    return metrics_mod._pool_labeled(windows, model, node_labels, args.norm_mode)


def cmd_eval(args) -> int:
    model = load_model(args.model)
    X, y = _pooled_embeddings(args, model)
    folds, summary = metrics_mod.kfold_cv(
        X, y, k=args.k, seed=args.seed, n_trees=args.n_trees, threshold=args.threshold
    )
    print(metrics_mod.format_metrics_table(summary), end="")
    if args.out:
        payload = {
            "k": args.k,
            "n_samples": int(y.size),
            "folds": [m.to_dict() for m in folds],
            "summary": summary,
        }
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True),
                                  encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    depths = [int(d) for d in args.depths.split(",") if d.strip()]
    if args.data == "synth":
        dataset = pretrain_mod.default_pretrain_dataset(
            args.arch, n_graphs=args.n_graphs, seed=args.seed
        )
    else:
        dataset = pretrain_mod.load_graph_dataset(args.data)
    windows = _load_windows(args)
    config = TrainConfig(
        max_epochs=args.max_epochs, patience=args.patience, seed=args.seed
    )
    rows = metrics_mod.depth_sweep(
        args.arch,
        depths,
        dataset,
        windows,
        train_config=config,
        k=args.k,
        seed=args.seed,
        n_trees=args.n_trees,
        norm_mode=args.norm_mode,
    )
    print(metrics_mod.format_sweep_table(rows), end="")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True),
                                  encoding="utf-8")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="botfuse",
        description="Botnet node detection from network flows via graph feature fusion.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, **kw) -> argparse.ArgumentParser:
        s = subs.add_parser(name, **kw)
        _add_common(s)
        registry[name] = s
        return s

    s = sub("synth", help="generate synthetic graphs or a labeled flow benchmark")
    s.add_argument("--kind", choices=["graphs", "flows"], default="flows")
    s.add_argument("--arch", choices=["c2", "p2p"], default="c2")
    s.add_argument("--n-graphs", type=int, default=6)
    s.add_argument("--n-background", type=int, default=None,
                   help="default 400 for flows, 880 for graphs")
    s.add_argument("--n-bots", type=int, default=None,
                   help="default 16 for flows, 110 for graphs")
    s.add_argument("--duration", type=float, default=120.0)
    s.add_argument("--out", required=True, help="output file (flows) or directory (graphs)")
    s.set_defaults(func=cmd_synth)

    s = sub("pretrain", help="train the graph network on labeled graphs and freeze it")
    s.add_argument("--arch", choices=["c2", "p2p"], default="c2")
    s.add_argument("--depth", type=int, default=None, help="defaults to 12 (c2) / 24 (p2p)")
    s.add_argument("--data", default="synth", help="'synth' or a graph file/directory")
    s.add_argument("--n-graphs", type=int, default=6, help="graph count when --data synth")
    s.add_argument("--lr", type=float, default=0.003)
    s.add_argument("--max-epochs", type=int, default=500)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--val-fraction", type=float, default=0.2)
    s.add_argument("--report", help="write per-epoch JSON lines here")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    def add_flow_args(s: argparse.ArgumentParser) -> None:
        s.add_argument("--flows", required=True)
        s.add_argument("--format", default="canonical", help="canonical or binetflow")
        s.add_argument("--window-len", type=float, default=60.0)
        s.add_argument("--stride", type=float, default=10.0)

    s = sub("features", help="emit per-window per-node flow features as JSON lines")
    add_flow_args(s)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_features)

    s = sub("train", help="fit the tree ensemble on labeled flows")
    add_flow_args(s)
    s.add_argument("--model", required=True)
    s.add_argument("--norm-mode", choices=["per_vector", "per_dimension"], default="per_vector")
    s.add_argument("--n-trees", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub("detect", help="classify nodes per window with a frozen model and ensemble")
    add_flow_args(s)
    s.add_argument("--model", required=True)
    s.add_argument("--ensemble", required=True)
    s.add_argument("--arch", choices=["c2", "p2p"], default="c2")
    s.add_argument("--norm-mode", choices=["per_vector", "per_dimension"], default="per_vector")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--no-timings", action="store_true",
                   help="omit timing fields for byte-stable output")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_detect)

    s = sub("eval", help="stratified k-fold cross-validation on labeled flows")
    add_flow_args(s)
    s.add_argument("--model", required=True)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--n-trees", type=int, default=100)
    s.add_argument("--norm-mode", choices=["per_vector", "per_dimension"], default="per_vector")
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub("sweep", help="pretrain and cross-validate across candidate depths")
    add_flow_args(s)
    s.add_argument("--arch", choices=["c2", "p2p"], default="c2")
    s.add_argument("--depths", default="10,12,14,16")
    s.add_argument("--data", default="synth")
    s.add_argument("--n-graphs", type=int, default=6)
    s.add_argument("--max-epochs", type=int, default=500)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--n-trees", type=int, default=100)
    s.add_argument("--norm-mode", choices=["per_vector", "per_dimension"], default="per_vector")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)

    return parser, registry


def main(argv=None) -> int:
    parser, registry = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, registry[args.command])
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
