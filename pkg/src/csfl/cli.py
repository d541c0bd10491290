"""Command line interface: run, validate, sweep, report.

Exit codes: 0 success, 2 invalid configuration (message names the key),
3 runtime failure (data loading, protocol, or IO problems).
"""

from __future__ import annotations

import argparse
import csv
import json
import re
import sys
from pathlib import Path

from . import plots
from .config import (
    ConfigError,
    RunConfig,
    build_run_config,
    config_warnings,
    load_config,
    load_values,
    override_value,
)
from .data import Dataset, generate_synthetic, load_csv, partition_dirichlet, train_test_split
from .fl import initial_state, run_experiment
from .wire import ByteLedger, encode_model

_COLUMNS = (
    "round",
    "acc_sparse",
    "acc_dense",
    "loss",
    "server_sparsity",
    "client_sparsity",
    "bytes_down",
    "bytes_up",
    "cum_bytes_down",
    "cum_bytes_up",
    "flops_saved",
)
_INT_COLUMNS = {"round", "bytes_down", "bytes_up", "cum_bytes_down", "cum_bytes_up"}


def _build_data(cfg: RunConfig) -> tuple[list[Dataset], Dataset]:
    """Shards for each client plus the held-out test set."""
    exp = cfg.experiment
    if cfg.dataset == "synthetic":
        ds = generate_synthetic(
            classes=exp.arch.output_classes,
            dim=exp.arch.input_dim,
            per_class=cfg.samples_per_class,
            separation=cfg.separation,
            seed=exp.seed,
        )
    else:
        try:
            ds = load_csv(cfg.csv_path, cfg.label_column)
        except FileNotFoundError as exc:
            raise ConfigError("csv_path", str(exc)) from None
        if ds.inputs.shape[1] != exp.arch.input_dim:
            raise ConfigError(
                "input_dim",
                f"config says {exp.arch.input_dim}, dataset has {ds.inputs.shape[1]} features",
            )
        if ds.class_count != exp.arch.output_classes:
            raise ConfigError(
                "output_classes",
                f"config says {exp.arch.output_classes}, dataset has {ds.class_count} classes",
            )
    train, test = train_test_split(ds, cfg.train_fraction, exp.seed)
    shards = partition_dirichlet(
        train, exp.n_clients, exp.partition_alpha, exp.min_per_client, exp.seed
    )
    return shards, test


def _metric_rows(metrics) -> list[dict]:
    """Flat per-round dicts in the metrics-file column set, with running totals."""
    rows = []
    cum_down = 0
    cum_up = 0
    for m in metrics:
        cum_down += m.bytes_down
        cum_up += m.bytes_up
        rows.append(
            {
                "round": m.round_index,
                "acc_sparse": m.acc_sparse,
                "acc_dense": m.acc_dense,
                "loss": m.loss_sparse,
                "server_sparsity": m.server_sparsity,
                "client_sparsity": m.client_sparsity,
                "bytes_down": m.bytes_down,
                "bytes_up": m.bytes_up,
                "cum_bytes_down": cum_down,
                "cum_bytes_up": cum_up,
                "flops_saved": m.flops_saved_fraction,
            }
        )
    return rows


def _format_cell(key: str, value) -> str:
    if value is None:
        return ""
    if key in _INT_COLUMNS:
        return str(int(value))
    return repr(float(value))  # shortest round-trip text, stable across reruns


def _write_metrics(rows: list[dict], path: Path, fmt: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        payload = [
            {k: (int(r[k]) if k in _INT_COLUMNS and r[k] is not None else r[k]) for k in _COLUMNS}
            for r in rows
        ]
        path.write_text(json.dumps(payload, indent=2) + "\n")
        return
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(k, row[k]) for k in _COLUMNS])


def _summary(rows: list[dict]) -> dict:
    accs = [r["acc_sparse"] for r in rows if r["acc_sparse"] is not None]
    saved = [r["flops_saved"] for r in rows if r["round"] >= 1]
    return {
        "best_acc": max(accs) if accs else float("nan"),
        "total_bytes": rows[-1]["cum_bytes_down"] + rows[-1]["cum_bytes_up"] if rows else 0,
        "mean_flops_saved": sum(saved) / len(saved) if saved else 0.0,
    }


def _execute(cfg: RunConfig, output: Path) -> dict:
    """Run one experiment end to end; writes metrics (and figures) to disk."""
    warnings = config_warnings(cfg)
    if warnings and not cfg.experiment.allow_ratio_outside_bound:
        raise ConfigError("aggregation_ratio", "; ".join(warnings))
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    shards, test = _build_data(cfg)
    dense_bytes = encode_model(initial_state(cfg.experiment).global_sparse, allow_sparse=False).n_bytes
    ledger = ByteLedger(dense_model_bytes=dense_bytes)
    metrics = run_experiment(
        cfg.experiment,
        shards,
        test_data=test,
        eval_every=cfg.eval_every,
        ledger=ledger,
        ledger_mode=cfg.ledger_mode,
    )
    rows = _metric_rows(metrics)
    _write_metrics(rows, output, cfg.metrics_format)
    written = [output]
    if cfg.plots:
        written += plots.render_run_figures(rows, output, label=cfg.experiment.mode)
    info = _summary(rows)
    info["files"] = written
    print(
        f"{cfg.experiment.mode}: best_acc={info['best_acc']:.4f} "
        f"total_bytes={info['total_bytes']} "
        f"mean_flops_saved={info['mean_flops_saved']:.4f} -> {output}"
    )
    return info


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    _execute(cfg, Path(cfg.output))
    return 0


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    warnings = config_warnings(cfg)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if warnings and args.strict:
        print(f"invalid (strict): {warnings[0]}", file=sys.stderr)
        return 2
    print(f"ok: {args.config}")
    return 0


def _sanitize(value: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", value)


def _cmd_sweep(args) -> int:
    base = load_values(args.config)
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigError(args.param, "sweep needs at least one value")
    points: list[tuple[float, float]] = []
    base_output = None
    plots_enabled = False
    for index, raw in enumerate(raw_values):
        cfg = build_run_config(override_value(base, args.param, raw))
        base_output = Path(cfg.output)
        plots_enabled = cfg.plots
        out = base_output.with_name(
            f"{base_output.stem}_{args.param}_{_sanitize(raw)}{base_output.suffix}"
        )
        info = _execute(cfg, out)
        try:
            x = float(raw)
        except ValueError:
            x = float(index)
        points.append((x, info["best_acc"]))
    if plots_enabled and base_output is not None:
        fig = base_output.with_name(f"{base_output.stem}_sweep_{args.param}.png")
        plots.sweep_figure(args.param, points, fig)
        print(f"sweep figure -> {fig}")
    return 0


def _cmd_report(args) -> int:
    runs = []
    for path in args.metrics:
        rows = [r for r in plots.load_metrics(path) if r.get("acc_sparse") is not None]
        if not rows:
            raise ValueError(f"{path}: no evaluated rounds to plot")
        runs.append((Path(path).stem, rows))
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.metrics[0]).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [
        plots.accuracy_figure(runs, out_dir / "accuracy.png"),
        plots.bytes_figure(runs, out_dir / "bytes.png"),
        plots.flops_figure(runs, out_dir / "flops.png"),
    ]
    for path in written:
        print(f"figure -> {path}")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="csfl",
        description="Federated learning with complementary server/client sparsification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config", help="path to a key = value config file")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a config file without running")
    p_val.add_argument("config")
    p_val.add_argument("--strict", action="store_true", help="treat warnings as errors")
    p_val.set_defaults(func=_cmd_validate)

    p_sweep = sub.add_parser("sweep", help="run once per value of one config key")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True, help="config key to vary")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_rep = sub.add_parser("report", help="render figures from metrics files")
    p_rep.add_argument("metrics", nargs="+", help="metrics files from previous runs")
    p_rep.add_argument("--out-dir", help="directory for figures (default: beside input)")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
