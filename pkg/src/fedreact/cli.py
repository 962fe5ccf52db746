"""Command-line interface.

Subcommands: gen-data, run, sweep-theorem1, estimate-clusters, compare,
report. Every experiment knob is available both as a --flag and as the
same kebab-case key in a JSON config file (--config); explicit flags win.
The effective configuration is echoed into summary.json.

Exit codes: 0 success, 2 configuration error, 3 runtime numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .datagen import STRATEGIES
from .encoder import SmoothingConfig, save_encoder
from .evocluster import estimate_cluster_count
from .metrics import ROUND_COLUMNS, write_rounds_csv, write_summary_json
from .numerics import NumericError
from .orchestrator import (SCHEMES, TASKS, ExperimentConfig, build_stream,
                           run_experiment, run_phase1, run_phase2, theorem1_sweep)
from .taskmodel import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration input; maps to exit code 2."""


# flag name (kebab-case) -> (python type, help text); bools use --flag/--no-flag
FLAG_SPECS: dict[str, tuple[type, str]] = {
    "seed": (int, "base RNG seed"),
    "k": (int, "number of clients"),
    "c": (int, "number of ground-truth clusters"),
    "c-assumed": (int, "cluster count assumed by the server (default: same as --c)"),
    "strategy": (str, f"drift strategy, one of {STRATEGIES}"),
    "lambda1": (float, "Pr(regime 1 | regime 0) for strategy s1"),
    "lambda2": (float, "Pr(regime 1 | regime 1) for strategy s1"),
    "beta": (float, "Dirichlet concentration for label heterogeneity"),
    "batch-size": (int, "labeled samples per client per task round"),
    "rounds-encoder": (int, "stage-1 communication rounds"),
    "rounds-task": (int, "stage-2 communication rounds"),
    "participation": (float, "fraction of each true cluster active per round"),
    "scheme": (str, f"training scheme, one of {SCHEMES}"),
    "task": (str, f"downstream task, one of {TASKS}"),
    "num-labels": (int, "number of classes"),
    "dim": (int, "feature dimension d of each time step"),
    "horizon": (int, "sequence length T of each sample"),
    "embed-dim": (int, "encoder output dimension"),
    "noise-scale": (float, "sample noise amplitude"),
    "shared-scale": (float, "cross-cluster shared label pattern amplitude"),
    "center-scale": (float, "cluster-center pattern amplitude"),
    "label-scale": (float, "per-label pattern offset amplitude"),
    "data-scale": (float, "overall data amplitude"),
    "ssl-noise": (float, "noise added inside the linear SSL loss"),
    "test-size": (int, "held-out samples per client per round"),
    "encoder-loss": (str, "contrastive or linear-ssl"),
    "negatives": (int, "negative samples per anchor"),
    "encoder-batch": (int, "anchors per stage-1 round"),
    "flsc-tau": (int, "clusters each FLSC client joins"),
    "adopt-prob": (float, "strategy-2 one-round adoption probability"),
    "migrate-prob": (float, "strategy-3 migration probability"),
    "affect-iters": (int, "forgetting-factor refinement iterations"),
    "freeze-data": (bool, "reuse round-1 batches every round"),
    "track-regret": (bool, "record stage-1 regret diagnostics"),
    "workers": (int, "worker count (no effect on outputs)"),
    "window": (int, "smoothing window w"),
    "decay": (float, "smoothing decay gamma"),
    "step": (float, "stage-1 step size (default: loss-dependent)"),
    "radius-sq": (float, "squared projection radius (default: estimated)"),
    "train-steps": (int, "task-model SGD steps per round"),
    "train-batch": (int, "task-model SGD minibatch size"),
    "train-lr": (float, "task-model SGD step size"),
    "train-l2": (float, "task-model L2 regularization"),
}

_RENAMES = {"k": "num_clients", "c": "true_clusters", "c-assumed": "assumed_clusters"}
_SMOOTHING_KEYS = {"window": "window", "decay": "decay", "step": "step",
                   "radius-sq": "radius_sq"}
_TRAIN_KEYS = {"train-steps": "steps", "train-batch": "batch",
               "train-lr": "lr", "train-l2": "l2"}


def config_to_flat(cfg: ExperimentConfig) -> dict:
    """Kebab-case view of the configuration, as echoed into summary.json."""
    flat = {}
    for key in FLAG_SPECS:
        if key in _SMOOTHING_KEYS:
            flat[key] = getattr(cfg.smoothing, _SMOOTHING_KEYS[key])
        elif key in _TRAIN_KEYS:
            flat[key] = getattr(cfg.train, _TRAIN_KEYS[key])
        else:
            flat[key] = getattr(cfg, _RENAMES.get(key, key.replace("-", "_")))
    return flat


def flat_to_config(flat: dict) -> ExperimentConfig:
    smoothing = SmoothingConfig(**{dst: flat[src] for src, dst in _SMOOTHING_KEYS.items()})
    train = TrainConfig(**{dst: flat[src] for src, dst in _TRAIN_KEYS.items()})
    kwargs = {}
    for key in FLAG_SPECS:
        if key in _SMOOTHING_KEYS or key in _TRAIN_KEYS:
            continue
        kwargs[_RENAMES.get(key, key.replace("-", "_"))] = flat[key]
    return ExperimentConfig(smoothing=smoothing, train=train, **kwargs)


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file of kebab-case config keys; flags override it")
    for key, (typ, help_text) in FLAG_SPECS.items():
        if typ is bool:
            parser.add_argument(f"--{key}", action=argparse.BooleanOptionalAction,
                                default=None, help=help_text)
        else:
            parser.add_argument(f"--{key}", type=typ, default=None, help=help_text,
                                dest=key.replace("-", "_"))


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    flat = config_to_flat(ExperimentConfig())
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            if key not in FLAG_SPECS:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = value
    for key in FLAG_SPECS:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            flat[key] = value
    try:
        cfg = flat_to_config(flat)
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {what}: {text!r}") from exc


def _parse_float_list(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {what}: {text!r}") from exc


def _parse_range(text: str) -> list[int]:
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return _parse_int_list(text, "cluster range")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg)
    write_rounds_csv(outdir / "rounds.csv", result.logs)
    write_summary_json(outdir / "summary.json",
                       {"config": config_to_flat(cfg), **result.summary})
    save_encoder(result.encoder, outdir / "encoder.txt")
    if args.dump_similarity:
        for row in result.trace:
            if row.psi is None:
                continue
            with open(outdir / f"similarity_{row.round:03d}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["client"] + [str(c) for c in row.clients])
                for cid, mat_row in zip(row.clients, row.psi):
                    writer.writerow([cid] + [repr(float(v)) for v in mat_row])
    if args.figures:
        from . import report
        report.render_run(outdir)
    print(f"run complete: {outdir / 'rounds.csv'}")
    return 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rounds = args.rounds if args.rounds is not None else cfg.rounds_task
    if rounds < 1:
        raise ConfigError("--rounds must be >= 1")
    stream = build_stream(cfg)
    stream.export_csv(outdir / "dataset.csv", rounds, cfg.batch_size)
    print(f"wrote {outdir / 'dataset.csv'}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.static:
        cfg = replace(cfg, freeze_data=True, ssl_noise=0.0, strategy="stationary")
    windows = _parse_int_list(args.windows, "--windows")
    decays = _parse_float_list(args.decays, "--decays")
    if not windows or not decays:
        raise ConfigError("need at least one window and one decay")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = theorem1_sweep(cfg, windows, decays)
    with open(outdir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "decay", "avg_grad_sq"])
        for row in rows:
            writer.writerow([row["window"], repr(row["decay"]),
                             repr(row["avg_grad_sq"])])
    write_summary_json(outdir / "sweep.json",
                       {"config": config_to_flat(cfg), "static": bool(args.static),
                        "rows": rows})
    if args.figures:
        from . import report
        report.render_sweep(outdir / "sweep.csv")
    print(f"wrote {outdir / 'sweep.csv'}")
    return 0


def cmd_estimate_clusters(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    c_range = _parse_range(args.c_range)
    if any(c < 1 or c > cfg.num_clients for c in c_range):
        raise ConfigError("--c-range outside [1, number of clients]")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stream = build_stream(cfg)
    theta, _, _ = run_phase1(cfg, stream)
    probe = replace(cfg, rounds_task=1, scheme="sc-mma", participation=1.0)
    _, trace = run_phase2(probe, stream, theta)
    uploads = trace[0].uploads
    vectors = [uploads[k] for k in sorted(uploads)]
    import numpy as np
    elbow_c, sil_c, curves = estimate_cluster_count(np.asarray(vectors), c_range)
    with open(outdir / "cluster_estimate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["num_clusters", "wcss", "silhouette"])
        for c, w, s in zip(curves["num_clusters"], curves["wcss"], curves["silhouette"]):
            writer.writerow([c, repr(w), repr(s)])
    write_summary_json(outdir / "estimate.json",
                       {"config": config_to_flat(cfg), "elbow": elbow_c,
                        "silhouette": sil_c})
    if args.figures:
        from . import report
        report.render_cluster_estimate(outdir / "cluster_estimate.csv")
    print(f"elbow={elbow_c} silhouette={sil_c} ({outdir / 'cluster_estimate.csv'})")
    return 0


COMPARE_COLUMNS = ("scheme", "seed", "mean_rand", "mean_rand_last_half",
                   "final_rand", "mean_accuracy", "final_accuracy", "mean_rmse",
                   "final_rmse", "bytes_up_total", "bytes_down_total")


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    unknown = [s for s in schemes if s not in SCHEMES]
    if unknown:
        raise ConfigError(f"unknown scheme(s) {unknown}; choose from {SCHEMES}")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        for scheme in schemes:  # same seed => identical batches across schemes
            result = run_experiment(replace(cfg, seed=seed, scheme=scheme))
            rows.append({"scheme": scheme, "seed": seed, **result.summary})
    with open(outdir / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_COLUMNS)
        for row in rows:
            writer.writerow(["" if row.get(col) is None else
                             (repr(row[col]) if isinstance(row[col], float) else str(row[col]))
                             for col in COMPARE_COLUMNS])
    if args.figures:
        from . import report
        report.render_compare(outdir / "compare.csv")
    print(f"wrote {outdir / 'compare.csv'}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from . import report
    run_dir = Path(args.run_dir)
    written = []
    if (run_dir / "rounds.csv").exists():
        written += report.render_run(run_dir)
    if (run_dir / "sweep.csv").exists():
        written += report.render_sweep(run_dir / "sweep.csv")
    if (run_dir / "cluster_estimate.csv").exists():
        written += report.render_cluster_estimate(run_dir / "cluster_estimate.csv")
    if (run_dir / "compare.csv").exists():
        written += report.render_compare(run_dir / "compare.csv")
    if not written:
        raise ConfigError(f"no renderable CSV outputs found under {run_dir}")
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedreact",
        description="Deterministic two-stage federated learning simulator with "
                    "evolutionary client clustering.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser(
        "run", help="run one experiment and write rounds.csv / summary.json",
        epilog="rounds.csv columns: " + ", ".join(ROUND_COLUMNS))
    add_config_flags(run_p)
    run_p.add_argument("--outdir", required=True, help="output directory")
    run_p.add_argument("--dump-similarity", action="store_true",
                       help="write the smoothed similarity matrix per round")
    run_p.add_argument("--figures", action="store_true",
                       help="also render figures from the CSV outputs")
    run_p.set_defaults(func=cmd_run)

    gen_p = sub.add_parser("gen-data", help="export the synthetic stream to CSV")
    add_config_flags(gen_p)
    gen_p.add_argument("--outdir", required=True)
    gen_p.add_argument("--rounds", type=int, default=None,
                       help="rounds to export (default: --rounds-task)")
    gen_p.set_defaults(func=cmd_gen_data)

    sweep_p = sub.add_parser(
        "sweep-theorem1",
        help="average squared smoothed-gradient norm over (window, decay) grid")
    add_config_flags(sweep_p)
    sweep_p.add_argument("--outdir", required=True)
    sweep_p.add_argument("--windows", default="1,5,10,20",
                         help="comma-separated window sizes")
    sweep_p.add_argument("--decays", default="0.999",
                         help="comma-separated decay values")
    sweep_p.add_argument("--static", action="store_true",
                         help="freeze the data stream (stationary objective)")
    sweep_p.add_argument("--figures", action="store_true")
    sweep_p.set_defaults(func=cmd_sweep)

    est_p = sub.add_parser("estimate-clusters",
                           help="elbow/silhouette estimation of the cluster count")
    add_config_flags(est_p)
    est_p.add_argument("--outdir", required=True)
    est_p.add_argument("--c-range", default="1:8",
                       help="candidate counts, 'lo:hi' or comma-separated")
    est_p.add_argument("--figures", action="store_true")
    est_p.set_defaults(func=cmd_estimate_clusters)

    cmp_p = sub.add_parser("compare",
                           help="paired runs of several schemes over several seeds")
    add_config_flags(cmp_p)
    cmp_p.add_argument("--outdir", required=True)
    cmp_p.add_argument("--schemes", required=True,
                       help="comma-separated scheme list")
    cmp_p.add_argument("--seeds", type=int, default=1,
                       help="number of consecutive seeds starting at --seed")
    cmp_p.add_argument("--figures", action="store_true")
    cmp_p.set_defaults(func=cmd_compare)

    rep_p = sub.add_parser("report", help="render figures from CSV outputs")
    rep_p.add_argument("--run-dir", required=True)
    rep_p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
