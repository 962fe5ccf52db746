"""Render figures from the delimited outputs of a run.

Every figure is derived from the CSV files, never from in-memory state, so
`report` can be pointed at any previously produced output directory.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _column(rows: list[dict[str, str]], name: str) -> tuple[list[float], list[float]]:
    """(round, value) pairs for rows where the column is non-empty."""
    xs, ys = [], []
    for row in rows:
        if row.get(name):
            xs.append(float(row["round"]))
            ys.append(float(row[name]))
    return xs, ys


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_run(run_dir) -> list[Path]:
    """Figures for one run directory containing rounds.csv."""
    run_dir = Path(run_dir)
    rows = _read_csv(run_dir / "rounds.csv")
    fig_dir = run_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    written = []

    for col, ylabel, fname in (("rand_score", "Rand score", "rand_score.png"),
                               ("mean_accuracy", "cluster-averaged accuracy", "accuracy.png"),
                               ("rmse", "cluster-averaged RMSE", "rmse.png"),
                               ("a_t", "forgetting factor a_t", "forgetting_factor.png")):
        xs, ys = _column(rows, col)
        if not xs:
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(xs, ys, marker=".", lw=1)
        ax.set_xlabel("communication round")
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3)
        written.append(_save(fig, fig_dir / fname))

    xs_u, up = _column(rows, "bytes_up")
    xs_d, down = _column(rows, "bytes_down")
    if xs_u:
        cum_u = [sum(up[: i + 1]) for i in range(len(up))]
        cum_d = [sum(down[: i + 1]) for i in range(len(down))]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(xs_u, cum_u, label="upload")
        ax.plot(xs_d, cum_d, label="download")
        ax.set_xlabel("communication round")
        ax.set_ylabel("cumulative bytes")
        ax.legend()
        ax.grid(alpha=0.3)
        written.append(_save(fig, fig_dir / "communication.png"))
    return written


def render_sweep(sweep_csv) -> list[Path]:
    """Average squared smoothed-gradient norm against the window size."""
    sweep_csv = Path(sweep_csv)
    rows = _read_csv(sweep_csv)
    fig_dir = sweep_csv.parent / "figures"
    fig_dir.mkdir(exist_ok=True)
    decays = sorted({row["decay"] for row in rows}, key=float)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for decay in decays:
        pts = sorted(((int(r["window"]), float(r["avg_grad_sq"]))
                      for r in rows if r["decay"] == decay))
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"decay={decay}")
    ax.set_xlabel("smoothing window w")
    ax.set_ylabel("avg squared smoothed-gradient norm")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return [_save(fig, fig_dir / "gradnorm_vs_window.png")]


def render_cluster_estimate(curve_csv) -> list[Path]:
    """Elbow (WCSS) and silhouette curves against the candidate cluster count."""
    curve_csv = Path(curve_csv)
    rows = _read_csv(curve_csv)
    fig_dir = curve_csv.parent / "figures"
    fig_dir.mkdir(exist_ok=True)
    cs = [int(r["num_clusters"]) for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    axes[0].plot(cs, [float(r["wcss"]) for r in rows], marker="o")
    axes[0].set_xlabel("number of clusters")
    axes[0].set_ylabel("WCSS")
    axes[1].plot(cs, [float(r["silhouette"]) for r in rows], marker="o")
    axes[1].set_xlabel("number of clusters")
    axes[1].set_ylabel("silhouette score")
    for ax in axes:
        ax.grid(alpha=0.3)
    return [_save(fig, fig_dir / "cluster_estimate.png")]


def render_compare(compare_csv) -> list[Path]:
    """Per-scheme mean Rand and task score bars across seeds."""
    compare_csv = Path(compare_csv)
    rows = _read_csv(compare_csv)
    fig_dir = compare_csv.parent / "figures"
    fig_dir.mkdir(exist_ok=True)
    schemes = sorted({r["scheme"] for r in rows})
    written = []
    for col, ylabel, fname in (("mean_rand", "mean Rand score", "compare_rand.png"),
                               ("mean_accuracy", "mean accuracy", "compare_accuracy.png"),
                               ("mean_rmse", "mean RMSE", "compare_rmse.png")):
        vals = []
        for s in schemes:
            v = [float(r[col]) for r in rows if r["scheme"] == s and r.get(col)]
            vals.append(sum(v) / len(v) if v else None)
        if all(v is None for v in vals):
            continue
        fig, ax = plt.subplots(figsize=(6, 3.5))
        xs = range(len(schemes))
        ax.bar(xs, [0.0 if v is None else v for v in vals])
        ax.set_xticks(list(xs), schemes, rotation=20)
        ax.set_ylabel(ylabel)
        ax.grid(alpha=0.3, axis="y")
        written.append(_save(fig, fig_dir / fname))
    return written
