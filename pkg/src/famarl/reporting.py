"""Artifact writers: CSV tables, run manifests, and matplotlib figures.

Every writer is deterministic given its inputs: floats are serialized with
repr (shortest round-trip form), line endings are LF, and the manifest
carries no timestamps, so two runs from the same (config, seed) produce
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .config import ExperimentConfig  # noqa: E402

MAPPO_METRIC_FIELDS = [
    "step",
    "reward_mean",
    "actor_loss",
    "critic_loss",
    "entropy",
    "mean_ratio",
    "grad_norm_actor",
    "grad_norm_critic",
    "lr",
    "entropy_coef",
]
MAGRPO_METRIC_FIELDS = [
    "step",
    "phase",
    "reward_mean",
    "actor_loss",
    "critic_loss",
    "entropy",
    "mean_ratio",
    "grad_norm_actor",
    "grad_norm_critic",
    "lr",
    "entropy_coef",
    "group_size",
    "mean_abs_advantage",
    "kl_mean",
]
EVAL_FIELDS = ["step", "sum_rate_mean", "sum_rate_ema"]
TIMING_FIELDS = ["phase", "seconds"]


def metric_fields(algorithm: str) -> list[str]:
    return MAGRPO_METRIC_FIELDS if algorithm == "magrpo" else MAPPO_METRIC_FIELDS


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, fields: list[str], rows: list[dict]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_cell(row.get(field)) for field in fields])


def write_metrics_csv(path, algorithm: str, rows: list[dict]) -> None:
    write_csv(path, metric_fields(algorithm), rows)


def write_eval_csv(path, rows: list[dict]) -> None:
    write_csv(path, EVAL_FIELDS, rows)


def write_timing_csv(path, timing: dict) -> None:
    rows = [
        {"phase": "collect", "seconds": timing["collect_seconds"]},
        {"phase": "update", "seconds": timing["update_seconds"]},
        {"phase": "total", "seconds": timing["total_seconds"]},
    ]
    write_csv(path, TIMING_FIELDS, rows)


def config_digest(config: ExperimentConfig) -> str:
    """sha256 over a canonical JSON form of the resolved configuration."""

    def canonical(value):
        if isinstance(value, dict):
            return {k: canonical(v) for k, v in sorted(value.items())}
        if isinstance(value, np.ndarray):
            return canonical(value.tolist())
        if isinstance(value, (list, tuple)):
            return [canonical(v) for v in value]
        if isinstance(value, (float, np.floating)):
            return repr(float(value))
        if isinstance(value, np.integer):
            return int(value)
        return value

    payload = json.dumps(canonical(asdict(config)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def write_manifest(path, config: ExperimentConfig, extra: dict | None = None) -> dict:
    manifest = {
        "config_sha256": config_digest(config),
        "algorithm": config.algorithm,
        "seed": config.seed,
        "total_steps": config.total_steps,
        "versions": {
            "famarl": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def write_error_manifest(path, config: ExperimentConfig, error: BaseException) -> None:
    write_manifest(
        path,
        config,
        extra={"error": {"type": type(error).__name__, "message": str(error)}},
    )


def training_curves_figure(path, metrics: list[dict], eval_rows: list[dict], algorithm: str) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    steps = [row["step"] for row in metrics]
    rewards = [row["reward_mean"] for row in metrics]
    axes[0].plot(steps, rewards, lw=0.9)
    if algorithm == "magrpo":
        boundary = [row["step"] for row in metrics if row.get("phase") == "warmup"]
        if boundary:
            axes[0].axvline(boundary[-1], color="gray", ls="--", lw=0.8, label="warm-up end")
            axes[0].legend()
    axes[0].set_xlabel("environment steps")
    axes[0].set_ylabel("collected reward mean")
    axes[0].set_title(f"{algorithm} training reward")
    if eval_rows:
        axes[1].plot(
            [row["step"] for row in eval_rows],
            [row["sum_rate_mean"] for row in eval_rows],
            lw=0.8,
            alpha=0.5,
            label="eval mean",
        )
        axes[1].plot(
            [row["step"] for row in eval_rows],
            [row["sum_rate_ema"] for row in eval_rows],
            lw=1.5,
            label="EMA",
        )
        axes[1].legend()
    axes[1].set_xlabel("environment steps")
    axes[1].set_ylabel("sum-rate (bit/s/Hz)")
    axes[1].set_title("deterministic evaluation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def eval_episodes_figure(path, rows: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    episodes = [row["episode"] for row in rows]
    ax.plot(episodes, [row["sum_rate"] for row in rows], lw=0.8, alpha=0.5, label="episode")
    ax.plot(episodes, [row["sum_rate_ema"] for row in rows], lw=1.5, label="EMA")
    ax.set_xlabel("episode")
    ax.set_ylabel("sum-rate (bit/s/Hz)")
    ax.set_title("deterministic checkpoint evaluation")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def landscape_figure(path, xs: np.ndarray, ys: np.ndarray, rates: np.ndarray) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    mesh = ax.pcolormesh(xs, ys, rates, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="sum-rate (bit/s/Hz)")
    ax.set_xlabel("FA x (m)")
    ax.set_ylabel("FA y (m)")
    ax.set_title("reward landscape over one FA position")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def variance_sweep_figure(path, rows: list[dict], axis: str) -> None:
    values = [row["value"] for row in rows]
    variances = [row["variance"] for row in rows]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(values, variances, marker="o")
    ax.set_xlabel(axis)
    ax.set_ylabel("VAR of sum-rate over FA placements")
    ax.set_title(f"reward variance vs {axis}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def compare_figure(path, report: dict) -> None:
    phases = ["collect_seconds", "update_seconds", "total_seconds"]
    labels = ["collect", "update", "total"]
    x = np.arange(len(phases))
    width = 0.36
    fig, ax = plt.subplots(figsize=(6, 4))
    for offset, algorithm in zip((-width / 2, width / 2), ("mappo", "magrpo")):
        ax.bar(x + offset, [report[algorithm][p] for p in phases], width, label=algorithm)
    ax.set_xticks(x, labels)
    ax.set_ylabel("wall time (s)")
    ax.set_title(f"equal-budget training time (flop ratio {report['flop_ratio']:.3f})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def bounds_figure(path, report) -> None:
    names = ["lemma1", "jac_gamma", "jac_h", "lipschitz", "theorem1"]
    values = [
        report.lemma1,
        report.jac_gamma_bound,
        report.jac_h_bound,
        report.lipschitz_bound,
        report.theorem1,
    ]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, values, color="tab:blue")
    ax.set_yscale("log")
    ax.set_ylabel("bound magnitude (log scale)")
    ax.set_title("closed-form variance bound components")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
