"""Command-line entry point.

Subcommands map one-to-one onto the package's capabilities:

- ``train``           run MAPPO or the group-relative trainer per config
- ``eval``            deterministic evaluation of a saved actor checkpoint
- ``landscape``       reward heat-grid over one FA position (M = 1)
- ``variance-sweep``  Monte-Carlo reward variance along one network axis
- ``bounds``          closed-form variance bound report
- ``compare``         equal-budget wall-time and flop comparison

Every subcommand writes its delimited output, a rendered figure, and a
run manifest into ``--out``. Exit codes: 0 success, 1 configuration
error, 2 runtime failure (with ``error.json`` left beside any partial
artifacts).
"""

from __future__ import annotations

import argparse
import configparser
import sys
from pathlib import Path

from .config import ExperimentConfig, file_sha256, load_experiment_config, with_overrides
from .errors import ConfigError
from .evaluation import (
    compare_runtimes,
    evaluate_policy,
    load_policy_checkpoint,
    run_training,
    save_policy_checkpoint,
)
from .reporting import (
    bounds_figure,
    compare_figure,
    eval_episodes_figure,
    landscape_figure,
    training_curves_figure,
    variance_sweep_figure,
    write_csv,
    write_error_manifest,
    write_eval_csv,
    write_manifest,
    write_metrics_csv,
    write_timing_csv,
)
from .rngs import substream
from .variance import AXIS_FIELDS, bound_report, landscape_grid, variance_sweep


def _cmd_train(config: ExperimentConfig, args, out: Path) -> int:
    def on_checkpoint(tag, policy, env_steps):
        save_policy_checkpoint(out / f"{tag}.ckpt", policy, config, env_steps)

    result = run_training(config, on_checkpoint=on_checkpoint)
    write_metrics_csv(out / "metrics.csv", config.algorithm, result.metrics)
    write_eval_csv(out / "eval.csv", result.eval_rows)
    write_timing_csv(out / "timing.csv", result.timing)
    training_curves_figure(out / "training_curves.png", result.metrics, result.eval_rows, config.algorithm)
    write_manifest(
        out / "manifest.json",
        config,
        extra={
            "config_file_sha256": file_sha256(args.config),
            "env_steps": result.timing["env_steps"],
            "final_eval_sum_rate": result.final_eval.mean_sum_rate,
        },
    )
    print(
        f"trained {config.algorithm} for {result.timing['env_steps']} env steps; "
        f"final eval sum-rate {result.final_eval.mean_sum_rate:.4f} bit/s/Hz"
    )
    return 0


def _cmd_eval(config: ExperimentConfig, args, out: Path) -> int:
    policy = load_policy_checkpoint(args.checkpoint, config)
    result = evaluate_policy(policy, config, episodes=args.episodes, seed=config.seed)
    rows = [
        {"episode": i, "sum_rate": rate, "sum_rate_ema": smooth}
        for i, (rate, smooth) in enumerate(zip(result.episode_rates, result.ema_curve))
    ]
    write_csv(out / "eval_episodes.csv", ["episode", "sum_rate", "sum_rate_ema"], rows)
    write_eval_csv(
        out / "eval.csv",
        [{"step": 0, "sum_rate_mean": result.mean_sum_rate, "sum_rate_ema": float(result.ema_curve[-1])}],
    )
    eval_episodes_figure(out / "eval_curve.png", rows)
    write_manifest(
        out / "manifest.json",
        config,
        extra={
            "config_file_sha256": file_sha256(args.config),
            "checkpoint": str(args.checkpoint),
            "episodes": len(rows),
            "mean_sum_rate": result.mean_sum_rate,
        },
    )
    print(f"mean sum-rate over {len(rows)} episodes: {result.mean_sum_rate:.4f} bit/s/Hz")
    return 0


def _cmd_landscape(config: ExperimentConfig, args, out: Path) -> int:
    rng = substream(config.seed, "landscape")
    xs, ys, rates = landscape_grid(config.network, args.resolution, rng)
    rows = [
        {"x": xs[ix], "y": ys[iy], "sum_rate": rates[iy, ix]}
        for iy in range(len(ys))
        for ix in range(len(xs))
    ]
    write_csv(out / "landscape.csv", ["x", "y", "sum_rate"], rows)
    landscape_figure(out / "landscape.png", xs, ys, rates)
    write_manifest(
        out / "manifest.json",
        config,
        extra={
            "config_file_sha256": file_sha256(args.config),
            "resolution": args.resolution,
            "max_sum_rate": float(rates.max()),
        },
    )
    print(f"landscape {args.resolution}x{args.resolution}: max sum-rate {rates.max():.4f} bit/s/Hz")
    return 0


def _parse_axis_values(axis: str, text: str) -> list:
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        values.append(float(token) if axis == "P_max" else int(token))
    if not values:
        raise ConfigError("--values must list at least one value")
    return values


def _cmd_variance_sweep(config: ExperimentConfig, args, out: Path) -> int:
    values = _parse_axis_values(args.axis, args.values)
    rows = variance_sweep(
        config.network,
        args.axis,
        values,
        n_samples=args.samples,
        seed=config.seed,
        horizon=config.mappo.horizon,
    )
    write_csv(out / "variance_sweep.csv", ["axis", "value", "mean_rate", "variance", "theorem1_bound"], rows)
    variance_sweep_figure(out / "variance_sweep.png", rows, args.axis)
    write_manifest(
        out / "manifest.json",
        config,
        extra={
            "config_file_sha256": file_sha256(args.config),
            "axis": args.axis,
            "values": values,
            "samples": args.samples,
        },
    )
    for row in rows:
        print(f"{args.axis}={row['value']}: mean {row['mean_rate']:.4f}, VAR {row['variance']:.4f}")
    return 0


def _cmd_bounds(config: ExperimentConfig, args, out: Path) -> int:
    horizon = args.horizon if args.horizon is not None else config.mappo.horizon
    report = bound_report(config.network, horizon)
    rows = [
        {"quantity": "d_max", "value": report.d_max},
        {"quantity": "lemma1", "value": report.lemma1},
        {"quantity": "jac_gamma_bound", "value": report.jac_gamma_bound},
        {"quantity": "jac_h_bound", "value": report.jac_h_bound},
        {"quantity": "lipschitz_bound", "value": report.lipschitz_bound},
        {"quantity": "theorem1", "value": report.theorem1},
    ]
    write_csv(out / "bounds.csv", ["quantity", "value"], rows)
    bounds_figure(out / "bounds.png", report)
    write_manifest(
        out / "manifest.json",
        config,
        extra={
            "config_file_sha256": file_sha256(args.config),
            "horizon": horizon,
            "dominant_scaling": report.dominant_scaling,
        },
    )
    for row in rows:
        print(f"{row['quantity']}: {row['value']:.6g}")
    return 0


def _cmd_compare(config: ExperimentConfig, args, out: Path) -> int:
    report = compare_runtimes(config)
    rows = [
        {
            "algorithm": algorithm,
            "collect_seconds": report[algorithm]["collect_seconds"],
            "update_seconds": report[algorithm]["update_seconds"],
            "total_seconds": report[algorithm]["total_seconds"],
            "env_steps": report[algorithm]["env_steps"],
        }
        for algorithm in ("mappo", "magrpo")
    ]
    write_csv(
        out / "compare.csv",
        ["algorithm", "collect_seconds", "update_seconds", "total_seconds", "env_steps"],
        rows,
    )
    compare_figure(out / "compare.png", report)
    write_manifest(
        out / "manifest.json",
        config,
        extra={
            "config_file_sha256": file_sha256(args.config),
            "flop_ratio": report["flop_ratio"],
            "wall_ratio": report["wall_ratio"],
            "update_flops": report["update_flops"],
        },
    )
    print(
        f"equal budget {report['mappo']['env_steps']} steps: "
        f"mappo {report['mappo']['total_seconds']:.2f}s, "
        f"magrpo {report['magrpo']['total_seconds']:.2f}s "
        f"(wall ratio {report['wall_ratio']:.3f}, flop ratio {report['flop_ratio']:.3f})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="famarl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(name: str, help_text: str, steps: bool = False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to an INI experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="out", help="artifact directory (created if missing)")
        if steps:
            p.add_argument("--steps", type=int, default=None, help="override the env-step budget")
        return p

    common("train", "train per config and write metrics, checkpoints, curves", steps=True).set_defaults(
        handler=_cmd_train
    )

    p = common("eval", "evaluate a saved actor checkpoint deterministically")
    p.add_argument("--checkpoint", required=True, help="actor checkpoint path")
    p.add_argument("--episodes", type=int, default=None, help="episode count (default from config)")
    p.set_defaults(handler=_cmd_eval)

    p = common("landscape", "reward heat-grid over one FA position (M = 1)")
    p.add_argument("--resolution", type=int, default=50, help="grid points per side")
    p.set_defaults(handler=_cmd_landscape)

    p = common("variance-sweep", "Monte-Carlo reward variance along one axis")
    p.add_argument("--axis", required=True, choices=sorted(AXIS_FIELDS), help="swept parameter")
    p.add_argument("--values", required=True, help="comma-separated axis values, e.g. 2,5")
    p.add_argument("--samples", type=int, default=2000, help="Monte-Carlo samples per point")
    p.set_defaults(handler=_cmd_variance_sweep)

    p = common("bounds", "closed-form variance bound report")
    p.add_argument("--horizon", type=int, default=None, help="episode horizon (default from config)")
    p.set_defaults(handler=_cmd_bounds)

    common("compare", "equal-budget runtime comparison of both trainers", steps=True).set_defaults(
        handler=_cmd_compare
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_experiment_config(args.config)
        config = with_overrides(config, seed=args.seed, total_steps=getattr(args, "steps", None))
    except (ConfigError, configparser.Error, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return args.handler(config, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # leave partial artifacts plus an error manifest
        try:
            write_error_manifest(out / "error.json", config, exc)
        except Exception as manifest_exc:
            print(f"could not write error manifest: {manifest_exc}", file=sys.stderr)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
