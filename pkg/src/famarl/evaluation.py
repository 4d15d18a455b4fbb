"""Deterministic evaluation, EMA smoothing, and experiment orchestration.

Evaluation plays the Gaussian mean action (no sampling noise) over fresh
episodes whose RNG substreams depend only on (seed, episode index), so
repeated evaluations of the same parameters give identical numbers and
successive evaluation points during training are directly comparable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nets
from .config import ExperimentConfig
from .env import FluidNetworkEnv, LocalAction
from .errors import CheckpointError, ConfigError
from .magrpo import MagrpoTrainer, count_update_flops
from .mappo import MappoTrainer
from .rngs import substream


def ema(values, factor: float) -> np.ndarray:
    """Exponential moving average y_t = factor*y_{t-1} + (1-factor)*x_t,
    seeded with y_0 = x_0."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    if values.size == 0:
        return out
    out[0] = values[0]
    for t in range(1, values.size):
        out[t] = factor * out[t - 1] + (1.0 - factor) * values[t]
    return out


@dataclass(frozen=True)
class EvalResult:
    mean_sum_rate: float
    episode_rates: np.ndarray
    ema_curve: np.ndarray


def evaluate_policy(
    policy: nets.GaussianPolicy,
    config: ExperimentConfig,
    episodes: int | None = None,
    seed: int | None = None,
    episode_offset: int = 0,
) -> EvalResult:
    """Mean per-step sum-rate of the deterministic (mean-action) policy.

    Episode e always draws its scene from substream (seed, "eval",
    episode_offset + e); the policy parameters are read-only throughout.
    Training curves advance the offset so every eval point scores fresh
    scenes instead of re-scoring one fixed draw.
    """
    net = config.network
    episodes = config.eval_episodes if episodes is None else episodes
    seed = config.seed if seed is None else seed
    one_hot = np.eye(net.num_bs)
    env = FluidNetworkEnv(net, freeze_fa=config.freeze_fa)
    rates = np.empty(episodes)
    for ep in range(episodes):
        rng = substream(seed, "eval", episode_offset + ep)
        _, observations = env.reset(rng)
        total = 0.0
        for _ in range(config.mappo.horizon):
            actions = []
            for i in range(net.num_bs):
                mean, _ = nets.actor_forward(policy, observations[i].flatten(), one_hot[i])
                actions.append(LocalAction.from_flat(mean, net.num_antennas, net.num_users))
            _, observations, step_reward = env.step(actions)
            total += step_reward
        rates[ep] = total / config.mappo.horizon
    return EvalResult(
        mean_sum_rate=float(rates.mean()),
        episode_rates=rates,
        ema_curve=ema(rates, config.ema_factor),
    )


def policy_checkpoint_meta(config: ExperimentConfig, env_steps: int) -> dict:
    return {
        "algorithm": config.algorithm,
        "seed": config.seed,
        "env_steps": env_steps,
        "obs_dim": config.network.obs_dim,
        "action_dim": config.network.action_dim,
        "num_agents": config.network.num_bs,
        "hidden_width": config.policy.hidden_width,
        "hidden_layers": config.policy.hidden_layers,
    }


def save_policy_checkpoint(path, policy, config: ExperimentConfig, env_steps: int) -> None:
    nets.save_checkpoint(path, nets.policy_named_arrays(policy), policy_checkpoint_meta(config, env_steps))


def load_policy_checkpoint(path, config: ExperimentConfig) -> nets.GaussianPolicy:
    """Load an actor checkpoint, checking shapes against the configuration."""
    arrays, meta = nets.load_checkpoint(path)
    policy = nets.policy_from_named_arrays(arrays)
    net = config.network
    expected_in = net.obs_dim + net.num_bs
    got_in = policy.trunk.weights[0].shape[0]
    got_out = policy.trunk.weights[-1].shape[1]
    if got_in != expected_in or got_out != net.action_dim:
        raise CheckpointError(
            f"{path}: checkpoint expects input {got_in} and action {got_out}, "
            f"config implies input {expected_in} and action {net.action_dim}"
        )
    if meta.get("hidden_width") not in (None, config.policy.hidden_width):
        raise CheckpointError(
            f"{path}: checkpoint hidden width {meta['hidden_width']} != "
            f"config {config.policy.hidden_width}"
        )
    return policy


@dataclass
class RunResult:
    metrics: list[dict]
    eval_rows: list[dict]
    timing: dict
    final_eval: EvalResult
    trainer: object


def run_training(config: ExperimentConfig, on_checkpoint=None) -> RunResult:
    """Train per config with periodic deterministic evaluation.

    ``on_checkpoint(tag, policy, env_steps)`` fires at every checkpoint
    cadence boundary, after the warm-up phase (tag "warmup", group-relative
    runs only), and at the end (tag "final").
    """
    if config.algorithm == "magrpo":
        trainer: MagrpoTrainer | MappoTrainer = MagrpoTrainer(config)
        policy = trainer.policy
    else:
        trainer = MappoTrainer(config)
        policy = trainer.policy

    eval_rows: list[dict] = []
    eval_history: list[float] = []
    next_eval = config.eval_interval
    next_checkpoint = config.checkpoint_interval or None
    warmup_saved = False

    def after_update(row: dict) -> None:
        nonlocal next_eval, next_checkpoint, warmup_saved
        steps = row["step"]
        if config.algorithm == "magrpo" and not warmup_saved and row.get("phase") == "main":
            warmup_saved = True
            if on_checkpoint is not None:
                on_checkpoint("warmup", trainer.reference, steps)
        while steps >= next_eval:
            result = evaluate_policy(
                policy, config, episode_offset=len(eval_history) * config.eval_episodes
            )
            eval_history.append(result.mean_sum_rate)
            smoothed = ema(eval_history, config.ema_factor)
            eval_rows.append(
                {
                    "step": steps,
                    "sum_rate_mean": result.mean_sum_rate,
                    "sum_rate_ema": float(smoothed[-1]),
                }
            )
            next_eval += config.eval_interval
        if next_checkpoint is not None and on_checkpoint is not None and steps >= next_checkpoint:
            on_checkpoint(f"step{steps}", policy, steps)
            next_checkpoint += config.checkpoint_interval

    start = time.perf_counter()
    metrics = trainer.train(config.total_steps, after_update=after_update)
    total_seconds = time.perf_counter() - start

    if config.algorithm == "magrpo" and not warmup_saved and on_checkpoint is not None:
        # budget so small that no group update ran; reference still exists
        on_checkpoint("warmup", trainer.reference, trainer.env_steps)
    final_eval = evaluate_policy(policy, config)
    if on_checkpoint is not None:
        on_checkpoint("final", policy, trainer.env_steps)

    if config.algorithm == "magrpo":
        collect = trainer.mappo.collect_seconds
        update = trainer.mappo.update_seconds + trainer.update_seconds
    else:
        collect = trainer.collect_seconds
        update = trainer.update_seconds
    timing = {
        "collect_seconds": collect,
        "update_seconds": update,
        "total_seconds": total_seconds,
        "env_steps": trainer.env_steps,
    }
    return RunResult(
        metrics=metrics,
        eval_rows=eval_rows,
        timing=timing,
        final_eval=final_eval,
        trainer=trainer,
    )


def compare_runtimes(config: ExperimentConfig, total_steps: int | None = None) -> dict:
    """Train both algorithms from one base config at an equal step budget and
    report wall-time by phase plus the closed-form update flop ratio."""
    from dataclasses import replace

    total = total_steps if total_steps is not None else config.total_steps
    report: dict = {}
    for algorithm in ("mappo", "magrpo"):
        run_config = replace(config, algorithm=algorithm, total_steps=total)
        result = run_training(run_config)
        report[algorithm] = result.timing
    if report["mappo"]["env_steps"] != report["magrpo"]["env_steps"]:
        raise ConfigError(
            "compare_runtimes expects equal budgets, got "
            f"{report['mappo']['env_steps']} vs {report['magrpo']['env_steps']}"
        )
    net, policy = config.network, config.policy
    flops = {
        algorithm: count_update_flops(
            algorithm,
            policy.hidden_width,
            net.state_dim,
            net.obs_dim,
            net.action_dim,
            group_size=config.magrpo.group_size,
            hidden_layers=policy.hidden_layers,
        )
        for algorithm in ("mappo", "magrpo")
    }
    report["flop_ratio"] = flops["magrpo"] / flops["mappo"]
    report["update_flops"] = flops
    report["wall_ratio"] = report["magrpo"]["total_seconds"] / report["mappo"]["total_seconds"]
    return report
