"""Advantage estimation: GAE, bootstrapped targets, batch normalization, and
the group-relative per-trajectory advantage used by the critic-free trainer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Additive guard in every standardization; degenerate batches map to ~0.
STD_GUARD = 1e-8


@dataclass
class TrajectoryBatch:
    """Rollout storage shared by both trainers.

    Leading axes: observations / actions / log_probs are (N, B, T, ...) per
    agent; states, rewards, values are (B, T, ...).  ``values`` is None in
    group mode, where the critic never runs.
    """

    observations: np.ndarray  # (N, B, T, d_o)
    actions: np.ndarray  # (N, B, T, d_a)
    log_probs: np.ndarray  # (N, B, T)
    states: np.ndarray  # (B, T, d_s)
    rewards: np.ndarray  # (B, T)
    values: np.ndarray | None = None  # (B, T)

    @property
    def num_agents(self) -> int:
        return self.observations.shape[0]

    @property
    def num_trajectories(self) -> int:
        return self.rewards.shape[0]

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    @property
    def returns(self) -> np.ndarray:
        """Undiscounted per-trajectory return sum_t R_t, shape (B,)."""
        return self.rewards.sum(axis=1)


def gae(rewards: np.ndarray, values: np.ndarray, discount: float, lam: float) -> np.ndarray:
    """Generalized advantage estimates by the backward recursion.

    ``values`` carries T+1 entries, the last being the terminal bootstrap
    (zero for finite-horizon episodes).  A_t = delta_t + discount*lam*A_{t+1}
    with delta_t = R_t + discount*V_{t+1} - V_t.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    horizon = rewards.shape[0]
    if values.shape[0] != horizon + 1:
        raise ValueError(
            f"values must have length T+1={horizon + 1}, got {values.shape[0]}"
        )
    deltas = rewards + discount * values[1:] - values[:-1]
    advantages = np.empty(horizon)
    running = 0.0
    for t in range(horizon - 1, -1, -1):
        running = deltas[t] + discount * lam * running
        advantages[t] = running
    return advantages


def bootstrapped_targets(advantages: np.ndarray, old_values: np.ndarray) -> np.ndarray:
    """Critic regression targets: the pre-update value plus the advantage."""
    advantages = np.asarray(advantages, dtype=float)
    old_values = np.asarray(old_values, dtype=float)
    if advantages.shape != old_values.shape:
        raise ValueError(f"shape mismatch: {advantages.shape} vs {old_values.shape}")
    return advantages + old_values


def normalize_batch(values: np.ndarray) -> np.ndarray:
    """Standardize to zero mean / unit variance with the population std."""
    values = np.asarray(values, dtype=float)
    return (values - values.mean()) / (values.std() + STD_GUARD)


def group_relative_advantage(returns: np.ndarray) -> np.ndarray:
    """Standardized per-trajectory returns; each step of trajectory g reuses
    the same scalar during the group update."""
    returns = np.asarray(returns, dtype=float)
    if returns.ndim != 1 or returns.shape[0] < 2:
        raise ValueError(f"group advantage needs at least 2 returns, got shape {returns.shape}")
    return normalize_batch(returns)
