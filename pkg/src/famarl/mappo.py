"""MAPPO: lockstep rollout collection, GAE advantages, clipped-surrogate
actor ascent with entropy bonus, critic MSE descent, and the entropy/lr
schedules (linear annealing; hold-then-halve-on-plateau with a floor).

Collection advances a pool of environments in lockstep so policy and critic
forward passes batch across trajectories; each trajectory still draws its
actions and scene from its own named RNG substream, so results do not depend
on the pool layout.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nets
from .advantage import TrajectoryBatch, bootstrapped_targets, gae, normalize_batch
from .config import ExperimentConfig, MappoHyperparams
from .env import FluidNetworkEnv, LockstepPool
from .errors import TrainingDivergedError
from .rngs import substream


def entropy_coefficient(hyper: MappoHyperparams, env_steps: int) -> float:
    """Linear anneal from entropy_start to entropy_end over entropy_horizon
    environment steps, constant afterwards."""
    frac = min(env_steps / hyper.entropy_horizon, 1.0)
    return hyper.entropy_start + (hyper.entropy_end - hyper.entropy_start) * frac


@dataclass
class ScheduleState:
    """Learning-rate controller state (plateau detector on smoothed actor loss)."""

    lr: float
    smoothed_loss: float | None = None
    best_loss: float = np.inf
    updates_since_best: int = 0
    env_steps: int = 0
    update_index: int = 0


def schedules(hyper: MappoHyperparams, state: ScheduleState) -> tuple[float, float]:
    """Current (learning rate, entropy coefficient) for the given state."""
    return state.lr, entropy_coefficient(hyper, state.env_steps)


def observe_actor_loss(hyper: MappoHyperparams, state: ScheduleState, actor_loss: float) -> None:
    """Feed one update's actor loss into the plateau detector.

    The loss is EMA-smoothed; after the initial hold period, going
    ``lr_patience`` updates without a new smoothed minimum halves the learning
    rate (never below lr_floor).
    """
    if state.smoothed_loss is None:
        state.smoothed_loss = actor_loss
    else:
        state.smoothed_loss = (
            hyper.lr_smoothing * state.smoothed_loss + (1.0 - hyper.lr_smoothing) * actor_loss
        )
    if state.smoothed_loss < state.best_loss:
        state.best_loss = state.smoothed_loss
        state.updates_since_best = 0
    else:
        state.updates_since_best += 1
    state.update_index += 1
    if state.update_index <= hyper.lr_hold_updates:
        return
    if state.updates_since_best >= hyper.lr_patience:
        state.lr = max(state.lr / 2.0, hyper.lr_floor)
        state.updates_since_best = 0


def clipped_surrogate(ratio, advantage, eps: float):
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A), elementwise."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


class MappoTrainer:
    """Shared-actor, central-critic PPO over the fluid-antenna Dec-POMDP."""

    def __init__(
        self,
        config: ExperimentConfig,
        policy: nets.GaussianPolicy | None = None,
        critic: nets.MlpParams | None = None,
    ) -> None:
        self.config = config
        net = config.network
        self.hyper = config.mappo
        init_rng = substream(config.seed, "init")
        self.policy = policy or nets.init_policy(
            init_rng,
            obs_dim=net.obs_dim,
            num_agents=net.num_bs,
            action_dim=net.action_dim,
            hidden_width=config.policy.hidden_width,
            hidden_layers=config.policy.hidden_layers,
            log_std_init=config.policy.log_std_init,
        )
        self.critic = critic or nets.init_critic(
            init_rng, net.state_dim, config.policy.hidden_width, config.policy.hidden_layers
        )
        self.actor_adam = nets.init_adam(self.policy.arrays(), self.hyper.lr_initial)
        self.critic_adam = nets.init_adam(self.critic.arrays(), self.hyper.lr_initial)
        self.schedule = ScheduleState(lr=self.hyper.lr_initial)
        self.env_steps = 0
        self.trajectory_count = 0
        self.update_count = 0
        self.collect_seconds = 0.0
        self.update_seconds = 0.0
        self._env_pool: list[FluidNetworkEnv] = []
        self._one_hot = np.eye(net.num_bs)

    def _pool(self, size: int) -> list[FluidNetworkEnv]:
        while len(self._env_pool) < size:
            self._env_pool.append(
                FluidNetworkEnv(self.config.network, freeze_fa=self.config.freeze_fa)
            )
        return self._env_pool[:size]

    def collect(self, num_trajectories: int, with_values: bool = True) -> TrajectoryBatch:
        """Roll out ``num_trajectories`` episodes of length T in lockstep."""
        start = time.perf_counter()
        net = self.config.network
        n, horizon = net.num_bs, self.hyper.horizon
        batch = num_trajectories
        rngs = [substream(self.config.seed, "trajectory", self.trajectory_count + b) for b in range(batch)]
        self.trajectory_count += batch

        pool = LockstepPool(self._pool(batch))
        states_mat, obs_mat = pool.reset(rngs)

        observations_out = np.empty((n, batch, horizon, net.obs_dim))
        actions_out = np.empty((n, batch, horizon, net.action_dim))
        log_probs_out = np.empty((n, batch, horizon))
        states_out = np.empty((batch, horizon, net.state_dim))
        rewards_out = np.empty((batch, horizon))
        values_out = np.empty((batch, horizon)) if with_values else None

        ids = np.tile(self._one_hot, (batch, 1))  # rows grouped as (b, i)
        for t in range(horizon):
            states_out[:, t] = states_mat
            if with_values:
                values_out[:, t] = nets.critic_forward(self.critic, states_mat)
            x = np.concatenate([obs_mat.reshape(batch * n, -1), ids], axis=1)
            means, _ = nets.mlp_forward(self.policy.trunk, x)
            means = means.reshape(batch, n, -1)
            sigma = np.exp(self.policy.log_std)
            actions = np.empty_like(means)
            for b in range(batch):
                # one stream read per lane; rows fill in agent order
                actions[b] = means[b] + sigma * rngs[b].standard_normal((n, net.action_dim))
            log_probs = nets.gaussian_log_prob(actions, means, self.policy.log_std)

            for i in range(n):
                observations_out[i, :, t] = obs_mat[:, i]
                actions_out[i, :, t] = actions[:, i]
                log_probs_out[i, :, t] = log_probs[:, i]

            states_mat, obs_mat, step_rewards = pool.step(actions)
            rewards_out[:, t] = step_rewards

        self.env_steps += batch * horizon
        self.schedule.env_steps = self.env_steps
        self.collect_seconds += time.perf_counter() - start
        return TrajectoryBatch(
            observations=observations_out,
            actions=actions_out,
            log_probs=log_probs_out,
            states=states_out,
            rewards=rewards_out,
            values=values_out,
        )

    def _advantages(self, batch: TrajectoryBatch) -> tuple[np.ndarray, np.ndarray]:
        """Per-trajectory GAE (raw) and critic targets, both (B, T)."""
        advantages = np.stack(
            [
                gae(
                    batch.rewards[b],
                    np.append(batch.values[b], 0.0),  # finite horizon: bootstrap 0
                    self.hyper.discount,
                    self.hyper.gae_lambda,
                )
                for b in range(batch.num_trajectories)
            ]
        )
        targets = bootstrapped_targets(advantages, batch.values)
        return advantages, targets

    def _minibatches(self, count: int, epoch_rng: np.random.Generator | None) -> list[np.ndarray]:
        size = self.hyper.minibatch_size
        if size <= 0 or size >= count:
            return [np.arange(count)]
        order = epoch_rng.permutation(count)
        return [order[i : i + size] for i in range(0, count, size)]

    def update(self, batch: TrajectoryBatch) -> dict:
        """E epochs of clipped-surrogate/entropy ascent and critic MSE descent."""
        start = time.perf_counter()
        hyper = self.hyper
        n = batch.num_agents
        num_samples = n * batch.num_trajectories * batch.horizon
        num_states = batch.num_trajectories * batch.horizon

        raw_adv, targets = self._advantages(batch)
        adv = normalize_batch(raw_adv)  # once per update, before the epoch loop

        obs_flat = batch.observations.reshape(num_samples, -1)
        ids = np.repeat(self._one_hot, batch.num_trajectories * batch.horizon, axis=0)
        x_actor = np.concatenate([obs_flat, ids], axis=1)
        actions_flat = batch.actions.reshape(num_samples, -1)
        old_logp = batch.log_probs.reshape(num_samples)
        adv_flat = np.tile(adv.reshape(num_states), n)
        states_flat = batch.states.reshape(num_states, -1)
        targets_flat = targets.reshape(num_states)

        lr, iota = schedules(hyper, self.schedule)
        self.actor_adam.lr = lr
        self.critic_adam.lr = lr

        shuffle_rng = (
            substream(self.config.seed, "minibatch", self.update_count)
            if hyper.minibatch_size > 0
            else None
        )

        actor_loss = critic_loss = mean_ratio = 0.0
        actor_norm = critic_norm = 0.0
        for _ in range(hyper.epochs):
            epoch_ratios = []
            epoch_actor_loss = 0.0
            for mb in self._minibatches(num_samples, shuffle_rng):
                mean, cache = nets.mlp_forward(self.policy.trunk, x_actor[mb])
                logp = nets.gaussian_log_prob(actions_flat[mb], mean, self.policy.log_std)
                ratio = np.exp(logp - old_logp[mb])
                adv_mb = adv_flat[mb]
                unclipped = ratio * adv_mb
                clipped = np.clip(ratio, 1.0 - hyper.clip_ratio, 1.0 + hyper.clip_ratio) * adv_mb
                surrogate = np.minimum(unclipped, clipped)
                entropy = nets.policy_entropy(self.policy.log_std)
                # Objective per agent averages 1/(B*T) over its samples; the
                # agent sum over shared parameters is n * the sample mean.
                objective = n * (float(surrogate.mean()) + iota * entropy)
                epoch_actor_loss = -objective

                weight = n / mb.size
                grad_logp = weight * np.where(unclipped <= clipped, ratio * adv_mb, 0.0)
                grad_mean, grad_log_std = nets.log_prob_backward(
                    actions_flat[mb], mean, self.policy.log_std, grad_logp
                )
                grad_log_std += n * iota  # entropy bonus, dH/dlog_std = 1
                trunk_grads = nets.mlp_backward(self.policy.trunk, cache, -grad_mean)
                actor_grads = trunk_grads.arrays() + [-grad_log_std]
                actor_norm = nets.clip_grads(actor_grads, hyper.grad_clip)

                values, vcache = nets.critic_forward(self.critic, states_flat, return_cache=True)
                err = values - targets_flat
                critic_loss = float(np.mean(err**2))
                grad_v = (2.0 / num_states) * err[:, None]
                critic_grads = nets.mlp_backward(self.critic, vcache, grad_v).arrays()
                critic_norm = nets.clip_grads(critic_grads, hyper.grad_clip)

                if not (
                    np.isfinite(epoch_actor_loss)
                    and np.isfinite(critic_loss)
                    and np.isfinite(actor_norm)
                    and np.isfinite(critic_norm)
                ):
                    raise TrainingDivergedError(
                        f"non-finite loss at update {self.update_count}: "
                        f"actor={epoch_actor_loss}, critic={critic_loss}, "
                        f"grad_norms=({actor_norm}, {critic_norm})"
                    )

                nets.adam_step(self.policy.arrays(), actor_grads, self.actor_adam)
                self.policy.clamp_log_std()
                nets.adam_step(self.critic.arrays(), critic_grads, self.critic_adam)
                epoch_ratios.append(float(ratio.mean()))
            actor_loss = epoch_actor_loss
            mean_ratio = float(np.mean(epoch_ratios))

        observe_actor_loss(hyper, self.schedule, actor_loss)
        self.update_count += 1
        self.update_seconds += time.perf_counter() - start
        return {
            "step": self.env_steps,
            "reward_mean": float(batch.rewards.mean()),
            "actor_loss": actor_loss,
            "critic_loss": critic_loss,
            "entropy": nets.policy_entropy(self.policy.log_std),
            "mean_ratio": mean_ratio,
            "grad_norm_actor": actor_norm,
            "grad_norm_critic": critic_norm,
            "lr": lr,
            "entropy_coef": iota,
        }

    def train(
        self,
        total_steps: int,
        exact_budget: bool = False,
        after_update=None,
    ) -> list[dict]:
        """Collect/update until ``total_steps`` environment steps are consumed.

        ``exact_budget=True`` trims the final batch so consumption lands on
        exactly ceil(total/T)*T steps (used by the warm-up phase)."""
        rows = []
        horizon = self.hyper.horizon
        while self.env_steps < total_steps:
            num = self.hyper.batch_size
            if exact_budget:
                remaining = total_steps - self.env_steps
                num = min(num, -(-remaining // horizon))
            batch = self.collect(num)
            row = self.update(batch)
            rows.append(row)
            if after_update is not None:
                after_update(row)
        return rows
