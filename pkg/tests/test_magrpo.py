"""Group-relative trainer: KL estimator, flop model, warm-up, critic-free updates."""

import numpy as np
import pytest

from famarl import nets
from famarl.config import (
    ExperimentConfig,
    MagrpoHyperparams,
    MappoHyperparams,
    PolicyConfig,
    desk_network_config,
)
from famarl.errors import ConfigError
from famarl.magrpo import MagrpoTrainer, count_update_flops, kl_approx


def desk_experiment(seed=0, warmup_steps=20, group_size=4) -> ExperimentConfig:
    return ExperimentConfig(
        network=desk_network_config(),
        policy=PolicyConfig(hidden_width=16, hidden_layers=2, log_std_init=-0.5),
        mappo=MappoHyperparams(
            batch_size=4, horizon=5, epochs=2, lr_initial=1e-3, entropy_horizon=10_000
        ),
        magrpo=MagrpoHyperparams(group_size=group_size, warmup_steps=warmup_steps),
        algorithm="magrpo",
        seed=seed,
        total_steps=1000,
    )


class TestKlApprox:
    def test_zero_when_identical(self):
        x = np.linspace(-3.0, 2.0, 50)
        assert np.max(np.abs(kl_approx(x, x))) == 0.0

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(0)
        ref = rng.normal(0.0, 3.0, 10_000)
        cur = ref + rng.normal(0.0, 2.0, 10_000)
        assert np.min(kl_approx(ref, cur)) >= 0.0

    def test_quadratic_near_agreement(self):
        # r - ln r - 1 with r = exp(d) behaves as d^2 / 2 for small d
        for d in (1e-3, -1e-3, 5e-4):
            assert kl_approx(d, 0.0) == pytest.approx(d * d / 2, rel=1e-2)

    def test_penalty_gradient_matches_finite_differences(self):
        # d(-mu * kl)/d logp_cur = mu * (exp(logp_ref - logp_cur) - 1)
        mu, ref = 0.3, 0.7
        for cur in (-0.5, 0.2, 1.4):
            analytic = mu * (np.exp(ref - cur) - 1.0)
            delta = 1e-6
            fd = (-mu * kl_approx(ref, cur + delta) + mu * kl_approx(ref, cur - delta)) / (
                2 * delta
            )
            assert analytic == pytest.approx(fd, rel=1e-6)


class TestFlopModel:
    def test_exact_small_example(self):
        # mappo: J*(ds+do+da) + J + 2*J^2*Jh; magrpo drops the critic terms
        assert count_update_flops("mappo", 2, 3, 4, 5) == 2 * 12 + 2 + 2 * 4 * 2
        assert count_update_flops("magrpo", 2, 3, 4, 5, group_size=8) == 8 + 10 + 8 + 8

    def test_ratio_near_half_at_reference_width(self):
        # four-antenna network at width 256
        ds, do, da = 2 * (12 + 2 * 2 * 4 * 3 + 8), 12 + 4 * 2 * 4 + 10, 12 + 2 * 2 * 4
        ratio = count_update_flops("magrpo", 256, ds, do, da, group_size=16) / count_update_flops(
            "mappo", 256, ds, do, da
        )
        assert 0.4 <= ratio <= 0.6

    def test_validation(self):
        with pytest.raises(ConfigError):
            count_update_flops("mappo", 0, 3, 4, 5)
        with pytest.raises(ConfigError):
            count_update_flops("ppo", 2, 3, 4, 5)


class TestWarmup:
    def test_reference_frozen_copy(self):
        trainer = MagrpoTrainer(desk_experiment(seed=1))
        rows = trainer.warmup(20)
        assert trainer.env_steps == 20
        assert len(rows) == 1 and rows[0]["phase"] == "warmup"
        for ref, live in zip(trainer.reference.arrays(), trainer.policy.arrays()):
            assert np.array_equal(ref, live)
        trainer.policy.trunk.weights[0][0, 0] += 1.0
        assert trainer.reference.trunk.weights[0][0, 0] != trainer.policy.trunk.weights[0][0, 0]

    def test_warmup_budget_exact_for_awkward_totals(self):
        trainer = MagrpoTrainer(desk_experiment(seed=2, warmup_steps=23))
        trainer.warmup(23)
        assert trainer.env_steps == 25  # ceil(23 / 5) * 5

    def test_kl_zero_immediately_after_warmup(self):
        trainer = MagrpoTrainer(desk_experiment(seed=3))
        trainer.warmup(20)
        batch = trainer.collect_group()
        n, g, t = batch.num_agents, batch.num_trajectories, batch.horizon
        obs = batch.observations.reshape(n * g * t, -1)
        ids = np.repeat(np.eye(n), g * t, axis=0)
        x = np.concatenate([obs, ids], axis=1)
        actions = batch.actions.reshape(n * g * t, -1)
        ref_mean, _ = nets.mlp_forward(trainer.reference.trunk, x)
        cur_mean, _ = nets.mlp_forward(trainer.policy.trunk, x)
        kl = kl_approx(
            nets.gaussian_log_prob(actions, ref_mean, trainer.reference.log_std),
            nets.gaussian_log_prob(actions, cur_mean, trainer.policy.log_std),
        )
        assert np.max(np.abs(kl)) < 1e-12


class TestGroupPhase:
    def test_collect_group_has_no_values(self):
        trainer = MagrpoTrainer(desk_experiment(seed=4))
        trainer.warmup(20)
        batch = trainer.collect_group()
        assert batch.values is None
        assert batch.num_trajectories == 4

    def test_no_critic_calls(self):
        trainer = MagrpoTrainer(desk_experiment(seed=5))
        trainer.warmup(20)
        before = nets.call_counts["critic_forward"]
        for _ in range(3):
            trainer.update_group(trainer.collect_group())
        assert nets.call_counts["critic_forward"] == before

    def test_update_metrics(self):
        trainer = MagrpoTrainer(desk_experiment(seed=6))
        trainer.warmup(20)
        row = trainer.update_group(trainer.collect_group())
        expected = {
            "step", "phase", "reward_mean", "actor_loss", "entropy", "mean_ratio",
            "grad_norm_actor", "lr", "entropy_coef", "group_size", "mean_abs_advantage",
            "kl_mean",
        }
        assert expected <= set(row)
        assert row["phase"] == "main"
        assert row["group_size"] == 4
        assert row["kl_mean"] >= 0.0
        assert trainer.group_updates == 1

    def test_update_changes_policy_not_critic(self):
        trainer = MagrpoTrainer(desk_experiment(seed=7))
        trainer.warmup(20)
        critic_before = [a.copy() for a in trainer.mappo.critic.arrays()]
        policy_before = [a.copy() for a in trainer.policy.arrays()]
        trainer.update_group(trainer.collect_group())
        assert any(
            not np.array_equal(a, b) for a, b in zip(policy_before, trainer.policy.arrays())
        )
        for a, b in zip(critic_before, trainer.mappo.critic.arrays()):
            assert np.array_equal(a, b)

    def test_degenerate_group_gets_zero_advantage(self):
        trainer = MagrpoTrainer(desk_experiment(seed=8))
        trainer.warmup(20)
        batch = trainer.collect_group()
        batch.rewards[:] = 1.0  # identical returns across the group
        row = trainer.update_group(batch)
        assert row["mean_abs_advantage"] == 0.0
        assert np.isfinite(row["actor_loss"])

    def test_group_phase_deterministic(self):
        def run(seed):
            trainer = MagrpoTrainer(desk_experiment(seed=seed))
            trainer.train(60)
            return trainer

        a, b = run(9), run(9)
        for x, y in zip(a.policy.arrays(), b.policy.arrays()):
            assert np.array_equal(x, y)

    def test_requires_warmup_first(self):
        trainer = MagrpoTrainer(desk_experiment(seed=10))
        batch = MagrpoTrainer(desk_experiment(seed=10)).mappo.collect(4, with_values=False)
        with pytest.raises(RuntimeError):
            trainer.update_group(batch)


class TestTrainLoop:
    def test_total_budget_includes_warmup(self):
        trainer = MagrpoTrainer(desk_experiment(seed=11, warmup_steps=20, group_size=4))
        rows = trainer.train(100)
        # 20 warm-up steps, then groups of 4 * 5 = 20 until the budget is spent
        assert trainer.env_steps == 100
        phases = [r["phase"] for r in rows]
        assert phases == ["warmup"] + ["main"] * 4

    def test_warmup_exceeding_total_raises(self):
        trainer = MagrpoTrainer(desk_experiment(seed=12, warmup_steps=200))
        with pytest.raises(ConfigError):
            trainer.train(100)

    def test_default_warmup_is_eighth_of_total(self):
        trainer = MagrpoTrainer(desk_experiment(seed=13, warmup_steps=None))
        rows = trainer.train(160)
        warmup_rows = [r for r in rows if r["phase"] == "warmup"]
        assert sum(1 for r in rows if r["phase"] == "main") > 0
        assert warmup_rows and warmup_rows[-1]["step"] == 20  # 160 // 8

    def test_existing_reference_skips_second_warmup(self):
        trainer = MagrpoTrainer(desk_experiment(seed=14, warmup_steps=20))
        trainer.warmup(20)
        ref_before = [a.copy() for a in trainer.reference.arrays()]
        rows = trainer.train(60)
        assert all(r["phase"] == "main" for r in rows)
        for a, b in zip(ref_before, trainer.reference.arrays()):
            assert np.array_equal(a, b)

    def test_after_update_callback_sees_both_phases(self):
        trainer = MagrpoTrainer(desk_experiment(seed=15, warmup_steps=20))
        seen = []
        trainer.train(60, after_update=seen.append)
        assert [r["phase"] for r in seen] == ["warmup", "main", "main"]
