"""Evaluation, artifact writers, and the command-line interface."""

import json
from pathlib import Path

import numpy as np
import pytest

from famarl import nets
from famarl.cli import main
from famarl.config import ExperimentConfig, load_experiment_config
from famarl.errors import CheckpointError
from famarl.evaluation import (
    compare_runtimes,
    ema,
    evaluate_policy,
    load_policy_checkpoint,
    run_training,
    save_policy_checkpoint,
)
from famarl.mappo import MappoTrainer
from famarl.reporting import MAGRPO_METRIC_FIELDS, MAPPO_METRIC_FIELDS, config_digest

TINY_INI = """
[run]
algorithm = {algorithm}
seed = 3
total_steps = {total_steps}
eval_interval = 20
eval_episodes = 2

[network]
num_bs = 2
num_users = 2
num_antennas = 2
num_paths = 4
noise_power = 0 dBm
path_loss_exponent = 2.0
reference_gain = 1.0

[policy]
hidden_width = 16
log_std_init = -0.5

[mappo]
batch_size = 4
horizon = 5
epochs = 2
lr_initial = 1e-3
entropy_horizon = 10000

[magrpo]
group_size = 4
warmup_steps = 20
"""


@pytest.fixture
def tiny_ini(tmp_path):
    def write(algorithm="mappo", total_steps=60, **extra):
        text = TINY_INI.format(algorithm=algorithm, total_steps=total_steps)
        lines = text.splitlines()
        for key, value in extra.items():
            replaced = False
            for i, line in enumerate(lines):
                if line.split("=")[0].strip() == key:
                    lines[i] = f"{key} = {value}"
                    replaced = True
                    break
            if not replaced:
                lines.insert(lines.index("[network]") + 1, f"{key} = {value}")
        path = tmp_path / f"{algorithm}_{total_steps}.ini"
        path.write_text("\n".join(lines) + "\n")
        return str(path)

    return write


class TestEma:
    def test_constant_sequence_is_fixed_point(self):
        out = ema(np.full(40, 3.7), 0.99)
        assert np.allclose(out, 3.7)

    def test_first_output_is_first_input(self):
        out = ema([5.0, 0.0, 0.0], 0.99)
        assert out[0] == 5.0

    def test_matches_brute_force_recursion(self):
        rng = np.random.default_rng(0)
        xs = rng.normal(size=200)
        out = ema(xs, 0.99)
        acc = xs[0]
        for t in range(1, len(xs)):
            acc = 0.99 * acc + 0.01 * xs[t]
            assert abs(out[t] - acc) < 1e-12

    def test_factor_zero_is_identity(self):
        xs = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(ema(xs, 0.0), xs)

    def test_empty_input(self):
        assert ema(np.array([]), 0.99).size == 0


def tiny_config(algorithm="mappo", **run_kwargs) -> ExperimentConfig:
    from famarl.config import MagrpoHyperparams, MappoHyperparams, PolicyConfig
    from famarl.config import desk_network_config

    kwargs = dict(
        network=desk_network_config(num_paths=4),
        policy=PolicyConfig(hidden_width=16, hidden_layers=2, log_std_init=-0.5),
        mappo=MappoHyperparams(batch_size=4, horizon=5, epochs=2, lr_initial=1e-3, entropy_horizon=10_000),
        magrpo=MagrpoHyperparams(group_size=4, warmup_steps=20),
        algorithm=algorithm,
        seed=3,
        total_steps=60,
        eval_interval=20,
        eval_episodes=2,
    )
    kwargs.update(run_kwargs)
    return ExperimentConfig(**kwargs)


class TestEvaluatePolicy:
    def test_deterministic_across_calls(self):
        config = tiny_config()
        trainer = MappoTrainer(config)
        first = evaluate_policy(trainer.policy, config, episodes=3, seed=5)
        second = evaluate_policy(trainer.policy, config, episodes=3, seed=5)
        assert np.array_equal(first.episode_rates, second.episode_rates)
        assert first.mean_sum_rate == second.mean_sum_rate

    def test_does_not_mutate_parameters(self):
        config = tiny_config()
        trainer = MappoTrainer(config)
        before = [a.copy() for a in trainer.policy.arrays()]
        evaluate_policy(trainer.policy, config, episodes=2, seed=5)
        for old, new in zip(before, trainer.policy.arrays()):
            assert np.array_equal(old, new)

    def test_ema_curve_matches_rates(self):
        config = tiny_config()
        trainer = MappoTrainer(config)
        result = evaluate_policy(trainer.policy, config, episodes=4, seed=5)
        assert np.allclose(result.ema_curve, ema(result.episode_rates, config.ema_factor))
        assert result.mean_sum_rate == pytest.approx(result.episode_rates.mean())

    def test_seed_changes_episodes(self):
        config = tiny_config()
        trainer = MappoTrainer(config)
        a = evaluate_policy(trainer.policy, config, episodes=3, seed=5)
        b = evaluate_policy(trainer.policy, config, episodes=3, seed=6)
        assert not np.array_equal(a.episode_rates, b.episode_rates)


class TestCheckpointIo:
    def test_round_trip_preserves_policy(self, tmp_path):
        config = tiny_config()
        trainer = MappoTrainer(config)
        path = tmp_path / "actor.ckpt"
        save_policy_checkpoint(path, trainer.policy, config, env_steps=0)
        loaded = load_policy_checkpoint(path, config)
        for old, new in zip(trainer.policy.arrays(), loaded.arrays()):
            assert np.array_equal(old, new)

    def test_shape_mismatch_rejected(self, tmp_path):
        config = tiny_config()
        trainer = MappoTrainer(config)
        path = tmp_path / "actor.ckpt"
        save_policy_checkpoint(path, trainer.policy, config, env_steps=0)
        from dataclasses import replace
        from famarl.config import desk_network_config

        other = replace(config, network=desk_network_config(num_antennas=4, num_paths=4))
        with pytest.raises(CheckpointError, match="checkpoint"):
            load_policy_checkpoint(path, other)


class TestRunTraining:
    def test_magrpo_checkpoints_warmup_reference(self):
        config = tiny_config("magrpo", total_steps=100)
        tags = []
        run_training(config, on_checkpoint=lambda tag, policy, steps: tags.append(tag))
        assert tags[0] == "warmup"
        assert tags[-1] == "final"

    def test_eval_rows_at_interval_crossings(self):
        config = tiny_config()
        result = run_training(config)
        assert [row["step"] for row in result.eval_rows] == [20, 40, 60]
        assert result.timing["env_steps"] == 60

    def test_interval_checkpoints(self):
        config = tiny_config(checkpoint_interval=40)
        tags = []
        run_training(config, on_checkpoint=lambda tag, policy, steps: tags.append(tag))
        assert "step40" in tags and tags[-1] == "final"


class TestCompareRuntimes:
    def test_equal_budgets_and_flop_ratio(self):
        config = tiny_config("magrpo", total_steps=100)
        report = compare_runtimes(config)
        assert report["mappo"]["env_steps"] == report["magrpo"]["env_steps"] == 100
        assert 0.0 < report["flop_ratio"] < 1.0
        assert report["mappo"]["total_seconds"] > 0


class TestConfigDigest:
    def test_stable_and_sensitive(self):
        a, b = tiny_config(), tiny_config()
        assert config_digest(a) == config_digest(b)
        c = tiny_config(seed=4)
        assert config_digest(a) != config_digest(c)


class TestCliTrain:
    def test_artifacts_and_determinism(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", ini, "--out", str(out1)]) == 0
        assert main(["train", "--config", ini, "--out", str(out2)]) == 0
        for name in ("metrics.csv", "eval.csv", "manifest.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
        for name in ("timing.csv", "training_curves.png", "final.ckpt"):
            assert (out1 / name).stat().st_size > 0

    def test_mappo_metrics_schema(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        out = tmp_path / "run"
        main(["train", "--config", ini, "--out", str(out)])
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(MAPPO_METRIC_FIELDS)
        steps = [int(line.split(",")[0]) for line in lines[1:]]
        assert steps == sorted(steps) and len(set(steps)) == len(steps)

    def test_magrpo_metrics_schema_and_warmup_ckpt(self, tiny_ini, tmp_path):
        ini = tiny_ini("magrpo", total_steps=100)
        out = tmp_path / "run"
        assert main(["train", "--config", ini, "--out", str(out)]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == ",".join(MAGRPO_METRIC_FIELDS)
        assert (out / "warmup.ckpt").exists()
        phases = [line.split(",")[1] for line in lines[1:]]
        assert phases[0] == "warmup" and phases[-1] == "main"

    def test_seed_override_changes_metrics(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        main(["train", "--config", ini, "--out", str(out1)])
        main(["train", "--config", ini, "--seed", "9", "--out", str(out2)])
        assert (out1 / "metrics.csv").read_bytes() != (out2 / "metrics.csv").read_bytes()
        manifest = json.loads((out2 / "manifest.json").read_text())
        assert manifest["seed"] == 9

    def test_steps_override(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        out = tmp_path / "run"
        main(["train", "--config", ini, "--steps", "40", "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["env_steps"] == 40

    def test_lf_line_endings_and_no_crlf(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        out = tmp_path / "run"
        main(["train", "--config", ini, "--out", str(out)])
        raw = (out / "metrics.csv").read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")


class TestCliEval:
    def test_eval_after_train(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        run_dir, eval_dir = tmp_path / "run", tmp_path / "eval"
        main(["train", "--config", ini, "--out", str(run_dir)])
        code = main(
            [
                "eval",
                "--config",
                ini,
                "--checkpoint",
                str(run_dir / "final.ckpt"),
                "--episodes",
                "3",
                "--out",
                str(eval_dir),
            ]
        )
        assert code == 0
        lines = (eval_dir / "eval_episodes.csv").read_text().splitlines()
        assert lines[0] == "episode,sum_rate,sum_rate_ema"
        assert len(lines) == 4
        assert (eval_dir / "eval_curve.png").stat().st_size > 0

    def test_missing_checkpoint_is_runtime_failure(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        out = tmp_path / "eval"
        code = main(
            ["eval", "--config", ini, "--checkpoint", str(tmp_path / "nope.ckpt"), "--out", str(out)]
        )
        assert code == 2
        error = json.loads((out / "error.json").read_text())
        assert "error" in error


class TestCliAnalysis:
    def test_landscape(self, tiny_ini, tmp_path):
        ini = tiny_ini(num_antennas=1)
        out = tmp_path / "land"
        assert main(["landscape", "--config", ini, "--resolution", "8", "--out", str(out)]) == 0
        lines = (out / "landscape.csv").read_text().splitlines()
        assert lines[0] == "x,y,sum_rate"
        assert len(lines) == 1 + 64
        assert (out / "landscape.png").stat().st_size > 0

    def test_landscape_rejects_multi_antenna(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        assert main(["landscape", "--config", ini, "--out", str(tmp_path / "x")]) == 1

    def test_variance_sweep(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        out = tmp_path / "var"
        code = main(
            [
                "variance-sweep",
                "--config",
                ini,
                "--axis",
                "M",
                "--values",
                "2,3",
                "--samples",
                "120",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        lines = (out / "variance_sweep.csv").read_text().splitlines()
        assert lines[0] == "axis,value,mean_rate,variance,theorem1_bound"
        assert len(lines) == 3
        assert (out / "variance_sweep.png").stat().st_size > 0

    def test_variance_sweep_rejects_bad_axis(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        with pytest.raises(SystemExit):
            main(["variance-sweep", "--config", ini, "--axis", "T", "--values", "1", "--out", "x"])

    def test_bounds(self, tiny_ini, tmp_path):
        ini = tiny_ini()
        out = tmp_path / "bounds"
        assert main(["bounds", "--config", ini, "--out", str(out)]) == 0
        lines = (out / "bounds.csv").read_text().splitlines()
        assert lines[0] == "quantity,value"
        quantities = [line.split(",")[0] for line in lines[1:]]
        assert quantities == [
            "d_max",
            "lemma1",
            "jac_gamma_bound",
            "jac_h_bound",
            "lipschitz_bound",
            "theorem1",
        ]
        assert (out / "bounds.png").stat().st_size > 0

    def test_compare(self, tiny_ini, tmp_path):
        ini = tiny_ini("magrpo", total_steps=100)
        out = tmp_path / "cmp"
        assert main(["compare", "--config", ini, "--out", str(out)]) == 0
        lines = (out / "compare.csv").read_text().splitlines()
        assert lines[0] == "algorithm,collect_seconds,update_seconds,total_seconds,env_steps"
        assert [line.split(",")[0] for line in lines[1:]] == ["mappo", "magrpo"]
        assert (out / "compare.png").stat().st_size > 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert 0.0 < manifest["flop_ratio"] < 1.0


class TestCliErrors:
    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 1

    def test_unknown_key_exit_code_and_message(self, tmp_path, capsys):
        path = tmp_path / "bad.ini"
        path.write_text("[network]\nantenna_count = 4\n")
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "network.antenna_count" in err

    def test_inconsistent_values_exit_code(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[mappo]\nbatch_size = 0\n")
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1

    def test_usage_error_raises_system_exit(self):
        with pytest.raises(SystemExit):
            main(["launch", "--config", "x.ini"])
