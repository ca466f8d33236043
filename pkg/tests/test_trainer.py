"""Training loop behavior: determinism, seeding parity, accounting,
clipping, teacher handling, checkpoints, and exact evaluation."""

import json

import numpy as np
import pytest

from pbsd_lab.errors import ConfigurationError, SchemaError
from pbsd_lab.policy import init_policy, teacher_view
from pbsd_lab.tasks import TaskConfig, generate_task
from pbsd_lab.trainer import (
    TrainConfig,
    TrainingAbortError,
    _sample_batch,
    contextual_teacher_theta,
    evaluate,
    load_checkpoint,
    run,
    save_checkpoint,
)

SHORT = dict(steps=20, eval_every=10, batch_size=8, num_prompts=4, vocab_size=4,
             response_length=2)


def short_config(**kw):
    merged = {**SHORT, **kw}
    return TrainConfig(run_seed=kw.pop("run_seed", 5), **{k: v for k, v in merged.items()
                                                          if k != "run_seed"})


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = TrainConfig.from_dict({"method": "pbsd", "task_seed": 7}, run_seed=1)
        assert cfg.batch_size == 32
        assert cfg.steps == 500
        assert cfg.eval_every == 50
        assert cfg.beta == 0.1

    def test_unknown_key_named(self):
        with pytest.raises(ConfigurationError, match="lerning_rate"):
            TrainConfig.from_dict({"lerning_rate": 0.1}, run_seed=1)

    def test_bad_beta_named(self):
        with pytest.raises(ConfigurationError, match="beta"):
            TrainConfig.from_dict({"beta": -1.0}, run_seed=1)

    def test_seed_conflict(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"run_seed": 2}, run_seed=3)

    def test_missing_seed(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.from_dict({"method": "pbsd"})

    def test_zero_learning_rate_allowed(self):
        cfg = short_config(learning_rate=0.0)
        assert cfg.learning_rate == 0.0


class TestLoop:
    def test_zero_learning_rate_is_noop(self):
        cfg = short_config(learning_rate=0.0)
        task = generate_task(cfg.task_seed, cfg.task_config())
        init = init_policy(task, seed=cfg.run_seed, teacher_bias=cfg.teacher_bias,
                           noise_scale=cfg.init_noise_scale)
        result = run(cfg)
        assert np.array_equal(result.params.theta, init.theta)
        rewards = {m.expected_reward_exact for m in result.metrics}
        assert len(rewards) == 1

    def test_byte_identical_reruns(self):
        a = run(short_config())
        b = run(short_config())
        assert [m.to_json_line() for m in a.metrics] == [m.to_json_line() for m in b.metrics]
        assert np.array_equal(a.params.theta, b.params.theta)

    def test_frozen_teacher_reward_constant(self):
        result = run(short_config())
        values = {m.teacher_expected_reward for m in result.metrics}
        assert len(values) == 1

    def test_token_accounting(self):
        cfg = short_config()
        result = run(cfg)
        per_step = cfg.batch_size * 2 * cfg.response_length
        for m in result.metrics:
            assert m.tokens_generated_cumulative == m.step * per_step

    def test_grad_clipping_bound(self):
        cfg = short_config(grad_clip_norm=0.001, learning_rate=0.2)
        result = run(cfg)
        for m in result.metrics[1:]:
            assert m.grad_norm <= cfg.grad_clip_norm + 1e-9

    def test_prompt_draws_shared_across_methods(self):
        pbsd_cfg = short_config(method="pbsd")
        sft_cfg = short_config(method="sft")
        task = generate_task(pbsd_cfg.task_seed, pbsd_cfg.task_config())
        params = init_policy(task, seed=pbsd_cfg.run_seed,
                             teacher_bias=pbsd_cfg.teacher_bias,
                             noise_scale=pbsd_cfg.init_noise_scale)
        from pbsd_lab.policy import student_view

        student = student_view(params)
        teacher = teacher_view(params, frozen=True)
        for step in (1, 2, 3):
            batch_a = _sample_batch(pbsd_cfg, student, teacher, task, step)
            batch_b = _sample_batch(sft_cfg, student, teacher, task, step)
            assert [x.index for x, _ in batch_a] == [x.index for x, _ in batch_b]
            assert [p.y_plus for _, p in batch_a] == [p.y_plus for _, p in batch_b]
            assert [p.y_minus for _, p in batch_a] == [p.y_minus for _, p in batch_b]

    def test_all_methods_complete(self):
        for method in ("pbsd", "reverse_kl", "forward_kl", "sft"):
            result = run(short_config(method=method))
            assert len(result.metrics) == 3  # steps 0, 10, 20
            assert all(np.isfinite(m.loss_mean) for m in result.metrics)

    def test_nan_gradient_aborts_with_pair(self, monkeypatch):
        import pbsd_lab.trainer as trainer_mod

        def poisoned(student, teacher, pair, beta):
            g = np.zeros(student.params.n_params)
            g[0] = np.nan
            return g

        monkeypatch.setattr(trainer_mod, "pbsd_grad", poisoned)
        with pytest.raises(TrainingAbortError) as exc:
            run(short_config())
        assert exc.value.step == 1
        payload = json.loads(exc.value.pair_json)
        assert {"prompt_index", "y_plus", "y_minus"} <= set(payload)


class TestTeacherModes:
    def test_refresh_changes_snapshot(self):
        cfg = short_config(teacher_mode="refresh_every_k", teacher_refresh_every=2,
                           steps=10, eval_every=5)
        fixed = run(short_config(steps=10, eval_every=5))
        refreshed = run(cfg)
        assert not np.array_equal(refreshed.teacher.theta, fixed.teacher.theta)
        fixed_t = {m.teacher_expected_reward for m in fixed.metrics}
        refreshed_t = {m.teacher_expected_reward for m in refreshed.metrics}
        assert len(fixed_t) == 1
        assert len(refreshed_t) > 1

    def test_contextual_snapshot_matches_init(self):
        task = generate_task(3, TaskConfig())
        params = init_policy(task, seed=9, teacher_bias=3.0)
        rebuilt = contextual_teacher_theta(params, task, 3.0)
        np.testing.assert_allclose(rebuilt, params.theta, atol=1e-15)


class TestEvaluate:
    def test_uniform_student_reward(self):
        task = generate_task(7, TaskConfig())
        params = init_policy(task, seed=0, teacher_bias=3.0, noise_scale=0.0)
        report = evaluate(params, task, context_mode="student")
        assert report.mean_expected_reward == pytest.approx(1.0 / 6.0, abs=1e-12)

    def test_teacher_mass_closed_form(self):
        task = generate_task(7, TaskConfig())
        params = init_policy(task, seed=0, teacher_bias=3.0, noise_scale=0.0)
        report = evaluate(params, task, context_mode="teacher")
        expect = (np.exp(3.0) / (np.exp(3.0) + 5.0)) ** 3
        for mass in report.per_prompt_target_mass:
            assert mass == pytest.approx(expect, abs=1e-12)

    def test_greedy_range(self):
        task = generate_task(7, TaskConfig())
        params = init_policy(task, seed=1, teacher_bias=3.0)
        report = evaluate(params, task, context_mode="teacher")
        assert set(report.per_prompt_greedy_correct) <= {0.0, 1.0}
        assert 0.0 <= report.greedy_accuracy <= 1.0
        assert report.greedy_accuracy == 1.0  # bias 3 dominates 0.01 noise


class TestCheckpoints:
    def test_roundtrip_byte_identical(self, tmp_path):
        result = run(short_config())
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        save_checkpoint(p1, result.params, result.teacher.theta, 5, 20)
        ckpt = load_checkpoint(p1)
        save_checkpoint(p2, ckpt.params, ckpt.frozen_teacher_theta, ckpt.seed, ckpt.step)
        assert p1.read_bytes() == p2.read_bytes()

    def test_teacher_theta_survives_bit_exact(self, tmp_path):
        result = run(short_config())
        path = tmp_path / "c.json"
        save_checkpoint(path, result.params, result.teacher.theta, 5, 20)
        ckpt = load_checkpoint(path)
        assert np.array_equal(ckpt.frozen_teacher_theta, result.teacher.theta)
        assert np.array_equal(ckpt.params.theta, result.params.theta)

    def test_shape_mismatch_rejected(self, tmp_path):
        result = run(short_config())
        path = tmp_path / "d.json"
        save_checkpoint(path, result.params, result.teacher.theta, 5, 20)
        data = json.loads(path.read_text())
        data["shape"]["vocab_size"] = 9
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError):
            load_checkpoint(path)

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "e.json"
        path.write_text(json.dumps({"backend": "tabular"}))
        with pytest.raises(SchemaError):
            load_checkpoint(path)


class TestRunDirectory:
    def test_layout_and_manifest(self, tmp_path):
        from pbsd_lab.reporting import config_hash

        cfg = short_config()
        out = tmp_path / "run"
        run(cfg, out_dir=out)
        assert (out / "config.json").exists()
        assert (out / "metrics.jsonl").exists()
        assert (out / "ckpt_0.json").exists()
        assert (out / "ckpt_20.json").exists()
        assert (out / "final.json").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        rederived = config_hash(json.loads((out / "config.json").read_text()))
        assert manifest["config_hash"] == rederived

    def test_metrics_jsonl_schema(self, tmp_path):
        from pbsd_lab.trainer import METRIC_FIELDS

        out = tmp_path / "run"
        run(short_config(), out_dir=out)
        lines = (out / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3
        for line in lines:
            row = json.loads(line)
            assert tuple(row.keys()) == METRIC_FIELDS
