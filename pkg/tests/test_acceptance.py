"""Acceptance suite: one test per acceptance criterion, each printing a
PASS line and enforcing its runtime budget.

The golden training fixture below was recorded from the reference run
(task seed 7, run seed 20260807, shipped defaults) before freezing; the
criteria assert the contract bounds, and the fixture guards against silent
drift of the reference trajectory.
"""

import json
import time

import numpy as np
import pytest

from helpers import fd_check, random_policy, small_task, views
from pbsd_lab.cli import main
from pbsd_lab.information import (
    RateConfig,
    curvature_weight,
    empirical_hessian,
    min_eigenvalue,
    rate_experiment,
    score_gap,
)
from pbsd_lab.losses import (
    kl_matching_loss,
    make_preference_pair,
    pbsd_grad,
    pbsd_loss,
    sft_loss,
)
from pbsd_lab.oracle import (
    implied_reward,
    random_instance,
    tilted_policy,
    verify_prop1,
    verify_prop2,
)
from pbsd_lab.policy import sample
from pbsd_lab.trainer import TrainConfig, run

GOLDEN_TASK_SEED = 7
GOLDEN_RUN_SEED = 20260807
GOLDEN_REWARD_STEP0 = 0.16677830684211853
GOLDEN_REWARD_STEP500 = 0.40340234113573675
GOLDEN_TV_STEP0 = 0.969204433096369
GOLDEN_TV_STEP500 = 0.9081543279195664

WORKED_TEACHER = np.array([0.5, 0.3, 0.2])
WORKED_REWARDS = np.array([1.0, 0.0, -1.0])
WORKED_LOG_Z = 0.5496905827600017
WORKED_GAP = 0.24969058276000172

N_INSTANCES = 50


def _report(criterion: int, name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE CRITERION {criterion} [{name}]: {status} {detail}".rstrip())
    assert ok, f"criterion {criterion} ({name}) failed: {detail}"


@pytest.fixture(scope="module")
def golden_run():
    t0 = time.monotonic()
    result = run(TrainConfig(run_seed=GOLDEN_RUN_SEED, task_seed=GOLDEN_TASK_SEED))
    return result, time.monotonic() - t0


@pytest.fixture(scope="module")
def reverse_kl_run():
    return run(
        TrainConfig(run_seed=GOLDEN_RUN_SEED, task_seed=GOLDEN_TASK_SEED, method="reverse_kl")
    )


def test_criterion_1_optimum_matches_iterative_maximizer():
    t0 = time.monotonic()
    worst_l1 = 0.0
    worst_gap = 0.0
    betas = set()
    for i in range(N_INSTANCES):
        teacher, rewards, beta = random_instance(i)
        assert teacher.size <= 216
        betas.add(beta)
        report = verify_prop1(teacher, rewards, beta, trials=3, seed=i)
        assert report.converged
        worst_l1 = max(worst_l1, report.max_l1)
        worst_gap = max(worst_gap, abs(report.f_gap))
    elapsed = time.monotonic() - t0
    assert betas == {0.1, 0.5, 1.0}
    ok = worst_l1 <= 1e-6 and worst_gap <= 1e-9 and elapsed <= 120.0
    _report(
        1,
        "closed-form optimum vs simplex maximizer",
        ok,
        f"max_l1={worst_l1:.2e} f_gap={worst_gap:.2e} elapsed={elapsed:.1f}s",
    )


def test_criterion_2_improvement_gap():
    worst_floor = 0.0
    for i in range(N_INSTANCES):
        teacher, rewards, beta = random_instance(i)
        gap, strict = verify_prop2(teacher, rewards, beta)
        assert gap >= -1e-12
        if strict:
            assert gap > 1e-12
        worst_floor = min(worst_floor, gap)

    rng = np.random.default_rng(123)
    q = rng.dirichlet(np.ones(31))
    const_gap, const_strict = verify_prop2(q, np.full(31, 0.7), 0.5)
    assert abs(const_gap) <= 1e-12 and not const_strict

    worked_gap, worked_strict = verify_prop2(WORKED_TEACHER, WORKED_REWARDS, 1.0)
    ok = worked_strict and abs(worked_gap - WORKED_GAP) <= 1e-6
    _report(2, "tilted policy improves over teacher", ok,
            f"worked_gap={worked_gap:.9f} min_gap={worst_floor:.2e}")


def test_criterion_3_implied_reward_identity():
    worst = 0.0
    for i in range(N_INSTANCES):
        teacher, rewards, beta = random_instance(i)
        tilt = tilted_policy(teacher, rewards, beta)
        recovered = implied_reward(tilt.probs, teacher, beta)
        worst = max(worst, float(np.max(np.abs(recovered - (rewards - rewards.mean())))))
    assert worst <= 1e-9

    tilt = tilted_policy(WORKED_TEACHER, WORKED_REWARDS, 1.0)
    uncentered = np.log(tilt.probs) - np.log(WORKED_TEACHER)
    recovered = uncentered + WORKED_LOG_Z
    ok = worst <= 1e-9 and float(np.max(np.abs(recovered - WORKED_REWARDS))) <= 1e-5
    _report(3, "implied reward recovers the latent reward", ok, f"max_dev={worst:.2e}")


def test_criterion_4_gradient_correctness():
    task = small_task(vocab_size=4, response_length=3, num_prompts=3)
    worst = {"pbsd": 0.0, "reverse": 0.0, "forward": 0.0, "sft": 0.0}
    counts = {k: 0 for k in worst}

    for seed in range(5):
        params = random_policy(task, seed=seed, teacher_bias=1.0)
        student, teacher = views(params)
        rng = np.random.default_rng(seed)
        x = task.prompts[int(rng.integers(0, task.num_prompts))]
        pair = make_preference_pair(teacher, x, sample(teacher, x, rng), sample(student, x, rng))
        beta = (0.1, 0.5, 1.0)[seed % 3]

        grad = pbsd_grad(student, teacher, pair, beta)
        err = fd_check(lambda: pbsd_loss(student, teacher, pair, beta).loss,
                       grad, params, n_coords=25, seed=seed)
        worst["pbsd"] = max(worst["pbsd"], err)
        counts["pbsd"] += 25

        for direction in ("reverse", "forward"):
            loss, grad = kl_matching_loss(student, teacher, x, direction, task)
            err = fd_check(
                lambda: kl_matching_loss(student, teacher, x, direction, task)[0],
                grad, params, n_coords=25, seed=seed,
            )
            worst[direction] = max(worst[direction], err)
            counts[direction] += 25

        batch = [(x, sample(teacher, x, rng)) for _ in range(3)]
        loss, grad = sft_loss(student, batch)
        err = fd_check(lambda: sft_loss(student, batch)[0], grad, params,
                       n_coords=25, seed=seed)
        worst["sft"] = max(worst["sft"], err)
        counts["sft"] += 25

    assert all(c >= 100 for c in counts.values())

    params = random_policy(task, seed=0, teacher_bias=0.0)
    params.theta[:] = 0.0
    student, teacher = views(params)
    pair = make_preference_pair(teacher, task.prompts[0], (0, 1, 2), (2, 1, 0))
    zero_margin_loss = pbsd_loss(student, teacher, pair, 0.5)
    ok = (
        max(worst.values()) <= 1e-6
        and zero_margin_loss.margin == 0.0
        and abs(zero_margin_loss.loss - np.log(2.0)) <= 1e-12
    )
    _report(4, "analytic gradients match finite differences", ok,
            "max_rel_err=" + ",".join(f"{k}:{v:.2e}" for k, v in worst.items()))


def test_criterion_5_information_structure():
    assert curvature_weight(0.0) == 0.25
    grid = np.linspace(0.0, 40.0, 1000)
    values = np.array([curvature_weight(m) for m in grid])
    mirrored = np.array([curvature_weight(-m) for m in grid])
    assert np.array_equal(values, mirrored)
    assert np.all(np.diff(values) < 0.0)

    task = small_task(vocab_size=3, response_length=2, num_prompts=2)
    rank1_dev = 0.0
    for seed in range(20):
        params = random_policy(task, seed=seed, teacher_bias=1.0)
        student, teacher = views(params)
        rng = np.random.default_rng(seed)
        x = task.prompts[int(rng.integers(0, task.num_prompts))]
        pairs = []
        for _ in range(6):
            pairs.append(
                make_preference_pair(teacher, x, sample(teacher, x, rng), sample(student, x, rng))
            )
        beta = 0.4
        info = empirical_hessian(student, teacher, pairs, beta)
        assert np.max(np.abs(info.matrix - info.matrix.T)) <= 1e-12
        trace = float(np.trace(info.matrix))
        assert min_eigenvalue(info) >= -1e-9 * max(trace, 1e-30)

        pair = next((p for p in pairs if p.y_plus != p.y_minus), None)
        if pair is None:
            continue
        single = empirical_hessian(student, teacher, [pair], beta)
        gap = score_gap(student, pair.prompt, pair.y_plus, pair.y_minus)
        from pbsd_lab.losses import margin as margin_fn

        w = curvature_weight(margin_fn(student, teacher, pair, beta))
        eigs = np.linalg.eigvalsh(single.matrix)
        rank1_dev = max(rank1_dev, abs(eigs[-1] - beta**2 * w * float(gap @ gap)))
    ok = rank1_dev <= 1e-9
    _report(5, "curvature weight and information matrix structure", ok,
            f"rank1_dev={rank1_dev:.2e}")


def test_criterion_6_rate_experiment():
    t0 = time.monotonic()
    seeds = tuple(range(16))
    rich = rate_experiment(RateConfig(d=10, design="rich", seeds=seeds))
    narrow = rate_experiment(RateConfig(d=10, design="narrow", seeds=seeds))
    elapsed = time.monotonic() - t0

    assert rich.unconverged_fits == 0
    assert narrow.unconverged_fits == 0

    rich_err = {(r.seed, r.n): r.error_l2 for r in rich.records}
    rich_lam = {(r.seed, r.n): r.lambda_min for r in rich.records}
    n_max = max(r.n for r in narrow.records)
    seed_wins = 0
    lam_smaller = True
    for seed in seeds:
        key = (seed, n_max)
        narrow_rec = next(r for r in narrow.records if (r.seed, r.n) == key)
        if narrow_rec.error_l2 > rich_err[key]:
            seed_wins += 1
        lam_smaller = lam_smaller and narrow_rec.lambda_min < rich_lam[key]

    ok = (
        -0.65 <= rich.slope <= -0.35
        and seed_wins >= 14
        and lam_smaller
        and elapsed <= 600.0
    )
    _report(6, "pairwise MLE concentration rate", ok,
            f"slope={rich.slope:.3f} paired_wins={seed_wins}/16 elapsed={elapsed:.0f}s")


def test_criterion_7_training_efficacy(golden_run):
    result, elapsed = golden_run
    first, last = result.metrics[0], result.metrics[-1]
    assert first.step == 0 and last.step == 500

    np.testing.assert_allclose(first.expected_reward_exact, GOLDEN_REWARD_STEP0, atol=1e-3)
    np.testing.assert_allclose(last.expected_reward_exact, GOLDEN_REWARD_STEP500, atol=1e-3)
    np.testing.assert_allclose(first.tv_to_tilted, GOLDEN_TV_STEP0, atol=1e-3)
    np.testing.assert_allclose(last.tv_to_tilted, GOLDEN_TV_STEP500, atol=1e-3)

    gain = last.expected_reward_exact - first.expected_reward_exact
    ok = gain >= 0.1 and last.tv_to_tilted < first.tv_to_tilted and elapsed <= 300.0
    _report(7, "golden run raises exact reward and approaches the tilt", ok,
            f"gain={gain:.4f} tv {first.tv_to_tilted:.4f}->{last.tv_to_tilted:.4f} "
            f"elapsed={elapsed:.0f}s")


def _run_dir_payload(path):
    out = {}
    for child in sorted(path.rglob("*")):
        if child.is_file() and child.name != "manifest.json":
            out[str(child.relative_to(path))] = child.read_bytes()
    return out


def test_criterion_8_byte_identical_reruns(tmp_path):
    cfg = {
        "method": "pbsd", "task_seed": 7, "vocab_size": 4, "response_length": 2,
        "num_prompts": 4, "batch_size": 8, "steps": 20, "eval_every": 10,
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))

    pairs = []
    for rep in ("a", "b"):
        train_out = tmp_path / f"train_{rep}"
        assert main(["--quiet", "train", "--config", str(cfg_path), "--seed", "3",
                     "--out", str(train_out)]) == 0
        assert main(["report", str(train_out / "metrics.jsonl"),
                     "--out", str(train_out / "report")]) == 0
        rate_out = tmp_path / f"rate_{rep}"
        main(["--quiet", "rate", "--d", "4", "--seeds", "2", "--seed", "5",
              "--out", str(rate_out)])
        an_out = tmp_path / f"an_{rep}"
        assert main(["--quiet", "analyze", "--seed", "2", "--pairs", "32",
                     "--out", str(an_out)]) == 0
        pairs.append((train_out, rate_out, an_out))

    identical = True
    for left, right in zip(pairs[0], pairs[1]):
        if _run_dir_payload(left) != _run_dir_payload(right):
            identical = False
    _report(8, "reruns are byte-identical", identical)


def test_criterion_9_no_late_training_collapse(golden_run, reverse_kl_run):
    result, _ = golden_run
    by_step = {m.step: m.expected_reward_exact for m in result.metrics}
    floor = by_step[200] - 0.02
    late_ok = all(by_step[s] >= floor for s in sorted(by_step) if s >= 250)

    baseline = reverse_kl_run
    baseline_complete = (
        len(baseline.metrics) == len(result.metrics)
        and all(np.isfinite(m.expected_reward_exact) for m in baseline.metrics)
    )
    ok = late_ok and baseline_complete
    _report(
        9,
        "stable late training, baseline reported alongside",
        ok,
        f"pairwise_final={by_step[500]:.4f} "
        f"reverse_kl_final={baseline.metrics[-1].expected_reward_exact:.4f}",
    )
