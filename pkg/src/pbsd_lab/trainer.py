"""Online training loop with deterministic seeding and exact evaluation.

One loop skeleton serves the pairwise method and the baselines: every step
draws a seeded mini-batch of prompts, samples one student response and one
teacher response per prompt, computes the configured per-pair loss and
gradient, averages in pair order, clips the global norm, and applies plain
SGD. Exact metrics (expected reward, KL and total variation to the
reward-tilted target) are computed by enumeration on a fixed cadence.

Every random stream is derived from (run_seed, step, role, pair index), so
results are independent of execution schedule and methods sharing a seed
see identical prompt and sampling draws.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, LabError, SchemaError
from .losses import (
    kl_matching_loss,
    make_preference_pair,
    pbsd_grad,
    pbsd_loss,
    sft_loss,
)
from .oracle import kl_divergence, tilted_policy
from .policy import (
    BACKENDS,
    PolicyParams,
    PolicyView,
    exact_distribution,
    init_policy,
    position_distributions,
    sample,
    student_view,
    teacher_view,
    _feature_row,
)
from .tasks import (
    TaskConfig,
    TaskInstance,
    generate_task,
    response_index,
    rewards_over_space,
)

METHODS = ("pbsd", "reverse_kl", "forward_kl", "sft")
TEACHER_MODES = ("fixed", "refresh_every_k")


class TrainingAbortError(LabError):
    """Raised when a loss or gradient stops being finite; carries the step
    index and the offending pair, serialized."""

    def __init__(self, step: int, pair_json: str):
        super().__init__(f"non-finite loss/gradient at step {step}: {pair_json}")
        self.step = step
        self.pair_json = pair_json


@dataclass(frozen=True)
class TrainConfig:
    run_seed: int
    method: str = "pbsd"
    task_seed: int = 7
    vocab_size: int = 6
    response_length: int = 3
    num_prompts: int = 16
    reward_kind: str = "position-match"
    wrong_length_penalty: float = -1.0
    backend: str = "tabular"
    beta: float = 0.1
    learning_rate: float = 1.0
    batch_size: int = 32
    steps: int = 500
    eval_every: int = 50
    teacher_mode: str = "fixed"
    teacher_refresh_every: int = 5
    grad_clip_norm: float = 10.0
    teacher_bias: float = 3.0
    init_noise_scale: float = 0.01
    student_temperature: float = 1.0
    teacher_temperature: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method: {self.method!r}")
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"unknown backend: {self.backend!r}")
        if self.teacher_mode not in TEACHER_MODES:
            raise ConfigurationError(f"unknown teacher_mode: {self.teacher_mode!r}")
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive")
        # a zero rate is a valid no-op diagnostic run
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.grad_clip_norm <= 0:
            raise ConfigurationError("grad_clip_norm must be positive")
        if self.teacher_refresh_every < 1:
            raise ConfigurationError("teacher_refresh_every must be >= 1")

    def task_config(self) -> TaskConfig:
        return TaskConfig(
            vocab_size=self.vocab_size,
            response_length=self.response_length,
            num_prompts=self.num_prompts,
            reward_kind=self.reward_kind,
            wrong_length_penalty=self.wrong_length_penalty,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data: dict, run_seed: Optional[int] = None) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        for key in data:
            if key not in known:
                raise ConfigurationError(f"unknown config key: {key!r}")
        merged = dict(data)
        if run_seed is not None:
            if "run_seed" in merged and int(merged["run_seed"]) != int(run_seed):
                raise ConfigurationError(
                    "run_seed in config conflicts with the --seed argument"
                )
            merged["run_seed"] = int(run_seed)
        if "run_seed" not in merged:
            raise ConfigurationError("run_seed is required (pass --seed)")
        try:
            return TrainConfig(**merged)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


METRIC_FIELDS = (
    "step",
    "loss_mean",
    "margin_mean",
    "pref_prob_mean",
    "curvature_weight_mean",
    "expected_reward_exact",
    "kl_to_tilted",
    "tv_to_tilted",
    "teacher_expected_reward",
    "grad_norm",
    "tokens_generated_cumulative",
)


@dataclass
class MetricsRecord:
    step: int
    loss_mean: float
    margin_mean: float
    pref_prob_mean: float
    curvature_weight_mean: float
    expected_reward_exact: float
    kl_to_tilted: float
    tv_to_tilted: float
    teacher_expected_reward: float
    grad_norm: float
    tokens_generated_cumulative: int

    def to_json_line(self) -> str:
        payload = {name: getattr(self, name) for name in METRIC_FIELDS}
        return json.dumps(payload, separators=(",", ":"))


@dataclass
class EvalReport:
    per_prompt_expected_reward: list
    per_prompt_target_mass: list
    per_prompt_greedy_correct: list
    mean_expected_reward: float
    mean_target_mass: float
    greedy_accuracy: float


@dataclass
class RunResult:
    config: TrainConfig
    task: TaskInstance
    params: PolicyParams
    teacher: PolicyView
    metrics: list
    out_dir: Optional[Path] = None


def _stream(run_seed: int, step: int, role: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(run_seed) & (2**64 - 1), step, role, index])
    )


def contextual_teacher_theta(params: PolicyParams, task: TaskInstance, bias: float) -> np.ndarray:
    """Re-instantiate the context-conditioned teacher from current params:
    copy theta and rebuild the context-present slice as the context-absent
    logits plus the demonstration bias."""
    theta = params.theta.copy()
    table = theta.reshape(-1, params.vocab_size)
    src = params.theta.reshape(-1, params.vocab_size)
    for prompt in task.prompts:
        for t in range(params.response_length):
            r0 = _feature_row(params, prompt.index, 0, t)
            r1 = _feature_row(params, prompt.index, 1, t)
            table[r1] = src[r0]
            table[r1, task.targets[prompt.index][t]] += bias
    return theta


def _batch_stats(reports: list) -> dict:
    return {
        "margin_mean": float(np.mean([r.margin for r in reports])),
        "pref_prob_mean": float(np.mean([r.pref_prob for r in reports])),
        "curvature_weight_mean": float(np.mean([r.curvature_weight for r in reports])),
    }


def _exact_metrics(student: PolicyView, teacher: PolicyView, task: TaskInstance, beta: float,
                   reward_table: dict) -> dict:
    ers, kls, tvs, ters = [], [], [], []
    for prompt in task.prompts:
        dist_s = exact_distribution(student, prompt, task)
        dist_t = exact_distribution(teacher, prompt, task)
        r = reward_table[prompt.index]
        tilt = tilted_policy(dist_t, r, beta)
        ers.append(float(np.dot(dist_s, r)))
        kls.append(kl_divergence(dist_s, tilt.probs))
        tvs.append(0.5 * float(np.abs(dist_s - tilt.probs).sum()))
        ters.append(float(np.dot(dist_t, r)))
    return {
        "expected_reward_exact": float(np.mean(ers)),
        "kl_to_tilted": float(np.mean(kls)),
        "tv_to_tilted": float(np.mean(tvs)),
        "teacher_expected_reward": float(np.mean(ters)),
    }


def _pair_loss_and_grad(config: TrainConfig, student: PolicyView, teacher: PolicyView,
                        task: TaskInstance, x, pair):
    if config.method == "pbsd":
        report = pbsd_loss(student, teacher, pair, config.beta)
        grad = pbsd_grad(student, teacher, pair, config.beta)
        return report.loss, grad, report
    report = pbsd_loss(student, teacher, pair, config.beta)  # diagnostics only
    if config.method == "sft":
        loss, grad = sft_loss(student, [(x, pair.y_plus)])
    else:
        direction = "reverse" if config.method == "reverse_kl" else "forward"
        loss, grad = kl_matching_loss(student, teacher, x, direction, task)
    return loss, grad, report


def _sample_batch(config: TrainConfig, student: PolicyView, teacher: PolicyView,
                  task: TaskInstance, step: int):
    prompt_rng = _stream(config.run_seed, step, 0)
    idxs = prompt_rng.integers(0, task.num_prompts, size=config.batch_size)
    batch = []
    for i, idx in enumerate(idxs):
        x = task.prompts[int(idx)]
        y_minus = sample(student, x, _stream(config.run_seed, step, 1, i))
        y_plus = sample(teacher, x, _stream(config.run_seed, step, 2, i))
        batch.append((x, make_preference_pair(teacher, x, y_plus, y_minus)))
    return batch


def _serialize_pair(x, pair) -> str:
    return json.dumps(
        {
            "prompt_index": x.index,
            "y_plus": list(pair.y_plus),
            "y_minus": list(pair.y_minus),
            "teacher_logp_plus": pair.teacher_logp_plus,
            "teacher_logp_minus": pair.teacher_logp_minus,
        },
        separators=(",", ":"),
    )


def run(config: TrainConfig, out_dir: Optional[os.PathLike] = None,
        quiet: bool = True) -> RunResult:
    """Train per the config; optionally write the run directory
    (config.json, metrics.jsonl, ckpt_<step>.json, final.json, manifest)."""
    from .reporting import write_manifest, canonical_json  # deferred: reporting imports trainer names

    task = generate_task(config.task_seed, config.task_config())
    params = init_policy(
        task,
        backend=config.backend,
        seed=config.run_seed,
        teacher_bias=config.teacher_bias,
        noise_scale=config.init_noise_scale,
    )
    student = student_view(params, temperature=config.student_temperature)
    teacher = teacher_view(params, frozen=True, temperature=config.teacher_temperature)
    reward_table = {p.index: rewards_over_space(task, p) for p in task.prompts}

    out_path: Optional[Path] = None
    metrics_fh = None
    started = _utc_now()
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "config.json").write_text(canonical_json(config.to_dict()) + "\n")
        metrics_fh = open(out_path / "metrics.jsonl", "w")

    metrics: list = []
    tokens_cumulative = 0
    seq_tokens = 2 * task.response_length  # student + teacher sample per pair

    def emit(record: MetricsRecord, step: int):
        metrics.append(record)
        if metrics_fh is not None:
            metrics_fh.write(record.to_json_line() + "\n")
            metrics_fh.flush()
            save_checkpoint(
                out_path / f"ckpt_{step}.json", params, teacher.theta, config.run_seed, step
            )

    try:
        # step-0 probe: batch statistics without an update; generation here
        # is diagnostic and excluded from token accounting.
        probe = _sample_batch(config, student, teacher, task, 0)
        probe_reports = []
        probe_losses = []
        for x, pair in probe:
            loss, _, report = _pair_loss_and_grad(config, student, teacher, task, x, pair)
            probe_losses.append(loss)
            probe_reports.append(report)
        exact = _exact_metrics(student, teacher, task, config.beta, reward_table)
        emit(
            MetricsRecord(
                step=0,
                loss_mean=float(np.mean(probe_losses)),
                **_batch_stats(probe_reports),
                **exact,
                grad_norm=0.0,
                tokens_generated_cumulative=0,
            ),
            step=0,
        )

        for step in range(1, config.steps + 1):
            if (
                config.teacher_mode == "refresh_every_k"
                and step > 1
                and (step - 1) % config.teacher_refresh_every == 0
            ):
                teacher.refresh_snapshot(
                    contextual_teacher_theta(params, task, config.teacher_bias)
                )
            batch = _sample_batch(config, student, teacher, task, step)
            grad_sum = np.zeros(params.n_params, dtype=np.float64)
            losses = []
            reports = []
            for x, pair in batch:
                loss, grad, report = _pair_loss_and_grad(config, student, teacher, task, x, pair)
                if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise TrainingAbortError(step, _serialize_pair(x, pair))
                grad_sum += grad
                losses.append(loss)
                reports.append(report)
            grad_mean = grad_sum / config.batch_size
            norm = float(np.linalg.norm(grad_mean))
            if norm > config.grad_clip_norm:
                grad_mean *= config.grad_clip_norm / norm
            params.theta = params.theta - config.learning_rate * grad_mean
            tokens_cumulative += config.batch_size * seq_tokens

            if step % config.eval_every == 0 or step == config.steps:
                exact = _exact_metrics(student, teacher, task, config.beta, reward_table)
                emit(
                    MetricsRecord(
                        step=step,
                        loss_mean=float(np.mean(losses)),
                        **_batch_stats(reports),
                        **exact,
                        grad_norm=float(np.linalg.norm(grad_mean)),
                        tokens_generated_cumulative=tokens_cumulative,
                    ),
                    step=step,
                )
                if not quiet:
                    print(
                        f"step {step}: loss={np.mean(losses):.4f} "
                        f"reward={exact['expected_reward_exact']:.4f}",
                        flush=True,
                    )
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    if out_path is not None:
        save_checkpoint(out_path / "final.json", params, teacher.theta, config.run_seed, config.steps)
        write_manifest(
            out_path,
            config.to_dict(),
            seeds={"run_seed": config.run_seed, "task_seed": config.task_seed},
            started=started,
            finished=_utc_now(),
        )
    return RunResult(
        config=config, task=task, params=params, teacher=teacher, metrics=metrics, out_dir=out_path
    )


def _utc_now() -> str:
    import datetime

    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@dataclass
class Checkpoint:
    params: PolicyParams
    frozen_teacher_theta: np.ndarray
    seed: int
    step: int


def evaluate(params, task: TaskInstance, context_mode: str = "student",
             temperature: float = 1.0) -> EvalReport:
    """Closed-form evaluation: per-prompt expected reward, probability mass
    on the target, and greedy-decode correctness (argmax per position, ties
    to the lowest token index). Accepts PolicyParams or a loaded Checkpoint."""
    if isinstance(params, Checkpoint):
        params = params.params
    view = PolicyView(params, context_mode, frozen=False, temperature=temperature)
    ers, masses, greedy = [], [], []
    for prompt in task.prompts:
        dist = exact_distribution(view, prompt, task)
        r = rewards_over_space(task, prompt)
        ers.append(float(np.dot(dist, r)))
        masses.append(float(dist[response_index(task, task.targets[prompt.index])]))
        probs = position_distributions(view, prompt)
        decoded = tuple(int(np.argmax(row)) for row in probs)
        greedy.append(1.0 if decoded == task.targets[prompt.index] else 0.0)
    return EvalReport(
        per_prompt_expected_reward=ers,
        per_prompt_target_mass=masses,
        per_prompt_greedy_correct=greedy,
        mean_expected_reward=float(np.mean(ers)),
        mean_target_mass=float(np.mean(masses)),
        greedy_accuracy=float(np.mean(greedy)),
    )


def _format_float(x: float) -> str:
    return format(float(x), ".17g")


def _json_17g(obj) -> str:
    """Compact JSON with every float rendered at 17 significant digits."""
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_json_17g(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(json.dumps(str(k)) + ":" + _json_17g(v) for k, v in obj.items()) + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def save_checkpoint(path: os.PathLike, params: PolicyParams, frozen_teacher_theta: np.ndarray,
                    seed: int, step: int) -> None:
    payload = {
        "backend": params.backend,
        "shape": params.shape_dict(),
        "theta": np.asarray(params.theta, dtype=np.float64),
        "frozen_teacher_theta": np.asarray(frozen_teacher_theta, dtype=np.float64),
        "seed": int(seed),
        "step": int(step),
    }
    Path(path).write_text(_json_17g(payload) + "\n")


def load_checkpoint(path: os.PathLike) -> Checkpoint:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"checkpoint is not valid JSON: {exc}") from exc
    for key in ("backend", "shape", "theta", "frozen_teacher_theta", "seed", "step"):
        if key not in data:
            raise SchemaError(f"checkpoint missing key {key!r}")
    shape = data["shape"]
    for key in ("num_prompts", "response_length", "vocab_size", "feature_dim"):
        if key not in shape:
            raise SchemaError(f"checkpoint shape missing key {key!r}")
    try:
        params = PolicyParams(
            backend=data["backend"],
            theta=np.array(data["theta"], dtype=np.float64),
            num_prompts=int(shape["num_prompts"]),
            response_length=int(shape["response_length"]),
            vocab_size=int(shape["vocab_size"]),
            feature_dim=int(shape["feature_dim"]),
        )
    except (ConfigurationError, ValueError) as exc:
        raise SchemaError(f"checkpoint shape mismatch: {exc}") from exc
    teacher = np.array(data["frozen_teacher_theta"], dtype=np.float64)
    if teacher.shape != params.theta.shape:
        raise SchemaError("frozen_teacher_theta length does not match theta")
    return Checkpoint(
        params=params,
        frozen_teacher_theta=teacher,
        seed=int(data["seed"]),
        step=int(data["step"]),
    )
