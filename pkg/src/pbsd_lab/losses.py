"""Pairwise preference loss, its analytic gradient, and the baseline losses.

The pairwise loss scores a (teacher sample, student sample) pair by the
margin: beta times the difference of student-vs-teacher log-ratios between
the preferred and dispreferred responses. The loss is the negative log
sigmoid of that margin, always computed through softplus so large negative
margins stay finite. Baselines cover exact reverse/forward KL matching
and plain negative log-likelihood on teacher samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .numerics import sigmoid, sigmoid_product, softplus
from .policy import (
    PolicyView,
    exact_distribution,
    factor_rows,
    grad_logprob,
    logprob,
    position_distributions,
)
from .tasks import TaskInstance


@dataclass
class PreferencePair:
    """A sampled (prompt, y_plus, y_minus) triple with cached teacher
    log-probabilities; y_plus comes from the teacher, y_minus from the
    student."""

    prompt: object
    y_plus: tuple
    y_minus: tuple
    teacher_logp_plus: Optional[float] = None
    teacher_logp_minus: Optional[float] = None


@dataclass
class LossReport:
    loss: float
    margin: float
    pref_prob: float
    grad_weight: float
    curvature_weight: float


def make_preference_pair(teacher: PolicyView, prompt, y_plus, y_minus) -> PreferencePair:
    """Build a pair with teacher log-probs cached from the given view."""
    y_plus = tuple(int(t) for t in y_plus)
    y_minus = tuple(int(t) for t in y_minus)
    return PreferencePair(
        prompt=prompt,
        y_plus=y_plus,
        y_minus=y_minus,
        teacher_logp_plus=logprob(teacher, prompt, y_plus),
        teacher_logp_minus=logprob(teacher, prompt, y_minus),
    )


def _teacher_logps(teacher: PolicyView, pair: PreferencePair):
    if pair.teacher_logp_plus is None or pair.teacher_logp_minus is None:
        return (
            logprob(teacher, pair.prompt, pair.y_plus),
            logprob(teacher, pair.prompt, pair.y_minus),
        )
    if not (np.isfinite(pair.teacher_logp_plus) and np.isfinite(pair.teacher_logp_minus)):
        raise InputError("cached teacher log-probs must be finite")
    return pair.teacher_logp_plus, pair.teacher_logp_minus


def margin(student: PolicyView, teacher: PolicyView, pair: PreferencePair, beta: float) -> float:
    """beta * [(log ratio at y_plus) - (log ratio at y_minus)] where each
    ratio is student over teacher."""
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    t_plus, t_minus = _teacher_logps(teacher, pair)
    s_plus = logprob(student, pair.prompt, pair.y_plus)
    s_minus = logprob(student, pair.prompt, pair.y_minus)
    return beta * ((s_plus - t_plus) - (s_minus - t_minus))


def pref_prob(m: float) -> float:
    """Probability that the preferred response wins under the logistic
    pairwise model, stable for |m| beyond the exp overflow point."""
    return float(sigmoid(m))


def pbsd_loss(student: PolicyView, teacher: PolicyView, pair: PreferencePair, beta: float) -> LossReport:
    """Pairwise loss -log sigmoid(margin), via the overflow-safe softplus."""
    m = margin(student, teacher, pair, beta)
    return LossReport(
        loss=float(softplus(-m)),
        margin=m,
        pref_prob=float(sigmoid(m)),
        grad_weight=float(sigmoid(-m)),
        curvature_weight=float(sigmoid_product(m)),
    )


def pbsd_grad(student: PolicyView, teacher: PolicyView, pair: PreferencePair, beta: float) -> np.ndarray:
    """Analytic loss gradient: -beta * sigmoid(-margin) times the student
    score gap; the teacher contributes no gradient."""
    m = margin(student, teacher, pair, beta)
    g_plus = grad_logprob(student, pair.prompt, pair.y_plus)
    g_minus = grad_logprob(student, pair.prompt, pair.y_minus)
    return -beta * float(sigmoid(-m)) * (g_plus - g_minus)


def _weighted_score_sum(view: PolicyView, x, weights: np.ndarray, task: TaskInstance) -> np.ndarray:
    """sum_y w(y) * grad logprob(view, x, y) over the full response space.

    Uses the per-position factorization: the (position, token) entry is the
    token marginal of w minus the token probability times the total mass.
    """
    p = view.params
    probs = position_distributions(view, x)
    rows = factor_rows(view, x)
    cube = weights.reshape((p.vocab_size,) * p.response_length)
    total = float(weights.sum())
    grad = np.zeros(p.n_params, dtype=np.float64)
    gtable = grad.reshape(-1, p.vocab_size)
    inv_temp = 1.0 / view.temperature
    for t in range(p.response_length):
        axes = tuple(a for a in range(p.response_length) if a != t)
        marginal = cube.sum(axis=axes) if axes else cube
        gtable[rows[t]] += inv_temp * (marginal - probs[t] * total)
    return grad


def kl_matching_loss(
    student: PolicyView,
    teacher: PolicyView,
    x,
    direction: str,
    task: TaskInstance,
):
    """Exact KL matching loss and gradient over the enumerated space.

    reverse: KL(student || teacher), the mode-seeking objective.
    forward: KL(teacher || student), whose gradient is the cross-entropy
    gradient since the teacher entropy term is constant in theta.
    """
    if direction not in ("reverse", "forward"):
        raise ConfigurationError(f"unknown KL direction: {direction!r}")
    p_student = exact_distribution(student, x, task)
    p_teacher = exact_distribution(teacher, x, task)
    log_ratio = np.log(p_student) - np.log(p_teacher)
    if direction == "reverse":
        loss = float(np.dot(p_student, log_ratio))
        weights = p_student * log_ratio
        grad = _weighted_score_sum(student, x, weights, task)
        return loss, grad
    loss = float(np.dot(p_teacher, -log_ratio))
    grad = -_weighted_score_sum(student, x, p_teacher, task)
    return loss, grad


def sft_loss(student: PolicyView, teacher_sample_batch: Sequence):
    """Mean negative student log-likelihood of teacher samples.

    The batch holds (prompt, response) pairs; the gradient accumulates
    grad_logprob in batch order.
    """
    batch = list(teacher_sample_batch)
    if not batch:
        raise InputError("sft batch must be non-empty")
    loss = 0.0
    grad = np.zeros(student.params.n_params, dtype=np.float64)
    for x, y in batch:
        loss -= logprob(student, x, y)
        grad -= grad_logprob(student, x, y)
    n = len(batch)
    return loss / n, grad / n
