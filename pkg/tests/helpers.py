"""Shared test utilities: tiny task/policy builders and the central
finite-difference gradient checker."""

from __future__ import annotations

import numpy as np

from pbsd_lab.policy import init_policy, student_view, teacher_view
from pbsd_lab.tasks import TaskConfig, generate_task


def small_task(vocab_size=4, response_length=2, num_prompts=3, seed=3, **kw):
    cfg = TaskConfig(
        vocab_size=vocab_size,
        response_length=response_length,
        num_prompts=num_prompts,
        **kw,
    )
    return generate_task(seed, cfg)


def random_policy(task, seed=0, scale=0.5, teacher_bias=0.0):
    """Policy with moderate random logits: gradients stay well away from
    the softmax saturation regime, which keeps finite differences clean."""
    params = init_policy(task, seed=seed, teacher_bias=teacher_bias, noise_scale=0.0)
    rng = np.random.default_rng(seed + 1000)
    params.theta = params.theta + scale * rng.standard_normal(params.theta.size)
    return params


def views(params, frozen_teacher=True):
    return student_view(params), teacher_view(params, frozen=frozen_teacher)


def central_fd(fn, theta, coords, h=1e-5):
    """Central finite differences of a scalar function of theta at the
    given coordinates."""
    out = np.zeros(len(coords))
    for k, c in enumerate(coords):
        saved = theta[c]
        theta[c] = saved + h
        fp = fn()
        theta[c] = saved - h
        fm = fn()
        theta[c] = saved
        out[k] = (fp - fm) / (2.0 * h)
    return out


def max_rel_error(analytic, numeric, floor=1e-8):
    """Coordinate-wise |a - n| / max(|a|, |n|, floor), maximized."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def fd_check(loss_fn, grad, params, n_coords=100, h=1e-5, seed=0, active_only=True):
    """Compare an analytic gradient against central differences on randomly
    chosen coordinates; returns the max relative error.

    When active_only, coordinates are drawn among entries where the
    analytic gradient is nonzero (parameters the loss cannot touch are
    exactly flat on both sides, so they contribute nothing either way).
    """
    rng = np.random.default_rng(seed)
    grad = np.asarray(grad)
    if active_only:
        candidates = np.nonzero(np.abs(grad) > 1e-12)[0]
        if candidates.size == 0:
            candidates = np.arange(grad.size)
    else:
        candidates = np.arange(grad.size)
    coords = rng.choice(candidates, size=min(n_coords, candidates.size), replace=False)
    numeric = central_fd(loss_fn, params.theta, coords, h=h)
    return max_rel_error(grad[coords], numeric)
