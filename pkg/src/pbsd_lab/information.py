"""Curvature diagnostics and the pairwise-MLE rate experiment.

The empirical information matrix aggregates, over sampled comparison
pairs, the outer products of score-gap directions weighted by the logistic
curvature sigma(m)(1 - sigma(m)). Its minimum eigenvalue governs how fast
the pairwise maximum-likelihood estimate concentrates, which the rate
experiment measures empirically on a planted linear-margin family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import CapacityError, ConfigurationError, InputError
from .losses import make_preference_pair, margin as pair_margin
from .numerics import sigmoid, sigmoid_product
from .policy import PolicyView, grad_logprob, sample

MATRIX_DIM_CAP = 512


@dataclass
class InfoMatrix:
    matrix: np.ndarray
    n_pairs: int
    beta: float
    per_pair_weights: np.ndarray


@dataclass
class RateRecord:
    n: int
    seed: int
    error_l2: float
    lambda_min: float


@dataclass
class RateConfig:
    d: int = 10
    narrow_dim: int = 3
    n_grid: tuple = tuple(2**j for j in range(7, 15))
    beta: float = 1.0
    design: str = "rich"
    seeds: tuple = tuple(range(16))
    noise_scale: float = 0.1
    grad_tol: float = 1e-10
    max_iters: int = 300_000

    def __post_init__(self):
        if self.d < 1 or self.d > 20:
            raise ConfigurationError("d must lie in [1, 20]")
        if self.design not in ("rich", "narrow"):
            raise ConfigurationError(f"unknown design: {self.design!r}")
        if list(self.n_grid) != sorted(self.n_grid):
            raise ConfigurationError("n_grid must be ascending")
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive")


@dataclass
class RateResult:
    records: list
    slope: float
    intercept: float
    mean_errors: np.ndarray
    unconverged_fits: int
    design: str


@dataclass
class TeacherDiagnostic:
    label: str
    margin_mean: float
    margin_std: float
    mean_curvature_weight: float
    lambda_min: float
    margins: np.ndarray = field(repr=False, default=None)
    histogram_counts: np.ndarray = field(repr=False, default=None)
    histogram_edges: np.ndarray = field(repr=False, default=None)


def score_gap(student: PolicyView, x, y_plus, y_minus) -> np.ndarray:
    """Difference of student log-prob gradients between the two responses."""
    return grad_logprob(student, x, y_plus) - grad_logprob(student, x, y_minus)


def curvature_weight(m: float) -> float:
    """sigma(m) (1 - sigma(m)): even in m, 1/4 at m = 0, decaying in |m|,
    and kept strictly positive for |m| past the naive underflow point."""
    return float(sigmoid_product(m))


def empirical_hessian(
    student: PolicyView,
    teacher: PolicyView,
    pairs: Sequence,
    beta: float,
    param_indices: Optional[np.ndarray] = None,
    dim_cap: int = MATRIX_DIM_CAP,
) -> InfoMatrix:
    """(beta^2 / n) sum_i w_i d_i d_i^T over the given preference pairs.

    param_indices optionally restricts the matrix to a parameter subset
    (e.g. the slice a view's gradients can actually touch) so the dimension
    cap is honored on larger policies.
    """
    pairs = list(pairs)
    if not pairs:
        raise InputError("empirical_hessian needs at least one pair")
    if beta <= 0:
        raise ConfigurationError("beta must be positive")
    dim = student.params.n_params if param_indices is None else len(param_indices)
    if dim > dim_cap:
        raise CapacityError(f"information matrix dimension {dim} exceeds cap {dim_cap}")
    h = np.zeros((dim, dim), dtype=np.float64)
    weights = np.zeros(len(pairs), dtype=np.float64)
    for i, pair in enumerate(pairs):
        gap = score_gap(student, pair.prompt, pair.y_plus, pair.y_minus)
        if param_indices is not None:
            gap = gap[param_indices]
        m = pair_margin(student, teacher, pair, beta)
        w = curvature_weight(m)
        weights[i] = w
        h += w * np.outer(gap, gap)
    h *= beta * beta / len(pairs)
    h = 0.5 * (h + h.T)
    return InfoMatrix(matrix=h, n_pairs=len(pairs), beta=beta, per_pair_weights=weights)


def min_eigenvalue(m, dim_cap: int = MATRIX_DIM_CAP) -> float:
    """Smallest eigenvalue of a symmetric matrix via cyclic Jacobi sweeps."""
    a = m.matrix if isinstance(m, InfoMatrix) else np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError("min_eigenvalue needs a square matrix")
    if a.shape[0] > dim_cap:
        raise CapacityError(f"matrix dimension {a.shape[0]} exceeds cap {dim_cap}")
    scale = max(1.0, float(np.abs(a).max()))
    if float(np.abs(a - a.T).max()) > 1e-12 * scale:
        raise InputError("matrix is not symmetric within tolerance")
    return float(kernels.jacobi_eigenvalues(a)[0])


def _bt_grad(theta, gaps, signs, beta):
    m = beta * (gaps @ theta) * signs
    w = sigmoid(-m)
    return -(beta / gaps.shape[0]) * (gaps.T @ (w * signs))


def _lipschitz_bound(gaps, beta, iters=60):
    """Power-iteration bound on the pairwise NLL Hessian: since the
    logistic curvature never exceeds 1/4, L <= (beta^2/4) lam_max(G'G/n)."""
    n, d = gaps.shape
    v = np.ones(d) / math.sqrt(d)
    lam = 1.0
    for _ in range(iters):
        u = gaps.T @ (gaps @ v) / n
        lam = float(np.linalg.norm(u))
        if lam == 0.0:
            return 1.0
        v = u / lam
    return 0.25 * beta * beta * lam * 1.05


def _fit_pairwise_mle(gaps, signs, beta, theta0, grad_tol, max_iters):
    """Full-batch gradient descent with a fixed 1/L step to the gradient
    norm tolerance; returns (theta, final gradient norm, iterations)."""
    theta = theta0.copy()
    step = 1.0 / _lipschitz_bound(gaps, beta)
    gnorm = float(np.linalg.norm(_bt_grad(theta, gaps, signs, beta)))
    it = 0
    while gnorm > grad_tol and it < max_iters:
        theta -= step * _bt_grad(theta, gaps, signs, beta)
        gnorm = float(np.linalg.norm(_bt_grad(theta, gaps, signs, beta)))
        it += 1
    return theta, gnorm, it


def _design_matrix(rng, design, n, d, k, noise_scale):
    if design == "rich":
        return rng.standard_normal((n, d)), None
    basis = np.linalg.qr(rng.standard_normal((d, k)))[0]
    z = rng.standard_normal((n, k))
    gaps = z @ basis.T + noise_scale * rng.standard_normal((n, d))
    return gaps, basis


def rate_experiment(config: RateConfig) -> RateResult:
    """Empirical concentration rate of the pairwise MLE.

    For each seed, plants a unit-norm theta* (restricted to the informative
    subspace in the narrow design), draws gap features, samples preference
    outcomes from the logistic probability at theta*, fits the MLE at each
    n in the grid (warm-started along the grid), and records the L2 error
    and the minimum eigenvalue of the information matrix at theta*. The
    least-squares slope of log mean-error against log n estimates the rate
    exponent.
    """
    records = []
    unconverged = 0
    n_grid = list(config.n_grid)
    errors = np.zeros((len(config.seeds), len(n_grid)))
    for si, seed in enumerate(config.seeds):
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed) & (2**64 - 1), 0x7473, 0 if config.design == "rich" else 1])
        )
        gaps, basis = _design_matrix(rng, config.design, n_grid[-1], config.d, config.narrow_dim, config.noise_scale)
        if config.design == "rich":
            theta_star = rng.standard_normal(config.d)
        else:
            theta_star = basis @ rng.standard_normal(config.narrow_dim)
        theta_star /= np.linalg.norm(theta_star)
        m_star = config.beta * (gaps @ theta_star)
        signs = np.where(rng.uniform(size=n_grid[-1]) < sigmoid(m_star), 1.0, -1.0)
        theta = np.zeros(config.d)
        for ni, n in enumerate(n_grid):
            theta, gnorm, _ = _fit_pairwise_mle(
                gaps[:n], signs[:n], config.beta, theta, config.grad_tol, config.max_iters
            )
            if gnorm > config.grad_tol:
                unconverged += 1
            err = float(np.linalg.norm(theta - theta_star))
            w = sigmoid_product(m_star[:n])
            info = (config.beta**2 / n) * (gaps[:n].T * w) @ gaps[:n]
            info = 0.5 * (info + info.T)
            lam = max(min_eigenvalue(info), 0.0)  # clip Jacobi float noise on PSD input
            records.append(RateRecord(n=n, seed=int(seed), error_l2=err, lambda_min=lam))
            errors[si, ni] = err
    mean_errors = errors.mean(axis=0)
    if len(n_grid) >= 2:
        slope, intercept = np.polyfit(
            np.log(np.array(n_grid, dtype=np.float64)), np.log(mean_errors), 1
        )
    else:
        slope, intercept = float("nan"), float(np.log(mean_errors[0]))
    return RateResult(
        records=records,
        slope=float(slope),
        intercept=float(intercept),
        mean_errors=mean_errors,
        unconverged_fits=unconverged,
        design=config.design,
    )


def teacher_gap_diagnostic(
    student: PolicyView,
    teacher_a: PolicyView,
    teacher_b: PolicyView,
    task,
    n_pairs: int,
    beta: float,
    seed: int = 0,
    labels=("contextual", "external"),
    param_indices: Optional[np.ndarray] = None,
) -> list:
    """Margin and curvature profile of two candidate teachers.

    Samples n_pairs (teacher draw, student draw) comparisons per teacher
    under a shared stream schedule and summarizes margins, curvature
    weights, and the information-matrix minimum eigenvalue. Exploratory:
    no pass/fail thresholds.
    """
    out = []
    for label, teacher in zip(labels, (teacher_a, teacher_b)):
        pairs = []
        for i in range(n_pairs):
            rng = np.random.default_rng(
                np.random.SeedSequence([int(seed) & (2**64 - 1), 0xD1A6, i])
            )
            x = task.prompts[int(rng.integers(0, task.num_prompts))]
            y_minus = sample(student, x, rng)
            y_plus = sample(teacher, x, rng)
            pairs.append(make_preference_pair(teacher, x, y_plus, y_minus))
        margins = np.array([pair_margin(student, teacher, p, beta) for p in pairs])
        weights = sigmoid_product(margins)
        info = empirical_hessian(student, teacher, pairs, beta, param_indices=param_indices)
        counts, edges = np.histogram(margins, bins=20)
        out.append(
            TeacherDiagnostic(
                label=label,
                margin_mean=float(margins.mean()),
                margin_std=float(margins.std()),
                mean_curvature_weight=float(weights.mean()),
                lambda_min=min_eigenvalue(info),
                margins=margins,
                histogram_counts=counts,
                histogram_edges=edges,
            )
        )
    return out
