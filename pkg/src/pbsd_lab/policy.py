"""Parameterized autoregressive policies over a task's response space.

Both backends factorize per position with no prefix dependence, so the
response distribution is a product of per-position categoricals and can be
materialized exactly. One flat parameter vector carries logits for both
conditioning states; the student view reads the context-absent slice and
the teacher view the context-present slice. Freezing a view snapshots the
parameters, which keeps teacher log-probs bit-identical while the student
trains.

Tabular layout of theta: index ((prompt * 2 + ctx) * L + t) * V + v.
Linear layout: a (feature_dim x V) weight matrix, flattened row-major,
applied to a one-hot feature of (prompt, position, context bit) optionally
folded modulo feature_dim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .tasks import TaskInstance

BACKENDS = ("tabular", "linear")
CONTEXT_MODES = ("student", "teacher")


@dataclass
class PolicyParams:
    backend: str
    theta: np.ndarray
    num_prompts: int
    response_length: int
    vocab_size: int
    feature_dim: int = 0  # linear backend only; 0 means the full one-hot dim

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"unknown backend: {self.backend!r}")
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.backend == "linear" and self.feature_dim <= 0:
            self.feature_dim = self.num_prompts * self.response_length * 2
        if self.theta.shape != (self.n_params,):
            raise ConfigurationError(
                f"theta has shape {self.theta.shape}, expected ({self.n_params},)"
            )
        if not np.all(np.isfinite(self.theta)):
            raise ConfigurationError("theta must be finite")

    @property
    def n_params(self) -> int:
        if self.backend == "tabular":
            return self.num_prompts * 2 * self.response_length * self.vocab_size
        return self.feature_dim * self.vocab_size

    def shape_dict(self) -> dict:
        return {
            "num_prompts": self.num_prompts,
            "response_length": self.response_length,
            "vocab_size": self.vocab_size,
            "feature_dim": self.feature_dim if self.backend == "linear" else 0,
        }

    def clone(self) -> "PolicyParams":
        return PolicyParams(
            backend=self.backend,
            theta=self.theta.copy(),
            num_prompts=self.num_prompts,
            response_length=self.response_length,
            vocab_size=self.vocab_size,
            feature_dim=self.feature_dim,
        )


@dataclass
class PolicyView:
    """A conditioning of the shared parameters: student (no context) or
    teacher (context present). Frozen views keep their own theta copy."""

    params: PolicyParams
    context_mode: str
    frozen: bool = False
    temperature: float = 1.0
    _theta_snapshot: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.context_mode not in CONTEXT_MODES:
            raise ConfigurationError(f"unknown context mode: {self.context_mode!r}")
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if self.frozen and self._theta_snapshot is None:
            self._theta_snapshot = self.params.theta.copy()

    @property
    def theta(self) -> np.ndarray:
        if self.frozen:
            return self._theta_snapshot
        return self.params.theta

    @property
    def context_bit(self) -> int:
        return 0 if self.context_mode == "student" else 1

    def refresh_snapshot(self, theta: np.ndarray) -> None:
        if not self.frozen:
            raise InputError("only frozen views carry a snapshot to refresh")
        self._theta_snapshot = np.asarray(theta, dtype=np.float64).copy()


def student_view(params: PolicyParams, temperature: float = 1.0) -> PolicyView:
    return PolicyView(params, "student", frozen=False, temperature=temperature)


def teacher_view(params: PolicyParams, frozen: bool = True, temperature: float = 1.0) -> PolicyView:
    return PolicyView(params, "teacher", frozen=frozen, temperature=temperature)


def _feature_row(params: PolicyParams, prompt_idx: int, ctx: int, t: int) -> int:
    """Parameter-row index for one conditioning state."""
    flat = (prompt_idx * 2 + ctx) * params.response_length + t
    if params.backend == "tabular":
        return flat
    return flat % params.feature_dim


def factor_rows(view: PolicyView, x) -> np.ndarray:
    """Row indices into the (rows x V) logit table for positions 0..L-1."""
    p = view.params
    idx = x.index if hasattr(x, "index") else int(x)
    return np.array(
        [_feature_row(p, idx, view.context_bit, t) for t in range(p.response_length)],
        dtype=np.intp,
    )


def position_distributions(view: PolicyView, x) -> np.ndarray:
    """(L, V) matrix of per-position token probabilities."""
    p = view.params
    table = view.theta.reshape(-1, p.vocab_size)
    logits = table[factor_rows(view, x)] / view.temperature
    logits = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def logprob(view: PolicyView, x, y: Sequence) -> float:
    """Sum over positions of log p(y_t | conditioning state)."""
    p = view.params
    y = tuple(int(t) for t in y)
    if len(y) != p.response_length:
        raise InputError(f"response length {len(y)} != {p.response_length}")
    for t in y:
        if not 0 <= t < p.vocab_size:
            raise InputError(f"token {t} outside vocabulary of size {p.vocab_size}")
    probs = position_distributions(view, x)
    total = 0.0
    for t, tok in enumerate(y):
        total += float(np.log(probs[t, tok]))
    return total


def sample(view: PolicyView, x, rng: np.random.Generator) -> tuple:
    """Draw a length-L response token-by-token via inverse CDF."""
    probs = position_distributions(view, x)
    out = []
    for t in range(view.params.response_length):
        u = rng.random()
        cdf = np.cumsum(probs[t])
        tok = int(np.searchsorted(cdf, u, side="right"))
        out.append(min(tok, view.params.vocab_size - 1))
    return tuple(out)


def grad_logprob(view: PolicyView, x, y: Sequence) -> np.ndarray:
    """Analytic gradient of logprob w.r.t. the full flat theta.

    Per position the factor gradient is one_hot(y_t) - p(.), routed to the
    view's parameter rows; the sequence gradient is the per-position sum,
    accumulated in position order.
    """
    p = view.params
    y = tuple(int(t) for t in y)
    if len(y) != p.response_length:
        raise InputError(f"response length {len(y)} != {p.response_length}")
    probs = position_distributions(view, x)
    rows = factor_rows(view, x)
    grad = np.zeros(p.n_params, dtype=np.float64)
    gtable = grad.reshape(-1, p.vocab_size)
    inv_temp = 1.0 / view.temperature
    for t, tok in enumerate(y):
        if not 0 <= tok < p.vocab_size:
            raise InputError(f"token {tok} outside vocabulary of size {p.vocab_size}")
        row = rows[t]
        gtable[row] -= inv_temp * probs[t]
        gtable[row, tok] += inv_temp
    return grad


def exact_distribution(view: PolicyView, x, task: TaskInstance) -> np.ndarray:
    """Probability of every enumerated response, in enumeration order."""
    if task.variable_length:
        raise InputError("exact_distribution requires fixed-length mode")
    probs = position_distributions(view, x)
    dist = np.array([1.0])
    for t in range(task.response_length):
        dist = np.outer(dist, probs[t]).ravel()
    return dist


def view_param_indices(view: PolicyView, task: TaskInstance) -> np.ndarray:
    """Flat theta indices that this view's gradients can touch."""
    p = view.params
    rows = set()
    for prompt in task.prompts:
        for t in range(p.response_length):
            rows.add(_feature_row(p, prompt.index, view.context_bit, t))
    idx = []
    for r in sorted(rows):
        idx.extend(range(r * p.vocab_size, (r + 1) * p.vocab_size))
    return np.array(idx, dtype=np.intp)


def init_policy(
    task: TaskInstance,
    backend: str = "tabular",
    seed: int = 0,
    teacher_bias: float = 3.0,
    noise_scale: float = 0.01,
    feature_dim: int = 0,
) -> PolicyParams:
    """Initialize shared parameters for student and teacher views.

    Both context slices share one small Gaussian logit draw, and the
    teacher slice additionally receives +teacher_bias on the target token
    at each position, so the teacher starts concentrated near the
    demonstration while the student is near-uniform. With bias 0 the two
    views coincide exactly.
    """
    if teacher_bias < 0:
        raise ConfigurationError("teacher_bias must be >= 0")
    if backend not in BACKENDS:
        raise ConfigurationError(f"unknown backend: {backend!r}")
    if backend == "tabular":
        n_rows = task.num_prompts * 2 * task.response_length
    else:
        n_rows = feature_dim or task.num_prompts * task.response_length * 2
    p0 = PolicyParams(
        backend=backend,
        theta=np.zeros(n_rows * task.vocab_size),
        num_prompts=task.num_prompts,
        response_length=task.response_length,
        vocab_size=task.vocab_size,
        feature_dim=feature_dim,
    )
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x90C7]))
    table = p0.theta.reshape(-1, task.vocab_size)
    for prompt in task.prompts:
        for t in range(task.response_length):
            noise = noise_scale * rng.standard_normal(task.vocab_size)
            r_student = _feature_row(p0, prompt.index, 0, t)
            r_teacher = _feature_row(p0, prompt.index, 1, t)
            table[r_student] += noise
            table[r_teacher] += noise
            table[r_teacher, task.targets[prompt.index][t]] += teacher_bias
    return p0
