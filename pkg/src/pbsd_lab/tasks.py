"""Synthetic, exactly-enumerable sequence tasks.

A task is a finite set of prompts over a small token vocabulary, a target
response per prompt, a per-prompt privileged context (the demonstration),
and a bounded reward. Response spaces are small enough to enumerate, so
downstream modules can compute expectations and divergences exactly.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError, InputError

TokenSeq = tuple  # tuple of ints in [0, V)

DEFAULT_ENUMERATION_CAP = 50_000


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token alphabet; tokens are referred to by index 0..V-1."""

    symbols: tuple

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise ConfigurationError("vocabulary needs at least 2 symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ConfigurationError("vocabulary symbols must be distinct")

    @property
    def size(self) -> int:
        return len(self.symbols)

    @staticmethod
    def default(size: int = 6) -> "Vocabulary":
        symbols = tuple(chr(ord("a") + i) if i < 26 else f"t{i}" for i in range(size))
        return Vocabulary(symbols)


@dataclass(frozen=True)
class Prompt:
    """Opaque prompt index plus its rendered token sequence."""

    index: int
    tokens: tuple


@dataclass(frozen=True)
class RewardSpec:
    kind: str = "position-match"
    wrong_length_penalty: float = -1.0

    def __post_init__(self):
        if self.kind not in ("position-match", "exact-match"):
            raise ConfigurationError(f"unknown reward kind: {self.kind!r}")
        if not -1.0 <= self.wrong_length_penalty <= 1.0:
            raise ConfigurationError("wrong_length_penalty must lie in [-1, 1]")


@dataclass(frozen=True)
class TaskConfig:
    vocab_size: int = 6
    response_length: int = 3
    num_prompts: int = 16
    kind: str = "keyed-substitution"
    reward_kind: str = "position-match"
    wrong_length_penalty: float = -1.0
    variable_length: bool = False
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP


@dataclass(frozen=True)
class TaskInstance:
    """Immutable task: prompts, targets, contexts, and the reward spec."""

    id: str
    seed: int
    vocabulary: Vocabulary
    prompts: tuple
    response_length: int
    targets: dict = field(hash=False)
    contexts: dict = field(hash=False)
    reward_spec: RewardSpec = RewardSpec()
    variable_length: bool = False
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP

    @property
    def vocab_size(self) -> int:
        return self.vocabulary.size

    @property
    def num_prompts(self) -> int:
        return len(self.prompts)

    def target(self, x) -> tuple:
        return self.targets[_prompt_index(self, x)]

    def context(self, x) -> tuple:
        return self.contexts[_prompt_index(self, x)]


def _prompt_index(task: TaskInstance, x) -> int:
    if isinstance(x, Prompt):
        idx = x.index
    else:
        idx = int(x)
    if not 0 <= idx < len(task.prompts):
        raise InputError(f"prompt index {idx} not in task {task.id!r}")
    return idx


def _validate_tokens(task: TaskInstance, y: Sequence) -> tuple:
    y = tuple(int(t) for t in y)
    v = task.vocab_size
    for t in y:
        if not 0 <= t < v:
            raise InputError(f"token {t} outside vocabulary of size {v}")
    return y


def generate_task(seed: int, config: TaskConfig = TaskConfig()) -> TaskInstance:
    """Deterministically build a task from (seed, config).

    The keyed-substitution kind draws one random permutation of the
    vocabulary per task; the target of each prompt is the permutation
    applied position-wise to the prompt tokens, and the context is the
    target itself (a full demonstration).
    """
    if config.vocab_size < 2:
        raise ConfigurationError("vocab_size must be >= 2")
    if config.response_length < 1:
        raise ConfigurationError("response_length must be >= 1")
    if config.num_prompts < 1:
        raise ConfigurationError("num_prompts must be >= 1")
    if config.kind != "keyed-substitution":
        raise ConfigurationError(f"unknown task kind: {config.kind!r}")

    v, ell = config.vocab_size, config.response_length
    if config.num_prompts > v**ell:
        raise ConfigurationError(
            f"cannot draw {config.num_prompts} distinct prompts from a space of {v ** ell}"
        )

    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0x7A5C]))
    key = rng.permutation(v)

    seen = set()
    prompts = []
    while len(prompts) < config.num_prompts:
        cand = tuple(int(t) for t in rng.integers(0, v, size=ell))
        if cand in seen:
            continue
        seen.add(cand)
        prompts.append(Prompt(index=len(prompts), tokens=cand))

    targets = {}
    contexts = {}
    for p in prompts:
        tgt = tuple(int(key[t]) for t in p.tokens)
        targets[p.index] = tgt
        contexts[p.index] = tgt

    task_id = f"{config.kind}-v{v}-l{ell}-p{config.num_prompts}-seed{int(seed)}"
    return TaskInstance(
        id=task_id,
        seed=int(seed),
        vocabulary=Vocabulary.default(v),
        prompts=tuple(prompts),
        response_length=ell,
        targets=targets,
        contexts=contexts,
        reward_spec=RewardSpec(config.reward_kind, config.wrong_length_penalty),
        variable_length=config.variable_length,
        enumeration_cap=config.enumeration_cap,
    )


def reward(task: TaskInstance, x, y: Sequence) -> float:
    """Bounded reward in [-1, 1] for a response to a prompt."""
    idx = _prompt_index(task, x)
    y = _validate_tokens(task, y)
    tgt = task.targets[idx]
    ell = task.response_length
    if len(y) != ell:
        return float(task.reward_spec.wrong_length_penalty)
    if task.reward_spec.kind == "position-match":
        matches = sum(1 for a, b in zip(y, tgt) if a == b)
        return matches / ell
    # exact-match
    return 1.0 if y == tgt else 0.0


def response_space_size(task: TaskInstance) -> int:
    v, ell = task.vocab_size, task.response_length
    if task.variable_length:
        return sum(v**k for k in range(ell + 1))
    return v**ell


def enumerate_responses(task: TaskInstance) -> list:
    """Complete, duplicate-free, lexicographically ordered response list.

    Fixed-length mode orders by base-V value; variable-length mode lists
    lengths 0..L, each block lexicographic. The ordering is identical on
    every call.
    """
    size = response_space_size(task)
    if size > task.enumeration_cap:
        raise CapacityError(
            f"response space of size {size} exceeds enumeration cap {task.enumeration_cap}"
        )
    v, ell = task.vocab_size, task.response_length
    if task.variable_length:
        out = []
        for k in range(ell + 1):
            out.extend(itertools.product(range(v), repeat=k))
        return out
    return list(itertools.product(range(v), repeat=ell))


def response_index(task: TaskInstance, y: Sequence) -> int:
    """Position of a fixed-length response in enumerate_responses order."""
    y = _validate_tokens(task, y)
    if task.variable_length:
        raise InputError("response_index is defined for fixed-length mode only")
    if len(y) != task.response_length:
        raise InputError(f"response length {len(y)} != {task.response_length}")
    idx = 0
    for t in y:
        idx = idx * task.vocab_size + t
    return idx


def rewards_over_space(task: TaskInstance, x) -> np.ndarray:
    """Reward of every enumerated response, in enumeration order."""
    return np.array([reward(task, x, y) for y in enumerate_responses(task)], dtype=np.float64)


def task_to_json_dict(task: TaskInstance) -> dict:
    return {
        "id": task.id,
        "seed": task.seed,
        "vocab_size": task.vocab_size,
        "response_length": task.response_length,
        "prompts": [
            {
                "index": p.index,
                "tokens": list(p.tokens),
                "context_tokens": list(task.contexts[p.index]),
                "target_tokens": list(task.targets[p.index]),
            }
            for p in task.prompts
        ],
        "reward": {
            "kind": task.reward_spec.kind,
            "wrong_length_penalty": task.reward_spec.wrong_length_penalty,
        },
    }


def serialize_task(task: TaskInstance) -> str:
    """Deterministic JSON document for a task."""
    return json.dumps(task_to_json_dict(task), separators=(",", ":"))
