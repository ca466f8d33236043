"""Desk-scale lab for preference-based self-distillation on exactly
enumerable autoregressive policies, with closed-form oracles for the
reward-tilted optimum and an online trainer for the pairwise objective and
its KL-matching baselines."""

from .errors import (
    CapacityError,
    ConfigurationError,
    DomainError,
    InputError,
    LabError,
    SchemaError,
)
from .kernels import active_backend
from .tasks import TaskConfig, TaskInstance, generate_task

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConfigurationError",
    "DomainError",
    "InputError",
    "LabError",
    "SchemaError",
    "TaskConfig",
    "TaskInstance",
    "active_backend",
    "generate_task",
    "__version__",
]
