"""Backend dispatch for the hot numeric loops.

The compiled extension is preferred when present; the pure-numpy module is
the fallback. Set PBSD_LAB_KERNEL=python (or =compiled) to force a choice;
forcing `compiled` when the extension is missing raises at import of the
selecting call, never silently.
"""

from __future__ import annotations

import os

from . import _kernels_py
from .errors import ConfigurationError

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built on this install
    _compiled = None


def _select():
    forced = os.environ.get("PBSD_LAB_KERNEL", "auto").lower()
    if forced in ("auto", ""):
        return _compiled if _compiled is not None else _kernels_py
    if forced == "python":
        return _kernels_py
    if forced == "compiled":
        if _compiled is None:
            raise ConfigurationError("PBSD_LAB_KERNEL=compiled but the extension is not built")
        return _compiled
    raise ConfigurationError(f"unknown PBSD_LAB_KERNEL value: {forced!r}")


def active_backend() -> str:
    """Name of the kernel backend that will serve calls right now."""
    return "python" if _select() is _kernels_py else "compiled"


def project_to_simplex(v):
    return _select().project_to_simplex(v)


def pga_ascent(log_teacher, rewards, beta, start, iters=10_000, step0=0.1, floor=1e-12):
    return _select().pga_ascent(log_teacher, rewards, beta, start, iters, step0, floor)


def mirror_polish(log_teacher, rewards, beta, start, iters=200, rel_step=0.5):
    return _select().mirror_polish(log_teacher, rewards, beta, start, iters, rel_step)


def jacobi_eigenvalues(a, tol_scale=1e-12, max_sweeps=60):
    return _select().jacobi_eigenvalues(a, tol_scale, max_sweeps)
