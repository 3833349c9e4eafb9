"""Kernel backend selection.

The hot kernels in :mod:`kernel_source` run either as plain vectorized
numpy or through numba's ``njit``. One source serves both paths. The
active backend is picked once at import time:

  ERASURE_LAB_BACKEND=numpy   vectorized numpy (default)
  ERASURE_LAB_BACKEND=numba   jit-compiled kernels (requires numba)

numpy is the default because the kernels are transcendental-bound and
numpy's SIMD tanh/exp beat numba's scalar libm calls wherever SVML is not
available; `benchmarks/bench_backends.py` measures both on the current
machine. Results are bitwise deterministic within one backend. Across
backends, single kernel calls agree to ~1e-12 relative (ULP-level libm
differences); iterated sampling trajectories are chaotic and may diverge
pointwise while remaining distributionally identical, so cross-backend
comparisons are only meaningful for per-call outputs or sample statistics.
"""

import os
from types import SimpleNamespace

from . import kernel_source

_KERNEL_NAMES = (
    "mlp_forward",
    "mlp_forward_out",
    "mlp_backward",
    "adamw_update",
    "ddpm_sampler",
)


def _numpy_namespace():
    return SimpleNamespace(
        name="numpy", **{k: getattr(kernel_source, k) for k in _KERNEL_NAMES}
    )


def _numba_namespace():
    from numba import njit

    compiled = {
        k: njit(cache=True)(getattr(kernel_source, k)) for k in _KERNEL_NAMES
    }
    return SimpleNamespace(name="numba", **compiled)


def _select():
    choice = os.environ.get("ERASURE_LAB_BACKEND", "").strip().lower()
    if choice in ("", "auto", "numpy"):
        return _numpy_namespace()
    if choice == "numba":
        return _numba_namespace()
    raise ValueError(
        f"ERASURE_LAB_BACKEND must be 'numpy', 'numba' or unset, got {choice!r}"
    )


kernels = _select()

ACT_IDENTITY = kernel_source.ACT_IDENTITY
ACT_TANH = kernel_source.ACT_TANH
ACT_RELU = kernel_source.ACT_RELU
ACT_SIGMOID = kernel_source.ACT_SIGMOID

ACTIVATION_CODES = {
    "identity": ACT_IDENTITY,
    "tanh": ACT_TANH,
    "relu": ACT_RELU,
    "sigmoid": ACT_SIGMOID,
}


def active_backend() -> str:
    return kernels.name


def get_backend(name: str):
    """Explicit backend handle, mainly for equivalence tests and benchmarks."""
    if name == "numpy":
        return _numpy_namespace()
    if name == "numba":
        return _numba_namespace()
    raise ValueError(f"unknown backend {name!r}")
