"""Kernel dispatch: compiled extension if importable, numpy fallback otherwise.

Set ``EVMARKET_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("EVMARKET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

STATUS_OK = 0
STATUS_BUDGET = 1

cssg_solve = _impl.cssg_solve
stability_violations = _impl.stability_violations
# numpy's BLAS matmul outruns the compiled loop for the forward pass
mlp_forward = _kernels_py.mlp_forward
mlp_grad_step = _impl.mlp_grad_step
waiting_hours = _impl.waiting_hours
splitmix64 = _impl.splitmix64


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
