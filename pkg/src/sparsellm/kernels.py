"""Backend selection for the per-entry update kernels.

The compiled extension (``sparsellm._accel``) is preferred when it was
built; the vectorized NumPy fallback is always available.  Selection
happens once at import and can be forced with the environment variable
``SPARSELLM_KERNELS`` (``compiled`` | ``python`` | ``auto``) or at
runtime with :func:`set_backend`.
"""

from __future__ import annotations

import os

from . import _kernels_py
from .errors import ConfigError

try:
    from . import _accel as _compiled
except ImportError:
    _compiled = None

_impl = _kernels_py


def available_backends() -> tuple[str, ...]:
    if _compiled is not None:
        return ("compiled", "python")
    return ("python",)


def set_backend(name: str) -> None:
    """Select the kernel implementation; ``auto`` prefers compiled."""
    global _impl
    if name == "auto":
        _impl = _compiled if _compiled is not None else _kernels_py
    elif name == "python":
        _impl = _kernels_py
    elif name == "compiled":
        if _compiled is None:
            raise ConfigError("compiled kernels requested but the extension is not built")
        _impl = _compiled
    else:
        raise ConfigError(f"unknown kernel backend {name!r}")


def backend_name() -> str:
    return _impl.BACKEND


def gate_minimize(t, z, w, alpha, beta, halfwidth):
    return _impl.gate_minimize(t, z, w, alpha, beta, halfwidth)


def relu_branch_update(c, t, alpha, beta, exact=True):
    return _impl.relu_branch_update(c, t, alpha, beta, exact)


def gated_output_update(c, g, t, alpha, beta):
    return _impl.gated_output_update(c, g, t, alpha, beta)


set_backend(os.environ.get("SPARSELLM_KERNELS", "auto"))
