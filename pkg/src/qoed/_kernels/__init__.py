"""Hot kernels with a compiled core and a numpy fallback.

The Cython extension ``_core`` is used when it was built; otherwise, or when
``QOED_PURE_PYTHON=1`` is set, the numpy implementation in ``_fallback`` is
used.  Both expose the same functions and agree to rounding.
"""
import os

from . import _fallback

RWA, CLOSED = _fallback.RWA, _fallback.CLOSED

try:
    if os.environ.get("QOED_PURE_PYTHON", "") == "1":
        raise ImportError("pure-python kernels requested")
    from . import _core
except ImportError:
    _core = None

BACKEND = "cython" if _core is not None else "numpy"
_impl = _core if _core is not None else _fallback

experiment_probs = _impl.experiment_probs
grid_probs = _impl.grid_probs
unitaries = _fallback.unitaries


def backends():
    """Available kernel modules by name (for tests and benchmarks)."""
    out = {"numpy": _fallback}
    if _core is not None:
        out["cython"] = _core
    return out
