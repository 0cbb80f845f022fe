"""Kernel selection.

The compiled extension is preferred. Set ``QTRACK_PURE_PYTHON=1`` before
import to force the numpy kernels; ``use_backend`` switches at runtime
(used by the benchmark and the cross-backend tests).
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_FORCE_PY = os.environ.get("QTRACK_PURE_PYTHON", "").strip() not in ("", "0")

kernels = _kernels_py if (_compiled is None or _FORCE_PY) else _compiled


def has_compiled():
    return _compiled is not None


def backend_name():
    return "compiled" if kernels is _compiled else "python"


def use_backend(name):
    """Select ``"compiled"`` or ``"python"`` kernels; returns the previous name."""
    global kernels
    previous = backend_name()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        kernels = _compiled
    elif name == "python":
        kernels = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous
