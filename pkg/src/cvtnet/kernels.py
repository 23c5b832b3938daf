"""Backend selection for the hot kernels.

The compiled extension is preferred; the pure-Python module is used when it
is missing or when the environment variable ``CVTNET_PURE_PYTHON`` is set
to a non-empty value other than ``0``.
"""
import os

from cvtnet import _kernels_py


def _load_compiled():
    try:
        from cvtnet import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()

if _compiled is not None and os.environ.get("CVTNET_PURE_PYTHON", "0") in ("", "0"):
    _active = _compiled
    BACKEND = "compiled"
else:
    _active = _kernels_py
    BACKEND = "python"


def get_backend(name):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available():
    return _compiled is not None


local_move = _active.local_move
im2col = _active.im2col
col2im = _active.col2im
