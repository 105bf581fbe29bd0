"""Backend switch for the hot kernels.

Set ``MOTIONLANG_NUMBA=0`` to force the pure-numpy path.  The choice can also
be flipped at runtime with :func:`set_backend` (used by the tests and the
benchmark to compare both paths on identical inputs).
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
_use_numba = HAVE_NUMBA and os.environ.get("MOTIONLANG_NUMBA", "1").lower() not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    if numba is None:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)


def use_numba():
    return _use_numba


def backend():
    return "numba" if _use_numba else "numpy"


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    global _use_numba
    prev = backend()
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev
