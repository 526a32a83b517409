"""Numba switch.

Hot kernels are written twice: a numba ``@njit`` version and a pure-numpy
version. Set ``DEMBOOST_JIT=0`` in the environment to force the numpy path
(also used automatically when numba is not importable).
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("DEMBOOST_JIT", "1").strip().lower() not in (
    "0",
    "false",
    "off",
    "no",
)


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator without numba."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]

    def deco(func):
        return func

    return deco


def use_numba():
    return USE_NUMBA


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels for the running process."""
    global USE_NUMBA
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        USE_NUMBA = True
    elif name == "numpy":
        USE_NUMBA = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend():
    return "numba" if USE_NUMBA else "numpy"
