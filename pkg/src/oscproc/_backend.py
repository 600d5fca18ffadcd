"""Selects the compiled kernels when available, else the numpy fallback.

Set ``OSCPROC_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os
from contextlib import contextmanager

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_state = {"impl": _fallback, "threads": 1}
if _compiled is not None and os.environ.get("OSCPROC_PURE_PYTHON", "") not in ("1", "true"):
    _state["impl"] = _compiled


def name() -> str:
    return "cython" if _state["impl"] is _compiled else "numpy"


def available() -> tuple:
    return ("cython", "numpy") if _compiled is not None else ("numpy",)


def impl():
    return _state["impl"]


def set_backend(which: str):
    if which == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        _state["impl"] = _compiled
    elif which == "numpy":
        _state["impl"] = _fallback
    else:
        raise ValueError(f"unknown backend {which!r}")


@contextmanager
def use_backend(which: str):
    prev = _state["impl"]
    set_backend(which)
    try:
        yield
    finally:
        _state["impl"] = prev


def set_num_threads(n: int):
    if n < 1:
        raise ValueError("thread count must be positive")
    _state["threads"] = int(n)


def num_threads() -> int:
    return _state["threads"]
