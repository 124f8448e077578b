"""Global numeric precision mode.

Training runs in float32 for speed; gradient-check suites switch the whole
stack to float64. The mode is process-global and applies to every array the
library allocates -- per-op mixing is deliberately not supported.
"""

from __future__ import annotations

import contextlib

import numpy as np

_MODES = {"f32": np.float32, "f64": np.float64}
_dtype = np.float32


def set_mode(mode: str) -> None:
    """Select the active float width: "f32" or "f64"."""
    global _dtype
    if mode not in _MODES:
        raise ValueError(f"unknown precision mode {mode!r}; expected one of {sorted(_MODES)}")
    _dtype = _MODES[mode]


def get_mode() -> str:
    return "f32" if _dtype == np.float32 else "f64"


def dtype() -> np.dtype:
    """The numpy dtype for the active mode."""
    return np.dtype(_dtype)


def asarray(x) -> np.ndarray:
    """Convert to an array in the active precision."""
    return np.asarray(x, dtype=_dtype)


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=_dtype)


@contextlib.contextmanager
def mode(name: str):
    """Temporarily switch precision (used by tests)."""
    prev = get_mode()
    set_mode(name)
    try:
        yield
    finally:
        set_mode(prev)
