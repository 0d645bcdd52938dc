"""Global run configuration: element precision and seeding.

The toolkit computes in a single floating-point precision selected per run:
64-bit for training and gradient checking, 32-bit for benchmarking and
codec timing. Tensors created while a precision is active stay in that
dtype.
"""

import contextlib
import os

import numpy as np

_DTYPE = np.float64


def default_dtype():
    return _DTYPE


def set_default_dtype(dtype):
    global _DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported element precision {dtype}")
    _DTYPE = dtype.type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the global element precision."""
    old = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def resolve_seed(seed):
    """Apply the CENIC_SEED environment override, if set."""
    env = os.environ.get("CENIC_SEED")
    if env is not None:
        return int(env)
    return seed
