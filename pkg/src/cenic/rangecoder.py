"""Range coder backend selection.

The compiled extension (``cenic._rc``) is preferred; the pure-Python twin
(``cenic._rc_py``) is selected at import when the extension is missing.
Both implement the same integer algorithm and emit byte-identical streams.
Set ``CENIC_CODER_BACKEND=python|cython`` to force a choice.
"""

import os

from . import _rc_py

_forced = os.environ.get("CENIC_CODER_BACKEND")

if _forced == "python":
    _impl = _rc_py
elif _forced == "cython":
    from . import _rc as _impl
else:
    try:
        from . import _rc as _impl
    except ImportError:
        _impl = _rc_py

BACKEND = _impl.BACKEND
RangeEncoder = _impl.RangeEncoder
RangeDecoder = _impl.RangeDecoder


def available_backends():
    """All importable coder backends, keyed by name."""
    backends = {"python": _rc_py}
    try:
        from . import _rc

        backends["cython"] = _rc
    except ImportError:
        pass
    return backends
