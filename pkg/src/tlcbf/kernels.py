"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
twin is used. Set ``TLCBF_PURE_PYTHON=1`` to force the fallback.
"""
import os

BACKEND = "python"

if os.environ.get("TLCBF_PURE_PYTHON", "") not in ("", "0"):
    from tlcbf._pykernels import *  # noqa: F401,F403
else:
    try:
        from tlcbf._ckernels import *  # noqa: F401,F403
        BACKEND = "cython"
    except ImportError:
        from tlcbf._pykernels import *  # noqa: F401,F403

from tlcbf import _pykernels as python_backend  # noqa: E402


def compiled_backend():
    """Return the compiled kernel module, or None when it is not built."""
    try:
        from tlcbf import _ckernels
    except ImportError:
        return None
    return _ckernels
