"""Pick the compiled kernels when importable, otherwise the NumPy fallback.

Set ``DTPINN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

if os.environ.get("DTPINN_PURE_PYTHON"):
    kernels = _fallback
    COMPILED = False
else:
    try:
        from . import _kernels as kernels
        COMPILED = True
    except ImportError:  # extension not built
        kernels = _fallback
        COMPILED = False

BACKEND = "cython" if COMPILED else "python"

__all__ = ["kernels", "COMPILED", "BACKEND"]
