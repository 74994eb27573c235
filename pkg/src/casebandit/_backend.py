"""Select the kernel implementation at import time.

The compiled extension is preferred; set ``CASEBANDIT_PURE_PYTHON=1`` to force
the numpy fallback (the benchmark and the parity tests do this per process).
"""
import os

from . import _kernels_py

if os.environ.get("CASEBANDIT_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
