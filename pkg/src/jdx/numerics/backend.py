"""Kernel backend selection.

JDX_BACKEND=numpy forces the pure-numpy kernels; JDX_BACKEND=numba requires
numba and fails loudly if it is missing.  Unset, numba is used when
importable and numpy otherwise.  benchmarks/bench_kernels.py times the two
side by side.
"""

import os

_requested = os.environ.get("JDX_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(f"JDX_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    from . import kernels_numpy as _k
    BACKEND = "numpy"
elif _requested == "numba":
    from . import kernels_numba as _k
    BACKEND = "numba"
else:
    try:
        from . import kernels_numba as _k
        BACKEND = "numba"
    except ImportError:
        from . import kernels_numpy as _k
        BACKEND = "numpy"

conv2d_forward = _k.conv2d_forward
conv2d_backward = _k.conv2d_backward
maxpool_forward = _k.maxpool_forward
maxpool_backward = _k.maxpool_backward
