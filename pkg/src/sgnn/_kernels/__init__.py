"""Kernel backend selection.

At import time the compiled extension is preferred; the pure-Python
reference implementation is the fallback. ``SGNN_KERNELS=python`` or
``SGNN_KERNELS=native`` forces a backend (useful for benchmarking and
parity testing). Both backends are bit-identical, so the choice affects
speed only, never results.
"""

import os

_requested = os.environ.get("SGNN_KERNELS", "").strip().lower()
if _requested not in ("", "native", "python"):
    raise ImportError(
        f"SGNN_KERNELS must be 'native' or 'python', got {_requested!r}"
    )

if _requested == "python":
    from . import _reference as _impl

    BACKEND = "python"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        if _requested == "native":
            raise
        from . import _reference as _impl  # type: ignore[no-redef]

        BACKEND = "python"

mm = _impl.mm
transpose = _impl.transpose
ew_add = _impl.ew_add
ew_sub = _impl.ew_sub
ew_mul = _impl.ew_mul
ew_div = _impl.ew_div
scale = _impl.scale
add_scalar = _impl.add_scalar
lin2 = _impl.lin2
add_rowvec = _impl.add_rowvec
relu = _impl.relu
relu_grad = _impl.relu_grad
logistic = _impl.logistic
sqrt_ew = _impl.sqrt_ew
abs_ew = _impl.abs_ew
clip = _impl.clip
row_sum = _impl.row_sum
col_sum = _impl.col_sum
zscore_rows = _impl.zscore_rows
next_u64 = _impl.next_u64
fill_uniform = _impl.fill_uniform
fill_normal = _impl.fill_normal
