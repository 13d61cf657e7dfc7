"""Conv kernel backend selection.

The compiled extension is preferred when importable; otherwise the NumPy
implementation is used.  Set GAINIMPUTE_CONV_BACKEND=numpy|cython to force
one (forcing cython raises if the extension is missing).
"""

import os

_requested = os.environ.get("GAINIMPUTE_CONV_BACKEND", "").strip().lower()
if _requested not in ("", "numpy", "cython"):
    raise ImportError(
        f"GAINIMPUTE_CONV_BACKEND must be 'numpy' or 'cython', got {_requested!r}"
    )

if _requested == "numpy":
    from . import _convops_py as _impl
elif _requested == "cython":
    from . import _convops_cy as _impl  # type: ignore[attr-defined]
else:
    try:
        from . import _convops_cy as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _convops_py as _impl

BACKEND = _impl.BACKEND
conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
