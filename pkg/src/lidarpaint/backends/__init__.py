"""Kernel backend selection.

The compiled extension is preferred when present; the NumPy reference
implementation is the fallback. ``LIDARPAINT_BACKEND`` overrides the choice:
``auto`` (default), ``native``, or ``python``.
"""

from __future__ import annotations

import os

_choice = os.environ.get("LIDARPAINT_BACKEND", "auto").strip().lower()
if _choice not in ("auto", "native", "python"):
    raise ValueError(f"LIDARPAINT_BACKEND must be auto, native or python, got {_choice!r}")

if _choice == "python":
    from . import reference as _impl
    BACKEND_NAME = "python"
else:
    try:
        from . import _native as _impl
        BACKEND_NAME = "native"
    except ImportError:
        if _choice == "native":
            raise
        from . import reference as _impl
        BACKEND_NAME = "python"

rasterize_zbuffer = _impl.rasterize_zbuffer
blend_forward = _impl.blend_forward
blend_backward = _impl.blend_backward

__all__ = ["BACKEND_NAME", "rasterize_zbuffer", "blend_forward", "blend_backward"]
