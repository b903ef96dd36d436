"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise, or when
``PIDLD_BACKEND=python`` is set, the numpy twins in ``_fallback`` are used.
"""
from __future__ import annotations

import os

from . import _fallback

fallback = _fallback

if os.environ.get("PIDLD_BACKEND", "").lower() in ("python", "numpy", "fallback"):
    kernels = _fallback
    NAME = "python"
else:
    try:
        from . import _core as kernels  # type: ignore[no-redef]

        NAME = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        kernels = _fallback
        NAME = "python"

compiled = kernels if NAME == "cython" else None
