"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the pure-Python
version is used. Set ``PROMPTEVO_PURE=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _edt_py

BACKEND = "python"
edt_sq = _edt_py.edt_sq

if os.environ.get("PROMPTEVO_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _edt_ext
    except ImportError:  # extension not built
        pass
    else:
        edt_sq = _edt_ext.edt_sq
        BACKEND = "compiled"

__all__ = ["BACKEND", "edt_sq"]
