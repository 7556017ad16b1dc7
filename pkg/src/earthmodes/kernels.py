"""Backend selection for the evaluation core.

Prefers the compiled ``_poly_core`` extension; falls back to the NumPy
implementation when the extension is missing or ``EARTHMODES_FORCE_PY=1``.
"""

from __future__ import annotations

import os

if os.environ.get("EARTHMODES_FORCE_PY") == "1":
    from . import _poly_core_py as _impl
else:
    try:
        from . import _poly_core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _poly_core_py as _impl

BACKEND = _impl.BACKEND
eval_monomial_table = _impl.eval_monomial_table
eval_radial_piecewise = _impl.eval_radial_piecewise
