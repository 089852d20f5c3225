"""Hot numeric kernels with backend selection at import time.

The compiled Cython extension is preferred; the pure NumPy module is a
drop-in replacement producing bit-identical results.  Set the environment
variable ``KINEMIC_PURE_PYTHON=1`` to force the fallback (used by the parity
tests and the benchmark).
"""

from __future__ import annotations

import os

from . import _reference

if os.environ.get("KINEMIC_PURE_PYTHON"):
    _impl = _reference
    BACKEND = "python"
else:
    try:
        from . import _compiled as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _reference
        BACKEND = "python"

window_scores = _impl.window_scores
best_window = _impl.best_window
rescale_bones = _impl.rescale_bones


def backends() -> dict:
    """Both backends, for parity tests and benchmarks (compiled may be absent)."""
    out = {"python": _reference}
    if BACKEND == "compiled":
        out["compiled"] = _impl
    return out
