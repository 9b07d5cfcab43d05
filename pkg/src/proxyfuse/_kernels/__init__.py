"""Hot numeric kernels with a compiled core and a pure-Python fallback.

The compiled extension (``_core``, Cython) implements the CART split scan
and the Kendall merge count; ``_fallback`` provides numpy equivalents with
identical contracts. Selection happens once at import time. Set
``PROXYFUSE_PURE_PYTHON=1`` to force the fallback (used by the benchmark
and the equivalence tests).
"""

import os

if os.environ.get("PROXYFUSE_PURE_PYTHON", "0") not in ("", "0"):
    from . import _fallback as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from . import _fallback as _impl  # type: ignore[no-redef]

        BACKEND = "python"

best_split = _impl.best_split
kendall_dis = _impl.kendall_dis

__all__ = ["BACKEND", "best_split", "kendall_dis"]
