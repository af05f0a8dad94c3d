"""Split-scan backend selection.

The compiled extension is preferred when importable; set
MORTBOOST_PURE_PYTHON=1 to force the numpy fallback. Both backends are
single-threaded and deterministic; `backend` names the one in use.
"""

from __future__ import annotations

import os

from . import _scan_py

if os.environ.get("MORTBOOST_PURE_PYTHON") == "1":
    _impl = _scan_py
else:
    try:
        from . import _scan_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _scan_py

best_cut = _impl.best_cut
backend = "python" if _impl is _scan_py else "cython"
