"""Hot-kernel dispatch: compiled extension when importable, pure Python otherwise.

Set ``MICROTRACK_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

OPTIMAL = _kernels_py.OPTIMAL
INFEASIBLE = _kernels_py.INFEASIBLE
LIMIT = _kernels_py.LIMIT

_compiled = None
if os.environ.get("MICROTRACK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        logger.debug("compiled kernels unavailable, using pure Python")
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

line_voxels = _impl.line_voxels
evid_sum = _impl.evid_sum
nms_suppress = _impl.nms_suppress
bnb_search = _impl.bnb_search


def backends():
    """Available implementations keyed by name (for tests and benchmarks)."""
    out = {"python": _kernels_py}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
