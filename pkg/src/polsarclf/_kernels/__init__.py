"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The backend is picked at import time. ``POLSAR_BACKEND=python`` forces the
fallback; ``POLSAR_BACKEND=cython`` makes a missing extension an error.
"""
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_requested = os.environ.get("POLSAR_BACKEND", "auto").lower()
_compiled = None
if _requested != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError as exc:
        if _requested == "cython":
            raise ImportError("POLSAR_BACKEND=cython but the compiled extension is not built") from exc
        log.debug("compiled kernels unavailable, using pure-Python fallback: %s", exc)

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels

jacobi_eigh3 = _impl.jacobi_eigh3
slic_assign = _impl.slic_assign
connected_components = _impl.connected_components

__all__ = ["BACKEND", "jacobi_eigh3", "slic_assign", "connected_components", "backends"]


def backends():
    """Map of every importable backend name to its kernel module."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
