"""Numerical kernels: compiled extension when available, numpy fallback otherwise.

Set ``HETDP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("HETDP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

kkt_batch = _impl.kkt_batch
capped_path = _impl.capped_path
capped_curve = _impl.capped_curve
project_capped_simplex = _impl.project_capped_simplex
pgd_fixed_eta = _impl.pgd_fixed_eta


def backends():
    """Available kernel modules keyed by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:  # pragma: no cover
        pass
    return out


__all__ = ["BACKEND", "backends", "kkt_batch", "capped_path", "capped_curve",
           "project_capped_simplex", "pgd_fixed_eta"]
