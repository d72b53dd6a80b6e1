"""Backend selection for the hot selection loops.

The compiled extension is used when it imported cleanly; otherwise the
pure-Python twins take over. Set ``ASR_LAB_PURE=1`` to force the fallback.
"""

import os

import numpy as np

from . import _fallback

_compiled = None
if os.environ.get("ASR_LAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback


def backends():
    """Return the available backend modules keyed by name."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["cython"] = _compiled
    return out


def _u8(a):
    return np.ascontiguousarray(a, dtype=np.uint8)


def _f8(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i8(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def select_weighted(weights, valid, u, impl=None):
    """Inverse-CDF draw per row over valid columns, weights taken as given.

    Rows whose valid weights sum to zero fall back to a uniform draw over the
    valid columns. Returns -1 for rows with no valid column.
    """
    impl = impl or _impl
    return impl.select_weighted(_f8(weights), _u8(valid), _f8(u))


def select_binned(bins, valid, bin_weights, u_bin, u_pick, impl=None):
    impl = impl or _impl
    return impl.select_binned(_i8(bins), _u8(valid), _f8(bin_weights), _f8(u_bin), _f8(u_pick))


def select_semihard(d_an, d_ap, valid, gamma, u, impl=None):
    impl = impl or _impl
    return impl.select_semihard(_f8(d_an), _f8(d_ap), _u8(valid), float(gamma), _f8(u))


def knn_hit_counts(dist, labels, ks, impl=None):
    """Count queries whose ``k`` nearest other rows contain a same-label row.

    Neighbours are ordered by (distance, index), the query itself excluded.
    """
    impl = impl or _impl
    return impl.knn_hit_counts(_f8(dist), _i8(labels), _i8(ks))
