"""Hot-kernel dispatch.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy fallback in ``_pykernels``. Set ``MFCKGE_PURE_PYTHON=1`` to force the
fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels
if os.environ.get("MFCKGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def distances(query, matrix, p, impl=None):
    impl = impl or _impl
    q = np.ascontiguousarray(query, dtype=np.float64)
    m = np.ascontiguousarray(matrix, dtype=np.float32)
    return impl.distances(q, m, int(p))


def transe_hinge(ent, rel, pos, neg, margin, p, grad_ent, grad_rel, impl=None):
    impl = impl or _impl
    pos = np.ascontiguousarray(pos, dtype=np.int64)
    neg = np.ascontiguousarray(neg, dtype=np.int64)
    return impl.transe_hinge(ent, rel, pos, neg, float(margin), int(p), grad_ent, grad_rel)
