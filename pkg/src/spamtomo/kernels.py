"""Backend selection for the small-block kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementation in ``_pykernels`` is used. Set ``SPAMTOMO_PURE_PYTHON=1``
to force the fallback.
"""
import os

import numpy as np

from spamtomo import _pykernels

if os.environ.get("SPAMTOMO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from spamtomo import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def det(m):
    """Determinant of a square matrix of size <= 4 by Laplace expansion."""
    return float(_impl.det(np.asarray(m, dtype=float)))


def cofactor(m):
    return _impl.cofactor(np.asarray(m, dtype=float))


def adjugate_derivative(d):
    return _impl.adjugate_derivative(np.asarray(d, dtype=float))


def nabla(a, b, c, d):
    return _impl.nabla(a, b, c, d)


def nabla_block_jacobian(a, b, c, d):
    return _impl.nabla_block_jacobian(a, b, c, d)


def nabla_batch(s, rows1, rows2, cols1, cols2):
    return _impl.nabla_batch(s, rows1, rows2, cols1, cols2)
