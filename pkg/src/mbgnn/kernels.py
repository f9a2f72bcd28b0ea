"""Backend selection for the neighbor-aggregation kernels.

The compiled extension is used when it imports; set ``MBGNN_PURE_PYTHON=1``
to force the numpy fallback. Both backends take C-contiguous float arrays
and int64 CSR arrays and return new arrays.
"""

import os

import numpy as np

from . import _aggregate_py

BACKEND = "python"
_impl = _aggregate_py

if os.environ.get("MBGNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _aggregate_ext as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _aggregate_py


def _prep(h, indptr, indices):
    return (
        np.ascontiguousarray(h),
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
    )


def neighbor_mean(h, indptr, indices):
    """Row ``i`` of the result is the mean of ``h`` over the neighbors of ``i``.

    Nodes without neighbors get a zero row.
    """
    return _impl.neighbor_mean(*_prep(h, indptr, indices))


def neighbor_mean_transpose(g, indptr, indices):
    """Adjoint of :func:`neighbor_mean` for a symmetric adjacency."""
    return _impl.neighbor_mean_transpose(*_prep(g, indptr, indices))
