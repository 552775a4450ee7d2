"""Dense tensors and matricization.

Dense tensors are plain ``numpy.ndarray`` objects. Whenever a tensor is
flattened (vectorization, matricization rows/columns) the first mode runs
fastest, i.e. Fortran order. Every module in the package uses this
convention.
"""

import numpy as np

from ..errors import InvalidArgument, ResourceLimitError

#: default cap on the number of entries a routine may densify
DENSE_CAP = 10**7


def check_dense_cap(shape, cap=None):
    cap = DENSE_CAP if cap is None else cap
    size = int(np.prod([int(n) for n in shape], dtype=object))
    if size > cap:
        raise ResourceLimitError(
            f"densifying a tensor of shape {tuple(shape)} ({size} entries) exceeds cap {cap}")
    return size


def vectorize(t):
    """Column vector of all entries, first mode fastest."""
    return np.asarray(t).reshape(-1, order="F")


def from_vector(values, shape):
    values = np.asarray(values)
    if values.size != int(np.prod(shape)):
        raise InvalidArgument(f"{values.size} values do not fill shape {tuple(shape)}")
    return values.reshape(tuple(shape), order="F")


def _check_modes(z, d):
    z = list(z)
    if not z:
        raise InvalidArgument("mode subset must be non-empty")
    if len(set(z)) != len(z):
        raise InvalidArgument(f"repeated modes in {z}")
    for m in z:
        if not 0 <= m < d:
            raise InvalidArgument(f"mode {m} out of range for a {d}-dimensional tensor")
    return z


def matricize(t, z, ordered=False):
    """Matricization of ``t`` with row modes ``z`` (0-based).

    Rows enumerate the multi-index over ``z`` and columns the multi-index over
    the complementary modes, both with the lowest mode fastest. With
    ``ordered=True`` the row modes keep the order given in ``z`` instead of
    being sorted (used internally by the tree code).
    """
    t = np.asarray(t)
    z = _check_modes(z, t.ndim)
    if not ordered:
        z = sorted(z)
    g = [m for m in range(t.ndim) if m not in z]
    nz = int(np.prod([t.shape[m] for m in z]))
    ng = int(np.prod([t.shape[m] for m in g])) if g else 1
    return np.transpose(t, z + g).reshape(nz, ng, order="F")
