"""CP (canonical polyadic) vectors and operators."""

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sp

from ..errors import InvalidArgument
from .dense import check_dense_cap


@dataclass(frozen=True)
class CpVector:
    """Sum of ``rank`` Kronecker products of mode vectors.

    ``factors[l]`` is an ``n_l x rank`` array whose column ``k`` is the
    factor of term ``k`` in mode ``l``. Rank 0 is the zero tensor.
    """

    factors: tuple

    def __post_init__(self):
        fs = tuple(np.atleast_2d(np.asarray(f, dtype=float)) for f in self.factors)
        if not fs:
            raise InvalidArgument("a CP vector needs at least one mode")
        ranks = {f.shape[1] for f in fs}
        if len(ranks) != 1:
            raise InvalidArgument(f"inconsistent term counts across modes: {sorted(ranks)}")
        object.__setattr__(self, "factors", fs)

    @property
    def d(self):
        return len(self.factors)

    @property
    def shape(self):
        return tuple(f.shape[0] for f in self.factors)

    @property
    def rank(self):
        return self.factors[0].shape[1]

    @classmethod
    def zeros(cls, shape):
        return cls(tuple(np.zeros((n, 0)) for n in shape))

    @classmethod
    def from_terms(cls, terms):
        """Build from a list of terms, each a list of per-mode vectors."""
        terms = list(terms)
        if not terms:
            raise InvalidArgument("use CpVector.zeros for an empty sum")
        d = len(terms[0])
        return cls(tuple(np.column_stack([t[m] for t in terms]) for m in range(d)))

    def entry(self, index):
        prod = np.ones(self.rank)
        for f, i in zip(self.factors, index):
            prod = prod * f[i]
        return float(prod.sum())


def cp_to_full(v, cap=None):
    """Dense tensor of a CP vector; entry i equals sum_k prod_l b_k^(l)[i_l]."""
    check_dense_cap(v.shape, cap)
    if v.rank == 0:
        return np.zeros(v.shape)
    letters = "abcdefghijklmnopqrstuvwxyz"
    spec = ",".join(f"{letters[m]}z" for m in range(v.d)) + "->" + letters[: v.d]
    return np.einsum(spec, *v.factors, optimize=True)


@dataclass(frozen=True)
class CpOperator:
    """Sum of ``rank`` Kronecker products of square mode matrices.

    ``terms[k][l]`` is the ``n_l x n_l`` factor of term ``k`` in mode ``l``,
    dense or ``scipy.sparse``.
    """

    terms: tuple

    def __post_init__(self):
        terms = tuple(tuple(t) for t in self.terms)
        if not terms:
            raise InvalidArgument("a CP operator needs at least one term")
        d = len(terms[0])
        shape = tuple(terms[0][m].shape[0] for m in range(d))
        for t in terms:
            if len(t) != d:
                raise InvalidArgument("all operator terms need the same number of modes")
            for m, a in enumerate(t):
                if a.shape != (shape[m], shape[m]):
                    raise InvalidArgument(
                        f"factor in mode {m} has shape {a.shape}, expected square side {shape[m]}")
        object.__setattr__(self, "terms", terms)

    @property
    def d(self):
        return len(self.terms[0])

    @property
    def shape(self):
        return tuple(a.shape[0] for a in self.terms[0])

    @property
    def rank(self):
        return len(self.terms)

    @classmethod
    def identity(cls, shape):
        return cls(((tuple(sp.identity(n, format="csr") for n in shape)),))

    def to_matrix(self, cap=None):
        """Dense matrix acting on Fortran-order vectorizations (tests only)."""
        n = check_dense_cap(self.shape, cap)
        check_dense_cap((n, n), cap)
        total = np.zeros((n, n))
        for t in self.terms:
            mats = [a.toarray() if sp.issparse(a) else np.asarray(a) for a in t]
            total += reduce(np.kron, mats[::-1])
        return total


def cp_apply(A, x):
    """Apply a CP operator to a CP vector without truncation.

    The result has representation rank ``A.rank * x.rank``; term
    ``k = i + A.rank * j`` is the product of operator term ``i`` with vector
    term ``j``.
    """
    if A.shape != x.shape:
        raise InvalidArgument(f"operator modes {A.shape} do not match vector modes {x.shape}")
    factors = []
    for m in range(x.d):
        xm = x.factors[m]
        cols = np.empty((xm.shape[0], A.rank * x.rank))
        for i, term in enumerate(A.terms):
            cols[:, i :: A.rank] = term[m] @ xm
        factors.append(cols)
    return CpVector(tuple(factors))
