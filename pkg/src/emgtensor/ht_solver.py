"""Preconditioned conjugate gradients with truncation in the HT format.

The operator stays in CP form; iterates, residuals and search directions are
HT tensors that are truncated to a relative accuracy after every update.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, NumericalFailure, SolverBreakdown
from .tensor_core import (
    ht_apply,
    ht_apply_leaf,
    ht_axpby,
    ht_inner,
    ht_norm,
    ht_ranks,
    ht_zeros,
    truncate,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PcgConfig:
    epsilon: float = 1e-4
    k_max: int = 15
    trunc_tol: float = 1e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")
        if self.k_max < 1:
            raise InvalidArgument("k_max must be at least 1")
        # trunc_tol == 0 keeps everything except numerically zero singular values
        if not self.trunc_tol >= 0:
            raise InvalidArgument("trunc_tol must be non-negative")


def _is_spd(mat):
    n = mat.shape[0]
    if n <= 4000:
        dense = mat.toarray() if sp.issparse(mat) else np.asarray(mat)
        if not np.allclose(dense, dense.T, rtol=0, atol=1e-12 * np.abs(dense).max()):
            return False
        try:
            np.linalg.cholesky(dense)
        except np.linalg.LinAlgError:
            return False
        return True
    if abs(mat - mat.T).max() > 1e-12 * abs(mat).max():
        return False
    lam = spla.eigsh(mat, k=1, which="SA", return_eigenvectors=False, tol=1e-8)[0]
    return lam > 0


class Rank1Preconditioner:
    """Kronecker product of per-mode SPD factors; ``None`` marks an identity mode."""

    def __init__(self, factors):
        self.factors = tuple(factors)
        self._solvers = {}
        for m, f in enumerate(self.factors):
            if f is None:
                continue
            if not _is_spd(f):
                raise InvalidArgument(f"preconditioner factor in mode {m} is not SPD")
            if sp.issparse(f):
                self._solvers[m] = spla.splu(sp.csc_matrix(f)).solve
            else:
                chol = np.linalg.cholesky(np.asarray(f))
                self._solvers[m] = _cholesky_solver(chol)

    @classmethod
    def identity(cls, d):
        return cls([None] * d)

    def solve_mode(self, mode, frame):
        return self._solvers[mode](frame)


def _cholesky_solver(chol):
    def solve(rhs):
        return sla.cho_solve((chol, True), rhs)

    return solve


def apply_preconditioner_inverse(M, r):
    """Apply M^-1 mode by mode; only leaf frames change, so ranks are preserved."""
    out = r
    for m in M._solvers:
        out = ht_apply_leaf(out, m, lambda u, m=m: M.solve_mode(m, u))
    return out


@dataclass
class PcgResult:
    x: object
    history: list
    iterations: int
    converged: bool

    def __iter__(self):
        return iter((self.x, self.history))


def _trunc(x, cfg):
    return truncate(x, rel_tol=cfg.trunc_tol)


def _finite(value, what, k):
    if not np.isfinite(value):
        raise NumericalFailure(f"non-finite {what} at iteration {k}")
    return value


def pcg_solve(A, b, M, x0=None, cfg=PcgConfig(), log_path=None):
    """Solve ``A x = b`` for a CP operator ``A`` and HT right-hand side ``b``.

    Follows the truncated PCG listing step by step: step length
    <rho, pi>/<theta, pi> and direction update with <theta, zeta>/<theta, pi>.
    Returns a :class:`PcgResult` whose history holds ||rho_k|| / ||b|| for
    every computed residual.
    """
    if x0 is None:
        x0 = ht_zeros(b.tree, b.shape)
    nb = ht_norm(b)
    _finite(nb, "right-hand side norm", 0)
    if nb == 0.0:
        return PcgResult(ht_zeros(b.tree, b.shape), [], 0, True)

    log = open(log_path, "w") if log_path else None
    try:
        x = x0
        rho = _trunc(ht_axpby(1.0, b, -1.0, ht_apply(A, x)), cfg)
        zeta = apply_preconditioner_inverse(M, rho)
        pi = zeta
        theta = _trunc(ht_apply(A, pi), cfg)
        k = 0
        history = [_finite(ht_norm(rho), "residual norm", k) / nb]
        _log(log, k, history[-1], x)
        while history[-1] > cfg.epsilon and k < cfg.k_max:
            theta_pi = _finite(ht_inner(theta, pi), "<theta, pi>", k)
            if theta_pi <= 0:
                raise SolverBreakdown(f"<theta, pi> = {theta_pi:.3e} <= 0 at iteration {k}", k)
            alpha = ht_inner(rho, pi) / theta_pi
            x = _trunc(ht_axpby(1.0, x, alpha, pi), cfg)
            rho = _trunc(ht_axpby(1.0, b, -1.0, ht_apply(A, x)), cfg)
            zeta = apply_preconditioner_inverse(M, rho)
            beta = ht_inner(theta, zeta) / theta_pi
            pi = _trunc(ht_axpby(1.0, zeta, -beta, pi), cfg)
            theta = _trunc(ht_apply(A, pi), cfg)
            k += 1
            history.append(_finite(ht_norm(rho), "residual norm", k) / nb)
            _log(log, k, history[-1], x)
            logger.debug("pcg iteration %d: relative residual %.3e", k, history[-1])
    finally:
        if log is not None:
            log.close()
    return PcgResult(x, history, k, history[-1] <= cfg.epsilon)


def _log(fh, k, rel, x):
    if fh is not None:
        fh.write(f"iter,{k},{rel:.17g},{max(ht_ranks(x).values())}\n")
