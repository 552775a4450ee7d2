"""Metropolis-Hastings sampling of the intracellular conductivity.

The forward map is any callable ``forward(idx, direction) -> G`` taking grid
indices; :class:`DenseObservation` solves the PDE every call while
:class:`TensorObservation` reads the precomputed HT solution.
"""

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .emg_forward import DenseForward
from .errors import InvalidArgument, NumericalFailure
from .param_tensorization import solution_evaluator

STREAMS = ("proposal", "acceptance", "noise")


def rng_streams(seed):
    """Independent PCG64 generators for proposals, acceptance draws and noise."""
    children = np.random.SeedSequence(int(seed)).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(STREAMS, children)}


def xi_norm(v, xi):
    if not xi > 0:
        raise InvalidArgument("xi must be positive")
    return float(np.linalg.norm(v)) / np.sqrt(xi)


def potential_from_output(g, data, xi):
    """0.5 ||data - G||_Xi^2 - 0.5 ||data||_Xi^2."""
    r = np.asarray(data) - np.asarray(g)
    return 0.5 * (float(r @ r) - float(np.dot(data, data))) / xi


def potential(idx, direction, data, forward, xi):
    return potential_from_output(forward(idx, direction), data, xi)


def acceptance_probability(phi_old, phi_new):
    """min(1, exp(phi_old - phi_new)) without overflow."""
    if phi_new <= phi_old:
        return 1.0
    return float(np.exp(phi_old - phi_new))


def acceptance(idx_old, dir_old, idx_new, dir_new, data, forward, xi):
    return acceptance_probability(potential(idx_old, dir_old, data, forward, xi),
                                  potential(idx_new, dir_new, data, forward, xi))


def _pick(cands, rng):
    # one double per draw keeps stream consumption independent of the window size
    return int(cands[min(int(rng.random() * len(cands)), len(cands) - 1)])


def window(values, center, delta):
    """Indices of grid values within ``delta`` of ``center``."""
    tol = 1e-12 * max(1.0, abs(delta))
    return np.flatnonzero(np.abs(values - center) <= delta + tol)


def propose(idx, delta, grid, rng, direction=None, sample_direction=False):
    """Componentwise uniform proposal on the grid points within ``delta``."""
    new = tuple(_pick(window(v, v[i], delta), rng) for v, i in zip(grid.values, idx))
    if sample_direction:
        direction = 1 + min(int(rng.random() * 3), 2)
    return new, direction


def initial_point(grid, start, delta, rng):
    """Uniform draw among grid values within ``delta`` of ``start`` (nearest if none)."""
    out = []
    for v, s in zip(grid.values, start):
        cands = window(v, s, delta)
        if cands.size == 0:
            cands = np.array([int(np.argmin(np.abs(v - s)))])
        out.append(_pick(cands, rng))
    return tuple(out)


@dataclass
class PosteriorProblem:
    data: np.ndarray
    xi: float
    grid: object
    delta: float = 1.5
    J_samples: int = 10_000
    burn_in: int = 200
    seed: int = 0
    sample_direction: bool = True
    start: tuple = (0.893, 8.930, 0.893)
    start_direction: int = 2

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidArgument("delta must be positive")
        if not 0 <= self.burn_in < self.J_samples:
            raise InvalidArgument("need 0 <= burn_in < J_samples")
        if not self.xi > 0:
            raise InvalidArgument("xi must be positive")
        if self.start_direction not in (1, 2, 3):
            raise InvalidArgument("start direction must be 1, 2 or 3")
        self.data = np.asarray(self.data, dtype=float)


@dataclass
class Chain:
    idx: np.ndarray
    p: np.ndarray
    direction: np.ndarray
    accepted: np.ndarray
    phi: np.ndarray
    elapsed: np.ndarray
    mode: str = ""
    T_p: float = 0.0
    forward_times: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.direction)


class DenseObservation:
    """Standard algorithm: one sparse direct solve per evaluation."""

    def __init__(self, aff, rhs_by_direction, model, setup, grid):
        self._dense = DenseForward(aff, rhs_by_direction, model, setup)
        self.grid = grid

    def __call__(self, idx, direction):
        return self._dense(self.grid.point(idx), direction)


class TensorObservation:
    """Tensorized algorithm: contraction of the stored HT solution."""

    def __init__(self, sol, model, setup):
        self.sol, self.model, self.setup = sol, model, setup
        self._ev = {}

    def __call__(self, idx, direction):
        ev = self._ev.get(direction)
        if ev is None:
            ev = self._ev[direction] = solution_evaluator(self.sol, direction, self.setup, self.model)
        return ev(idx)


def run_chain(problem, forward, mode="", T_p=0.0):
    """Metropolis-Hastings with the uniform grid proposal.

    Step 0 is the initial point (flagged accepted); every later step proposes,
    draws ``c ~ U(0, 1)`` and accepts iff ``c <= a``.
    """
    rng = rng_streams(problem.seed)
    grid, J = problem.grid, problem.J_samples
    idx = np.zeros((J, 3), dtype=np.int64)
    direction = np.zeros(J, dtype=np.int64)
    accepted = np.zeros(J, dtype=bool)
    phi = np.zeros(J)
    elapsed = np.zeros(J)
    fwd_time = np.zeros(J)

    def evaluate(j, cur_idx, cur_dir):
        t0 = time.perf_counter()
        try:
            g = forward(cur_idx, cur_dir)
        except (NumericalFailure, np.linalg.LinAlgError, RuntimeError) as exc:
            raise NumericalFailure(f"forward evaluation failed at step {j}: {exc}") from exc
        fwd_time[j] = time.perf_counter() - t0
        val = potential_from_output(g, problem.data, problem.xi)
        if not np.isfinite(val):
            raise NumericalFailure(f"non-finite potential at step {j}")
        return val

    t_start = time.perf_counter()
    cur = initial_point(grid, problem.start, problem.delta, rng["proposal"])
    cur_dir = problem.start_direction
    cur_phi = evaluate(0, cur, cur_dir)
    idx[0], direction[0], accepted[0], phi[0] = cur, cur_dir, True, cur_phi
    elapsed[0] = time.perf_counter() - t_start
    for j in range(1, J):
        t0 = time.perf_counter()
        new, new_dir = propose(cur, problem.delta, grid, rng["proposal"], cur_dir,
                               problem.sample_direction)
        new_phi = evaluate(j, new, new_dir)
        a = acceptance_probability(cur_phi, new_phi)
        c = rng["acceptance"].random()
        if c <= a:
            cur, cur_dir, cur_phi = new, new_dir, new_phi
            accepted[j] = True
        idx[j], direction[j], phi[j] = cur, cur_dir, cur_phi
        elapsed[j] = time.perf_counter() - t0
    p = np.column_stack([grid.values[k][idx[:, k]] for k in range(3)])
    return Chain(idx, p, direction, accepted, phi, elapsed, mode, T_p, fwd_time)


@dataclass
class ChainStats:
    acceptance_rate: float
    mean: np.ndarray
    mad: np.ndarray
    var: np.ndarray
    direction_freq: np.ndarray
    n_accepted: int
    chain_mean: np.ndarray
    chain_mad: np.ndarray
    chain_var: np.ndarray


def _moments(x):
    m = x.mean(axis=0)
    mad = np.abs(x - m).sum(axis=0) / x.shape[0]
    var = ((x - m) ** 2).sum(axis=0) / (x.shape[0] - 1)
    return m, mad, var


def chain_stats(chain, burn_in):
    """Acceptance rate, mean, MAD and variance after burn-in.

    The primary statistics use the accepted samples only; ``chain_*`` use
    every post-burn-in state of the chain.
    """
    J = len(chain)
    if not 0 <= burn_in < J:
        raise InvalidArgument(f"burn_in {burn_in} outside chain of length {J}")
    p = np.asarray(chain.p, dtype=float)[burn_in:]
    acc = np.asarray(chain.accepted, dtype=bool)[burn_in:]
    if acc.sum() < 2:
        raise InvalidArgument(f"need at least two accepted samples after burn-in, got {int(acc.sum())}")
    proposals = acc[1:] if burn_in == 0 else acc
    rate = float(proposals.mean()) if proposals.size else 1.0
    mean, mad, var = _moments(p[acc])
    if p.shape[0] >= 2:
        cmean, cmad, cvar = _moments(p)
    else:
        cmean, cmad, cvar = p[0], np.zeros(3), np.zeros(3)
    dirs = np.asarray(chain.direction)[burn_in:]
    freq = np.array([(dirs == k).mean() for k in (1, 2, 3)])
    return ChainStats(rate, mean, mad, var, freq, int(acc.sum()), cmean, cmad, cvar)


# --- timing -----------------------------------------------------------------

def speedup_model(J, T_p, T_s, T_e):
    """J T_s / (T_p + J T_e)."""
    J = np.asarray(J, dtype=float)
    return J * T_s / (T_p + J * T_e)


def speedup_measured(sa_times, ta_times, T_p, J):
    """Ratio of cumulative SA time to precomputation plus cumulative TA time."""
    J = np.atleast_1d(np.asarray(J, dtype=int))
    cs = np.cumsum(sa_times)
    ct = np.cumsum(ta_times)
    return cs[J - 1] / (T_p + ct[J - 1])


def timing_summary(chain):
    return float(np.median(chain.elapsed[1:])) if len(chain) > 1 else float(chain.elapsed[0])


# --- output -----------------------------------------------------------------

def write_chain_csv(chain, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "p1", "p2", "p3", "direction", "accepted", "phi", "elapsed_s"])
        for j in range(len(chain)):
            w.writerow([j, *(repr(float(v)) for v in chain.p[j]), int(chain.direction[j]),
                        int(chain.accepted[j]), repr(float(chain.phi[j])),
                        f"{chain.elapsed[j]:.9f}"])


def stats_dict(stats, timing=None):
    out = {
        "acceptance_rate": stats.acceptance_rate,
        "mad": stats.mad.tolist(),
        "var": stats.var.tolist(),
        "mean": stats.mean.tolist(),
        "direction_freq": stats.direction_freq.tolist(),
        "n_accepted": stats.n_accepted,
        "chain_mean": stats.chain_mean.tolist(),
        "chain_mad": stats.chain_mad.tolist(),
        "chain_var": stats.chain_var.tolist(),
    }
    if timing is not None:
        out["timing"] = timing
    return out


def write_stats_json(stats, path, timing=None):
    with open(path, "w") as fh:
        json.dump(stats_dict(stats, timing), fh, indent=2)
