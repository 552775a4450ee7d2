"""Precomputation of the forward map on a full parameter grid.

The all-parameters system is block diagonal over the grid and lives on the
modes (space, time, p1, p2, p3). Operator and right-hand side are CP; the
solution is computed once per fiber direction with truncated PCG and stored
in the HT format.
"""

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .emg_forward import assemble_rhs, electrode_nodes, node_weights
from .errors import InvalidArgument, MissingArtifact, SolverBreakdown
from .ht_solver import PcgConfig, Rank1Preconditioner, pcg_solve
from .tensor_core import (
    CpOperator,
    CpVector,
    DimensionTree,
    cp_to_ht,
    ht_ranks,
    ht_singular_values,
    ht_storage,
    load_ht,
    save_ht,
    truncate,
)

DIRECTIONS = (1, 2, 3)
SOLUTION_TREE = ((0, 1), (2, (3, 4)))


@dataclass(frozen=True)
class ParameterGrid:
    values: tuple

    def __post_init__(self):
        vals = tuple(np.asarray(v, dtype=float) for v in self.values)
        if len(vals) != 3:
            raise InvalidArgument("parameter grid needs three axes")
        for v in vals:
            if v.ndim != 1 or v.size == 0 or np.any(np.diff(v) <= 0):
                raise InvalidArgument("grid axes must be non-empty and strictly increasing")
        object.__setattr__(self, "values", vals)

    @property
    def sizes(self):
        return tuple(v.size for v in self.values)

    def point(self, idx):
        return np.array([self.values[k][i] for k, i in enumerate(idx)])

    def check_index(self, idx):
        idx = tuple(int(i) for i in idx)
        if len(idx) != 3 or any(not 0 <= i < n for i, n in zip(idx, self.sizes)):
            raise InvalidArgument(f"parameter index {idx} outside grid of size {self.sizes}")
        return idx

    def nearest_index(self, p):
        return tuple(int(np.argmin(np.abs(v - pk))) for v, pk in zip(self.values, p))

    def midpoint(self):
        return np.array([0.5 * (v[0] + v[-1]) for v in self.values])


def build_parameter_grid(s_minus, s_plus, h_sigma=None, n=None):
    """Arithmetic grid from ``s_minus`` with step ``h_sigma`` (or ``n`` points), same on each axis."""
    if not 0 < s_minus < s_plus:
        raise InvalidArgument(f"degenerate conductivity range [{s_minus}, {s_plus}]")
    if (h_sigma is None) == (n is None):
        raise InvalidArgument("give exactly one of h_sigma and n")
    if n is not None:
        if n < 2:
            raise InvalidArgument("need at least two values per axis")
        axis = np.linspace(s_minus, s_plus, int(n))
    else:
        if not h_sigma > 0:
            raise InvalidArgument("h_sigma must be positive")
        count = int(np.floor((s_plus - s_minus) / h_sigma * (1 + 1e-12))) + 1
        axis = s_minus + h_sigma * np.arange(count)
    return ParameterGrid((axis, axis.copy(), axis.copy()))


def solution_tree():
    return DimensionTree.from_nested(SOLUTION_TREE)


def tensorize_operator(aff, grid, T):
    """CP operator of rank 4 on (space, time, p1, p2, p3)."""
    eye_t = sp.identity(T, format="csr")
    eyes = [sp.identity(n, format="csr") for n in grid.sizes]
    terms = [[aff.A0, eye_t, *eyes]]
    for k in range(3):
        term = [aff.Ak[k], eye_t, *eyes]
        term[2 + k] = sp.diags(grid.values[k] - aff.center[k], format="csr")
        terms.append(term)
    return CpOperator(terms)


def tensorize_rhs(rhs, grid, svd_tol=0.0):
    """CP right-hand side from a truncated SVD of every directional part."""
    terms = []
    for k in range(3):
        u, s, vt = np.linalg.svd(rhs.B[k], full_matrices=False)
        if s.size == 0 or s[0] == 0.0:
            continue
        tail = np.sqrt(np.cumsum((s**2)[::-1])[::-1])  # tail[q] = ||s[q:]||
        q = s.size
        for j in range(1, s.size + 1):
            if j == s.size or tail[j] <= svd_tol * tail[0]:
                q = j
                break
        for j in range(q):
            if s[j] <= 1e-14 * s[0]:
                break
            modes = [u[:, j] * s[j], vt[j]] + [np.ones(n) for n in grid.sizes]
            modes[2 + k] = grid.values[k].copy()
            terms.append(modes)
    if not terms:
        return CpVector.zeros((rhs.B[0].shape[0], rhs.T, *grid.sizes))
    return CpVector.from_terms(terms)


@dataclass
class SolutionTensor:
    tensors: dict
    grid: ParameterGrid
    model_hash: str
    trunc_tol: float
    epsilon: float
    histories: dict = field(default_factory=dict)
    T_p: float = 0.0
    _evaluators: dict = field(default_factory=dict, repr=False, compare=False)

    def storage(self, direction=None):
        dirs = sorted(self.tensors) if direction is None else (direction,)
        return sum(ht_storage(self.tensors[d]) for d in dirs)

    def full_storage(self, direction=None):
        shape = next(iter(self.tensors.values())).shape
        count = 1 if direction is not None else len(self.tensors)
        return count * int(np.prod(shape, dtype=np.int64))


def model_hash(model, cond):
    """Stable digest of the model definition used to tag stored solutions."""
    payload = {k: v for k, v in asdict(model).items() if k not in ("direction", "fiber_starts")}
    if model.fiber_starts is not None:
        payload["fiber_starts"] = np.asarray(model.fiber_starts).tolist()
    payload["cond"] = asdict(cond)
    text = json.dumps(payload, sort_keys=True, default=list)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def precompute_direction(aff, rhs, grid, cfg, log_path=None):
    """Solve the all-parameters system for one right-hand side; returns the PCG result."""
    tree = solution_tree()
    A = tensorize_operator(aff, grid, rhs.T)
    b = truncate(cp_to_ht(tensorize_rhs(rhs, grid, cfg.trunc_tol / 10), tree), rel_tol=cfg.trunc_tol / 10)
    M = Rank1Preconditioner([aff.A0, None, None, None, None])
    return pcg_solve(A, b, M, cfg=cfg, log_path=log_path)


def precompute_solution(model, aff, grid, cfg=PcgConfig(), cond=None, directions=DIRECTIONS,
                        t_indices=None, log_dir=None):
    """Run the precomputation for every fiber direction and time the whole step."""
    start = time.perf_counter()
    tensors, histories = {}, {}
    for d in directions:
        rhs = assemble_rhs(model.with_direction(d), t_indices, aff.pinned)
        log_path = os.path.join(log_dir, f"pcg_d{d}.csv") if log_dir else None
        try:
            res = precompute_direction(aff, rhs, grid, cfg, log_path)
        except SolverBreakdown as exc:
            raise SolverBreakdown(f"direction {d}: {exc}", exc.iteration, d) from exc
        tensors[d] = res.x
        histories[d] = [float(h) for h in res.history]
    T_p = time.perf_counter() - start
    digest = model_hash(model, cond) if cond is not None else ""
    return SolutionTensor(tensors, grid, digest, cfg.trunc_tol, cfg.epsilon, histories, T_p)


# --- evaluation -------------------------------------------------------------

def _restricted(x, t, sel, cache=None):
    """Frame of node ``t`` with each leaf frame replaced by ``sel[mode]`` applied to it."""
    if cache is not None and t in cache:
        return cache[t]
    tree = x.tree
    if tree.is_leaf(t):
        m = tree.modes[t][0]
        s = sel[m]
        u = x.frames[t]
        out = s @ u if isinstance(s, np.ndarray) and s.ndim == 2 else u[s]
    else:
        left, right = tree.children[t]
        ul = _restricted(x, left, sel, cache)
        ur = _restricted(x, right, sel, cache)
        b = x.transfers[t]
        out = np.einsum("ia,jb,abk->jik", ul, ur, b).reshape(-1, b.shape[2])
    return out


class SolutionEvaluator:
    """Observation vector of a stored solution at grid points.

    The space/time subtree is contracted once with the electrode rows and
    the mean-value row; each evaluation only touches the parameter subtree,
    so its cost does not depend on the grid sizes.
    """

    def __init__(self, x, nodes, weights):
        self.x = x
        tree = x.tree
        self.M = len(nodes)
        n_space = x.shape[0]
        rows = np.zeros((self.M + 1, n_space))
        rows[np.arange(self.M), nodes] = 1.0
        rows[self.M] = weights / weights.sum()
        static_sel = {0: rows, 1: np.arange(x.shape[1])}
        left, right = tree.children[tree.root]
        self.static_left = set(tree.modes[left]) == {0, 1}
        static, dynamic = (left, right) if self.static_left else (right, left)
        if set(tree.modes[static]) != {0, 1}:
            raise InvalidArgument("space and time must form one subtree of the root")
        self.dynamic = dynamic
        self.static_frame = _restricted(x, static, static_sel)
        root_b = x.transfers[tree.root][:, :, 0]
        # fold the root transfer into the static side
        self.static_frame = self.static_frame @ (root_b if self.static_left else root_b.T)
        self.T = x.shape[1]
        self._leaf_mode = {t: tree.modes[t][0] for t in tree.leaves}
        self._shifted = {t: tuple(tree.children[t]) for t in tree.inner_nodes}
        self._sizes = tuple(x.shape[2:])

    def _vector(self, t, idx):
        # single-entry contraction of the parameter subtree
        if t in self._leaf_mode:
            return self.x.frames[t][idx[self._leaf_mode[t] - 2]]
        left, right = self._shifted[t]
        a = self._vector(left, idx)
        b = self._vector(right, idx)
        bt = self.x.transfers[t]
        return b @ (a @ bt.reshape(bt.shape[0], -1)).reshape(bt.shape[1], bt.shape[2])

    def __call__(self, idx):
        if len(idx) != 3 or any(not 0 <= int(i) < n for i, n in zip(idx, self._sizes)):
            raise InvalidArgument(f"grid index {tuple(idx)} outside grid of size {self._sizes}")
        w = self._vector(self.dynamic, idx)
        vals = (self.static_frame @ w).reshape(self.M + 1, self.T, order="F")
        return (vals[: self.M] - vals[self.M]).reshape(-1, order="F")


def solution_evaluator(sol, direction, setup, model):
    """Cached :class:`SolutionEvaluator` for one direction and electrode set."""
    key = (direction, tuple(np.asarray(setup.electrodes).ravel()))
    ev = sol._evaluators.get(key)
    if ev is None:
        if direction not in sol.tensors:
            raise MissingArtifact(f"no precomputed solution for direction {direction}")
        nodes = electrode_nodes(model, setup.electrodes)
        ev = SolutionEvaluator(sol.tensors[direction], nodes, node_weights(model.grid_shape))
        sol._evaluators[key] = ev
    return ev


def evaluate_solution(sol, direction, idx, setup, model):
    """Observation vector (electrode index fastest, then time) at grid index ``idx``."""
    idx = sol.grid.check_index(idx)
    return solution_evaluator(sol, direction, setup, model)(idx)


def evaluate_slice(sol, direction, idx, weights):
    """Full space x time field at grid index ``idx``, shifted to zero mean per step."""
    idx = sol.grid.check_index(idx)
    x = sol.tensors[direction]
    sel = {0: np.arange(x.shape[0]), 1: np.arange(x.shape[1]),
           2: [idx[0]], 3: [idx[1]], 4: [idx[2]]}
    field_ = _restricted(x, x.tree.root, sel).reshape(x.shape[0], x.shape[1], order="F")
    w = weights / weights.sum()
    return field_ - w @ field_


# --- persistence and reports ------------------------------------------------

def save_solution(sol, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for d, x in sol.tensors.items():
        save_ht(x, os.path.join(out_dir, f"solution_d{d}.ht"))
    meta = {
        "directions": sorted(sol.tensors),
        "grid": [v.tolist() for v in sol.grid.values],
        "model_hash": sol.model_hash,
        "trunc_tol": sol.trunc_tol,
        "epsilon": sol.epsilon,
        "histories": {str(k): v for k, v in sol.histories.items()},
    }
    with open(os.path.join(out_dir, "solution.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    # wall-clock data lives apart so the solution files are reproducible byte for byte
    with open(os.path.join(out_dir, "timing.json"), "w") as fh:
        json.dump({"T_p": sol.T_p}, fh)


def load_solution(out_dir):
    meta_path = os.path.join(out_dir, "solution.json")
    if not os.path.exists(meta_path):
        raise MissingArtifact(f"{meta_path} not found; run the precompute command first")
    with open(meta_path) as fh:
        meta = json.load(fh)
    tensors = {}
    for d in meta["directions"]:
        path = os.path.join(out_dir, f"solution_d{d}.ht")
        if not os.path.exists(path):
            raise MissingArtifact(f"{path} not found; run the precompute command first")
        tensors[int(d)] = load_ht(path)
    grid = ParameterGrid(tuple(np.asarray(v) for v in meta["grid"]))
    histories = {int(k): v for k, v in meta["histories"].items()}
    T_p = 0.0
    timing_path = os.path.join(out_dir, "timing.json")
    if os.path.exists(timing_path):
        with open(timing_path) as fh:
            T_p = json.load(fh)["T_p"]
    return SolutionTensor(tensors, grid, meta["model_hash"], meta["trunc_tol"], meta["epsilon"],
                          histories, T_p)


def rank_report(sol):
    """Rows (direction, node label, rank) for every tree node."""
    rows = []
    for d in sorted(sol.tensors):
        x = sol.tensors[d]
        for t, r in sorted(ht_ranks(x).items()):
            rows.append((d, x.tree.label(t), r))
    return rows


def singular_value_report(sol):
    """Rows (direction, node label, index, singular value) of every matricization."""
    rows = []
    for d in sorted(sol.tensors):
        x = sol.tensors[d]
        for t, s in sorted(ht_singular_values(x).items()):
            rows.extend((d, x.tree.label(t), i + 1, float(v)) for i, v in enumerate(s))
    return rows
