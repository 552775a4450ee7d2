"""Forward EMG model on a cuboid muscle.

Grid nodes are numbered with the x1 index fastest. All spatial operators are
returned in a symmetric form: boundary rows of the ghost-node (mirrored)
Neumann discretization are scaled by 1/2 per boundary axis, which makes the
matrix symmetric without changing its solution. The same node weights are
applied to every right-hand side.

Sign convention: the linear systems handed to solvers are the negated
bidomain equation, ``-div((sigma_i + sigma_e) grad phi) = div(sigma_i grad V_m)``,
so the operators are symmetric positive definite once a node is pinned.
"""

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, NumericalFailure

AXES = (1, 2, 3)


def rosenfalck_ap(s, ap=(96.0, 1.0, 90.0)):
    """Rosenfalck action potential; the resting value -r3 is used for s < 0."""
    r1, r2, r3 = ap
    s = np.asarray(s, dtype=float)
    sp_ = np.maximum(s, 0.0)
    v = r1 * sp_**3 * np.exp(-r2 * sp_) - r3
    return np.where(s >= 0, v, -r3)


def project_to_fiber(x, y, d):
    """Orthogonal projection of ``x`` onto the line through ``y`` with direction ``d``."""
    x, y, d = (np.asarray(a, dtype=float) for a in (x, y, d))
    dd = float(d @ d)
    if dd == 0.0:
        raise InvalidArgument("fiber direction must be non-zero")
    return y + ((x - y) @ d / dd) * d


@dataclass(frozen=True)
class MuscleModel:
    """Cuboid muscle with straight, axis-parallel fibers.

    ``direction`` is the 1-based axis of the fibers. Fiber starts default to a
    ``fiber_layout`` grid on the face where that coordinate is zero.
    """

    extent: tuple = (4.0, 2.0, 1.0)
    h_M: float = 1.0 / 3.0
    fiber_layout: tuple = (30, 30)
    fiber_points: int = 30
    direction: int = 2
    ap: tuple = (96.0, 1.0, 90.0)
    u: float = 4.0
    beta: float = 50.0
    t_steps: int = 101
    h_t: float = 0.01
    fiber_starts: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.direction not in AXES:
            raise InvalidArgument(f"fiber direction must be 1, 2 or 3, got {self.direction}")
        for name in ("beta", "u", "h_t", "h_M"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.t_steps < 1:
            raise InvalidArgument("t_steps must be at least 1")
        self.grid_shape  # validates the node counts

    @property
    def grid_shape(self):
        counts = []
        for length in self.extent:
            n = length / self.h_M
            if abs(n - round(n)) > 1e-8 * max(1.0, n):
                raise InvalidArgument(f"extent {length} is not a multiple of h_M={self.h_M}")
            counts.append(int(round(n)) + 1)
        return tuple(counts)

    @property
    def n_nodes(self):
        return int(np.prod(self.grid_shape))

    @property
    def direction_vector(self):
        e = np.zeros(3)
        e[self.direction - 1] = 1.0
        return e

    def with_direction(self, direction):
        return replace(self, direction=direction, fiber_starts=None)

    def coords(self):
        """Node coordinates, shape (N, 3), x1 index fastest."""
        axes = [np.arange(n) * self.h_M for n in self.grid_shape]
        g = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([a.reshape(-1, order="F") for a in g])

    def starts(self):
        if self.fiber_starts is not None:
            return np.atleast_2d(np.asarray(self.fiber_starts, dtype=float))
        a = self.direction - 1
        b, c = [k for k in range(3) if k != a]
        nb, nc = self.fiber_layout
        gb, gc = np.meshgrid(np.linspace(0, self.extent[b], nb),
                             np.linspace(0, self.extent[c], nc), indexing="ij")
        y = np.zeros((nb * nc, 3))
        y[:, b] = gb.ravel()
        y[:, c] = gc.ravel()
        return y

    def fiber_grid(self):
        return np.linspace(0.0, self.extent[self.direction - 1], self.fiber_points)


def fiber_potential(model, z, t):
    """AP value at fiber coordinate ``z`` and time ``t``.

    The wave starts at z = 0 and travels with speed ``u``; the value is sampled
    on the fiber grid and interpolated linearly.
    """
    zq = model.fiber_grid()
    vq = rosenfalck_ap(model.u * t - zq, model.ap)
    return np.interp(z, zq, vq)


def smooth_fiber_potential(model, x, j, t):
    """Contribution of fiber ``j`` to the membrane potential at point ``x``."""
    y = model.starts()[j]
    d = model.direction_vector
    px = project_to_fiber(x, y, d)
    z = float((px - y) @ d)
    dist_sq = float(np.sum((np.asarray(x, dtype=float) - px) ** 2))
    return float(fiber_potential(model, z, t)) * np.exp(-0.5 * model.beta * dist_sq)


def _fiber_geometry(model, coords):
    y = model.starts()
    a = model.direction - 1
    z = coords[:, a][:, None] - y[:, a][None, :]
    perp = np.zeros_like(z)
    for k in range(3):
        if k != a:
            perp += (coords[:, k][:, None] - y[:, k][None, :]) ** 2
    return z, np.exp(-0.5 * model.beta * perp)


def assemble_vm(model, t_index):
    """Membrane potential at every grid node at time ``t_index * h_t``."""
    if not 0 <= t_index < model.t_steps:
        raise InvalidArgument(f"time index {t_index} outside 0..{model.t_steps - 1}")
    return assemble_vm_all(model, [t_index])[:, 0]


def assemble_vm_all(model, t_indices=None):
    """Membrane potential for several time steps, shape (N, T)."""
    if t_indices is None:
        t_indices = range(model.t_steps)
    t_indices = list(t_indices)
    coords = model.coords()
    out = np.zeros((coords.shape[0], len(t_indices)))
    if len(model.starts()) == 0:
        return out
    z, gauss = _fiber_geometry(model, coords)
    shared_z = np.all(z == z[:, :1])
    weight = gauss.sum(axis=1) if shared_z else None
    for col, ti in enumerate(t_indices):
        t = ti * model.h_t
        if shared_z:
            out[:, col] = fiber_potential(model, z[:, 0], t) * weight
        else:
            out[:, col] = np.sum(fiber_potential(model, z, t) * gauss, axis=1)
    return out


# --- finite differences -----------------------------------------------------

def _axis_weight(n):
    w = np.ones(n)
    if n > 1:
        w[0] = w[-1] = 0.5
    return w


def node_weights(shape):
    """Boundary scaling that symmetrizes the mirrored-ghost Neumann stencil."""
    w = np.ones(1)
    for n in shape:
        w = np.kron(_axis_weight(n), w)
    return w


def directional_operator(shape, h, axis, sigma=None):
    """Symmetric second difference along ``axis`` (0-based) with conductivity ``sigma``.

    Edge weights are (sigma_i + sigma_j) / (2 h^2); the diagonal is minus the
    row sum, which reproduces the mirrored ghost-node boundary rows after
    scaling by :func:`node_weights`.
    """
    shape = tuple(shape)
    N = int(np.prod(shape))
    idx = np.arange(N).reshape(shape, order="F")
    sig = np.ones(shape) if sigma is None else np.broadcast_to(np.asarray(sigma, float), shape)
    if np.any(sig <= 0):
        raise InvalidArgument("conductivity must be positive")
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    a = idx[tuple(lo)].reshape(-1, order="F")
    b = idx[tuple(hi)].reshape(-1, order="F")
    cond = (sig[tuple(lo)] + sig[tuple(hi)]) / (2.0 * h * h)
    perp = np.ones(shape)
    for k, n in enumerate(shape):
        if k != axis:
            wk = _axis_weight(n).reshape([n if j == k else 1 for j in range(3)])
            perp = perp * wk
    c = (cond * perp[tuple(lo)]).reshape(-1, order="F")
    off = sp.coo_matrix((np.concatenate([c, c]), (np.concatenate([a, b]), np.concatenate([b, a]))),
                        shape=(N, N)).tocsr()
    diag = np.asarray(off.sum(axis=1)).ravel()
    return (off - sp.diags(diag)).tocsr()


def assemble_stencil_operator(sigma_field, h, shape=None):
    """Variable-coefficient 7-point stencil of div(sigma grad .).

    ``sigma_field`` is a per-node scalar field of the grid shape, or a stack
    of three per-axis fields (diagonal conductivity), or a length-3 sequence
    of constants together with ``shape``.
    """
    sig = np.asarray(sigma_field, dtype=float)
    if sig.ndim == 1 and sig.size == 3 and shape is not None:
        fields = [np.full(shape, s) for s in sig]
    elif sig.ndim == 4:
        fields = list(sig)
    elif sig.ndim == 3:
        fields = [sig] * 3
    else:
        raise InvalidArgument(f"cannot interpret conductivity of shape {sig.shape}")
    shape = fields[0].shape
    if any(np.any(f <= 0) for f in fields):
        raise InvalidArgument("conductivity must be positive")
    return sum(directional_operator(shape, h, k, fields[k]) for k in range(3)).tocsr()


def _pin(mat, node, diag_value):
    keep = np.ones(mat.shape[0])
    keep[node] = 0.0
    mask = sp.diags(keep)
    out = mask @ mat @ mask
    if diag_value:
        out = out + sp.coo_matrix(([diag_value], ([node], [node])), shape=mat.shape)
    return out.tocsr()


@dataclass(frozen=True)
class ConductivitySpec:
    sigma_e: tuple = (6.7, 6.7, 6.7)
    s_minus: float = 0.001
    s_plus: float = 10.0

    def __post_init__(self):
        if not 0 < self.s_minus <= self.s_plus < np.inf:
            raise InvalidArgument("need 0 < s_minus <= s_plus < inf")
        # sigma_e = 0 is allowed: the operator stays definite through p > 0
        if any(s < 0 for s in self.sigma_e):
            raise InvalidArgument("sigma_e must be non-negative")

    def check(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape != (3,) or np.any(p < self.s_minus) or np.any(p > self.s_plus):
            raise InvalidArgument(f"conductivity {p} outside [{self.s_minus}, {self.s_plus}]^3")
        return p

    @property
    def midpoint(self):
        return np.full(3, 0.5 * (self.s_minus + self.s_plus))


@dataclass(frozen=True)
class AffineOperator:
    """A(p) = A0 + sum_k (p_k - center_k) Ak, symmetric positive definite."""

    A0: sp.csr_matrix
    Ak: tuple
    center: np.ndarray
    sigma_e: np.ndarray
    grid_shape: tuple
    h: float
    pinned: int = 0

    @property
    def N(self):
        return self.A0.shape[0]

    def assemble(self, p):
        p = np.asarray(p, dtype=float)
        out = self.A0.copy()
        for k in range(3):
            out = out + (p[k] - self.center[k]) * self.Ak[k]
        return out.tocsr()


def affine_decomposition(model, cond, p_mid=None, pinned=0):
    """Affine split of the operator, centered at ``p_mid`` (default: midpoint of the bounds).

    ``Ak`` is the negated unit-conductivity second difference along axis k and
    ``A0`` the full operator at ``sigma_e + p_mid``; the pinned node has an
    identity row in ``A0`` and empty rows/columns in every ``Ak``.
    """
    center = cond.midpoint if p_mid is None else np.asarray(p_mid, dtype=float)
    shape = model.grid_shape
    h = model.h_M
    sig_e = np.asarray(cond.sigma_e, dtype=float)
    lap = [directional_operator(shape, h, k) for k in range(3)]
    Ak = tuple(_pin(-lk, pinned, 0.0) for lk in lap)
    a0 = -sum((sig_e[k] + center[k]) * lap[k] for k in range(3))
    A0 = _pin(a0, pinned, 1.0)
    return AffineOperator(A0, Ak, center, sig_e, shape, h, pinned)


def assemble_direct(model, cond, p, pinned=0):
    """SPD operator at ``p`` assembled straight from the stencil (reference for the split)."""
    sig = np.asarray(cond.sigma_e, dtype=float) + np.asarray(p, dtype=float)
    return _pin(-assemble_stencil_operator(sig, model.h_M, model.grid_shape), pinned, 1.0)


@dataclass(frozen=True)
class RhsComponents:
    """``B[k][:, t]`` is the k-th directional part of the right-hand side at step t."""

    B: tuple
    pinned: int = 0

    @property
    def T(self):
        return self.B[0].shape[1]

    def rhs(self, p, t_index=None):
        b = sum(p[k] * self.B[k] for k in range(3))
        return b if t_index is None else b[:, t_index]


def assemble_rhs(model, t_indices=None, pinned=0):
    """Directional right-hand side parts div_k(grad_k V_m) for every time step."""
    vm = assemble_vm_all(model, t_indices)
    parts = []
    for k in range(3):
        bk = directional_operator(model.grid_shape, model.h_M, k) @ vm
        bk[pinned] = 0.0
        parts.append(bk)
    return RhsComponents(tuple(parts), pinned)


def zero_mean(field, weights):
    """Shift each column so that its trapezoidal integral vanishes."""
    w = weights / weights.sum()
    return field - (w @ field)


def solve_forward_dense(aff, rhs, p, t_index=None):
    """Sparse direct solve of A(p) phi = b(p), shifted to zero mean."""
    mat = aff.assemble(p)
    try:
        lu = spla.splu(sp.csc_matrix(mat))
    except RuntimeError as exc:
        raise NumericalFailure(f"factorization failed at p={p}: {exc}") from exc
    phi = lu.solve(np.asarray(rhs.rhs(p, t_index), dtype=float))
    if not np.all(np.isfinite(phi)):
        raise NumericalFailure(f"non-finite forward solution at p={p}")
    return zero_mean(phi, node_weights(aff.grid_shape))


# --- observation ------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementSetup:
    electrodes: np.ndarray
    xi: float = 2.0

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.electrodes, dtype=float))
        if e.shape[1] != 3:
            raise InvalidArgument("electrodes must be an (M, 3) array")
        object.__setattr__(self, "electrodes", e)
        if not self.xi > 0:
            raise InvalidArgument("noise variance xi must be positive")

    @property
    def M(self):
        return self.electrodes.shape[0]


def default_electrodes(model, rows=8, cols=4):
    """Regular ``rows x cols`` array on the top face x3 = L3."""
    L1, L2, L3 = model.extent
    x1 = (np.arange(rows) + 0.5) / rows * L1
    x2 = (np.arange(cols) + 0.5) / cols * L2
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    return np.column_stack([g1.ravel(order="F"), g2.ravel(order="F"), np.full(g1.size, L3)])


def electrode_nodes(model, electrodes, tol=1e-9):
    """Index of the grid node nearest to each electrode."""
    e = np.atleast_2d(np.asarray(electrodes, dtype=float))
    ext = np.asarray(model.extent, dtype=float)
    if np.any(e < -tol) or np.any(e > ext + tol):
        raise InvalidArgument("electrode outside the muscle domain")
    shape = model.grid_shape
    ijk = np.clip(np.rint(e / model.h_M).astype(int), 0, np.asarray(shape) - 1)
    return ijk[:, 0] + shape[0] * (ijk[:, 1] + shape[1] * ijk[:, 2])


def observe(phi, setup, model):
    """Potential at the electrodes (nearest node); shape (M,) or (M, T)."""
    return np.asarray(phi)[electrode_nodes(model, setup.electrodes)]


def add_noise(signal, xi, rng):
    """Add i.i.d. centered Gaussian noise with variance ``xi``."""
    if not xi > 0:
        raise InvalidArgument("noise variance must be positive")
    signal = np.asarray(signal, dtype=float)
    return signal + np.sqrt(xi) * rng.standard_normal(signal.shape)


class DenseForward:
    """Observation operator backed by one sparse direct solve per call."""

    def __init__(self, aff, rhs_by_direction, model, setup):
        self.aff = aff
        self.rhs = dict(rhs_by_direction)
        self.nodes = electrode_nodes(model, setup.electrodes)
        self.weights = node_weights(aff.grid_shape)

    def __call__(self, p, direction):
        phi = solve_forward_dense(self.aff, self.rhs[direction], p)
        return phi[self.nodes].reshape(-1, order="F")
