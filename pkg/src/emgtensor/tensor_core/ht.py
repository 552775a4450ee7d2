"""Hierarchical Tucker tensors.

A leaf ``t`` for mode ``l`` stores a frame ``U_t`` of shape ``n_l x r_t``.
An inner node ``t`` with children ``(a, b)`` stores a transfer tensor
``B_t`` of shape ``r_a x r_b x r_t``; the root rank is always 1. The frame
of an inner node is implicit::

    U_t[(i_a, i_b), k] = sum_{p,q} U_a[i_a, p] U_b[i_b, q] B_t[p, q, k]

with the left child's multi-index running fastest.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import InvalidArgument
from .cp import CpOperator, CpVector
from .dense import check_dense_cap, matricize
from .tree import DimensionTree

#: singular values below this fraction of the largest one count as zero
SVD_ZERO_TOL = 1e-14
GRAM_TOL = 1e-7


@dataclass(frozen=True)
class HtTensor:
    tree: DimensionTree
    shape: tuple
    frames: dict      # leaf node -> (n_l, r) array
    transfers: dict   # inner node -> (r_left, r_right, r) array

    def __post_init__(self):
        tree = self.tree
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) != tree.d:
            raise InvalidArgument(f"shape {shape} does not match tree dimension {tree.d}")
        for t in tree.leaves:
            u = self.frames.get(t)
            if u is None or u.ndim != 2 or u.shape[0] != shape[tree.modes[t][0]]:
                raise InvalidArgument(f"bad frame at leaf {tree.label(t)}")
        for t in tree.inner_nodes:
            b = self.transfers.get(t)
            left, right = tree.children[t]
            if b is None or b.ndim != 3:
                raise InvalidArgument(f"missing transfer tensor at node {tree.label(t)}")
            if b.shape[:2] != (self.rank(left), self.rank(right)):
                raise InvalidArgument(
                    f"transfer tensor at {tree.label(t)} has shape {b.shape}, children ranks "
                    f"{self.rank(left)}, {self.rank(right)}")
        if self.rank(tree.root) != 1:
            raise InvalidArgument("root rank must be 1")

    @property
    def d(self):
        return self.tree.d

    def rank(self, t):
        if self.tree.is_leaf(t):
            return self.frames[t].shape[1]
        return self.transfers[t].shape[2]

    def leaf_frame(self, mode):
        return self.frames[self.tree.leaf_of_mode(mode)]

    def replace(self, frames=None, transfers=None):
        f = dict(self.frames)
        f.update(frames or {})
        b = dict(self.transfers)
        b.update(transfers or {})
        return HtTensor(self.tree, self.shape, f, b)


def _check_same_space(a, b):
    if a.tree != b.tree:
        raise InvalidArgument("tensors live on different dimension trees")
    if a.shape != b.shape:
        raise InvalidArgument(f"mode sizes differ: {a.shape} vs {b.shape}")


def ht_zeros(tree, shape):
    """The zero tensor with all ranks equal to 1."""
    frames = {t: np.zeros((shape[tree.modes[t][0]], 1)) for t in tree.leaves}
    transfers = {t: np.zeros((1, 1, 1)) for t in tree.inner_nodes}
    return HtTensor(tree, shape, frames, transfers)


def ht_ranks(x):
    """Stored representation rank per node, keyed by node index."""
    return {t: x.rank(t) for t in range(x.tree.n_nodes)}


def ht_storage(x):
    """Number of stored scalars (leaf frames plus transfer tensors)."""
    return int(sum(u.size for u in x.frames.values()) + sum(b.size for b in x.transfers.values()))


def _node_frame(x, t):
    tree = x.tree
    if tree.is_leaf(t):
        return x.frames[t]
    left, right = tree.children[t]
    ul = _node_frame(x, left)
    ur = _node_frame(x, right)
    b = x.transfers[t]
    out = np.einsum("ia,jb,abk->ijk", ul, ur, b, optimize=True)
    return out.reshape(ul.shape[0] * ur.shape[0], b.shape[2], order="F")


def ht_full(x, cap=None):
    """Dense tensor represented by ``x``."""
    check_dense_cap(x.shape, cap)
    tree = x.tree
    vec = _node_frame(x, tree.root)[:, 0]
    order = list(tree.modes[tree.root])
    t = vec.reshape([x.shape[m] for m in order], order="F")
    return np.transpose(t, np.argsort(order))


def ht_from_dense(t, tree):
    """Exact HT representation of a dense tensor (node-wise SVD bases)."""
    t = np.asarray(t, dtype=float)
    if t.ndim != tree.d:
        raise InvalidArgument("tensor order does not match the tree")
    bases = {}
    for node in range(tree.n_nodes):
        if node == tree.root:
            continue
        mat = matricize(t, tree.modes[node], ordered=True)
        u, s, _ = np.linalg.svd(mat, full_matrices=False)
        keep = max(1, int(np.sum(s > SVD_ZERO_TOL * s[0]))) if s.size and s[0] > 0 else 1
        bases[node] = u[:, :keep]
    bases[tree.root] = matricize(t, tree.modes[tree.root], ordered=True)
    frames = {leaf: bases[leaf] for leaf in tree.leaves}
    transfers = {}
    for node in tree.inner_nodes:
        left, right = tree.children[node]
        ul, ur, un = bases[left], bases[right], bases[node]
        un3 = un.reshape(ul.shape[0], ur.shape[0], un.shape[1], order="F")
        transfers[node] = np.einsum("ia,jb,ijk->abk", ul, ur, un3, optimize=True)
    if tree.d == 1:
        frames = {0: bases[0]}
    return HtTensor(tree, t.shape, frames, transfers)


def _diag3(r, last=None):
    last = r if last is None else last
    b = np.zeros((r, r, last))
    for k in range(r):
        b[k, k, k if last == r else 0] = 1.0
    return b


def cp_to_ht(v, tree):
    """Convert a CP vector (or operator) to HT with node ranks bounded by the CP rank.

    Operator factors are flattened column-major, so mode ``l`` becomes a mode of
    size ``n_l**2``.
    """
    if isinstance(v, CpOperator):
        factors = []
        for m in range(v.d):
            cols = [(term[m].toarray() if sp.issparse(term[m]) else np.asarray(term[m]))
                    .reshape(-1, order="F") for term in v.terms]
            factors.append(np.column_stack(cols))
        v = CpVector(tuple(factors))
    if v.d != tree.d:
        raise InvalidArgument(f"CP dimension {v.d} does not match tree dimension {tree.d}")
    r = v.rank
    if r == 0:
        return ht_zeros(tree, v.shape)
    if tree.d == 1:
        return HtTensor(tree, v.shape, {0: v.factors[0].sum(axis=1, keepdims=True)}, {})
    frames = {t: v.factors[tree.modes[t][0]].copy() for t in tree.leaves}
    transfers = {t: _diag3(r, 1 if t == tree.root else None) for t in tree.inner_nodes}
    return HtTensor(tree, v.shape, frames, transfers)


def ht_scale(x, alpha):
    if x.d == 1:
        return x.replace(frames={0: alpha * x.frames[0]})
    root = x.tree.root
    return x.replace(transfers={root: alpha * x.transfers[root]})


def ht_add(a, b):
    """Sum of two HT tensors; node ranks add up, no truncation."""
    _check_same_space(a, b)
    tree = a.tree
    if tree.d == 1:
        return a.replace(frames={0: a.frames[0] + b.frames[0]})
    frames = {t: np.hstack([a.frames[t], b.frames[t]]) for t in tree.leaves}
    transfers = {}
    for t in tree.inner_nodes:
        ba, bb = a.transfers[t], b.transfers[t]
        if t == tree.root:
            out = np.zeros((ba.shape[0] + bb.shape[0], ba.shape[1] + bb.shape[1], 1))
            out[: ba.shape[0], : ba.shape[1], :] = ba
            out[ba.shape[0]:, ba.shape[1]:, :] = bb
        else:
            out = np.zeros(tuple(p + q for p, q in zip(ba.shape, bb.shape)))
            out[: ba.shape[0], : ba.shape[1], : ba.shape[2]] = ba
            out[ba.shape[0]:, ba.shape[1]:, ba.shape[2]:] = bb
        transfers[t] = out
    return HtTensor(tree, a.shape, frames, transfers)


def ht_axpby(alpha, a, beta, b):
    return ht_add(ht_scale(a, alpha), ht_scale(b, beta))


def ht_inner(a, b):
    """Euclidean inner product computed bottom-up through Gram matrices."""
    _check_same_space(a, b)
    tree = a.tree
    gram = {}
    for t in tree.postorder():
        if tree.is_leaf(t):
            gram[t] = a.frames[t].T @ b.frames[t]
        else:
            left, right = tree.children[t]
            gram[t] = np.einsum("abk,ac,bd,cdl->kl", a.transfers[t], gram[left], gram[right],
                                b.transfers[t], optimize=True)
    return float(gram[tree.root][0, 0])


def ht_entry(x, index):
    """Single entry, evaluated leaf-to-root at cost independent of the mode sizes."""
    index = tuple(int(i) for i in index)
    if len(index) != x.d:
        raise InvalidArgument(f"index {index} has wrong length for a {x.d}-dimensional tensor")
    for m, (i, n) in enumerate(zip(index, x.shape)):
        if not 0 <= i < n:
            raise InvalidArgument(f"index {i} out of range for mode {m} of size {n}")
    tree = x.tree
    vals = {}
    for t in tree.postorder():
        if tree.is_leaf(t):
            vals[t] = x.frames[t][index[tree.modes[t][0]]]
        else:
            left, right = tree.children[t]
            vals[t] = np.einsum("a,b,abk->k", vals[left], vals[right], x.transfers[t])
    return float(vals[tree.root][0])


def ht_subtensor(x, index_lists):
    """Dense sub-tensor on the Cartesian product of per-mode index lists.

    Entries of ``index_lists`` may also be ``(k, n_l)`` row-weight matrices, in
    which case mode ``l`` is replaced by ``k`` weighted combinations of its
    fibers (used for spatial averages).
    """
    frames = {}
    new_shape = []
    for m, sel in enumerate(index_lists):
        leaf = x.tree.leaf_of_mode(m)
        u = x.frames[leaf]
        sel = np.asarray(sel)
        if sel.ndim == 2:
            rows = sel @ u
        else:
            sel = np.atleast_1d(sel).astype(int)
            if sel.size and (sel.min() < 0 or sel.max() >= x.shape[m]):
                raise InvalidArgument(f"index out of range in mode {m}")
            rows = u[sel]
        frames[leaf] = rows
        new_shape.append(rows.shape[0])
    return ht_full(HtTensor(x.tree, tuple(new_shape), frames, dict(x.transfers)))


def _ttm(b, ml=None, mr=None, mk=None):
    """Multiply the three modes of a transfer tensor: ``b x1 ml x2 mr x3 mk``."""
    if ml is not None:
        a, c, k = b.shape
        b = (ml @ b.reshape(a, c * k)).reshape(ml.shape[0], c, k)
    if mr is not None:
        b = np.matmul(mr, b)
    if mk is not None:
        b = b @ mk.T
    return b


def orthogonalize(x):
    """Equivalent representation with orthonormal node frames (leaves to root)."""
    tree = x.tree
    if tree.d == 1:
        return x
    frames, transfers, carry = {}, {}, {}
    for t in tree.postorder():
        if tree.is_leaf(t):
            q, r = np.linalg.qr(x.frames[t])
            frames[t] = q
            carry[t] = r
            continue
        left, right = tree.children[t]
        b = _ttm(x.transfers[t], carry[left], carry[right])
        if t == tree.root:
            transfers[t] = b
            continue
        rl, rr, rk = b.shape
        q, r = np.linalg.qr(b.reshape(rl * rr, rk, order="F"))
        transfers[t] = q.reshape(rl, rr, q.shape[1], order="F")
        carry[t] = r
    return HtTensor(tree, x.shape, frames, transfers)


def ht_norm(x):
    if x.d == 1:
        return float(np.linalg.norm(x.frames[0]))
    y = orthogonalize(x)
    return float(np.linalg.norm(y.transfers[y.tree.root]))


def _left_svd(mat, gram):
    if not gram:
        w, s, _ = np.linalg.svd(mat, full_matrices=False)
        return w, s
    # eigenpairs of the small Gramian; resolves singular values down to ~1e-8 * s_max
    lam, w = np.linalg.eigh(mat @ mat.T)
    lam, w = lam[::-1], np.ascontiguousarray(w[:, ::-1])
    return w, np.sqrt(np.clip(lam, 0.0, None))


def _node_svds(y, gram=False):
    """Left singular vectors and singular values of every non-root matricization.

    ``y`` must be orthogonalized. Works top-down with square-root factors
    ``K_t`` of the reduced Gramians. With ``gram`` the small reduced Gramians
    are diagonalized instead of running an SVD, which is much faster but only
    accurate to about the square root of machine precision.
    """
    tree = y.tree
    out = {}
    kfac = {tree.root: np.ones((1, 1))}
    for t in range(tree.n_nodes):
        if tree.is_leaf(t):
            continue
        left, right = tree.children[t]
        z = y.transfers[t] @ kfac[t]
        ml = z.reshape(z.shape[0], -1)
        mr = np.transpose(z, (1, 0, 2)).reshape(z.shape[1], -1)
        for child, mat in ((left, ml), (right, mr)):
            w, s = _left_svd(mat, gram)
            out[child] = (w, s)
            kfac[child] = w * s
    return out


def ht_singular_values(x):
    """Singular values of the matricization at every non-root node."""
    if x.d == 1:
        return {}
    return {t: s for t, (_, s) in _node_svds(orthogonalize(x)).items()}


def _choose_rank(s, budget_sq, cap):
    if s.size == 0 or s[0] == 0:
        return 1
    k = max(1, int(np.sum(s > SVD_ZERO_TOL * s[0])))
    if budget_sq is not None:
        tail = np.concatenate([np.cumsum((s[::-1] ** 2))[::-1], [0.0]])
        # smallest k whose discarded tail fits the budget
        k = min(k, max(1, int(np.argmax(tail <= budget_sq))))
    if cap is not None:
        k = min(k, int(cap))
    return max(1, k)


def truncate(x, ranks=None, rel_tol=None):
    """Root-to-leaves HT truncation.

    Either ``ranks`` (node -> max rank; a single int applies to every node)
    or ``rel_tol`` (relative Frobenius accuracy) or both. The relative budget is
    split evenly over the 2d-3 independent matricizations, so the total error
    stays below ``rel_tol * ||x||``; with fixed ranks the error is within
    sqrt(2d-3) of the best approximation.
    """
    tree = x.tree
    if ranks is None and rel_tol is None:
        rel_tol = 0.0
    if rel_tol is not None and rel_tol < 0:
        raise InvalidArgument("rel_tol must be non-negative")
    if isinstance(ranks, (int, np.integer)):
        ranks = {t: int(ranks) for t in range(tree.n_nodes)}
    if ranks is not None and any(r < 1 for r in ranks.values()):
        raise InvalidArgument("target ranks must be at least 1")
    if tree.d == 1:
        return x
    y = orthogonalize(x)
    root = tree.root
    nrm = float(np.linalg.norm(y.transfers[root]))
    if nrm == 0.0 or not np.isfinite(nrm):
        if nrm == 0.0:
            return ht_zeros(tree, x.shape)
        return y
    svds = _node_svds(y, gram=rel_tol is not None and rel_tol >= GRAM_TOL)
    budget_sq = None
    if rel_tol is not None:
        budget_sq = (rel_tol * nrm) ** 2 / (2 * tree.d - 3)
    left_root, right_root = tree.children[root]
    keep = {}
    for t, (_, s) in svds.items():
        if t == right_root:
            continue
        cap = None if ranks is None else ranks.get(t)
        if t == left_root and ranks is not None and ranks.get(right_root) is not None:
            cap = min(c for c in (cap, ranks[right_root]) if c is not None)
        keep[t] = _choose_rank(s, budget_sq, cap)
    # both root children see the same matricization; truncate them jointly
    keep[right_root] = keep[left_root]

    proj = {t: np.ascontiguousarray(svds[t][0][:, : keep[t]]) for t in svds}
    frames = {t: y.frames[t] @ proj[t] for t in tree.leaves}
    transfers = {}
    for t in tree.inner_nodes:
        left, right = tree.children[t]
        transfers[t] = _ttm(y.transfers[t], proj[left].T, proj[right].T,
                            None if t == root else proj[t].T)
    return HtTensor(tree, x.shape, frames, transfers)


def ht_apply(A, x):
    """Apply a CP operator to an HT tensor; ranks grow by the factor ``A.rank``."""
    if A.shape != x.shape:
        raise InvalidArgument(f"operator modes {A.shape} do not match tensor modes {x.shape}")
    tree = x.tree
    R = A.rank
    if tree.d == 1:
        u = sum(term[0] @ x.frames[0] for term in A.terms)
        return x.replace(frames={0: np.asarray(u)})
    frames = {}
    for t in tree.leaves:
        m = tree.modes[t][0]
        frames[t] = np.hstack([np.asarray(term[m] @ x.frames[t]) for term in A.terms])
    transfers = {}
    for t in tree.inner_nodes:
        b = x.transfers[t]
        p, q, r = b.shape
        if t == tree.root:
            out = np.zeros((R * p, R * q, 1))
            for k in range(R):
                out[k * p:(k + 1) * p, k * q:(k + 1) * q, :] = b
        else:
            out = np.zeros((R * p, R * q, R * r))
            for k in range(R):
                out[k * p:(k + 1) * p, k * q:(k + 1) * q, k * r:(k + 1) * r] = b
        transfers[t] = out
    return HtTensor(tree, x.shape, frames, transfers)


def ht_apply_leaf(x, mode, fn):
    """Return ``x`` with ``fn`` applied to the frame of ``mode`` (a rank-1 operator)."""
    leaf = x.tree.leaf_of_mode(mode)
    return x.replace(frames={leaf: np.asarray(fn(x.frames[leaf]))})
