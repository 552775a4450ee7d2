"""Binary round-trip format for HT tensors.

Layout, all little-endian::

    b"HTv1"
    uint32  d
    uint64  mode sizes[d]
    uint32  node count n
    int32   parent[n]        preorder, root first with parent -1
    int32   leaf_mode[n]     0-based mode of each leaf, -1 for inner nodes
    uint64  rank[n]
    float64 payload          per node in preorder: leaf frame (n_l x r) or
                             transfer tensor (r_left x r_right x r), column-major

Children of a node are its two successors in preorder order of appearance,
so the parent array plus leaf modes rebuild the tree exactly.
"""

import struct

import numpy as np

from ..errors import InvalidArgument
from .ht import HtTensor
from .tree import DimensionTree

MAGIC = b"HTv1"


def ht_to_bytes(x):
    tree = x.tree
    n = tree.n_nodes
    leaf_mode = [tree.modes[t][0] if tree.is_leaf(t) else -1 for t in range(n)]
    parts = [
        MAGIC,
        struct.pack("<I", tree.d),
        np.asarray(x.shape, dtype="<u8").tobytes(),
        struct.pack("<I", n),
        np.asarray(tree.parent, dtype="<i4").tobytes(),
        np.asarray(leaf_mode, dtype="<i4").tobytes(),
        np.asarray([x.rank(t) for t in range(n)], dtype="<u8").tobytes(),
    ]
    for t in range(n):
        arr = x.frames[t] if tree.is_leaf(t) else x.transfers[t]
        parts.append(np.asarray(arr, dtype="<f8").reshape(-1, order="F").tobytes())
    return b"".join(parts)


def _tree_from_arrays(parent, leaf_mode):
    n = len(parent)
    kids = [[] for _ in range(n)]
    for t in range(1, n):
        p = parent[t]
        if not 0 <= p < t:
            raise InvalidArgument("parent array is not in preorder")
        kids[p].append(t)

    def nested(t):
        if not kids[t]:
            if leaf_mode[t] < 0:
                raise InvalidArgument(f"node {t} has no children but no leaf mode")
            return int(leaf_mode[t])
        if len(kids[t]) != 2:
            raise InvalidArgument(f"node {t} has {len(kids[t])} children")
        return (nested(kids[t][0]), nested(kids[t][1]))

    tree = DimensionTree.from_nested(nested(0))
    if list(tree.parent) != list(parent):
        raise InvalidArgument("node order is not preorder")
    return tree


def ht_from_bytes(buf):
    buf = memoryview(buf)
    if bytes(buf[:4]) != MAGIC:
        raise InvalidArgument("not an HTv1 file")
    pos = 4
    (d,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    shape = tuple(int(v) for v in np.frombuffer(buf, dtype="<u8", count=d, offset=pos))
    pos += 8 * d
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    parent = np.frombuffer(buf, dtype="<i4", count=n, offset=pos).tolist()
    pos += 4 * n
    leaf_mode = np.frombuffer(buf, dtype="<i4", count=n, offset=pos).tolist()
    pos += 4 * n
    ranks = np.frombuffer(buf, dtype="<u8", count=n, offset=pos).astype(int).tolist()
    pos += 8 * n
    tree = _tree_from_arrays(parent, leaf_mode)
    frames, transfers = {}, {}
    for t in range(n):
        if tree.is_leaf(t):
            dims = (shape[tree.modes[t][0]], ranks[t])
        else:
            left, right = tree.children[t]
            dims = (ranks[left], ranks[right], ranks[t])
        count = int(np.prod(dims))
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims, order="F")
        pos += 8 * count
        if tree.is_leaf(t):
            frames[t] = arr.astype(float)
        else:
            transfers[t] = arr.astype(float)
    if pos != len(buf):
        raise InvalidArgument(f"{len(buf) - pos} trailing bytes in HTv1 payload")
    return HtTensor(tree, shape, frames, transfers)


def save_ht(x, path):
    with open(path, "wb") as fh:
        fh.write(ht_to_bytes(x))


def load_ht(path):
    with open(path, "rb") as fh:
        return ht_from_bytes(fh.read())
