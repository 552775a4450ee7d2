"""Dimension trees for the hierarchical Tucker format.

Nodes are numbered in preorder (node, left subtree, right subtree) with the
root at index 0. Modes are 0-based internally; :meth:`DimensionTree.label`
renders the 1-based set notation used in reports.
"""

from dataclasses import dataclass

from ..errors import InvalidArgument


@dataclass(frozen=True)
class DimensionTree:
    modes: tuple      # node -> tuple of modes in left-to-right leaf order
    children: tuple   # node -> (left, right) or None for leaves
    parent: tuple     # node -> parent index, -1 for the root

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_nested(cls, spec):
        """Build from nested pairs of mode indices, e.g. ``((0, 1), (2, (3, 4)))``."""
        modes, children, parent = [], [], []

        def visit(node, par):
            idx = len(modes)
            modes.append(None)
            children.append(None)
            parent.append(par)
            if isinstance(node, (tuple, list)):
                if len(node) != 2:
                    raise InvalidArgument(f"inner nodes must have two children, got {node!r}")
                left = visit(node[0], idx)
                right = visit(node[1], idx)
                children[idx] = (left, right)
                modes[idx] = modes[left] + modes[right]
            else:
                modes[idx] = (int(node),)
            return idx

        visit(spec, -1)
        return cls(tuple(modes), tuple(children), tuple(parent))

    def validate(self):
        n = len(self.modes)
        if not (len(self.children) == len(self.parent) == n) or n == 0:
            raise InvalidArgument("inconsistent tree arrays")
        d = len(self.modes[0])
        if sorted(self.modes[0]) != list(range(d)):
            raise InvalidArgument(f"root must carry all modes 0..{d - 1}, got {self.modes[0]}")
        if self.parent[0] != -1:
            raise InvalidArgument("node 0 must be the root")
        leaves = 0
        for t in range(n):
            ch = self.children[t]
            if ch is None:
                if len(self.modes[t]) != 1:
                    raise InvalidArgument(f"leaf {t} must carry a single mode")
                leaves += 1
                continue
            left, right = ch
            if self.parent[left] != t or self.parent[right] != t:
                raise InvalidArgument(f"parent links of node {t} are inconsistent")
            ml, mr = set(self.modes[left]), set(self.modes[right])
            if ml & mr or ml | mr != set(self.modes[t]):
                raise InvalidArgument(f"node {t} is not the disjoint union of its children")
        if leaves != d:
            raise InvalidArgument(f"expected {d} leaves, found {leaves}")

    @property
    def d(self):
        return len(self.modes[0])

    @property
    def n_nodes(self):
        return len(self.modes)

    @property
    def root(self):
        return 0

    def is_leaf(self, t):
        return self.children[t] is None

    @property
    def leaves(self):
        return [t for t in range(self.n_nodes) if self.children[t] is None]

    @property
    def inner_nodes(self):
        return [t for t in range(self.n_nodes) if self.children[t] is not None]

    def leaf_of_mode(self, mode):
        for t in self.leaves:
            if self.modes[t][0] == mode:
                return t
        raise InvalidArgument(f"no leaf for mode {mode}")

    def postorder(self):
        """Nodes with every child listed before its parent."""
        return list(range(self.n_nodes))[::-1]

    def label(self, t):
        return "{" + ",".join(str(m + 1) for m in sorted(self.modes[t])) + "}"

    def to_nested(self, t=0):
        if self.children[t] is None:
            return self.modes[t][0]
        left, right = self.children[t]
        return (self.to_nested(left), self.to_nested(right))


def build_balanced_tree(d):
    """Balanced tree halving contiguous mode ranges; the left half gets the extra mode."""
    if d < 1:
        raise InvalidArgument("dimension must be at least 1")

    def split(lo, hi):
        if hi - lo == 1:
            return lo
        mid = lo + (hi - lo + 1) // 2
        return (split(lo, mid), split(mid, hi))

    return DimensionTree.from_nested(split(0, d))
