"""Rooted trees with edge lengths for the tree-structured column process.

Samples sit at the leaves, the root-to-leaf depth is 1 (up to 1e-9), and
edge lengths are nonnegative (zero-length edges are legal; they can never
fire). Trees are immutable after construction.
"""

from __future__ import annotations

import numpy as np

DEPTH_TOL = 1e-9


class TreeError(ValueError):
    """Raised when a tree violates its structural invariants."""


class RootedTree:
    """Rooted tree over ``n`` samples.

    Nodes are indexed ``0..m-1`` with the root at index 0. ``parent[v]`` is
    the parent of node ``v`` (-1 for the root) and ``edge_len[v]`` the length
    of the edge connecting ``v`` to its parent. ``leaf_nodes[i]`` is the node
    carrying sample ``i`` (0-based).
    """

    def __init__(self, parent, edge_len, leaf_nodes, validate=True):
        self.parent = np.asarray(parent, dtype=np.int32)
        self.edge_len = np.asarray(edge_len, dtype=np.float64)
        self.leaf_nodes = np.asarray(leaf_nodes, dtype=np.int32)
        self.m = self.parent.shape[0]
        self.n_leaves = self.leaf_nodes.shape[0]
        self._build_derived()
        if validate:
            validate_tree(self)

    def _build_derived(self):
        m = self.m
        if m == 0:
            raise TreeError("empty tree")
        if self.edge_len.shape != (m,):
            raise TreeError("edge_len length does not match node count")
        # children in CSR layout
        counts = np.zeros(m, dtype=np.int64)
        for v in range(m):
            p = self.parent[v]
            if p >= 0:
                if p >= m:
                    raise TreeError(f"parent index {p} out of range")
                counts[p] += 1
        self.child_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int32)
        self.child_idx = np.zeros(max(m - 1, 0), dtype=np.int32)
        fill = self.child_ptr[:-1].copy()
        for v in range(m):
            p = self.parent[v]
            if p >= 0:
                self.child_idx[fill[p]] = v
                fill[p] += 1
        # topological order, children before parents (reversed BFS from root)
        order = np.empty(m, dtype=np.int32)
        order[0] = 0
        head, tail = 0, 1
        while head < tail:
            v = order[head]
            head += 1
            lo, hi = self.child_ptr[v], self.child_ptr[v + 1]
            nkids = hi - lo
            if nkids:
                order[tail : tail + nkids] = self.child_idx[lo:hi]
                tail += nkids
        if tail != m:
            raise TreeError("tree is disconnected or contains a cycle")
        self.topo = order[::-1].copy()
        # depths
        self.depth = np.zeros(m, dtype=np.float64)
        for v in order[1:]:
            self.depth[v] = self.depth[self.parent[v]] + self.edge_len[v]
        self.is_leaf = counts == 0
        self.total_edge_length = float(self.edge_len[1:].sum()) if m > 1 else 0.0

    @property
    def n(self):
        return self.n_leaves

    def fire_probs(self, p_k):
        """Per-edge firing probability 1-(1-p_k)**t, computed stably."""
        if not 0.0 < p_k < 1.0:
            raise ValueError(f"p_k must lie in (0,1), got {p_k}")
        return -np.expm1(self.edge_len * np.log1p(-p_k))

    def to_newick(self, digits=6):
        """Serialize with branch lengths; leaf labels are 1-based sample ids."""
        labels = {}
        for i, v in enumerate(self.leaf_nodes):
            labels[int(v)] = str(i + 1)

        def fmt(v):
            lo, hi = self.child_ptr[v], self.child_ptr[v + 1]
            if hi == lo:
                body = labels[int(v)]
            else:
                parts = [fmt(int(c)) for c in self.child_idx[lo:hi]]
                body = "(" + ",".join(parts) + ")"
            if v == 0:
                return body
            return f"{body}:{self.edge_len[v]:.{digits}g}"

        return fmt(0) + ";"

    def __repr__(self):
        return f"RootedTree(n={self.n_leaves}, nodes={self.m})"


def validate_tree(tree):
    """Check all structural invariants, raising :class:`TreeError` on failure."""
    if (tree.parent[0] != -1) or np.any(tree.parent[1:] < 0):
        raise TreeError("node 0 must be the unique root (parent -1)")
    if np.any(tree.edge_len[1:] < 0):
        raise TreeError("negative edge length")
    leaves = np.flatnonzero(tree.is_leaf)
    mapped = np.sort(tree.leaf_nodes)
    if len(np.unique(mapped)) != len(mapped):
        raise TreeError("leaf map is not injective")
    if len(leaves) != len(mapped) or np.any(np.sort(leaves) != mapped):
        raise TreeError("leaf map must cover every leaf exactly once")
    if not np.all(tree.is_leaf[tree.leaf_nodes]):
        raise TreeError("leaf map points at an internal node")
    depths = tree.depth[tree.leaf_nodes]
    bad = np.flatnonzero(np.abs(depths - 1.0) > DEPTH_TOL)
    if bad.size:
        detail = ", ".join(f"sample {i}: depth {depths[i]:.6g}" for i in bad[:8])
        raise TreeError(f"root-to-leaf depth must be 1: {detail}")


def flat_tree(n):
    """Star tree: every sample hangs off the root with a unit edge.

    The column process on this tree is i.i.d. Bernoulli(p_k) across samples,
    so it reproduces the exchangeable (non-tree) prior exactly.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    parent = np.concatenate(([-1], np.zeros(n, dtype=np.int32)))
    edge_len = np.concatenate(([0.0], np.ones(n)))
    leaf_nodes = np.arange(1, n + 1, dtype=np.int32)
    return RootedTree(parent, edge_len, leaf_nodes)


def group_tree(labels, eta):
    """Tree with one internal node per group: root -(eta)- group -(1-eta)- leaf."""
    labels = np.asarray(labels)
    if not 0.0 <= eta < 1.0:
        raise ValueError("eta must lie in [0, 1)")
    n = labels.shape[0]
    groups = np.unique(labels)
    g = len(groups)
    gpos = {lab: j for j, lab in enumerate(groups)}
    m = 1 + g + n
    parent = np.empty(m, dtype=np.int32)
    edge_len = np.empty(m, dtype=np.float64)
    parent[0] = -1
    edge_len[0] = 0.0
    parent[1 : 1 + g] = 0
    edge_len[1 : 1 + g] = eta
    leaf_nodes = np.empty(n, dtype=np.int32)
    for i in range(n):
        v = 1 + g + i
        parent[v] = 1 + gpos[labels[i]]
        edge_len[v] = 1.0 - eta
        leaf_nodes[i] = v
    return RootedTree(parent, edge_len, leaf_nodes)


def two_group_tree(n, eta, partition):
    """Two-group tree for a :class:`~pibp.model.GroupPartition`."""
    partition.check(n)
    labels = np.zeros(n, dtype=np.int8)
    labels[sorted(partition.s2)] = 1
    return group_tree(labels, eta)


def parse_newick(text, normalize_depth=False):
    """Parse a Newick string with branch lengths into a :class:`RootedTree`.

    Leaf labels must be the 1-based sample indices ``1..n``. Trees whose
    root-to-leaf depths are not all 1 are rejected unless
    ``normalize_depth=True``, in which case every edge is scaled by the
    maximum depth and leaf edges are stretched so each leaf lands at depth 1.
    """
    s = text.strip()
    if not s.endswith(";"):
        raise TreeError("newick text must end with ';'")
    s = s[:-1]
    pos = 0

    parent_list = [-1]
    edge_list = [0.0]
    label_of_node = {}

    def new_node(par):
        parent_list.append(par)
        edge_list.append(0.0)
        return len(parent_list) - 1

    def parse_clade(par):
        nonlocal pos
        node = 0 if par == -1 else new_node(par)
        if pos < len(s) and s[pos] == "(":
            pos += 1
            while True:
                parse_clade(node)
                if pos >= len(s):
                    raise TreeError("unbalanced parentheses in newick text")
                if s[pos] == ",":
                    pos += 1
                    continue
                if s[pos] == ")":
                    pos += 1
                    break
                raise TreeError(f"unexpected character {s[pos]!r} in newick text")
        start = pos
        while pos < len(s) and s[pos] not in ",():;":
            pos += 1
        label = s[start:pos]
        if label:
            label_of_node[node] = label
        if pos < len(s) and s[pos] == ":":
            pos += 1
            start = pos
            while pos < len(s) and s[pos] not in ",()":
                pos += 1
            try:
                edge_list[node] = float(s[start:pos])
            except ValueError as exc:
                raise TreeError(f"bad branch length {s[start:pos]!r}") from exc
        return node

    parse_clade(-1)
    if pos != len(s):
        raise TreeError("trailing characters after newick tree")

    parent = np.asarray(parent_list, dtype=np.int32)
    edge_len = np.asarray(edge_list, dtype=np.float64)
    m = len(parent_list)
    nkids = np.zeros(m, dtype=np.int64)
    for v in range(1, m):
        nkids[parent[v]] += 1
    leaves = [v for v in range(m) if nkids[v] == 0]
    leaf_nodes = np.full(len(leaves), -1, dtype=np.int32)
    for v in leaves:
        if v not in label_of_node:
            raise TreeError("leaf without a sample label")
        try:
            i = int(label_of_node[v])
        except ValueError as exc:
            raise TreeError(f"leaf label {label_of_node[v]!r} is not an integer") from exc
        if not 1 <= i <= len(leaves):
            raise TreeError(f"leaf label {i} outside 1..{len(leaves)}")
        if leaf_nodes[i - 1] != -1:
            raise TreeError(f"duplicate leaf label {i}")
        leaf_nodes[i - 1] = v

    if normalize_depth:
        depth = np.zeros(m)
        stack = [0]
        kids = [[] for _ in range(m)]
        for v in range(1, m):
            kids[parent[v]].append(v)
        while stack:
            v = stack.pop()
            for c in kids[v]:
                depth[c] = depth[v] + edge_len[c]
                stack.append(c)
        dmax = depth[leaf_nodes].max()
        if dmax <= 0:
            raise TreeError("cannot normalize a tree of total depth 0")
        edge_len = edge_len / dmax
        depth = depth / dmax
        for v in leaf_nodes:
            edge_len[v] += 1.0 - depth[v]

    return RootedTree(parent, edge_len, leaf_nodes)


def write_newick(tree, path, digits=6):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(tree.to_newick(digits=digits) + "\n")


def read_newick(path, normalize_depth=False):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_newick(fh.read(), normalize_depth=normalize_depth)
