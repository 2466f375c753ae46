"""Tree decompositions of support graphs.

Bags are frozensets of node indices.  Edges of the decomposition tree are
oriented toward a root: ``child[b]`` is the neighbour of bag ``b`` on the path
to the root (``-1`` for the root itself), so a bag may have several parents
but at most one child.

Labelling follows the elimination scheme used by the solver: bags are
numbered in post-order from the root, the node introduced by a non-root bag
(the one missing from its child) inherits that bag's number, and the root
bag's nodes take the top labels.  Labels are 0-based.
"""

from __future__ import annotations

import heapq
import json
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import InputError, InvalidDecomposition


@dataclass(frozen=True)
class TreeDecomposition:
    bags: tuple[frozenset, ...]
    child: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bags", tuple(frozenset(b) for b in self.bags))
        object.__setattr__(self, "child", tuple(int(c) for c in self.child))
        if len(self.bags) != len(self.child):
            raise InvalidDecomposition("bags and child arrays differ in length")

    @property
    def bag_count(self) -> int:
        return len(self.bags)

    @property
    def width(self) -> int:
        return max((len(b) for b in self.bags), default=0) - 1

    @property
    def root(self) -> int:
        roots = [i for i, c in enumerate(self.child) if c < 0]
        if len(roots) != 1:
            raise InvalidDecomposition(f"expected exactly one root bag, found {len(roots)}")
        return roots[0]

    @property
    def parents(self) -> list[list[int]]:
        par: list[list[int]] = [[] for _ in self.bags]
        for i, c in enumerate(self.child):
            if c >= 0:
                par[c].append(i)
        return par

    def is_balanced(self) -> bool:
        w = self.width
        if any(len(b) != w + 1 for b in self.bags):
            return False
        return all(
            len(self.bags[i] & self.bags[c]) == w for i, c in enumerate(self.child) if c >= 0
        )

    def to_dict(self) -> dict:
        return {"bags": [sorted(b) for b in self.bags], "child": list(self.child)}

    @classmethod
    def from_dict(cls, data: dict) -> "TreeDecomposition":
        try:
            return cls(tuple(frozenset(b) for b in data["bags"]), tuple(data["child"]))
        except (KeyError, TypeError) as exc:
            raise InvalidDecomposition(f"malformed decomposition: {exc!r}") from exc


def check_decomposition(T: TreeDecomposition, adj: list[set[int]], balanced: bool = False) -> None:
    """Raise InvalidDecomposition unless T is a tree decomposition of the graph."""
    n = len(adj)
    N = T.bag_count
    if N == 0:
        raise InvalidDecomposition("no bags")
    root = T.root
    for i, c in enumerate(T.child):
        if c >= N or c == i:
            raise InvalidDecomposition(f"bag {i} has invalid child {c}")
    # every bag must reach the root without cycling
    depth = [-1] * N
    depth[root] = 0
    for i in range(N):
        path = []
        j = i
        while depth[j] < 0:
            path.append(j)
            j = T.child[j]
            if len(path) > N:
                raise InvalidDecomposition("child pointers contain a cycle")
        for k, p in enumerate(reversed(path)):
            depth[p] = depth[j] + k + 1

    covered = set().union(*T.bags)
    if any(not (0 <= v < n) for v in covered):
        raise InvalidDecomposition("bag contains a node outside the graph")
    missing = set(range(n)) - covered
    if missing:
        raise InvalidDecomposition(f"nodes not covered by any bag: {sorted(missing)[:10]}")

    node_bags: list[list[int]] = [[] for _ in range(n)]
    for i, b in enumerate(T.bags):
        for v in b:
            node_bags[v].append(i)
    for v in range(n):
        for x in adj[v]:
            if x > v and not any(x in T.bags[i] for i in node_bags[v]):
                raise InvalidDecomposition(f"edge ({v}, {x}) is not inside any bag")
        # bags holding v are connected iff exactly one of them has its child outside the set
        held = set(node_bags[v])
        tops = sum(1 for i in held if T.child[i] not in held)
        if tops != 1:
            raise InvalidDecomposition(f"bags containing node {v} are not connected")

    if balanced:
        if not T.is_balanced():
            raise InvalidDecomposition("decomposition is not balanced")
        if N != n - T.width:
            raise InvalidDecomposition(f"balanced decomposition must have {n - T.width} bags, has {N}")


def path_decomposition_banded(n: int, w: int) -> TreeDecomposition:
    """Path of bags {i, ..., i+w}; valid for any matrix of bandwidth <= w."""
    if not 0 <= w < n:
        raise InputError(f"bandwidth {w} must satisfy 0 <= w < n = {n}")
    N = n - w
    bags = tuple(frozenset(range(i, i + w + 1)) for i in range(N))
    child = tuple(list(range(1, N)) + [-1])
    return TreeDecomposition(bags, child)


def _fill(adj: list[set[int]], v: int) -> int:
    nb = adj[v]
    return sum(1 for a, b in combinations(nb, 2) if b not in adj[a])


def min_fill_order(adj: list[set[int]]) -> tuple[list[int], list[frozenset]]:
    """Greedy min-fill elimination; ties go to smaller degree, then smaller index.

    Returns the order and, per node, its bag (itself plus its not-yet-eliminated
    neighbours in the filled graph at elimination time).
    """
    n = len(adj)
    g = [set(nb) for nb in adj]
    stamp = [0] * n
    heap = [(_fill(g, v), len(g[v]), v, 0) for v in range(n)]
    heapq.heapify(heap)
    done = [False] * n
    order: list[int] = []
    bags: list[frozenset] = [frozenset()] * n
    while heap:
        f, deg, v, s = heapq.heappop(heap)
        if done[v] or s != stamp[v]:
            continue
        nb = g[v]
        bags[v] = frozenset(nb | {v})
        order.append(v)
        done[v] = True
        affected = set(nb)
        for a, b in combinations(sorted(nb), 2):
            if b not in g[a]:
                g[a].add(b)
                g[b].add(a)
                affected.update(g[a] & g[b])
        for x in nb:
            g[x].discard(v)
        g[v] = set()
        affected.discard(v)
        for x in affected:
            if not done[x]:
                stamp[x] += 1
                heapq.heappush(heap, (_fill(g, x), len(g[x]), x, stamp[x]))
    return order, bags


def heuristic_decomposition(adj: list[set[int]]) -> TreeDecomposition:
    """Valid (unbalanced) decomposition from a min-fill elimination ordering.

    Components are chained through their root bags, which keeps a single tree
    without affecting validity since chained bags share no nodes.
    """
    n = len(adj)
    if n == 0:
        raise InputError("empty graph")
    order, bags = min_fill_order(adj)
    pos = np.empty(n, dtype=np.intp)
    pos[order] = np.arange(n)
    child = [-1] * n
    roots = []
    for v in order:
        higher = bags[v] - {v}
        if higher:
            child[v] = min(higher, key=lambda x: pos[x])
        else:
            roots.append(v)
    for a, b in zip(roots, roots[1:]):
        child[a] = b
    return TreeDecomposition(tuple(bags), tuple(child))


class _Tree:
    """Mutable undirected bag tree used while balancing."""

    def __init__(self, T: TreeDecomposition):
        self.bags: dict[int, set] = {i: set(b) for i, b in enumerate(T.bags)}
        self.nbrs: dict[int, set] = {i: set() for i in self.bags}
        for i, c in enumerate(T.child):
            if c >= 0:
                self.nbrs[i].add(c)
                self.nbrs[c].add(i)
        self.root = T.root
        self.next_id = len(T.bags)

    def merge(self, src: int, dst: int) -> None:
        for x in self.nbrs.pop(src):
            self.nbrs[x].discard(src)
            if x != dst:
                self.nbrs[x].add(dst)
                self.nbrs[dst].add(x)
        del self.bags[src]
        if self.root == src:
            self.root = dst

    def new_bag(self, nodes) -> int:
        i = self.next_id
        self.next_id += 1
        self.bags[i] = set(nodes)
        self.nbrs[i] = set()
        return i

    def link(self, a: int, b: int) -> None:
        self.nbrs[a].add(b)
        self.nbrs[b].add(a)

    def unlink(self, a: int, b: int) -> None:
        self.nbrs[a].discard(b)
        self.nbrs[b].discard(a)


def _contract_subsets(t: _Tree) -> None:
    stack = sorted(t.bags, reverse=True)
    while stack:
        c = stack.pop()
        if c not in t.bags:
            continue
        sup = [p for p in t.nbrs[c] if t.bags[c] <= t.bags[p]]
        if not sup:
            continue
        p = min(sup, key=lambda i: (len(t.bags[i]), i))
        moved = t.nbrs[c] - {p}
        t.merge(c, p)
        stack.extend(sorted(moved, reverse=True))
        stack.append(p)


def balance(T: TreeDecomposition) -> TreeDecomposition:
    """Equivalent decomposition where every bag has width+1 nodes and adjacent
    bags share exactly width nodes.

    Subset bags are contracted, the remaining bags are padded outward from a
    full bag using nodes of the already padded neighbour (largest first), and
    edges whose bags overlap too little get a chain of one-swap bags.
    """
    w = T.width
    t = _Tree(T)
    _contract_subsets(t)

    start = min(t.bags, key=lambda i: (-len(t.bags[i]), i != t.root, i))
    seen = {start}
    queue = deque((x, start) for x in sorted(t.nbrs[start]))
    while queue:
        b, a = queue.popleft()
        if b in seen or b not in t.bags:
            continue
        seen.add(b)
        extra = sorted(t.bags[a] - t.bags[b], reverse=True)
        t.bags[b].update(extra[: w + 1 - len(t.bags[b])])
        if t.bags[b] == t.bags[a]:
            onward = sorted(t.nbrs[b] - {a})
            t.merge(b, a)
            queue.extend((x, a) for x in onward if x not in seen)
        else:
            queue.extend((x, b) for x in sorted(t.nbrs[b]) if x not in seen)

    for a in sorted(t.bags):
        for b in sorted(t.nbrs[a]):
            if b < a:
                continue
            shared = t.bags[a] & t.bags[b]
            if len(shared) >= w:
                continue
            drop = sorted(t.bags[a] - t.bags[b])
            add = sorted(t.bags[b] - t.bags[a])
            t.unlink(a, b)
            prev, cur = a, set(t.bags[a])
            for r, s in zip(drop[:-1], add[:-1]):
                cur = (cur - {r}) | {s}
                k = t.new_bag(cur)
                t.link(prev, k)
                prev = k
            t.link(prev, b)

    return _orient(t)


def _orient(t: _Tree) -> TreeDecomposition:
    """Post-order listing so every bag precedes its child."""
    order: list[int] = []
    parent_of = {t.root: -1}
    stack = [(t.root, False)]
    while stack:
        b, expanded = stack.pop()
        if expanded:
            order.append(b)
            continue
        stack.append((b, True))
        for x in sorted(t.nbrs[b], reverse=True):
            if x != parent_of[b]:
                parent_of[x] = b
                stack.append((x, False))
    idx = {b: k for k, b in enumerate(order)}
    bags = tuple(frozenset(t.bags[b]) for b in order)
    child = tuple(idx[parent_of[b]] if parent_of[b] >= 0 else -1 for b in order)
    return TreeDecomposition(bags, child)


@dataclass
class LabeledDecomposition:
    """Decomposition expressed in solver labels.

    ``order[k]`` is the original index of the node labelled ``k`` and
    ``node_label`` is its inverse.  ``bags[u]`` (sorted labels, ``u`` first)
    exists for every label: tree bags for ``u <= root``, and the auxiliary
    suffix bags ``{u, ..., n-1}`` above the root.  ``subtree_lo[u]`` gives the
    eliminated set below bag ``u`` as the label range ``[subtree_lo[u], u)``.
    """

    n: int
    width: int
    order: np.ndarray
    node_label: np.ndarray
    bags: list[tuple[int, ...]]
    child: list[int]
    parents: list[list[int]]
    subtree_lo: np.ndarray
    source: TreeDecomposition | None = field(default=None, repr=False)

    @property
    def root(self) -> int:
        return self.n - self.width - 1

    @property
    def is_path(self) -> bool:
        return all(len(p) <= 1 for p in self.parents)

    @property
    def n_u(self) -> np.ndarray:
        return np.arange(self.n) - self.subtree_lo

    def eliminated(self, u: int) -> range:
        return range(int(self.subtree_lo[u]), u)

    def to_dict(self) -> dict:
        out = self.source.to_dict() if self.source is not None else {}
        out["node_label"] = self.node_label.tolist()
        return out


def label(T: TreeDecomposition, root_order=None) -> LabeledDecomposition:
    """Topological bag labels and the induced node labelling.

    Root-bag nodes are labelled in ascending original index unless
    ``root_order`` fixes their order explicitly.
    """
    if not T.is_balanced():
        raise InvalidDecomposition("label() needs a balanced decomposition")
    w = T.width
    N = T.bag_count
    n = N + w
    par = T.parents
    root = T.root

    post: list[int] = []
    stack = [(root, False)]
    while stack:
        b, expanded = stack.pop()
        if expanded:
            post.append(b)
            continue
        stack.append((b, True))
        for p in sorted(par[b], reverse=True):
            stack.append((p, False))
    if len(post) != N:
        raise InvalidDecomposition("decomposition tree is not connected")
    bag_label = np.empty(N, dtype=np.intp)
    bag_label[post] = np.arange(N)

    order = np.full(n, -1, dtype=np.intp)
    for b in range(N):
        c = T.child[b]
        if c < 0:
            continue
        (v,) = T.bags[b] - T.bags[c]
        order[bag_label[b]] = v
    root_nodes = sorted(T.bags[root]) if root_order is None else list(root_order)
    if sorted(root_nodes) != sorted(T.bags[root]):
        raise InvalidDecomposition("root_order must list exactly the root bag's nodes")
    order[N - 1 :] = root_nodes
    if sorted(order.tolist()) != list(range(n)):
        raise InvalidDecomposition("bag differences do not induce a node labelling")
    node_label = np.empty(n, dtype=np.intp)
    node_label[order] = np.arange(n)

    bags: list[tuple[int, ...]] = [()] * n
    child = [-1] * n
    parents: list[list[int]] = [[] for _ in range(n)]
    subtree_lo = np.zeros(n, dtype=np.intp)
    for b in post:
        u = int(bag_label[b])
        bags[u] = tuple(sorted(int(node_label[v]) for v in T.bags[b]))
        if bags[u][0] != u:
            raise InvalidDecomposition(f"bag {u} does not have its own label as minimum")
        ps = sorted(int(bag_label[p]) for p in par[b])
        parents[u] = ps
        subtree_lo[u] = min((subtree_lo[p] for p in ps), default=u)
        if T.child[b] >= 0:
            child[u] = int(bag_label[T.child[b]])
    for u in range(N, n):
        bags[u] = tuple(range(u, n))
        parents[u] = [u - 1]
        subtree_lo[u] = 0
        child[u - 1] = u
    child[n - 1] = -1
    return LabeledDecomposition(n, w, order, node_label, bags, child, parents, subtree_lo, T)


def neighborhood_sizes(L: LabeledDecomposition, adj_labels: list[set[int]], m_max: int) -> np.ndarray:
    """Delta[m] for m = 0..m_max: the largest m-neighbourhood of a bag inside
    its eliminated set, with distances in the subgraph induced by the subtree.

    ``adj_labels`` must be the support graph expressed in solver labels.
    """
    if m_max < 1:
        raise InputError("m_max must be at least 1")
    delta = np.zeros(m_max + 1, dtype=np.int64)
    for u in range(L.n):
        lo = int(L.subtree_lo[u])
        bag = set(L.bags[u])

        def allowed(x: int) -> bool:
            return lo <= x < u or x in bag

        dist = {x: 0 for x in bag}
        frontier = list(bag)
        counts = np.zeros(m_max + 1, dtype=np.int64)
        for m in range(1, m_max + 1):
            nxt = []
            for x in frontier:
                for y in adj_labels[x]:
                    if y not in dist and allowed(y):
                        dist[y] = m
                        nxt.append(y)
            counts[m] = counts[m - 1] + len(nxt)
            frontier = nxt
        np.maximum(delta, counts, out=delta)
    return delta


def relabel_graph(adj: list[set[int]], node_label: np.ndarray) -> list[set[int]]:
    out: list[set[int]] = [set() for _ in adj]
    for v, nb in enumerate(adj):
        out[int(node_label[v])] = {int(node_label[x]) for x in nb}
    return out


def decompose(adj: list[set[int]]) -> TreeDecomposition:
    """Balanced decomposition from the min-fill heuristic."""
    return balance(heuristic_decomposition(adj))


def save_decomposition(T: TreeDecomposition, path, node_label=None) -> None:
    data = T.to_dict()
    if node_label is not None:
        data["node_label"] = [int(v) for v in node_label]
    Path(path).write_text(json.dumps(data))


def load_decomposition(path) -> TreeDecomposition:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidDecomposition(f"{path}: invalid JSON ({exc})") from exc
    return TreeDecomposition.from_dict(data)
