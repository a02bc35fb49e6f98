"""
Finite truncations of the regular tree T_q and a container for input graphs.

Vertices of a depth-D truncation are numbered breadth-first. The root O has
id 0 and the empty address; the root has q+1 children (letters 0..q), every
other vertex has q children (letters 0..q-1). Ids do not depend on D, so a
vertex keeps its id when the truncation is deepened.

Points at infinity are discretized by cylinders: a :class:`RayClass` is a
vertex at some depth c together with the uniform weight 1/((q+1) q^(c-1)).
Every quantity that depends on a ray only through its first c letters is
integrated exactly by summing over cylinders.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DepthInsufficient, InputFormatError, InvalidParameter, InvalidStructure


def sphere_size(q: int, k: int) -> int:
    return 1 if k == 0 else (q + 1) * q ** (k - 1)


def level_offset(q: int, k: int) -> int:
    """Id of the first vertex at depth k."""
    if k == 0:
        return 0
    return 1 + (q + 1) * (q ** (k - 1) - 1) // (q - 1)


def tree_size(q: int, depth: int) -> int:
    return 1 + (q + 1) * (q**depth - 1) // (q - 1)


class TruncatedTree:
    """The ball of radius ``depth`` around the root of T_q.

    Attributes
    ----------
    q : int
        Branching number; every vertex of T_q has degree q+1.
    depth : int
        Truncation depth D.
    n : int
        Number of vertices.
    depths : ndarray of int
        ``depths[v] = |v|``.
    parent : ndarray of int
        Parent id, -1 for the root.
    ancestors : ndarray of int, shape (D+1, n)
        ``ancestors[k, v]`` is the ancestor of v at depth k, or -1 if |v| < k.
    adjacency : scipy.sparse.csr_matrix of int64
        Adjacency matrix of the truncation.
    """

    def __init__(self, q: int, depth: int):
        if int(q) != q or q < 2:
            raise InvalidParameter(f"q must be an integer >= 2, got {q!r}")
        if int(depth) != depth or depth < 1:
            raise InvalidParameter(f"depth must be an integer >= 1, got {depth!r}")
        self.q = int(q)
        self.depth = int(depth)
        self.n = tree_size(self.q, self.depth)

        depths = np.empty(self.n, dtype=np.int64)
        parent = np.empty(self.n, dtype=np.int64)
        depths[0] = 0
        parent[0] = -1
        for k in range(1, self.depth + 1):
            lo, hi = level_offset(q, k), level_offset(q, k + 1)
            idx = np.arange(hi - lo)
            depths[lo:hi] = k
            parent[lo:hi] = 0 if k == 1 else level_offset(q, k - 1) + idx // q
        self.depths = depths
        self.parent = parent

        anc = np.full((self.depth + 1, self.n), -1, dtype=np.int64)
        anc[depths, np.arange(self.n)] = np.arange(self.n)
        for k in range(self.depth, 0, -1):
            mask = anc[k] >= 0
            anc[k - 1, mask] = parent[anc[k, mask]]
        self.ancestors = anc

        child = np.arange(1, self.n)
        rows = np.concatenate([child, parent[1:]])
        cols = np.concatenate([parent[1:], child])
        data = np.ones(rows.size, dtype=np.int64)
        self.adjacency = sp.csr_matrix((data, (rows, cols)), shape=(self.n, self.n))
        for arr in (self.depths, self.parent, self.ancestors):
            arr.setflags(write=False)

    def __repr__(self) -> str:
        return f"TruncatedTree(q={self.q}, depth={self.depth}, n={self.n})"

    @property
    def n_edges(self) -> int:
        return self.n - 1

    def check_vertex(self, x: int) -> int:
        x = int(x)
        if not 0 <= x < self.n:
            raise InvalidParameter(f"vertex {x} not in truncation of size {self.n}")
        return x

    def level(self, k: int) -> np.ndarray:
        """Ids of the vertices at depth k, in id order."""
        if not 0 <= k <= self.depth:
            raise InvalidParameter(f"depth {k} outside [0, {self.depth}]")
        return np.arange(level_offset(self.q, k), level_offset(self.q, k + 1))

    def ball(self, r: int) -> np.ndarray:
        return np.arange(level_offset(self.q, min(r, self.depth) + 1))

    def interior(self) -> np.ndarray:
        """Vertices whose full T_q neighbourhood lies in the truncation."""
        return self.ball(self.depth - 1)

    def children(self, x: int) -> np.ndarray:
        x = self.check_vertex(x)
        k = int(self.depths[x])
        if k == self.depth:
            return np.empty(0, dtype=np.int64)
        if k == 0:
            return np.arange(1, self.q + 2)
        i = x - level_offset(self.q, k)
        start = level_offset(self.q, k + 1) + i * self.q
        return np.arange(start, start + self.q)

    def neighbors(self, x: int) -> np.ndarray:
        x = self.check_vertex(x)
        row = self.adjacency.indptr
        return np.sort(self.adjacency.indices[row[x]:row[x + 1]])

    def address(self, x: int) -> tuple[int, ...]:
        x = self.check_vertex(x)
        word = []
        while x != 0:
            p = int(self.parent[x])
            k = int(self.depths[x])
            i = x - level_offset(self.q, k)
            word.append(i if k == 1 else i % self.q)
            x = p
        return tuple(reversed(word))

    def vertex_id(self, address: Sequence[int]) -> int:
        k = len(address)
        if k > self.depth:
            raise DepthInsufficient(f"address of length {k} deeper than truncation depth {self.depth}")
        if k == 0:
            return 0
        if not 0 <= address[0] <= self.q:
            raise InvalidParameter(f"bad first letter {address[0]}")
        idx = int(address[0])
        for a in address[1:]:
            if not 0 <= a < self.q:
                raise InvalidParameter(f"bad letter {a}")
            idx = idx * self.q + int(a)
        return level_offset(self.q, k) + idx

    def common_depth(self, xs, ys) -> np.ndarray:
        """Depth of the last common ancestor, broadcasting ``xs`` against ``ys``."""
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        dx, dy = self.depths[xs], self.depths[ys]
        top = int(min(dx.max(initial=0), dy.max(initial=0)))
        j = np.zeros(np.broadcast(xs, ys).shape, dtype=np.int64)
        for k in range(1, top + 1):
            ax = self.ancestors[k, xs]
            ay = self.ancestors[k, ys]
            j += (ax == ay) & (ax >= 0)
        return j

    def distance_matrix(self, xs, ys) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        j = self.common_depth(xs[:, None], ys[None, :])
        return self.depths[xs][:, None] + self.depths[ys][None, :] - 2 * j

    def bfs_distances(self, x: int) -> np.ndarray:
        """Graph distances from x by breadth-first search (test oracle)."""
        x = self.check_vertex(x)
        dist = np.full(self.n, -1, dtype=np.int64)
        dist[x] = 0
        queue = deque([x])
        indptr, indices = self.adjacency.indptr, self.adjacency.indices
        while queue:
            u = queue.popleft()
            for v in indices[indptr[u]:indptr[u + 1]]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist


def build_truncated_tree(q: int, D: int) -> TruncatedTree:
    return TruncatedTree(q, D)


def distance(t: TruncatedTree, x: int, y: int) -> int:
    """Combinatorial distance |x| + |y| - 2 |common prefix|."""
    x, y = t.check_vertex(x), t.check_vertex(y)
    j = int(t.common_depth(np.array([x]), np.array([y]))[0])
    return int(t.depths[x] + t.depths[y] - 2 * j)


@dataclass(frozen=True)
class RayClass:
    """Cylinder of rays through the vertex ``vertex`` at depth ``len(cylinder)``."""

    cylinder: tuple[int, ...]
    vertex: int
    weight: Fraction

    @property
    def depth(self) -> int:
        return len(self.cylinder)


def boundary_cylinders(t: TruncatedTree, depth: int | None = None) -> list[RayClass]:
    """All cylinders at the given depth (default: the truncation depth)."""
    c = t.depth if depth is None else int(depth)
    if not 1 <= c <= t.depth:
        raise InvalidParameter(f"cylinder depth {c} outside [1, {t.depth}]")
    w = Fraction(1, sphere_size(t.q, c))
    return [RayClass(t.address(v), int(v), w) for v in t.level(c)]


def ray_through(t: TruncatedTree, x: int, depth: int | None = None) -> RayClass:
    """The first cylinder (in id order) at ``depth`` whose ray passes through x."""
    x = t.check_vertex(x)
    c = t.depth if depth is None else int(depth)
    word = list(t.address(x))
    if len(word) > c:
        raise DepthInsufficient(f"vertex {x} is deeper than cylinder depth {c}")
    word += [0] * (c - len(word))
    if not word:
        word = [0]
    v = t.vertex_id(word)
    return RayClass(tuple(word), v, Fraction(1, sphere_size(t.q, c)))


def _check_busemann_depth(t: TruncatedTree, ray_depth: int, xs: np.ndarray) -> None:
    if xs.size and int(t.depths[xs].max()) + 1 >= ray_depth:
        raise DepthInsufficient(
            f"Busemann value needs |x| + 1 < {ray_depth}; deepest x has |x| = {int(t.depths[xs].max())}"
        )


def busemann_matrix(t: TruncatedTree, ray_vertices, xs) -> np.ndarray:
    """``b[i, j] = b_{omega_i}(x_j)`` for cylinders through ``ray_vertices``."""
    rv = np.asarray(ray_vertices, dtype=np.int64)
    xs = np.asarray(xs, dtype=np.int64)
    if rv.size:
        c = t.depths[rv]
        if np.any(c != c[0]):
            raise InvalidParameter("all cylinders must share one depth")
        _check_busemann_depth(t, int(c[0]), xs)
    j = t.common_depth(rv[:, None], xs[None, :])
    return 2 * j - t.depths[xs][None, :]


def busemann(t: TruncatedTree, omega: RayClass, x: int) -> int:
    """b_omega(x) = |x_omega| - d(x, x_omega)."""
    x = t.check_vertex(x)
    return int(busemann_matrix(t, [omega.vertex], [x])[0, 0])


@dataclass
class FiniteGraph:
    """A finite simple graph with dense integer vertices 0..n-1.

    ``labels[i]`` is the original label of vertex i. ``gamma0`` is the marked
    core and ``end_roots`` the roots x_l of the ends (both optional).
    """

    n: int
    edges: list[tuple[int, int]]
    labels: list = field(default_factory=list)
    q: int | None = None
    gamma0: list[int] | None = None
    end_roots: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.labels:
            self.labels = list(range(self.n))
        seen = set()
        clean = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise InvalidStructure(f"self-loop at vertex {self.labels[u]}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise InvalidStructure(f"edge ({u}, {v}) references unknown vertex")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise InvalidStructure(f"duplicate edge {key}")
            seen.add(key)
            clean.append(key)
        self.edges = clean

    def adjacency_lists(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return [sorted(a) for a in adj]

    def degree(self, v: int) -> int:
        return sum(1 for e in self.edges if v in e)

    def is_connected(self, subset: Iterable[int] | None = None) -> bool:
        nodes = set(range(self.n)) if subset is None else set(subset)
        if not nodes:
            return True
        adj = self.adjacency_lists()
        start = next(iter(nodes))
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v in nodes and v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen == nodes

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int64)
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1
        return a


def graph_from_dict(data: dict) -> FiniteGraph:
    """Build a :class:`FiniteGraph` from the JSON schema.

    ``{"q": int, "vertices": [int], "edges": [[int, int]], "gamma0": [int],
    "ends": [{"root": int}]}``; ``gamma0`` and ``ends`` are optional.
    Vertex labels are arbitrary integers and are reindexed densely.
    """
    try:
        labels = [int(v) for v in data["vertices"]]
        raw_edges = [(int(a), int(b)) for a, b in data["edges"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"malformed graph JSON: {exc}") from exc
    if len(set(labels)) != len(labels):
        raise InputFormatError("duplicate vertex labels")
    index = {lab: i for i, lab in enumerate(labels)}
    try:
        edges = [(index[a], index[b]) for a, b in raw_edges]
        gamma0 = [index[int(v)] for v in data["gamma0"]] if data.get("gamma0") is not None else None
        roots = [index[int(e["root"])] for e in data.get("ends", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"graph JSON references unknown vertex: {exc}") from exc
    q = data.get("q")
    return FiniteGraph(len(labels), edges, labels, None if q is None else int(q), gamma0, roots)


def load_graph_json(path: str | Path) -> FiniteGraph:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc
    return graph_from_dict(data)
