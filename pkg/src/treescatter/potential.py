"""
Finitely supported non-local potentials W on T_q.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import DepthInsufficient, InputFormatError, InvalidParameter, InvalidStructure
from .tree import TruncatedTree


class NonlocalPotential:
    """A Hermitian matrix W indexed by tree vertices with finite support K.

    Parameters
    ----------
    q : int
        Branching number of the underlying tree.
    entries : mapping (x, y) -> complex
        Nonzero entries; both triangles must be given and be conjugate.
    """

    def __init__(self, q: int, entries: Mapping[tuple[int, int], complex], atol: float = 0.0):
        self.q = int(q)
        clean: dict[tuple[int, int], complex] = {}
        for (x, y), v in entries.items():
            v = complex(v)
            if v != 0:
                clean[(int(x), int(y))] = v
        for (x, y), v in clean.items():
            w = clean.get((y, x), 0j)
            if abs(v - np.conj(w)) > atol:
                raise InvalidStructure(f"potential not Hermitian at ({x}, {y}): {v} vs conj {np.conj(w)}")
        self.entries = clean
        self.support = np.array(sorted({x for x, _ in clean}), dtype=np.int64)

    @classmethod
    def zero(cls, q: int) -> "NonlocalPotential":
        return cls(q, {})

    @classmethod
    def from_upper(cls, q: int, triples: Iterable[tuple[int, int, complex]]) -> "NonlocalPotential":
        """Build from upper-triangle entries (x <= y), mirroring conjugates."""
        entries: dict[tuple[int, int], complex] = {}
        for x, y, v in triples:
            x, y, v = int(x), int(y), complex(v)
            if x > y:
                raise InputFormatError(f"entry ({x}, {y}) is below the diagonal")
            if x == y and v.imag != 0:
                raise InvalidStructure(f"diagonal entry at {x} is not real")
            if (x, y) in entries:
                raise InputFormatError(f"duplicate entry ({x}, {y})")
            entries[(x, y)] = v
            if x != y:
                entries[(y, x)] = np.conj(v)
        return cls(q, entries)

    @classmethod
    def from_matrix(cls, q: int, vertices, mat: np.ndarray) -> "NonlocalPotential":
        mat = np.asarray(mat)
        vertices = [int(v) for v in vertices]
        entries = {
            (vertices[i], vertices[j]): mat[i, j]
            for i in range(len(vertices))
            for j in range(len(vertices))
            if mat[i, j] != 0
        }
        return cls(q, entries, atol=1e-14)

    @property
    def K(self) -> np.ndarray:
        return self.support

    @property
    def is_zero(self) -> bool:
        return not self.entries

    @property
    def is_real(self) -> bool:
        return all(v.imag == 0 for v in self.entries.values())

    def matrix(self, vertices=None) -> np.ndarray:
        """Dense block of W over ``vertices`` (default K) in the given order."""
        vs = self.support if vertices is None else np.asarray(vertices, dtype=np.int64)
        index = {int(v): i for i, v in enumerate(vs)}
        out = np.zeros((vs.size, vs.size), dtype=complex)
        for (x, y), v in self.entries.items():
            if x in index and y in index:
                out[index[x], index[y]] = v
            elif x in index or y in index:
                raise InvalidParameter("vertex set must contain the whole support")
        return out

    def norm(self) -> float:
        if self.is_zero:
            return 0.0
        return float(np.linalg.norm(self.matrix(), 2))

    def max_depth(self, t: TruncatedTree) -> int:
        return int(t.depths[self.support].max()) if self.support.size else 0

    def to_dict(self) -> dict:
        rows = []
        for (x, y), v in sorted(self.entries.items()):
            if x <= y:
                rows.append([x, y, float(v.real), float(v.imag)])
        return {"q": self.q, "entries": rows}

    def __repr__(self) -> str:
        return f"NonlocalPotential(q={self.q}, |K|={self.support.size}, nnz={len(self.entries)})"


def potential_from_dict(data: dict) -> NonlocalPotential:
    try:
        q = int(data["q"])
        triples = [(int(x), int(y), complex(float(re), float(im))) for x, y, re, im in data["entries"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"malformed potential JSON: {exc}") from exc
    return NonlocalPotential.from_upper(q, triples)


def load_potential_json(path: str | Path) -> NonlocalPotential:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc
    return potential_from_dict(data)


def hat_K_of_set(t: TruncatedTree, K) -> np.ndarray:
    """Smallest superset of K whose complement in T_q has only infinite components.

    On the truncation a complement component is infinite exactly when it
    reaches depth D; this is unambiguous as long as K sits at depth <= D-2.
    """
    K = np.unique(np.asarray(K, dtype=np.int64))
    if K.size == 0:
        return K
    if int(t.depths[K].max()) > t.depth - 2:
        raise DepthInsufficient(f"support reaches depth {int(t.depths[K].max())}; truncation depth {t.depth} too small")
    keep = np.ones(t.n, dtype=bool)
    keep[K] = False
    rest = np.flatnonzero(keep)
    sub = t.adjacency[rest][:, rest]
    ncomp, labels = connected_components(sub, directed=False)
    reaches = np.zeros(ncomp, dtype=bool)
    reaches[labels[t.depths[rest] == t.depth]] = True
    finite = rest[~reaches[labels]]
    return np.union1d(K, finite)


def hat_K(W: NonlocalPotential, t: TruncatedTree) -> np.ndarray:
    return hat_K_of_set(t, W.support)


def compress(rule: Callable[[int, int], complex], K) -> np.ndarray:
    """Dense matrix ``[rule(x, y)]`` over K in the given order."""
    K = [int(k) for k in K]
    return np.array([[rule(x, y) for y in K] for x in K], dtype=complex).reshape(len(K), len(K))


def random_hermitian_potential(t: TruncatedTree, size: int, rng: np.random.Generator,
                               max_depth: int = 2, real: bool = False, scale: float = 1.0) -> NonlocalPotential:
    """Random dense Hermitian W on ``size`` distinct vertices at depth <= max_depth."""
    pool = t.ball(max_depth)
    if size > pool.size:
        raise InvalidParameter("support larger than the ball")
    K = np.sort(rng.choice(pool, size=size, replace=False))
    m = rng.normal(size=(size, size))
    if not real:
        m = m + 1j * rng.normal(size=(size, size))
    m = scale * (m + m.conj().T) / 2
    return NonlocalPotential.from_matrix(t.q, K, m)
