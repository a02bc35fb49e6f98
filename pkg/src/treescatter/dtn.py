"""
Dirichlet-to-Neumann operators on finite graphs and transmission
coefficients computed from them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DirichletSingular, ExceptionalParameter, InvalidParameter, InvalidStructure
from .potential import NonlocalPotential
from .scattering import COND_LIMIT, ends_depth
from .spectral import SpectralParam
from .tree import TruncatedTree

DIRICHLET_TOL = 1e-10


@dataclass
class BoundaryProblem:
    """A matrix B on the vertices of a finite graph with a marked boundary.

    ``B[i, j]`` must vanish for i != j unless {i, j} is an edge (checked when
    ``edges`` is given).
    """

    B: np.ndarray
    boundary: np.ndarray
    edges: list[tuple[int, int]] | None = None

    def __post_init__(self):
        self.B = np.asarray(self.B)
        n = self.B.shape[0]
        if self.B.shape != (n, n):
            raise InvalidStructure("B must be square")
        self.boundary = np.asarray(self.boundary, dtype=np.int64)
        mask = np.ones(n, dtype=bool)
        mask[self.boundary] = False
        self.interior = np.flatnonzero(mask)
        if self.edges is not None:
            allowed = np.eye(n, dtype=bool)
            for u, v in self.edges:
                allowed[u, v] = allowed[v, u] = True
            if np.any((self.B != 0) & ~allowed):
                raise InvalidStructure("B has an entry off the edges and diagonal")

    def blocks(self):
        b, i = self.boundary, self.interior
        B = self.B
        return B[np.ix_(b, b)], B[np.ix_(b, i)], B[np.ix_(i, b)], B[np.ix_(i, i)]


def _check_interior(B0: np.ndarray) -> None:
    if B0.size == 0:
        return
    sv = np.linalg.svd(B0, compute_uv=False)
    if sv[-1] <= DIRICHLET_TOL * max(1.0, sv[0]):
        raise DirichletSingular(f"interior block singular (sigma_min = {sv[-1]:.3e})")


def dirichlet_solve(p: BoundaryProblem, f) -> np.ndarray:
    """The unique F with F = f on the boundary and (B F)(l) = 0 at interior l."""
    f = np.asarray(f)
    _, _, Bib, B0 = p.blocks()
    _check_interior(B0)
    F = np.zeros(p.B.shape[0], dtype=np.result_type(p.B, f, float))
    F[p.boundary] = f
    if p.interior.size:
        F[p.interior] = np.linalg.solve(B0, -Bib @ f)
    return F


def dtn_operator(p: BoundaryProblem) -> np.ndarray:
    """Schur complement B_bb - B_bi B0^{-1} B_ib (the DtN matrix on the boundary)."""
    Bbb, Bbi, Bib, B0 = p.blocks()
    _check_interior(B0)
    if p.interior.size == 0:
        return Bbb.copy()
    return Bbb - Bbi @ np.linalg.solve(B0, Bib)


def dtn_by_columns(p: BoundaryProblem) -> np.ndarray:
    """DtN built column by column from Dirichlet solves (reference construction)."""
    L = p.boundary.size
    out = np.empty((L, L), dtype=np.result_type(p.B, float))
    for l in range(L):
        e = np.zeros(L)
        e[l] = 1.0
        out[:, l] = (p.B @ dirichlet_solve(p, e))[p.boundary]
    return out


def ball_problem(t: TruncatedTree, W: NonlocalPotential, s: SpectralParam, n: int) -> BoundaryProblem:
    """B = (A0 + W)|_{B_n} - lambda_s I with the depth-n sphere as boundary."""
    if n > t.depth:
        raise InvalidParameter(f"ball radius {n} exceeds truncation depth {t.depth}")
    ball = t.ball(n)
    A = t.adjacency[ball][:, ball].toarray().astype(complex)
    if W.support.size:
        idx = W.support
        A[np.ix_(idx, idx)] += W.matrix(idx)
    B = A - s.lam * np.eye(ball.size)
    return BoundaryProblem(B, t.level(n))


def tau_via_dtn(t: TruncatedTree, W: NonlocalPotential, s, n: int | None = None) -> np.ndarray:
    """Transmission matrix tau[l, l'] from the DtN operator of the ball B_n.

    tau = -alpha^(-2n) [ (1/C) ((DN + q^(1/2+is) I)^(-1))^T + A ],
    A[l, l'] = alpha^d(x_l, x_l'). The transpose only matters for
    non-symmetric (complex Hermitian) potentials.
    """
    s = s if isinstance(s, SpectralParam) else SpectralParam(t.q, s)
    n = ends_depth(t, W) if n is None else int(n)
    if n < ends_depth(t, W):
        raise InvalidParameter(f"n = {n} too small for the support of W")
    p = ball_problem(t, W, s, n)
    DN = dtn_operator(p)
    a = s.alpha
    M = DN + t.q * a * np.eye(DN.shape[0])
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ExceptionalParameter(f"DN + q alpha I singular at s = {s.s}")
    ends = p.boundary
    Amat = a ** t.distance_matrix(ends, ends)
    return -(a ** (-2 * n)) * (np.linalg.inv(M).T / s.C + Amat)


def dirichlet_spectrum(t: TruncatedTree, W: NonlocalPotential, n: int) -> np.ndarray:
    """Eigenvalues of (A0 + W) compressed to B_{n-1}; lambda_s here makes the Dirichlet problem singular."""
    ball = t.ball(n - 1)
    A = t.adjacency[ball][:, ball].toarray().astype(complex)
    if W.support.size:
        idx = W.support
        A[np.ix_(idx, idx)] += W.matrix(idx)
    return np.linalg.eigvalsh(A)


def padding_drift(t: TruncatedTree, W: NonlocalPotential, s, n: int) -> float:
    """Max |tau_{n+1}[l, l'] - tau_n[parent l, parent l']| over the finer ends.

    Enlarging the ball by one shell splits each end into q sub-ends with the
    same transmission coefficients once the radial normalization is accounted
    for: tau is defined against q^((-1/2+is)|x|), which does not depend on n.
    """
    tn = tau_via_dtn(t, W, s, n)
    tn1 = tau_via_dtn(t, W, s, n + 1)
    ends = t.level(n)
    fine = t.level(n + 1)
    par = np.searchsorted(ends, t.parent[fine])
    return float(np.max(np.abs(tn1 - tn[np.ix_(par, par)])))
