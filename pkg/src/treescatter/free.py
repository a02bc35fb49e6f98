"""
The free adjacency operator A0 on T_q.

Green's function, incoming plane waves, the Fourier-Helgason transform and
its inverse, closed-walk counts and the Stone-formula density of states.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .errors import DepthInsufficient, InvalidParameter, SingularParameter
from .spectral import (
    SpectralParam,
    alpha_of,
    band_edge,
    c_of,
    circle_quadrature,
    dos_density,
    green_diagonal,
)
from .tree import TruncatedTree, boundary_cylinders, busemann_matrix

_POLE_TOL = 1e-12


def _check_not_pole(q: int, s: complex) -> None:
    lq = np.log(q)
    den = np.exp((0.5 - 1j * s) * lq) - np.exp((-0.5 + 1j * s) * lq)
    if abs(den) < _POLE_TOL:
        raise SingularParameter(f"s = {s} is a pole of the free Green's function")


def green0(s: SpectralParam, d) -> complex | np.ndarray:
    """G0(lambda_s; x, y) = C(s) alpha(s)^d as a function of d = d(x, y)."""
    _check_not_pole(s.q, s.s)
    d = np.asarray(d)
    if np.any(d < 0):
        raise InvalidParameter("distance must be non-negative")
    out = c_of(s.q, s.s) * alpha_of(s.q, s.s) ** d
    return out if np.ndim(out) else complex(out)


def green0_matrix(t: TruncatedTree, s: SpectralParam, xs, ys) -> np.ndarray:
    """Matrix G0(lambda_s; x, y) for x in xs, y in ys."""
    return np.asarray(green0(s, t.distance_matrix(xs, ys)), dtype=complex)


def green0_diagonal(q: int, lam: complex) -> complex:
    """Diagonal Green's function from its closed form in lambda (lambda off I_q)."""
    return green_diagonal(q, lam)


def plane_wave_matrix(t: TruncatedTree, ray_vertices, xs, s: SpectralParam) -> np.ndarray:
    """``E[r, j] = e0(x_j, omega_r, s) = q^((1/2 - is) b_{omega_r}(x_j))``."""
    b = busemann_matrix(t, ray_vertices, xs)
    return np.exp((0.5 - 1j * s.s) * np.log(s.q) * b)


def plane_wave(t: TruncatedTree, x: int, omega, s: SpectralParam) -> complex:
    return complex(plane_wave_matrix(t, [omega.vertex], [x], s)[0, 0])


def apply_adjacency(t: TruncatedTree, f: np.ndarray) -> np.ndarray:
    return t.adjacency @ f


def _support(f) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(f, Mapping):
        xs = np.array(sorted(f), dtype=np.int64)
        vals = np.array([f[int(x)] for x in xs], dtype=complex)
        return xs, vals
    xs, vals = f
    return np.asarray(xs, dtype=np.int64), np.asarray(vals, dtype=complex)


@dataclass
class FHImage:
    """Values of a transform on the grid (boundary cylinders) x (circle nodes).

    ``values[r, k]`` is the value at the cylinder through ``ray_vertices[r]``
    and the node ``s_nodes[k]``. ``ray_weights`` sum to 1 and ``s_weights``
    already include the Plancherel density.
    """

    q: int
    ray_vertices: np.ndarray
    ray_weights: np.ndarray
    s_nodes: np.ndarray
    s_weights: np.ndarray
    values: np.ndarray
    cylinder_depth: int

    def l2_norm_sq(self) -> float:
        w = self.ray_weights[:, None] * self.s_weights[None, :]
        return float(np.sum(w * np.abs(self.values) ** 2))


def _grid(t: TruncatedTree, n_s: int, depth: int | None):
    rays = boundary_cylinders(t, depth)
    rv = np.array([r.vertex for r in rays], dtype=np.int64)
    rw = np.array([float(r.weight) for r in rays])
    s, w = circle_quadrature(t.q, n_s)
    return rv, rw, s, w


def _power_table(q: int, exponent_sign: int, bmin: int, bmax: int, s_nodes: np.ndarray) -> np.ndarray:
    b = np.arange(bmin, bmax + 1)
    return np.exp((0.5 + exponent_sign * 1j * s_nodes[None, :]) * np.log(q) * b[:, None])


def _check_fh_support(t: TruncatedTree, xs: np.ndarray, depth: int) -> None:
    if xs.size and int(t.depths[xs].max()) > depth - 2:
        raise DepthInsufficient(
            f"support reaches depth {int(t.depths[xs].max())}; at most {depth - 2} allowed"
        )


def fh_forward(t: TruncatedTree, f, n_s: int = 512, depth: int | None = None) -> FHImage:
    """Fourier-Helgason transform sum_x f(x) q^((1/2 + is) b_omega(x)) on a grid.

    ``f`` is a mapping vertex -> value or a pair (vertices, values).
    """
    c = t.depth if depth is None else depth
    xs, vals = _support(f)
    _check_fh_support(t, xs, c)
    rv, rw, s, w = _grid(t, n_s, c)
    out = np.zeros((rv.size, s.size), dtype=complex)
    if xs.size:
        b = busemann_matrix(t, rv, xs)
        bmin, bmax = int(b.min()), int(b.max())
        table = _power_table(t.q, +1, bmin, bmax, s)
        for bv in range(bmin, bmax + 1):
            coeff = (b == bv).astype(complex) @ vals
            if np.any(coeff):
                out += np.outer(coeff, table[bv - bmin])
    return FHImage(t.q, rv, rw, s, w, out, c)


def fh_inverse(t: TruncatedTree, image: FHImage, xs) -> np.ndarray:
    """Quadrature of the inversion integral of e0(x) F d sigma d mu at each x."""
    xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
    _check_fh_support(t, xs, image.cylinder_depth)
    b = busemann_matrix(t, image.ray_vertices, xs)  # (R, X)
    bmin, bmax = int(b.min()), int(b.max())
    table = _power_table(t.q, -1, bmin, bmax, image.s_nodes)  # (nb, S)
    weighted = image.values * image.s_weights[None, :] * image.ray_weights[:, None]
    out = np.empty(xs.size, dtype=complex)
    for j in range(xs.size):
        out[j] = np.sum(weighted * table[b[:, j] - bmin])
    return out


def fh_symmetry_defect(t: TruncatedTree, image: FHImage, xs) -> float:
    """Max over x and nodes s of |int e0(x,.,s)F(.,s) - int e0(x,.,-s)F(.,-s)| d sigma.

    Relies on the node set being invariant under s -> tau - s.
    """
    xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
    _check_fh_support(t, xs, image.cylinder_depth)
    b = busemann_matrix(t, image.ray_vertices, xs)
    e = np.exp((0.5 - 1j * image.s_nodes[None, None, :]) * np.log(t.q) * b[:, :, None])
    per_node = np.einsum("r,rxk,rk->xk", image.ray_weights, e, image.values)
    mirrored = per_node[:, ::-1]
    return float(np.max(np.abs(per_node - mirrored)))


def closed_walk_count(t: TruncatedTree, x: int, n: int) -> int:
    """Exact number of closed walks of length n at x, i.e. [A0^n](x, x)."""
    x = t.check_vertex(x)
    if n < 0:
        raise InvalidParameter("walk length must be non-negative")
    if int(t.depths[x]) + n / 2 + 1 > t.depth:
        raise DepthInsufficient(f"walks of length {n} from depth {int(t.depths[x])} feel the truncation")
    v = np.zeros(t.n, dtype=np.int64)
    v[x] = 1
    a = t.adjacency
    for _ in range(n):
        v = a @ v
    return int(v[x])


def stone_dos(q: int, lam: float, eps: float) -> float:
    """(-1/pi) Im G0(lambda + i eps; x, x), the Poisson-smeared density of states."""
    if eps <= 0:
        raise InvalidParameter("eps must be positive")
    return float(-np.imag(green_diagonal(q, lam + 1j * eps)) / np.pi)


def truncated_adjacency(t: TruncatedTree, dense: bool = False):
    a = t.adjacency.astype(float)
    return a.toarray() if dense else sp.csr_matrix(a)


def root_spectral_measure(t: TruncatedTree) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and weights |<delta_O, v>|^2 of the truncated adjacency (dense)."""
    evals, evecs = np.linalg.eigh(truncated_adjacency(t, dense=True))
    return evals, np.abs(evecs[0]) ** 2


def radial_root_measure(q: int, depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Root spectral measure of the truncation via its radial Jacobi matrix.

    The cyclic space of delta_O consists of radial functions, on which the
    adjacency acts as a tridiagonal matrix with off-diagonals sqrt(q+1), sqrt(q), ...
    """
    off = np.full(depth, np.sqrt(q), dtype=float)
    off[0] = np.sqrt(q + 1)
    jac = np.diag(off, 1) + np.diag(off, -1)
    evals, evecs = np.linalg.eigh(jac)
    return evals, evecs[0] ** 2


def histogram_discrepancy(q: int, evals: np.ndarray, weights: np.ndarray, bins: int = 40) -> float:
    """Sup over equal bins of I_q of |atomic mass - density-of-states mass|."""
    edge = band_edge(q)
    edges = np.linspace(-edge, edge, bins + 1)
    emp, _ = np.histogram(np.clip(evals, -edge, edge), bins=edges, weights=weights)
    exact = np.array([integrate.quad(lambda l: dos_density(q, l), lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    return float(np.max(np.abs(emp - exact)))
