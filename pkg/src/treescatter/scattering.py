"""
Stationary scattering theory for A = A0 + W on T_q.

Generalized eigenfunctions e(., omega, s) are obtained from the reduced
Lippmann-Schwinger system on a cutoff set X containing the support K of W:

    (I - G0_XX(s) W_XX) a = e0_X(omega, s),
    e(x) = e0(x) + sum_{y in X} G0(s; x, y) (W a)(y).

Everything else (exceptional set, point spectrum, deformed Fourier-Helgason
transform, resolvent, correlations, T-matrix, transmission coefficients and
on-shell unitarity) is built on top of this solve.

Boundary values on the band: a real s in (0, tau/2) corresponds to
Im lambda -> 0^-, and tau - s to Im lambda -> 0^+.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    BandEdgeSingularity,
    ExceptionalInterval,
    ExceptionalParameter,
    InconclusiveRange,
    InvalidParameter,
    OutOfBand,
    SingularParameter,
)
from .free import green0, plane_wave_matrix
from .potential import NonlocalPotential, hat_K
from .spectral import (
    SpectralParam,
    alpha_derivative,
    band_edge,
    circle_quadrature,
    dos_density,
    lambda_of,
    mu_density,
    on_shell_weight,
    param_of_energy,
    period,
    s_minus,
    s_of_lambda,
    s_plus,
)
from .tree import TruncatedTree, boundary_cylinders, sphere_size

COND_LIMIT = 1e10


def _as_param(q: int, s) -> SpectralParam:
    return s if isinstance(s, SpectralParam) else SpectralParam(q, s)


def _ray_grid(t: TruncatedTree, depth: int | None) -> tuple[np.ndarray, np.ndarray]:
    rays = boundary_cylinders(t, depth)
    return (np.array([r.vertex for r in rays], dtype=np.int64),
            np.array([float(r.weight) for r in rays]))


class ScatteringProblem:
    """A potential on a truncation together with a cutoff set X containing K.

    Parameters
    ----------
    t : TruncatedTree
    W : NonlocalPotential
    chi : array of vertex ids, optional
        Support of the cutoff function; the support of W is always added.
    """

    def __init__(self, t: TruncatedTree, W: NonlocalPotential, chi=None):
        if W.q != t.q:
            raise InvalidParameter(f"potential built for q={W.q}, tree has q={t.q}")
        self.t = t
        self.W = W
        X = W.support if chi is None else np.union1d(np.asarray(chi, dtype=np.int64), W.support)
        self.X = np.asarray(X, dtype=np.int64)
        self.WX = W.matrix(self.X)
        self.dXX = t.distance_matrix(self.X, self.X)

    @property
    def q(self) -> int:
        return self.t.q

    def operator(self, s: SpectralParam) -> np.ndarray:
        """I - G0_XX(s) W_XX."""
        return np.eye(self.X.size) - green0(s, self.dXX) @ self.WX

    def solve(self, s, ray_vertices) -> "ScatteringSolution":
        s = _as_param(self.q, s)
        rv = np.atleast_1d(np.asarray(ray_vertices, dtype=np.int64))
        e0X = plane_wave_matrix(self.t, rv, self.X, s).T  # (|X|, R)
        if self.X.size == 0:
            return ScatteringSolution(self, s, rv, e0X)
        M = self.operator(s)
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise ExceptionalParameter(f"Lippmann-Schwinger system singular at s = {s.s} (cond {cond:.3e})")
        return ScatteringSolution(self, s, rv, np.linalg.solve(M, e0X))


@dataclass
class ScatteringSolution:
    """Generalized eigenfunctions e(., omega_r, s) for a batch of rays.

    ``a[:, r]`` is the restriction of e(., omega_r, s) to the cutoff set and
    ``g = W a`` drives the scattered wave sum_y G0(x, y) g(y).
    """

    problem: ScatteringProblem
    s: SpectralParam
    ray_vertices: np.ndarray
    a: np.ndarray
    g: np.ndarray = field(init=False)

    def __post_init__(self):
        self.g = self.problem.WX @ self.a

    def scattered(self, xs) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
        p = self.problem
        if p.X.size == 0:
            return np.zeros((self.ray_vertices.size, xs.size), dtype=complex)
        G = green0(self.s, p.t.distance_matrix(xs, p.X))
        return (G @ self.g).T

    def evaluate(self, xs) -> np.ndarray:
        """``E[r, j] = e(x_j, omega_r, s)``."""
        xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
        e0 = plane_wave_matrix(self.problem.t, self.ray_vertices, xs, self.s)
        return e0 + self.scattered(xs)

    def tail_coefficient(self, x: int) -> np.ndarray:
        """(e - e0)(x) / q^((-1/2+is)|x|) for each ray; constant deep inside an end."""
        k = int(self.problem.t.depths[x])
        return self.scattered([x])[:, 0] / self.s.alpha ** k


def ls_solve(t: TruncatedTree, W: NonlocalPotential, rays, s, chi=None) -> ScatteringSolution:
    """Solve the reduced Lippmann-Schwinger system for one ray or a batch of rays.

    ``rays`` is a :class:`RayClass`, a list of them, or an array of cylinder vertices.
    """
    if hasattr(rays, "vertex"):
        rv = [rays.vertex]
    else:
        rv = [getattr(r, "vertex", r) for r in np.atleast_1d(np.asarray(rays, dtype=object))]
    return ScatteringProblem(t, W, chi).solve(s, np.asarray(rv, dtype=np.int64))


def eigen_residual(sol: ScatteringSolution, xs) -> float:
    """max |(lambda_s - A) e(x)| over the given vertices (all neighbours must be evaluable)."""
    p = sol.problem
    t = p.t
    xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
    nbrs = [t.neighbors(x) for x in xs]
    if any(n.size != (t.q + 1) for n in nbrs):
        raise InvalidParameter("residual requested at a vertex on the truncation boundary")
    pts = np.unique(np.concatenate([xs] + nbrs + [p.X]))
    E = sol.evaluate(pts)
    col = {int(v): i for i, v in enumerate(pts)}
    Xi = [col[int(v)] for v in p.X]
    WE = np.zeros_like(E)
    if p.X.size:
        WE[:, Xi] = E[:, Xi] @ p.WX.T
    worst = 0.0
    lam = sol.s.lam
    for x, n in zip(xs, nbrs):
        r = lam * E[:, col[int(x)]] - E[:, [col[int(v)] for v in n]].sum(axis=1) - WE[:, col[int(x)]]
        worst = max(worst, float(np.max(np.abs(r))))
    return worst


# ----------------------------------------------------------------- exceptional set


@dataclass
class ExceptionalSet:
    """Relative smallest-singular-value profile of I - chi G0 W over an s-grid."""

    q: int
    s_grid: np.ndarray
    sigma_rel: np.ndarray
    threshold: float
    points: list[float]
    intervals: list[tuple[float, float]]

    def contains(self, s: float) -> bool:
        return any(lo <= s <= hi for lo, hi in self.intervals)

    def intersects(self, lo: float, hi: float) -> bool:
        return any(a <= hi and lo <= b for a, b in self.intervals)

    @property
    def energies(self) -> list[float]:
        return [float(np.real(lambda_of(self.q, s))) for s in self.points]


def _sigma_rel(prob: ScatteringProblem, s: float) -> float:
    if prob.X.size == 0:
        return 1.0
    sv = np.linalg.svd(prob.operator(SpectralParam(prob.q, s)), compute_uv=False)
    return float(sv[-1] / sv[0])


def _det(prob: ScatteringProblem, s: complex) -> complex:
    return complex(np.linalg.det(prob.operator(SpectralParam(prob.q, s))))


def _refine_zero(prob: ScatteringProblem, s0: float, h: float) -> float:
    """Secant iteration on det(I - G0 W), which is analytic in s."""
    a, b = complex(s0), complex(s0 + 1e-3 * h)
    fa, fb = _det(prob, a), _det(prob, b)
    for _ in range(60):
        if fb == fa:
            break
        c = b - fb * (b - a) / (fb - fa)
        if abs(c - b) > h:
            break
        a, fa, b = b, fb, c
        fb = _det(prob, b)
        if abs(b - a) < 1e-15 * max(1.0, abs(b)):
            break
    return b.real if abs(b.imag) < 1e-10 and abs(b.real - s0) <= h else s0


def exceptional_scan(t: TruncatedTree, W: NonlocalPotential, s_grid=None, threshold: float = 1e-8,
                     chi=None, refine: bool = True) -> ExceptionalSet:
    """Scan sigma_min / sigma_max of I - chi G0(lambda_s) W over real s.

    Grid points below ``threshold`` are flagged. Each discrete local minimum
    is also refined by bounded minimization between its neighbours followed by
    a secant iteration on the determinant, since isolated zeros
    generally fall between grid nodes. A flagged point s* is
    reported with the interval [s* - h, s* + h], h the local grid step.
    """
    prob = ScatteringProblem(t, W, chi)
    grid = circle_quadrature(t.q, 512)[0] if s_grid is None else np.asarray(s_grid, dtype=float)
    prof = np.array([_sigma_rel(prob, s) for s in grid])
    points: list[float] = []
    steps = np.diff(grid)
    h = float(np.max(steps)) if steps.size else period(t.q)
    for k in range(grid.size):
        if prof[k] < threshold:
            points.append(float(grid[k]))
    if refine and grid.size >= 3:
        for k in range(1, grid.size - 1):
            if prof[k] <= prof[k - 1] and prof[k] <= prof[k + 1] and prof[k] >= threshold:
                res = minimize_scalar(lambda s: _sigma_rel(prob, s), bounds=(grid[k - 1], grid[k + 1]),
                                      method="bounded", options={"xatol": 1e-14, "maxiter": 500})
                x = float(res.x)
                if res.fun >= threshold:
                    x = _refine_zero(prob, x, float(grid[k + 1] - grid[k - 1]))
                if _sigma_rel(prob, x) < threshold:
                    points.append(x)
    points.sort()
    intervals: list[tuple[float, float]] = []
    for p in points:
        lo, hi = p - h, p + h
        if intervals and lo <= intervals[-1][1]:
            intervals[-1] = (intervals[-1][0], hi)
        else:
            intervals.append((lo, hi))
    return ExceptionalSet(t.q, grid, prof, threshold, points, intervals)


# ----------------------------------------------------------------- point spectrum


@dataclass
class Eigenpair:
    """An l^2 eigenfunction of A.

    ``vertices``/``values`` carry the restriction to a finite set. For embedded
    eigenvalues this is the whole support; for eigenvalues off the band the
    function is G0(lambda) applied to ``source`` (= W f) on ``vertices``.
    """

    lam: float
    vertices: np.ndarray
    values: np.ndarray
    source: np.ndarray | None = None

    def evaluate(self, t: TruncatedTree, xs) -> np.ndarray:
        xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
        if self.source is None:
            index = {int(v): i for i, v in enumerate(self.vertices)}
            return np.array([self.values[index[int(x)]] if int(x) in index else 0.0 for x in xs], dtype=complex)
        s = param_of_energy(t.q, self.lam)
        return green0(s, t.distance_matrix(xs, self.vertices)) @ self.source


def _null_basis(M: np.ndarray, tol: float) -> np.ndarray:
    if M.shape[0] == 0:
        return np.eye(M.shape[1], dtype=complex)
    u, sv, vh = np.linalg.svd(M)
    rank = int(np.sum(sv > tol))
    return vh[rank:].conj().T


def pp_embedded(t: TruncatedTree, W: NonlocalPotential, tol: float = 1e-10) -> list[Eigenpair]:
    """Eigenvalues in I_q with eigenfunctions supported in K-hat.

    Finds the largest subspace of functions on K-hat that is invariant under
    the compression H of A and annihilated by the outside-neighbour sums, then
    diagonalizes H there.
    """
    if W.is_zero:
        return []
    Kh = hat_K(W, t)
    index = {int(v): i for i, v in enumerate(Kh)}
    H = W.matrix(Kh) + t.adjacency[Kh][:, Kh].toarray()
    outside = sorted({int(u) for v in Kh for u in t.neighbors(v) if int(u) not in index})
    B = np.zeros((len(outside), Kh.size), dtype=complex)
    for i, u in enumerate(outside):
        for v in t.neighbors(u):
            if int(v) in index:
                B[i, index[int(v)]] = 1.0
    scale = max(1.0, float(np.abs(H).max()))
    V = _null_basis(B, tol)
    while V.shape[1]:
        HV = H @ V
        resid = HV - V @ (V.conj().T @ HV)
        keep = _null_basis(resid, tol * scale)
        if keep.shape[1] == V.shape[1]:
            break
        V = V @ keep
        V, _ = np.linalg.qr(V)
    if V.shape[1] == 0:
        return []
    evals, evecs = np.linalg.eigh(V.conj().T @ H @ V)
    edge = band_edge(t.q)
    out = []
    for lam, c in zip(evals, evecs.T):
        if abs(lam) <= edge + tol:
            f = V @ c
            f = f / np.linalg.norm(f)
            out.append(Eigenpair(float(lam), Kh.copy(), f))
    return out


def _green_on(t, lam, K):
    s = param_of_energy(t.q, lam)
    return green0(s, t.distance_matrix(K, K)), s


def _green_derivative(t, lam, K):
    s = param_of_energy(t.q, lam)
    a = s.alpha
    da = alpha_derivative(t.q, lam, a)
    C = a / (1 - a * a)
    dC = da * (1 + a * a) / (1 - a * a) ** 2
    d = t.distance_matrix(K, K)
    return dC * a**d + C * d * a ** np.maximum(d - 1, 0) * da


class _Inertia:
    def __init__(self, t, W):
        self.t = t
        self.K = W.support
        WK = W.matrix(self.K)
        w, v = np.linalg.eigh(WK)
        keep = np.abs(w) > 1e-12 * max(1.0, np.abs(w).max())
        self.lam_r = w[keep]
        self.V = v[:, keep]

    def H(self, lam: float) -> np.ndarray:
        G, _ = _green_on(self.t, lam, self.K)
        return np.diag(1.0 / self.lam_r) - self.V.conj().T @ G @ self.V

    def negatives(self, lam: float) -> int:
        return int(np.sum(np.linalg.eigvalsh(self.H(lam)) < 0))


def _roots(inertia: _Inertia, lo: float, hi: float, nlo: int, nhi: int, tol: float, out: list):
    count = nlo - nhi
    if count <= 0:
        return
    if hi - lo <= tol:
        out.append(((lo + hi) / 2, count))
        return
    mid = (lo + hi) / 2
    nmid = inertia.negatives(mid)
    _roots(inertia, lo, mid, nlo, nmid, tol, out)
    _roots(inertia, mid, hi, nmid, nhi, tol, out)


def pp_outside(t: TruncatedTree, W: NonlocalPotential, tol: float = 1e-12,
               edge_tol: float = 1e-9) -> list[Eigenpair]:
    """Eigenvalues of A outside I_q, with l^2-normalized eigenfunctions.

    With W = V diag(w) V* (nonzero w), lambda off I_q is an eigenvalue iff
    H(lambda) = diag(1/w) - V* G0(lambda) V is singular. H is Hermitian and
    increasing in lambda on each side of the band, so its count of negative
    eigenvalues drops by one at every eigenvalue of A; roots are bracketed by
    bisection on this count down to ``tol``.
    """
    if W.is_zero:
        return []
    inertia = _Inertia(t, W)
    if inertia.lam_r.size == 0:
        return []
    edge = band_edge(t.q)
    top = (t.q + 1) + W.norm() + 1.0
    n_inf = int(np.sum(inertia.lam_r < 0))
    roots: list[tuple[float, int]] = []
    for lo, hi, side in ((edge, top, +1), (-top, -edge, -1)):
        at_edge = edge * side
        ev = np.linalg.eigvalsh(_edge_H(inertia, at_edge))
        if np.min(np.abs(ev)) < edge_tol:
            raise InconclusiveRange(f"H is singular at the band edge {at_edge}; eigenvalue may sit at the edge")
        n_edge = int(np.sum(ev < 0))
        if side > 0:
            _roots(inertia, lo, hi, n_edge, n_inf, tol, roots)
        else:
            _roots(inertia, lo, hi, n_inf, n_edge, tol, roots)
    out = []
    for lam, mult in sorted(roots):
        Hm = inertia.H(lam)
        w, c = np.linalg.eigh(Hm)
        order = np.argsort(np.abs(w))[:mult]
        g = inertia.V @ c[:, order]  # sources W f, one column per eigenfunction
        dG = _green_derivative(t, lam, inertia.K)
        gram = -(g.conj().T @ dG @ g)
        gram = (gram + gram.conj().T) / 2
        ev, U = np.linalg.eigh(gram)
        g = g @ U / np.sqrt(ev)
        G, _ = _green_on(t, lam, inertia.K)
        for j in range(mult):
            out.append(Eigenpair(float(lam), inertia.K.copy(), G @ g[:, j], g[:, j].copy()))
    return out


def _edge_H(inertia: _Inertia, edge_energy: float) -> np.ndarray:
    # at the band edge alpha = +-1/sqrt(q) and G0 is real and finite
    q = inertia.t.q
    a = np.sign(edge_energy) / np.sqrt(q)
    d = inertia.t.distance_matrix(inertia.K, inertia.K)
    G = a / (1 - a * a) * a**d
    return np.diag(1.0 / inertia.lam_r) - inertia.V.conj().T @ G @ inertia.V


def decay_rate_check(t: TruncatedTree, pair: Eigenpair, eps: float = 0.05) -> bool:
    """Check |f(x)| <= c q^((-1/2 + eps) d(x, K)) along the truncation."""
    if pair.source is None:
        return True
    xs = np.arange(t.n)
    f = np.abs(pair.evaluate(t, xs))
    d = t.distance_matrix(xs, pair.vertices).min(axis=1)
    bound = float(t.q) ** ((-0.5 + eps) * d)
    ratio = f / bound
    return bool(np.all(ratio <= ratio[d == 0].max() * (1 + 1e-9) + 1e-300))


@dataclass
class PurePointSpectrum:
    embedded: list[Eigenpair]
    outside: list[Eigenpair]

    @property
    def all(self) -> list[Eigenpair]:
        return self.embedded + self.outside

    def projection_norm_sq(self, t: TruncatedTree, xs, vals) -> float:
        """sum over the orthonormal eigenbasis of |<phi, f>|^2."""
        vals = np.asarray(vals, dtype=complex)
        basis = np.array([p.evaluate(t, xs) for p in self.all]).reshape(len(self.all), -1)
        if basis.size == 0:
            return 0.0
        # embedded eigenvectors of different eigenvalues are orthogonal; within one
        # eigenvalue they come from eigh and are orthonormal already
        coeff = basis.conj() @ vals
        return float(np.sum(np.abs(coeff) ** 2))


def pure_point_spectrum(t: TruncatedTree, W: NonlocalPotential) -> PurePointSpectrum:
    return PurePointSpectrum(pp_embedded(t, W), pp_outside(t, W))


# ----------------------------------------------------------------- deformed transform


def deformed_fh(t: TruncatedTree, W: NonlocalPotential, f, n_s: int = 512, depth: int | None = None,
                s_nodes=None, chi=None):
    """f_sc(omega, s) = sum_x f(x) conj(e(x, omega, s)) on (cylinders) x (s nodes).

    Returns ``(values, ray_vertices, ray_weights, s_nodes, s_weights)``.
    """
    from .free import _support

    xs, vals = _support(f)
    c = t.depth if depth is None else depth
    rv, rw = _ray_grid(t, c)
    if s_nodes is None:
        s_nodes, s_w = circle_quadrature(t.q, n_s)
    else:
        s_nodes = np.asarray(s_nodes, dtype=float)
        s_w = np.full(s_nodes.size, np.nan)
    prob = ScatteringProblem(t, W, chi)
    out = np.empty((rv.size, s_nodes.size), dtype=complex)
    for k, s in enumerate(s_nodes):
        E = prob.solve(SpectralParam(t.q, s), rv).evaluate(xs)
        out[:, k] = E.conj() @ vals
    return out, rv, rw, s_nodes, s_w


def ac_norm_sq(t: TruncatedTree, W: NonlocalPotential, f, n_s: int = 512, depth: int | None = None) -> float:
    """Quadrature of the integral of |f_sc|^2 over Omega x S^0."""
    vals, _, rw, _, sw = deformed_fh(t, W, f, n_s=n_s, depth=depth)
    return float(np.sum(rw[:, None] * sw[None, :] * np.abs(vals) ** 2))


def completeness_defect(t: TruncatedTree, W: NonlocalPotential, f, pp: PurePointSpectrum | None = None,
                        n_s: int = 512, depth: int | None = None) -> tuple[float, float, float]:
    """Return (||f||^2, ||P_pp f||^2, integral of |f_sc|^2)."""
    from .free import _support

    xs, vals = _support(f)
    pp = pure_point_spectrum(t, W) if pp is None else pp
    return (float(np.sum(np.abs(vals) ** 2)), pp.projection_norm_sq(t, xs, vals),
            ac_norm_sq(t, W, (xs, vals), n_s=n_s, depth=depth))


def _arcs(q: int, J: tuple[float, float]) -> list[tuple[float, float]]:
    lo, hi = J
    edge = band_edge(q)
    if not (-edge <= lo < hi <= edge):
        raise OutOfBand(f"interval {J} is not a sub-interval of the band")
    tau = period(q)
    a, b = s_of_lambda(q, hi), s_of_lambda(q, lo)
    return [(a, b), (tau - b, tau - a)]


def spectral_projector(t: TruncatedTree, W: NonlocalPotential, f, J: tuple[float, float], xs,
                       n_gauss: int = 96, depth: int | None = None, exceptional: ExceptionalSet | None = None,
                       chi=None) -> np.ndarray:
    """(P_J f)(x) by quadrature of the deformed inversion formula over the preimage of J."""
    from .free import _support

    fx, fv = _support(f)
    xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
    arcs = _arcs(t.q, J)
    if exceptional is None:
        grid = np.concatenate([np.linspace(lo, hi, 65) for lo, hi in arcs])
        exceptional = exceptional_scan(t, W, grid, chi=chi)
    for lo, hi in arcs:
        if exceptional.intersects(lo, hi):
            raise ExceptionalInterval(f"interval {J} meets the exceptional set")
    c = t.depth if depth is None else depth
    rv, rw = _ray_grid(t, c)
    prob = ScatteringProblem(t, W, chi)
    gx, gw = np.polynomial.legendre.leggauss(n_gauss)
    out = np.zeros(xs.size, dtype=complex)
    for lo, hi in arcs:
        s_nodes = lo + (gx + 1) * (hi - lo) / 2
        weights = gw * (hi - lo) / 2 * mu_density(t.q, s_nodes)
        for s, w in zip(s_nodes, weights):
            sol = prob.solve(SpectralParam(t.q, s), rv)
            fhat = sol.evaluate(fx).conj() @ fv
            out += w * ((sol.evaluate(xs) * rw[:, None]).T @ fhat)
    return out


# ----------------------------------------------------------------- resolvent & correlations


def full_resolvent(t: TruncatedTree, W: NonlocalPotential, s, xs, ys, chi=None) -> np.ndarray:
    """G(lambda_s; x, y) for x in xs, y in ys from G = G0 + G0 W G."""
    prob = ScatteringProblem(t, W, chi)
    s = _as_param(t.q, s)
    xs = np.atleast_1d(np.asarray(xs, dtype=np.int64))
    ys = np.atleast_1d(np.asarray(ys, dtype=np.int64))
    G0xy = green0(s, t.distance_matrix(xs, ys))
    if prob.X.size == 0:
        return G0xy
    M = prob.operator(s)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularParameter(f"resolvent singular at s = {s.s} (cond {cond:.3e})")
    GK = np.linalg.solve(M, green0(s, t.distance_matrix(prob.X, ys)))
    return G0xy + green0(s, t.distance_matrix(xs, prob.X)) @ (prob.WX @ GK)


def correlation(t: TruncatedTree, W: NonlocalPotential, lam: float, x: int, y: int,
                depth: int | None = None, s=None) -> tuple[complex, complex]:
    """Point-to-point correlation of scattered waves at energy ``lam``.

    ``lhs`` is the cylinder sum of conj(e(x, omega, s)) e(y, omega, s) with s the
    principal preimage (or ``s`` if given). ``rhs`` is the Green's function
    expression -(1/(pi de(lam))) (G+(y, x) - conj G+(x, y)) / (2i), with G+ the
    boundary value from Im lambda > 0. For real symmetric W this reduces to
    -(1/(pi de(lam))) Im G(lam + i0; x, y).
    """
    edge = band_edge(t.q)
    if abs(lam) >= edge:
        if abs(lam) == edge:
            raise BandEdgeSingularity("correlation undefined at the band edge")
        raise OutOfBand(f"energy {lam} outside the band")
    s = s_minus(t.q, lam) if s is None else _as_param(t.q, s)
    rv, rw = _ray_grid(t, depth)
    E = ScatteringProblem(t, W).solve(s, rv).evaluate([x, y])
    lhs = complex(np.sum(rw * E[:, 0].conj() * E[:, 1]))
    G = full_resolvent(t, W, s_plus(t.q, lam), [x, y], [x, y])
    anti = (G[1, 0] - np.conj(G[0, 1])) / 2j
    rhs = complex(-anti / (np.pi * dos_density(t.q, lam)))
    return lhs, rhs


# ----------------------------------------------------------------- T-matrix, tau, S


def t_matrix(t: TruncatedTree, W: NonlocalPotential, rays_in, s_in, rays_out, s_out, chi=None) -> np.ndarray:
    """``T[i, j] = T(omega_i, s; omega'_j, s') = <W e0(omega_i, s), e(omega'_j, s')>``."""
    s_in = _as_param(t.q, s_in)
    s_out = _as_param(t.q, s_out)
    rin = np.atleast_1d(np.asarray(rays_in, dtype=np.int64))
    rout = np.atleast_1d(np.asarray(rays_out, dtype=np.int64))
    K = W.support
    if K.size == 0:
        return np.zeros((rin.size, rout.size), dtype=complex)
    prob = ScatteringProblem(t, W, chi)
    Eout = prob.solve(s_out, rout).evaluate(K)  # (R_out, |K|)
    E0in = plane_wave_matrix(t, rin, K, s_in)  # (R_in, |K|)
    return E0in.conj() @ W.matrix(K) @ Eout.T


def ends_depth(t: TruncatedTree, W: NonlocalPotential) -> int:
    """n with B_{n-2} the smallest ball containing K (n = 2 for W = 0)."""
    return (W.max_depth(t) if W.support.size else 0) + 2


def tau_asymptotic(t: TruncatedTree, W: NonlocalPotential, s, n: int | None = None, chi=None) -> np.ndarray:
    """Transmission matrix ``tau[l, l']`` between the ends rooted on the depth-n sphere.

    tau = C(s) sum_y (W a)(y) q^((1/2 - is) b_{omega'}(y)), read off from the
    closed-form tail of the Lippmann-Schwinger solution.
    """
    s = _as_param(t.q, s)
    n = ends_depth(t, W) if n is None else int(n)
    if n < ends_depth(t, W):
        raise InvalidParameter(f"n = {n} too small for the support of W")
    ends = t.level(n)
    K = W.support
    if K.size == 0:
        return np.zeros((ends.size, ends.size), dtype=complex)
    sol = ScatteringProblem(t, W, chi).solve(s, ends)
    g = W.matrix(K) @ sol.a[np.searchsorted(sol.problem.X, K)]
    E0 = plane_wave_matrix(t, ends, K, s)  # (L, |K|)
    return s.C * (E0 @ g).T


def tau_end_constancy(t: TruncatedTree, W: NonlocalPotential, s, n: int | None = None,
                      rays_per_end: int = 5, rng: np.random.Generator | None = None) -> float:
    """Max deviation of tau over sampled rays (in and out) within each end.

    Rays are drawn as deepest-level cylinders inside each end; the outgoing
    coefficient is measured directly from the scattered wave at a deep vertex.
    """
    s = _as_param(t.q, s)
    n = ends_depth(t, W) if n is None else int(n)
    rng = np.random.default_rng(0) if rng is None else rng
    ref = tau_asymptotic(t, W, s, n)
    ends = t.level(n)
    prob = ScatteringProblem(t, W)
    D = t.depth
    worst = 0.0
    for li, xl in enumerate(ends):
        deep = _descendants_at(t, int(xl), D)
        picks = rng.choice(deep, size=min(rays_per_end, deep.size), replace=False)
        sol = prob.solve(s, picks)
        for lj, xm in enumerate(ends):
            deep_m = _descendants_at(t, int(xm), D)
            probes = rng.choice(deep_m, size=min(rays_per_end, deep_m.size), replace=False)
            for x in probes:
                coef = sol.scattered([x])[:, 0] / s.alpha ** int(t.depths[x])
                worst = max(worst, float(np.max(np.abs(coef - ref[li, lj]))))
    return worst


def _descendants_at(t: TruncatedTree, x: int, depth: int) -> np.ndarray:
    lev = t.level(depth)
    return lev[t.ancestors[int(t.depths[x]), lev] == x]


@dataclass
class OnShellSMatrix:
    """On-shell scattering data between the L ends at a real parameter s.

    ``s_tilde[l, l'] = S(l', -s; l, s) = -(2 pi i / C(s)) tau(s, l, l')``.
    """

    s: SpectralParam
    tau: np.ndarray

    @property
    def s_tilde(self) -> np.ndarray:
        return -2j * np.pi / self.s.C * self.tau


def onshell_s_matrix(t: TruncatedTree, W: NonlocalPotential, s, n: int | None = None) -> OnShellSMatrix:
    s = _as_param(t.q, s)
    return OnShellSMatrix(s, tau_asymptotic(t, W, s, n))


def _half(q: int, s: float) -> int:
    return 1 if (complex(s).real % period(q)) < period(q) / 2 else -1


def unitarity_residual(t: TruncatedTree, W: NonlocalPotential, energy: float, depth: int | None = None,
                       chi=None) -> float:
    """Energy-shell unitarity defect of the T-matrix at ``energy``.

    For on-shell parameters a = (omega, s), b = (omega', s') checks

        (T(a; b) - conj T(b; a)) / (2i)
            = kappa pi sum_{s''} w(s'') int conj T(c; a) T(c; b) d sigma(omega''),

    c = (omega'', s''), where s'' runs over both preimages of the energy with
    on-shell weights w, kappa = +1 when s, s' both lie in (0, tau/2), -1 when
    both lie in (tau/2, tau) and 0 otherwise. For a = b in the lower half this
    is Im T = pi int |T|^2 delta(lambda - energy). Returns the max discrepancy.
    """
    shell = on_shell_weight(t.q, energy)
    K = W.support
    if K.size == 0:
        return 0.0
    c = ends_depth(t, W) if depth is None else depth
    rv, rw = _ray_grid(t, c)
    prob = ScatteringProblem(t, W, chi)
    WK = W.matrix(K)
    E0 = {}
    E = {}
    for p, _ in shell:
        E0[p.s] = plane_wave_matrix(t, rv, K, p)
        E[p.s] = prob.solve(p, rv).evaluate(K)
    T = {(a, b): E0[a].conj() @ WK @ E[b].T for a in E for b in E}
    worst = 0.0
    for a in E:
        for b in E:
            lhs = (T[a, b] - T[b, a].conj().T) / 2j
            ha, hb = _half(t.q, a), _half(t.q, b)
            kappa = ha if ha == hb else 0
            rhs = np.zeros_like(lhs)
            for p, w in shell:
                rhs += w * (T[p.s, a].conj().T * rw[None, :]) @ T[p.s, b]
            worst = max(worst, float(np.max(np.abs(lhs - kappa * np.pi * rhs))))
    return worst
