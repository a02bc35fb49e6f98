"""
The spectral surface S = R/tau Z x iR and the measures living on it.

A point s of S parametrizes the energy lambda_s = q^(1/2+is) + q^(1/2-is).
Real s (the circle S^0) double-covers the band I_q = [-2 sqrt q, 2 sqrt q];
Im s > 0 is the physical sheet where |alpha(s)| < 1/sqrt q.

Boundary values of the resolvent on the band: for real s in (0, tau/2) the
quantities alpha(s), C(s) are the limits from Im lambda < 0, and for real s
in (tau/2, tau) the limits from Im lambda > 0. :func:`s_plus` returns the
parameter for G(lambda + i0).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import BandEdgeSingularity, InvalidParameter, OutOfBand


def period(q: int) -> float:
    """tau = 2 pi / log q."""
    return 2.0 * np.pi / np.log(q)


def band_edge(q: int) -> float:
    return 2.0 * np.sqrt(q)


def _check_q(q) -> int:
    if int(q) != q or q < 2:
        raise InvalidParameter(f"q must be an integer >= 2, got {q!r}")
    return int(q)


def lambda_of(q: int, s):
    """lambda_s = q^(1/2+is) + q^(1/2-is); vectorized over s."""
    s = np.asarray(s, dtype=complex)
    lq = np.log(q)
    out = np.exp((0.5 + 1j * s) * lq) + np.exp((0.5 - 1j * s) * lq)
    return out if out.ndim else complex(out)


def alpha_of(q: int, s):
    """alpha(s) = q^(-1/2+is), the decay rate of the Green's function."""
    s = np.asarray(s, dtype=complex)
    out = np.exp((-0.5 + 1j * s) * np.log(q))
    return out if out.ndim else complex(out)


def c_of(q: int, s):
    """C(s) = 1 / (q^(1/2-is) - q^(-1/2+is)), the diagonal Green's function."""
    s = np.asarray(s, dtype=complex)
    lq = np.log(q)
    out = 1.0 / (np.exp((0.5 - 1j * s) * lq) - np.exp((-0.5 + 1j * s) * lq))
    return out if out.ndim else complex(out)


def dlambda_ds(q: int, s):
    """d lambda_s / ds = i log q (q^(1/2+is) - q^(1/2-is))."""
    s = np.asarray(s, dtype=complex)
    lq = np.log(q)
    out = 1j * lq * (np.exp((0.5 + 1j * s) * lq) - np.exp((0.5 - 1j * s) * lq))
    return out if out.ndim else complex(out)


def f_branch(q: int, lam):
    """Determination of sqrt(lambda^2 - 4q) analytic off I_q with F(lambda) ~ lambda."""
    lam = np.asarray(lam, dtype=complex)
    out = lam * np.sqrt(1.0 - 4.0 * q / lam**2)
    return out if out.ndim else complex(out)


def green_diagonal(q: int, lam):
    """G0(lambda, x, x) = 2q / (lambda (q-1) + (q+1) F(lambda)) for lambda off I_q."""
    lam = np.asarray(lam, dtype=complex)
    out = 2.0 * q / (lam * (q - 1) + (q + 1) * f_branch(q, lam))
    return out if out.ndim else complex(out)


@dataclass(frozen=True)
class SpectralParam:
    """A point of S; the real part is reduced modulo tau."""

    q: int
    s: complex

    def __post_init__(self):
        _check_q(self.q)
        s = complex(self.s)
        tau = period(self.q)
        object.__setattr__(self, "s", complex(s.real % tau, s.imag))

    @property
    def tau(self) -> float:
        return period(self.q)

    @property
    def on_circle(self) -> bool:
        return self.s.imag == 0.0

    @property
    def lam(self) -> complex:
        return lambda_of(self.q, self.s)

    @property
    def alpha(self) -> complex:
        return alpha_of(self.q, self.s)

    @property
    def C(self) -> complex:
        return c_of(self.q, self.s)

    def reflected(self) -> "SpectralParam":
        """The parameter -s (= tau - s on the circle)."""
        return SpectralParam(self.q, -self.s)


def s_of_lambda(q: int, lam) -> float:
    """Principal preimage s in [0, tau/2] of a band energy."""
    q = _check_q(q)
    lam = np.asarray(lam, dtype=float)
    edge = band_edge(q)
    if np.any(np.abs(lam) > edge * (1 + 1e-14)):
        raise OutOfBand(f"lambda outside [-{edge}, {edge}]")
    out = np.arccos(np.clip(lam / edge, -1.0, 1.0)) / np.log(q)
    return out if out.ndim else float(out)


def s_plus(q: int, lam: float) -> SpectralParam:
    """Parameter on S^0 giving the boundary value from Im lambda > 0."""
    return SpectralParam(q, period(q) - s_of_lambda(q, lam))


def s_minus(q: int, lam: float) -> SpectralParam:
    """Parameter on S^0 giving the boundary value from Im lambda < 0."""
    return SpectralParam(q, s_of_lambda(q, lam))


def param_of_energy(q: int, lam: complex) -> SpectralParam:
    """The parameter on the physical sheet with lambda_s = lam, for lam off I_q.

    Uses alpha = (lam - F(lam)) / (2q), the root of q a^2 - lam a + 1 = 0
    with |alpha| < 1/sqrt(q).
    """
    q = _check_q(q)
    lam = complex(lam)
    if lam.imag == 0 and abs(lam.real) <= band_edge(q):
        raise InvalidParameter(f"energy {lam} lies on the band; use s_plus or s_minus")
    a = (lam - f_branch(q, lam)) / (2 * q)
    s = -1j * np.log(a * np.sqrt(q)) / np.log(q)
    return SpectralParam(q, s)


def alpha_derivative(q: int, lam: complex, a: complex) -> complex:
    """d alpha / d lambda from q a^2 - lam a + 1 = 0."""
    return a / (2 * q * a - lam)


def mu_density(q: int, s):
    """Density of the Plancherel measure d mu on S^0 (total mass 1)."""
    s = np.asarray(s, dtype=float)
    lq = np.log(q)
    num = (q + 1) * lq / np.pi * np.sin(s * lq) ** 2
    out = num / (q + 1.0 / q - 2.0 * np.cos(2 * s * lq))
    return out if out.ndim else float(out)


def dos_density(q: int, lam):
    """Density of states (q+1) sqrt(4q - l^2) / (2 pi ((q+1)^2 - l^2)) on I_q, 0 outside."""
    lam = np.asarray(lam, dtype=float)
    inside = np.abs(lam) <= band_edge(q)
    root = np.sqrt(np.clip(np.where(inside, 4.0 * q - lam**2, 0.0), 0.0, None))
    out = np.where(inside, (q + 1) * root / (2 * np.pi * ((q + 1) ** 2 - lam**2)), 0.0)
    return out if out.ndim else float(out)


def on_shell_weight(q: int, a: float) -> list[tuple[SpectralParam, float]]:
    """The delta-measure delta(lambda_s - a) d mu(s) as two weighted points.

    Returns ``[(s(a), w), (tau - s(a), w)]`` with ``w = mu(s)/|dlambda/ds|``;
    the weights sum to the density of states at ``a``.
    """
    q = _check_q(q)
    edge = band_edge(q)
    if abs(a) >= edge:
        if abs(a) == edge:
            raise BandEdgeSingularity(f"on-shell weight undefined at band edge {a}")
        raise OutOfBand(f"energy {a} outside the band")
    s0 = s_of_lambda(q, a)
    out = []
    for s in (s0, period(q) - s0):
        w = mu_density(q, s) / abs(dlambda_ds(q, s))
        out.append((SpectralParam(q, s), float(w)))
    return out


def circle_quadrature(q: int, n: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint trapezoid nodes and weights on [0, tau) for d mu.

    Nodes are offset by half a step so that s = 0 and s = tau/2 (where the
    density vanishes and the band edges sit) are never sampled, and the node
    set is invariant under s -> tau - s. Weights include the density, so
    ``sum(w * g(s))`` approximates the integral of g against d mu.
    """
    if n < 2:
        raise InvalidParameter("need at least two quadrature nodes")
    tau = period(q)
    s = (np.arange(n) + 0.5) * tau / n
    return s, mu_density(q, s) * tau / n


def band_quadrature(q: int, n: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule for d e on I_q via lambda = 2 sqrt(q) cos(theta).

    The node set is mirrored about 0 so odd moments vanish identically.
    """
    if n < 2 or n % 2:
        raise InvalidParameter("band quadrature needs an even node count >= 2")
    x, w = np.polynomial.legendre.leggauss(n // 2)
    theta = (x + 1) * np.pi / 4  # (0, pi/2)
    wt = w * np.pi / 4
    edge = band_edge(q)
    lam = edge * np.cos(theta)
    jac = edge * np.sin(theta)
    dens = dos_density(q, lam) * jac * wt
    return np.concatenate([-lam[::-1], lam]), np.concatenate([dens[::-1], dens])


def band_moment(q: int, n: int, nodes: int = 2000) -> float:
    """Quadrature of the n-th moment of d e; mirrored pairs are summed first, so odd moments are exactly 0."""
    lam, w = band_quadrature(q, nodes)
    h = lam.size // 2
    # one power per mirrored pair: elementwise pow is not exactly odd in floating point
    mag = np.abs(lam[h:]) ** n
    pair = w[h:] * (mag * np.sign(lam[h:]) ** n + mag * np.sign(lam[:h][::-1]) ** n)
    return float(np.sum(pair))


def lorentzian(t):
    return (1.0 / np.pi) / (1.0 + np.asarray(t) ** 2)


def box(t):
    return (np.abs(np.asarray(t)) <= 0.5).astype(float)


def mollified_on_shell(q: int, a: float, eps: float, g: Callable[[np.ndarray], np.ndarray] | None = None,
                       kernel: Callable = lorentzian) -> float:
    """Integral over S^0 of g(s) (1/eps) kernel((lambda_s - a)/eps) d mu(s).

    This is the smeared version of the on-shell measure; as eps -> 0 it
    tends to ``sum(w * g(s))`` over :func:`on_shell_weight`.
    """
    tau = period(q)
    g = (lambda s: np.ones_like(s)) if g is None else g
    s0 = s_of_lambda(q, a)

    def integrand(s):
        lam = lambda_of(q, s).real
        return g(np.asarray(s)) * kernel((lam - a) / eps) / eps * mu_density(q, s)

    total = 0.0
    # split at the preimages of a and a +- eps/2 so the adaptive rule sees the peaks
    edge = band_edge(q)
    cuts = {0.0, tau / 2, tau}
    for e in (a - eps / 2, a, a + eps / 2):
        if abs(e) < edge:
            se = s_of_lambda(q, e)
            cuts.update((se, tau - se))
    cuts = sorted(cuts)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, _ = integrate.quad(lambda s: float(np.real(integrand(s))), lo, hi, limit=400,
                                epsabs=1e-14, epsrel=1e-12)
        total += val
    return total


def richardson_zero(eps, values) -> float:
    """Extrapolate samples ``values[i] = v(eps[i])`` to eps = 0 by polynomial fit."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values)
    if eps.size != values.size or eps.size < 2:
        raise InvalidParameter("need matching ladders of length >= 2")
    scale = eps.max()
    coef = np.polyfit(eps / scale, values, eps.size - 1)
    return coef[-1]
