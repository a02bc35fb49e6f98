import numpy as np
import pytest

from treescatter.dtn import (
    BoundaryProblem,
    ball_problem,
    dirichlet_solve,
    dirichlet_spectrum,
    dtn_by_columns,
    dtn_operator,
    padding_drift,
    tau_via_dtn,
)
from treescatter.errors import DirichletSingular, InvalidStructure
from treescatter.potential import NonlocalPotential, random_hermitian_potential
from treescatter.scattering import tau_asymptotic
from treescatter.spectral import SpectralParam, period
from treescatter.tree import TruncatedTree


def _path(lam):
    A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    return BoundaryProblem(A - lam * np.eye(3), [0, 2], edges=[(0, 1), (1, 2)])


def _random_symmetric_problem(rng, n=8, nb=3):
    edges = [(i, i + 1) for i in range(n - 1)] + [(0, n - 1), (1, 5), (2, 6)]
    B = np.diag(rng.normal(size=n)).astype(complex)
    for u, v in edges:
        B[u, v] = B[v, u] = rng.normal() + 1j * rng.normal()
    return BoundaryProblem(B, np.arange(nb), edges=edges)


def test_dirichlet_path_by_hand():
    lam = 0.7
    p = _path(lam)
    F = dirichlet_solve(p, [2.0, -0.5])
    assert F[1] == pytest.approx((2.0 - 0.5) / lam)
    assert np.array_equal(dirichlet_solve(p, [0.0, 0.0]), np.zeros(3))


def test_dirichlet_linearity():
    p = _random_symmetric_problem(np.random.default_rng(0))
    f, g = np.array([1.0, 2.0, -1.0]), np.array([0.5, 0.0, 3.0])
    assert np.allclose(dirichlet_solve(p, 2 * f - g), 2 * dirichlet_solve(p, f) - dirichlet_solve(p, g))


def test_dirichlet_singular():
    with pytest.raises(DirichletSingular):
        dirichlet_solve(_path(0.0), [1.0, 1.0])


def test_off_edge_entry_rejected():
    with pytest.raises(InvalidStructure):
        BoundaryProblem(np.ones((3, 3)), [0, 2], edges=[(0, 1), (1, 2)])


def test_dtn_no_interior():
    B = np.array([[1.0, 2.0], [2.0, 3.0]])
    assert np.array_equal(dtn_operator(BoundaryProblem(B, [0, 1])), B)


def test_dtn_schur_equals_columns_and_is_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(5):
        p = _random_symmetric_problem(rng)
        D = dtn_operator(p)
        assert np.max(np.abs(D - dtn_by_columns(p))) < 1e-12
        assert np.max(np.abs(D - D.T)) < 1e-12


def test_number_of_ends():
    t = TruncatedTree(2, 5)
    p = ball_problem(t, NonlocalPotential.zero(2), SpectralParam(2, 0.4), 3)
    assert p.boundary.size == 12


@pytest.mark.parametrize("q", [2, 3])
def test_tau_vanishes_for_zero_potential(q):
    t = TruncatedTree(q, 5)
    W = NonlocalPotential.zero(q)
    for s in (0.3, 0.9, period(q) - 0.4):
        assert np.max(np.abs(tau_via_dtn(t, W, s, 3))) < 1e-10


def test_tau_two_algorithms_agree():
    rng = np.random.default_rng(2)
    t = TruncatedTree(2, 6)
    W = random_hermitian_potential(t, 4, rng, max_depth=1)
    dirichlet = dirichlet_spectrum(t, W, 3)
    done = 0
    for s in rng.uniform(0.05, period(2) - 0.05, 20):
        lam = SpectralParam(2, s).lam.real
        if np.min(np.abs(dirichlet - lam)) < 1e-3:
            continue
        a = tau_via_dtn(t, W, s, 3)
        b = tau_asymptotic(t, W, s, 3)
        assert np.max(np.abs(a - b)) < 1e-8
        done += 1
        if done == 10:
            break
    assert done == 10


def test_dirichlet_singularity_matches_spectrum():
    t = TruncatedTree(2, 5)
    W = NonlocalPotential.zero(2)
    ev = dirichlet_spectrum(t, W, 3)
    lam = float(ev[np.argmin(np.abs(ev))])
    p = ball_problem(t, W, SpectralParam(2, 0.0), 3)
    p.B = p.B + (2 * np.sqrt(2) - lam) * np.eye(p.B.shape[0])
    with pytest.raises(DirichletSingular):
        dtn_operator(p)


def test_padding_drift_small():
    rng = np.random.default_rng(5)
    t = TruncatedTree(2, 7)
    W = random_hermitian_potential(t, 3, rng, max_depth=1)
    assert padding_drift(t, W, 0.77, 3) < 1e-8
