import numpy as np
import pytest

from treescatter.errors import DepthInsufficient, InvalidParameter, SingularParameter
from treescatter.free import (
    closed_walk_count,
    fh_forward,
    fh_inverse,
    fh_symmetry_defect,
    green0,
    green0_matrix,
    histogram_discrepancy,
    plane_wave,
    plane_wave_matrix,
    radial_root_measure,
    root_spectral_measure,
    stone_dos,
)
from treescatter.spectral import SpectralParam, band_edge, band_moment, dos_density, period
from treescatter.tree import TruncatedTree, busemann_matrix, ray_through


def test_green_resolvent_identity_on_interior():
    t = TruncatedTree(3, 6)
    s = SpectralParam(3, 0.4 + 0.3j)
    y = 5
    g = green0_matrix(t, s, np.arange(t.n), [y])[:, 0]
    r = s.lam * g - t.adjacency @ g
    r[y] -= 1
    assert np.max(np.abs(r[t.interior()])) < 1e-12


def test_green_pole():
    with pytest.raises(SingularParameter):
        green0(SpectralParam(2, -0.5j), 0)
    with pytest.raises(InvalidParameter):
        green0(SpectralParam(2, 0.3), -1)


def test_green_radial_factorization():
    # G0(x, y) = G_rad(y) q^((1/2 - is) b_omega(x)) for y on omega beyond x_omega
    t = TruncatedTree(2, 8)
    s = SpectralParam(2, 0.7 + 0.1j)
    ray = ray_through(t, t.vertex_id((0, 1, 1, 0, 1, 0, 0)), depth=8)
    y = t.vertex_id(ray.cylinder[:6])
    xs = t.ball(3)
    b = busemann_matrix(t, [ray.vertex], xs)[0]
    lhs = green0_matrix(t, s, xs, [y])[:, 0]
    rhs = green0(s, 6) * np.exp((0.5 - 1j * s.s) * np.log(2) * b)
    assert np.max(np.abs(lhs - rhs)) < 1e-13


def test_plane_wave_examples():
    t = TruncatedTree(2, 6)
    s = SpectralParam(2, 0.9)
    ray = ray_through(t, t.vertex_id((2, 1, 0)), depth=6)
    assert plane_wave(t, 0, ray, s) == pytest.approx(1.0)
    x = t.vertex_id(ray.cylinder[:3])
    assert plane_wave(t, x, ray, s) == pytest.approx(2 ** ((0.5 - 1j * 0.9) * 3))


def test_plane_wave_is_eigenfunction():
    rng = np.random.default_rng(0)
    t = TruncatedTree(3, 7)
    xs = t.ball(4)
    rays = rng.choice(t.level(7), size=5, replace=False)
    for s0 in rng.uniform(0, period(3), 5):
        s = SpectralParam(3, s0)
        E = plane_wave_matrix(t, rays, np.arange(t.ball(5).size), s)
        for x in xs:
            nb = t.neighbors(x)
            r = s.lam * E[:, x] - E[:, nb].sum(axis=1)
            assert np.max(np.abs(r)) < 1e-12


def test_fh_examples():
    t = TruncatedTree(2, 5)
    img = fh_forward(t, {0: 1.0}, n_s=64)
    assert np.allclose(img.values, 1.0)
    x = t.vertex_id((1,))
    img = fh_forward(t, {x: 1.0}, n_s=64)
    through = t.ancestors[1, img.ray_vertices] == x
    expected = np.exp((0.5 + 1j * img.s_nodes) * np.log(2))
    assert np.allclose(img.values[through], expected[None, :])


def test_fh_linearity_inversion_parseval_symmetry():
    rng = np.random.default_rng(1)
    t = TruncatedTree(2, 6)
    pool = t.ball(3)
    xs = np.sort(rng.choice(pool, size=5, replace=False))
    f = rng.normal(size=5) + 1j * rng.normal(size=5)
    g = rng.normal(size=5)
    a = fh_forward(t, (xs, f), n_s=256)
    b = fh_forward(t, (xs, g), n_s=256)
    c = fh_forward(t, (xs, 2 * f + g), n_s=256)
    assert np.allclose(c.values, 2 * a.values + b.values)
    back = fh_inverse(t, a, xs)
    assert np.max(np.abs(back - f)) < 1e-8
    assert abs(a.l2_norm_sq() - np.sum(np.abs(f) ** 2)) < 1e-8
    assert fh_symmetry_defect(t, a, pool) < 1e-8


def test_fh_delta_reconstruction():
    t = TruncatedTree(2, 6)
    img = fh_forward(t, {0: 1.0}, n_s=512)
    assert abs(fh_inverse(t, img, [0])[0] - 1) < 1e-8


def test_fh_support_depth():
    t = TruncatedTree(2, 4)
    with pytest.raises(DepthInsufficient):
        fh_forward(t, {int(t.level(3)[0]): 1.0})


def test_closed_walks():
    t = TruncatedTree(3, 6)
    assert closed_walk_count(t, 0, 0) == 1
    assert closed_walk_count(t, 0, 3) == 0
    assert closed_walk_count(t, 0, 2) == 4
    t2 = TruncatedTree(2, 5)
    assert abs(band_moment(2, 4) - closed_walk_count(t2, 0, 4)) < 1e-6
    with pytest.raises(DepthInsufficient):
        closed_walk_count(t2, 0, 10)


def test_stone_formula():
    q = 2
    eps = [1e-2, 1e-3, 1e-4, 1e-5]
    errs = [abs(stone_dos(q, 0.0, e) - dos_density(q, 0.0)) for e in eps]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-5
    assert stone_dos(q, 3 * np.sqrt(q), 1e-6) < 1e-6
    for lam in (0.3, 1.7):
        assert stone_dos(q, lam, 1e-3) == pytest.approx(stone_dos(q, -lam, 1e-3), rel=1e-12)
    with pytest.raises(InvalidParameter):
        stone_dos(q, 0.0, 0.0)


def test_root_measure_dense_equals_radial():
    t = TruncatedTree(2, 6)
    ev, w = root_spectral_measure(t)
    rev, rw = radial_root_measure(2, 6)
    # degenerate eigenspaces may split the root weight, so aggregate per atom
    agg = np.array([w[np.abs(ev - e) < 1e-8].sum() for e in rev])
    assert np.allclose(agg, rw, atol=1e-10)
    assert agg.sum() == pytest.approx(1.0, abs=1e-12)


def test_root_measure_moments_match_walks():
    # the truncation's root measure reproduces walk counts until walks reach the boundary
    ev, w = radial_root_measure(2, 8)
    t = TruncatedTree(2, 8)
    for n in range(0, 14, 2):
        assert abs(np.sum(w * ev**n) - closed_walk_count(t, 0, n)) < 1e-6 * max(1, closed_walk_count(t, 0, n))


def test_histogram_discrepancy_of_exact_measure_is_small():
    edge = band_edge(2)
    x = np.linspace(-edge, edge, 200001)
    mid = (x[1:] + x[:-1]) / 2
    w = dos_density(2, mid) * np.diff(x)
    assert histogram_discrepancy(2, mid, w) < 1e-6
