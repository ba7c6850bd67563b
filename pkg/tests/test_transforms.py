import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoxray import geodesic as Gd
from geoxray import grids as G
from geoxray import metric as M
from geoxray import phantoms as P
from geoxray import transforms as T
from frozen import CHORD_GAUSSIAN_P0, CHORD_GAUSSIAN_P03


def one_ray_grid(s, th):
    """A 1x1 boundary grid holding the single ray (s, th)."""

    class One(G.BoundaryDataGrid):
        def rays(self):
            return np.array([[math.cos(s), math.sin(s)]]), np.array([s + math.pi + th])

    return One(1, 1)


def single(m, f, s, th, **kw):
    return float(T.forward_I0(m, f, one_ray_grid(s, th), **kw).values[0, 0])


def test_I0_trivial_cases(flat):
    assert single(flat, lambda x, y: np.ones_like(x), 0.0, 0.0) == pytest.approx(2.0, abs=1e-12)
    assert abs(single(flat, lambda x, y: x, -0.5 * math.pi, 0.0)) < 1e-12


def test_I0_gaussian_closed_form(flat):
    g = P.gaussian()
    assert single(flat, g, 0.3, 0.0) == pytest.approx(CHORD_GAUSSIAN_P0, abs=1e-8)
    assert single(flat, g, 1.0, math.asin(0.3)) == pytest.approx(CHORD_GAUSSIAN_P03, abs=1e-8)
    # the same through a sampled FieldGrid (bilinear interpolation error)
    fg = G.FieldGrid.from_function(G.DiskMesh(256), g)
    assert single(flat, fg, 0.3, 0.0) == pytest.approx(CHORD_GAUSSIAN_P0, abs=1e-3)


def test_I0_returns_tau(bump):
    bd = G.BoundaryDataGrid(8, 8)
    d, tau = T.forward_I0(bump, lambda x, y: np.ones_like(x), bd, return_tau=True)
    assert np.allclose(d.values, tau.values, atol=1e-10)
    assert np.allclose(T.ray_lengths(bump, bd).values, tau.values, atol=1e-10)


def test_I1_constant_field(flat):
    bd = one_ray_grid(math.pi, 0.0)
    val = T.forward_I1(flat, lambda x, y: (np.ones_like(x), np.zeros_like(x)), bd).values[0, 0]
    assert val == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("kind", ["flat", "bump"])
def test_I1_annihilates_boundary_vanishing_gradients(kind):
    m = M.euclidean() if kind == "flat" else M.conformal_bump(0.05)
    bd = G.BoundaryDataGrid(16, 16)
    for p in P.boundary_vanishing_potentials() + [P.polynomial_potential()]:
        def v(x, y, p=p):
            gx, gy = p.grad(x, y)
            e = np.exp(-2 * m.lam(x, y))
            return e * gx, e * gy
        assert np.max(np.abs(T.forward_I1(m, v, bd).values)) < 1e-4


def test_I1_rotated_gradient_step_halving(flat):
    h = P.polynomial_potential()
    v = T.rotated_gradient(flat, h.grad)
    bd = G.BoundaryDataGrid(12, 12)
    a = T.forward_I1(flat, v, bd, h_t=1e-2).values
    b = T.forward_I1(flat, v, bd, h_t=5e-3).values
    assert np.max(np.abs(a - b)) < 1e-4


def test_lift_equals_I1_of_rotated_gradient(bump):
    h = P.gaussian((0.2, -0.1), 0.4)
    bd = G.BoundaryDataGrid(12, 12)
    lift = T.lift_transform(bump, h.grad, bd).values
    i1 = T.forward_I1(bump, T.rotated_gradient(bump, h.grad), bd).values
    assert np.max(np.abs(lift - i1)) < 1e-4


def test_h_perp_lift_examples(flat):
    mesh = G.DiskMesh(8)
    u = T.h_perp_lift(flat, None, mesh, 16, grad_h=lambda x, y: (np.ones_like(x), np.zeros_like(x)))
    assert np.allclose(u.values, -np.sin(u.theta)[None, :])
    c = T.h_perp_lift(flat, lambda x, y: 3.0 + 0 * x, mesh, 16)
    assert np.max(np.abs(c.values)) == 0.0


def test_h_perp_on_bundle_functions(bump):
    mesh = G.DiskMesh(48)
    h = P.gaussian((0.1, 0.0), 0.5)
    nodes = mesh.nodes
    U = G.SphereBundleGrid(mesh, 16, np.repeat(h(nodes[:, 0], nodes[:, 1])[:, None], 16, axis=1))
    fd = T.h_perp(bump, U).values
    exact = T.h_perp_lift(bump, h, mesh, 16, grad_h=h.grad).values
    assert np.max(np.abs(fd - exact)) < 2e-2
    # Euclidean: u = x sin(theta) gives -sin^2(theta)
    U2 = G.SphereBundleGrid(mesh, 16, nodes[:, :1] * np.sin(U.theta)[None, :])
    assert np.allclose(T.h_perp(M.euclidean(), U2).values, -np.sin(U.theta) ** 2, atol=1e-10)


def test_sharp_extension_cases(flat):
    mesh = G.DiskMesh(12)
    bd = G.BoundaryDataGrid(64, 64)
    u = T.sharp_extension(flat, bd.with_values(np.ones((64, 64))), mesh, 16)
    assert np.allclose(u.values, 1.0)
    tau = T.ray_lengths(flat, bd)
    u = T.sharp_extension(flat, tau, mesh, 16)
    nodes = mesh.nodes
    e = np.stack([np.cos(u.theta), np.sin(u.theta)])
    cross = nodes[:, 0:1] * e[1][None] - nodes[:, 1:2] * e[0][None]
    assert np.max(np.abs(u.values - 2 * np.sqrt(1 - cross ** 2))) < 2e-3


def test_sharp_extension_constant_along_geodesics(bump):
    mesh = G.DiskMesh(10)
    bd = G.BoundaryDataGrid(128, 128)
    S, TH = np.meshgrid(bd.s, bd.theta, indexing="ij")
    w = bd.with_values(0.3 + np.sin(S) * np.cos(TH) + 0.2 * TH)
    n_theta = 8
    u = T.sharp_extension(bump, w, mesh, n_theta)
    rng = np.random.default_rng(0)
    for k in rng.choice(mesh.size, 5, replace=False):
        j = int(rng.integers(n_theta))
        p = Gd.PhasePoint.from_angle(bump, mesh.nodes[k], u.theta[j])
        t_exit = Gd.exit_time(bump, p)
        q = Gd.flow_for_time(bump, p, 0.5 * t_exit)
        entry, _ = Gd.backtrace(bump, q)
        assert abs(w.interpolate(entry.s, entry.theta_in) - u.values[k, j]) < 1e-3


def test_fiber_hilbert_examples():
    th = 2 * np.pi * np.arange(64) / 64
    assert np.allclose(T.fiber_hilbert(np.cos(th)), np.sin(th), atol=1e-14)
    assert np.allclose(T.fiber_hilbert(np.full(64, 2.0)), 0.0, atol=1e-14)
    u = 1.0 + np.cos(3 * th) - 0.5 * np.sin(7 * th)
    assert np.allclose(T.fiber_hilbert(T.fiber_hilbert(u)), -(u - u.mean()), atol=1e-13)


@given(st.lists(st.floats(-1, 1), min_size=8, max_size=8),
       st.lists(st.floats(-1, 1), min_size=8, max_size=8))
def test_fiber_hilbert_is_skew(cu, cv):
    th = 2 * np.pi * np.arange(32) / 32
    k = np.arange(1, 5)
    u = np.cos(np.outer(th, k)) @ cu[:4] + np.sin(np.outer(th, k)) @ cu[4:]
    v = np.cos(np.outer(th, k)) @ cv[:4] + np.sin(np.outer(th, k)) @ cv[4:]
    assert abs(T.fiber_hilbert(u) @ v + u @ T.fiber_hilbert(v)) <= 1e-10


def test_parity_parts():
    fg = G.BoundaryFiberGrid(8, 16)
    S, PSI = np.meshgrid(fg.s, fg.psi, indexing="ij")
    odd = fg.with_values(np.cos(S + np.pi + PSI))  # <xi, e1>
    plus, minus = T.parity_parts(odd)
    assert np.allclose(plus.values, 0, atol=1e-14) and np.allclose(minus.values, odd.values)
    flat = fg.with_values(np.tile(np.sin(fg.s)[:, None], (1, 16)))
    plus, minus = T.parity_parts(flat)
    assert np.allclose(plus.values, flat.values) and np.allclose(minus.values, 0)
    rnd = fg.with_values(np.random.default_rng(0).normal(size=(8, 16)))
    plus, minus = T.parity_parts(rnd)
    assert np.allclose(plus.values + minus.values, rnd.values, atol=1e-15)
    p2, m2 = T.parity_parts(plus)
    assert np.allclose(p2.values, plus.values) and np.allclose(m2.values, 0)


def test_influx_trace_layout():
    d = G.BoundaryDataGrid(4, 8, np.arange(32.0).reshape(4, 8))
    tr = T.influx_trace(d)
    assert tr.n_psi == 16
    assert np.array_equal(tr.values[:, tr.influx], d.values)
    assert np.all(tr.values[:, :4] == 0) and np.all(tr.values[:, 12:] == 0)


def test_alpha_extension_cases(flat, bump):
    bd = G.BoundaryDataGrid(16, 16)
    ext = T.alpha_extension(flat, bd.with_values(np.ones((16, 16))))
    assert np.allclose(ext.values, 1.0)
    assert np.allclose(T.alpha_pullback(flat, ext, bd).values, 1.0)
    tau = T.ray_lengths(flat, bd)
    ext = T.alpha_extension(flat, tau)
    out = np.r_[0:8, 24:32]
    assert np.allclose(ext.values[:, out], 2 * np.abs(np.cos(ext.psi[out]))[None], atol=5e-3)
    odd = T.alpha_extension(flat, tau, parity=-1)
    assert np.allclose(odd.values[:, out], -ext.values[:, out])


def test_alpha_round_trip(bump):
    bd = G.BoundaryDataGrid(128, 128)
    S, TH = np.meshgrid(bd.s, bd.theta, indexing="ij")
    w = bd.with_values(np.cos(S) * np.cos(TH) + 0.1 * np.sin(2 * S))
    back = T.alpha_pullback(bump, T.alpha_extension(bump, w), bd)
    inner = np.abs(bd.theta) < 1.4
    assert np.max(np.abs(back.values[:, inner] - w.values[:, inner])) < 1e-3


def test_backprojection_constants(bump):
    mesh = G.DiskMesh(10)
    U = G.SphereBundleGrid(mesh, 32, np.ones((mesh.size, 32)))
    assert np.allclose(T.backproject_I0star(bump, U).masked(), 2 * np.pi)
    assert np.allclose(T.backproject_I1star(bump, U).masked(), 0.0, atol=1e-13)


def test_backprojection_radial_symmetry(flat):
    mesh = G.DiskMesh(32)
    bd = G.BoundaryDataGrid(64, 64)
    d = T.forward_I0(flat, P.gaussian(), bd)
    b = T.backproject_I0star(flat, d, mesh, 64).values
    assert np.max(np.abs(b - b.T)) < 1e-3 * np.abs(b).max()
    assert np.max(np.abs(b - b[::-1])) < 1e-3 * np.abs(b).max()


def test_backprojection_fiber_refinement(bump):
    mesh = G.DiskMesh(10)
    bd = G.BoundaryDataGrid(512, 16)
    w = bd.with_values(np.tile((1 + 0.5 * np.cos(bd.s))[:, None], (1, 16)))
    a = T.backproject_I0star(bump, w, mesh, 32).masked()
    b = T.backproject_I0star(bump, w, mesh, 64).masked()
    assert np.max(np.abs(a - b)) < 1e-4


def test_perp_divergence_examples(flat):
    errs_grad, errs_lap = [], []
    for n in (32, 64):
        mesh = G.DiskMesh(n)
        p = P.boundary_vanishing_potentials()[1]
        v = G.FieldGrid.from_function(mesh, lambda x, y: np.stack(p.grad(x, y)))
        d = T.perp_divergence(flat, v)
        assert d.meta["one_sided_nodes"] > 0
        errs_grad.append(np.sqrt(np.mean(d.masked() ** 2)))
        h = P.polynomial_potential()
        vp = G.FieldGrid.from_function(mesh, lambda x, y: np.stack(T.rotated_gradient(flat, h.grad)(x, y)))
        lap = lambda x, y: 16 * (x * x + y * y) - 8  # noqa: E731
        d = T.perp_divergence(flat, vp)
        errs_lap.append(np.sqrt(np.mean((d.masked() - lap(*mesh.nodes.T)) ** 2)))
    # central differences commute, so the discrete curl of a sampled gradient
    # is small at every node, not just in norm
    assert max(errs_grad) < 1e-2
    assert errs_lap[1] < errs_lap[0] / 3 and errs_lap[1] < 1e-2
    bump = M.conformal_bump(0.05)
    p = P.boundary_vanishing_potentials()[2]
    errs = []
    for n in (32, 64):
        mesh = G.DiskMesh(n)
        v = G.FieldGrid.from_function(mesh, lambda x, y: np.exp(-2 * bump.lam(x, y)) * np.stack(p.grad(x, y)))
        errs.append(np.max(np.abs(T.perp_divergence(bump, v).masked())))
    assert errs[1] < errs[0] / 3.5 and errs[1] < 1e-2
    zero = G.FieldGrid(G.DiskMesh(8), np.zeros((2, 8, 8)))
    assert np.all(T.perp_divergence(flat, zero).values == 0)


def test_fiber_geometry_validation(flat):
    with pytest.raises(ValueError):
        T.FiberGeometry.compute(flat, G.DiskMesh(4), 7)
    geo = T.FiberGeometry.compute(flat, G.DiskMesh(4), 8)
    with pytest.raises(ValueError):
        T.sharp_extension(flat, G.BoundaryDataGrid(4, 4), G.DiskMesh(6), 8, geometry=geo)
