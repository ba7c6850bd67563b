import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoxray import metric as M
from geoxray.errors import DomainError
from geoxray.grids import DiskMesh
from oracles import christoffel_fd

radius = st.floats(0.0, 0.95)
angle = st.floats(0.0, 2 * math.pi)


def polar(r, a):
    return np.array([r * math.cos(a), r * math.sin(a)])


def test_euclidean_symbols_vanish(flat):
    pts = np.random.default_rng(1).uniform(-0.7, 0.7, (20, 2))
    assert np.all(M.christoffel(flat, pts) == 0.0)
    assert np.all(M.curvature(flat, pts) == 0.0)
    assert np.all(M.curvature_gradient(flat, pts) == 0.0)
    assert M.grad_K_sup(flat, DiskMesh(16)) == 0.0


@given(radius, angle, st.floats(-0.2, 0.2))
def test_christoffel_lower_symmetry(r, a, eps):
    m = M.conformal_bump(eps, (0.1, -0.2))
    G = M.christoffel(m, polar(r, a))
    assert np.allclose(G, np.swapaxes(G, 1, 2), atol=0, rtol=0)


def test_christoffel_matches_finite_differences_of_g():
    m = M.conformal_bump(0.1)
    lam = lambda x, y: float(m.lam(x, y))  # noqa: E731
    for p in [(0.0, 0.0), (0.15, -0.1), (0.4, 0.3)]:
        assert np.max(np.abs(M.christoffel(m, np.array(p)) - christoffel_fd(lam, *p))) < 1e-6


def test_christoffel_rejects_outside_points(bump):
    with pytest.raises(DomainError):
        M.christoffel(bump, np.array([0.9, 0.9]))


@pytest.mark.parametrize("c", [1.0, 0.5, -0.5, -1.0])
def test_constant_curvature_model(c):
    m = M.constant_curvature(c)
    nodes = DiskMesh(24).nodes
    assert np.max(np.abs(M.curvature(m, nodes) - c)) < 1e-8
    assert M.grad_K_sup(m, nodes) < 1e-12


def test_constant_curvature_chart_check():
    with pytest.raises(DomainError):
        M.constant_curvature(-4.0)


def test_curvature_against_fd_laplacian_converges():
    m = M.conformal_bump(0.1, (0.1, 0.05))
    p = np.array([0.12, -0.07])
    errs = []
    for h in (1e-2, 5e-3):
        lam = lambda dx, dy: float(m.lam(p[0] + dx, p[1] + dy))  # noqa: E731
        lap = (lam(h, 0) + lam(-h, 0) + lam(0, h) + lam(0, -h) - 4 * lam(0, 0)) / h ** 2
        errs.append(abs(-math.exp(-2 * lam(0, 0)) * lap - float(M.curvature(m, p))))
    assert errs[1] < errs[0] / 3.5  # second order


def test_bump_reference_numbers():
    m = M.conformal_bump(0.05)
    assert M.curvature(m, np.zeros(2)) == pytest.approx(4.0 / 0.09 * 0.05 * math.exp(-0.1), rel=1e-12)
    assert M.grad_K_sup(m, DiskMesh(64)) == pytest.approx(8.9, abs=0.1)


def test_grad_K_sup_linear_in_epsilon():
    mesh = DiskMesh(48)
    eps = np.array([0.01, 0.02, 0.05])
    vals = np.array([M.grad_K_sup(M.conformal_bump(e), mesh) for e in eps])
    slope = np.polyfit(np.log(eps), np.log(vals), 1)[0]
    assert abs(slope - 1.0) < 0.1


def test_expression_metric_matches_named_kind():
    a = M.conformal_expression("0.05*exp(-(x**2+y**2)/0.09)")
    b = M.conformal_bump(0.05)
    pts = np.random.default_rng(2).uniform(-0.6, 0.6, (30, 2))
    assert np.allclose(a.terms(*pts.T), b.terms(*pts.T), atol=1e-12)
    pairs = [("0.07*exp(-((x-0.2)**2+(y+0.1)**2)/0.16)", M.conformal_bump(0.07, (0.2, -0.1), 0.4)),
             ("-log(1 - 0.5*(x**2+y**2)/4)", M.constant_curvature(-0.5))]
    for expr, named in pairs:
        assert np.allclose(M.conformal_expression(expr).terms(*pts.T), named.terms(*pts.T), atol=1e-12)
    with pytest.raises(ValueError):
        M.conformal_expression("x + z")


def test_config_round_trip():
    for m in (M.euclidean(), M.constant_curvature(0.5), M.conformal_bump(0.02, (0.1, 0), 0.25)):
        m2 = M.from_config(m.to_config())
        assert m2.kind == m.kind and m2.params == m.params


def test_boundary_convexity_values():
    assert M.boundary_convexity(M.euclidean()) == pytest.approx(1.0, abs=1e-12)
    # geodesic curvature of the unit circle in the model metric: 1 - c/4 after scaling
    assert M.boundary_convexity(M.constant_curvature(1.0)) == pytest.approx(0.75, abs=1e-12)
    for eps in (0.01, 0.05, 0.1):
        assert M.boundary_convexity(M.conformal_bump(eps)) > 0
    with pytest.raises(ValueError):
        M.boundary_convexity(M.euclidean(), 8)


def test_boundary_convexity_rotation_invariant():
    m = M.constant_curvature(0.5)
    assert abs(M.boundary_convexity(m, 64) - M.boundary_convexity(m, 65)) < 1e-8


def test_simplicity_reports():
    assert M.check_simplicity(M.euclidean(), 16).simple
    rep = M.check_simplicity(M.constant_curvature(1.0), 64)
    assert rep.simple and rep.min_b > 0
    # every chord of the c=1 model is shorter than pi, where sin t first vanishes
    assert 4 * math.atan(0.5) < math.pi
    bad = M.check_simplicity(M.constant_curvature(6.0), 64)
    assert bad.conjugate_point_found and not bad.simple
    assert bad.conjugate_time == pytest.approx(math.pi / math.sqrt(6.0), abs=0.02)
    with pytest.raises(ValueError):
        M.check_simplicity(M.euclidean(), 0)
