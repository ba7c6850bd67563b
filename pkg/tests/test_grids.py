import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoxray import grids as G
from geoxray import metric as M


def test_mesh_layout():
    mesh = G.DiskMesh(8)
    assert mesh.h == 0.25
    assert mesh.coords[0] == pytest.approx(-0.875)
    X, Y = mesh.XY
    assert X[1, 0] > X[0, 0] and Y[0, 1] > Y[0, 0]
    assert mesh.size == mesh.nodes.shape[0] == mesh.mask.sum()
    assert np.all(np.sum(mesh.nodes ** 2, axis=1) < 1)
    assert np.allclose(mesh.weights(M.euclidean()), mesh.h ** 2)


@given(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_bilinear_reproduces_affine_fields(x, y):
    mesh = G.DiskMesh(16)
    f = G.FieldGrid.from_function(mesh, lambda X, Y: 2 * X - 3 * Y + 0.5)
    assert f(x, y) == pytest.approx(2 * x - 3 * y + 0.5, abs=1e-12)


def test_vector_field_grid():
    mesh = G.DiskMesh(12)
    v = G.FieldGrid.from_function(mesh, lambda X, Y: np.stack([X, -Y]))
    assert v.is_vector and v.values.shape == (2, 12, 12)
    assert v.masked().shape == (mesh.size, 2)
    back = G.FieldGrid.from_masked(mesh, v.masked())
    assert np.array_equal(back.values[:, mesh.mask], v.values[:, mesh.mask])


def test_norm_and_relative_error():
    mesh = G.DiskMesh(64)
    one = G.FieldGrid.from_function(mesh, lambda X, Y: np.ones_like(X))
    assert one.norm(M.euclidean()) ** 2 == pytest.approx(np.pi, rel=2e-2)
    assert G.relative_error(M.euclidean(), one, one) == 0.0


def test_boundary_grid_geometry():
    bd = G.BoundaryDataGrid(8, 4)
    assert np.all(np.abs(bd.theta) < np.pi / 2)
    assert not bd.grazing.any()
    x0, ang = bd.rays()
    assert x0.shape == (32, 2) and ang.shape == (32,)
    w = G.BoundaryDataGrid(8, 16).weights(M.euclidean())
    # total measure of the influx boundary: 2pi * int cos = 4pi
    assert w.sum() == pytest.approx(4 * np.pi, rel=2e-2)
    with pytest.raises(ValueError):
        G.BoundaryDataGrid(8, 4, np.zeros((4, 8)))


def test_boundary_interpolation_periodic_in_s():
    bd = G.BoundaryDataGrid(32, 16)
    S, T = np.meshgrid(bd.s, bd.theta, indexing="ij")
    bd.values = np.cos(S) + T
    s = np.array([0.05, 2 * np.pi - 0.05, 3.0])
    th = np.array([0.1, -0.2, 0.3])
    assert np.allclose(bd.interpolate(s, th), np.cos(s) + th, atol=5e-3)


def test_fiber_grid_antipode_and_influx():
    fg = G.BoundaryFiberGrid(4, 8)
    assert fg.influx == slice(2, 6)
    psi = fg.psi
    assert np.allclose(np.abs(psi[fg.influx]) < np.pi / 2, True)
    fg.values = np.tile(np.cos(psi), (4, 1))
    assert np.allclose(fg.antipode(), -fg.values)
    with pytest.raises(ValueError):
        G.BoundaryFiberGrid(4, 6)


def test_fiber_interpolation_orders():
    fg = G.BoundaryFiberGrid(64, 64)
    S, P = np.meshgrid(fg.s, fg.psi, indexing="ij")
    fg.values = np.sin(S) * np.cos(P)
    s, p = np.array([0.3, 5.9]), np.array([3.1, -3.1])
    exact = np.sin(s) * np.cos(p)
    assert np.allclose(fg.interpolate(s, p, 1), exact, atol=5e-3)
    assert np.allclose(fg.interpolate(s, p, 3), exact, atol=1e-2)


def test_exchange_format_round_trip(tmp_path):
    mesh = G.DiskMesh(10)
    f = G.FieldGrid.from_function(mesh, lambda X, Y: X * Y)
    G.write_field(tmp_path / "f", f)
    head = json.loads((tmp_path / "f.json").read_text())
    assert {"kind", "n", "n_s", "n_theta", "h", "mask_rule"} <= set(head)
    assert (tmp_path / "f.f64grid").stat().st_size == 8 * 100
    g = G.read_field(tmp_path / "f.f64grid")
    assert np.array_equal(g.values, f.values)
    bd = G.BoundaryDataGrid(6, 4, np.arange(24.0).reshape(6, 4))
    G.write_boundary(tmp_path / "b", bd)
    assert np.array_equal(G.read_boundary(tmp_path / "b").values, bd.values)
    G.write_grid(tmp_path / "nomesh", np.zeros(3), "scalar")
    with pytest.raises(ValueError):
        G.read_field(tmp_path / "nomesh")


def test_csv_is_byte_reproducible(tmp_path):
    cols = {"a": np.linspace(0, 1, 5), "b": np.arange(5), "ok": np.array([True] * 5)}
    G.write_csv(tmp_path / "x.csv", cols)
    G.write_csv(tmp_path / "y.csv", cols)
    assert (tmp_path / "x.csv").read_bytes() == (tmp_path / "y.csv").read_bytes()
    assert (tmp_path / "x.csv").read_text().splitlines()[0] == "a,b,ok"
    with pytest.raises(ValueError):
        G.write_csv(tmp_path / "z.csv", {"a": [1.0], "b": [1.0, 2.0]})
