"""Forward ray transforms and the boundary / fiber operators used by the
inversion formulas.

Conventions (fixed once, shared by every operator here):

* fiber angles are Euclidean direction angles; xi = exp(-lam)(cos th, sin th)
  and xi_perp is xi rotated by +90 degrees;
* the fiber Hilbert transform maps e^{ik th} to -i sgn(k) e^{ik th};
* ``delta_perp v = div_g(J v)`` with J the +90 degree rotation, so that
  ``delta_perp I1* w = int X_perp w# dtheta``;
* the rotated gradient is ``grad_perp h = -J grad h``, chosen so that
  ``<grad_perp h, xi>_g = <grad h, xi_perp>_g`` and I1(grad_perp h) is the ray
  transform of the horizontal lift of h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geodesic import flow_rhs, flow_to_boundary, wrap_angle
from .grids import BoundaryDataGrid, BoundaryFiberGrid, DiskMesh, FieldGrid, SphereBundleGrid
from .metric import MetricModel

BULK_HT = 1e-2


def _as_callable(f):
    return f if callable(f) else (lambda x, y: f)


def ray_transform(m: MetricModel, integrand, geometry: BoundaryDataGrid,
                  h_t: float = BULK_HT, curvature: bool = False,
                  return_tau: bool = False):
    """Integrate ``integrand(FlowPoint)`` along every influx ray of ``geometry``.

    The running integral rides along as an extra RK4 state, so the
    quadrature inherits fourth-order accuracy and the exact exit time.
    """
    x0, ang = geometry.rays()

    def extra(p, E):
        return np.asarray(integrand(p), dtype=float)[:, None]

    rhs = flow_rhs(m, extra, curvature=curvature)
    S0 = np.column_stack([x0, ang, np.zeros(ang.size)])
    res = flow_to_boundary(rhs, S0, h_t)
    out = geometry.with_values(res.exit_state[:, 3])
    if return_tau:
        return out, geometry.with_values(res.tau)
    return out


def forward_I0(m: MetricModel, f, geometry: BoundaryDataGrid, h_t: float = BULK_HT,
               return_tau: bool = False):
    """Geodesic ray transform of a scalar field (callable ``f(x, y)`` or FieldGrid)."""
    f = _as_callable(f)
    return ray_transform(m, lambda p: f(p.x, p.y), geometry, h_t, return_tau=return_tau)


def forward_I1(m: MetricModel, v, geometry: BoundaryDataGrid, h_t: float = BULK_HT):
    """Ray transform of a contravariant vector field: integrand <v, gamma'>_g."""

    def integrand(p):
        vx, vy = v(p.x, p.y)
        # exp(2 lam) * v . exp(-lam)(cos, sin)
        return (vx * p.cos + vy * p.sin) / p.el

    return ray_transform(m, integrand, geometry, h_t)


def ray_lengths(m: MetricModel, geometry: BoundaryDataGrid, h_t: float = BULK_HT) -> BoundaryDataGrid:
    return forward_I0(m, lambda x, y: np.ones_like(x), geometry, h_t)


def lift_transform(m: MetricModel, grad_h, geometry: BoundaryDataGrid, h_t: float = BULK_HT):
    """Ray transform of the horizontal lift <xi_perp, grad h>_g = dh(xi_perp)."""

    def integrand(p):
        hx, hy = grad_h(p.x, p.y)
        px, py = p.perp()
        return hx * px + hy * py

    return ray_transform(m, integrand, geometry, h_t)


def rotated_gradient(m: MetricModel, grad_h):
    """Contravariant field grad_perp h = exp(-2 lam) (h_y, -h_x) from a callable gradient."""

    def v(x, y):
        hx, hy = grad_h(x, y)
        e = np.exp(-2.0 * m.lam(x, y))
        return e * hy, -e * hx

    return v


# -- sphere-bundle geometry ------------------------------------------------

@dataclass
class FiberGeometry:
    """Exit and entry boundary coordinates for every (mesh node, fiber angle)."""

    mesh: DiskMesh
    n_theta: int
    exit_s: np.ndarray
    exit_psi: np.ndarray
    entry_s: np.ndarray
    entry_theta: np.ndarray
    exit_time: np.ndarray

    @classmethod
    def compute(cls, m: MetricModel, mesh: DiskMesh, n_theta: int, h_t: float = BULK_HT,
                chunk: int = 400_000) -> "FiberGeometry":
        if n_theta % 2:
            raise ValueError("n_theta must be even")
        nodes = mesh.nodes
        N = nodes.shape[0]
        th = 2.0 * np.pi * np.arange(n_theta) / n_theta
        X = np.repeat(nodes, n_theta, axis=0)
        A = np.tile(th, N)
        S0 = np.column_stack([X, A])
        rhs = flow_rhs(m)
        tau = np.empty(A.size)
        xe = np.empty((A.size, 2))
        be = np.empty(A.size)
        for lo in range(0, A.size, chunk):
            res = flow_to_boundary(rhs, S0[lo:lo + chunk], h_t)
            tau[lo:lo + chunk] = res.tau
            xe[lo:lo + chunk] = res.exit_state[:, :2]
            be[lo:lo + chunk] = res.exit_state[:, 2]
        s = np.mod(np.arctan2(xe[:, 1], xe[:, 0]), 2.0 * np.pi).reshape(N, n_theta)
        beta = be.reshape(N, n_theta)
        psi = wrap_angle(beta - s - np.pi)
        opp = (np.arange(n_theta) + n_theta // 2) % n_theta
        entry_s = s[:, opp]
        entry_theta = np.clip(wrap_angle(beta[:, opp] - entry_s), -0.5 * np.pi, 0.5 * np.pi)
        return cls(mesh, n_theta, s, psi, entry_s, entry_theta, tau.reshape(N, n_theta))


def _geometry(m, mesh, n_theta, geometry, h_t):
    if geometry is not None:
        if geometry.mesh != mesh or geometry.n_theta != n_theta:
            raise ValueError("geometry does not match mesh / n_theta")
        return geometry
    return FiberGeometry.compute(m, mesh, n_theta, h_t)


def sharp_extension(m: MetricModel, w: BoundaryDataGrid, mesh: DiskMesh, n_theta: int,
                    geometry: FiberGeometry | None = None, h_t: float = BULK_HT) -> SphereBundleGrid:
    """w#(x, xi) = w(entry ray of the geodesic through (x, xi)): constant along geodesics."""
    g = _geometry(m, mesh, n_theta, geometry, h_t)
    return SphereBundleGrid(mesh, n_theta, w.interpolate(g.entry_s, g.entry_theta))


def pullback_sharp(m: MetricModel, v: BoundaryFiberGrid, mesh: DiskMesh, n_theta: int,
                   geometry: FiberGeometry | None = None, h_t: float = BULK_HT,
                   order: int = 1) -> SphereBundleGrid:
    """(alpha* v)# evaluated directly: v at the forward exit of every (node, angle).

    Equal to ``sharp_extension(alpha_pullback(v))`` but interpolates once.
    """
    g = _geometry(m, mesh, n_theta, geometry, h_t)
    return SphereBundleGrid(mesh, n_theta, v.interpolate(g.exit_s, g.exit_psi, order=order))


# -- boundary fiber operators -----------------------------------------------

def fiber_hilbert(u: np.ndarray, axis: int = -1) -> np.ndarray:
    """Discrete Fourier multiplier -i sgn(k) along a uniform periodic fiber axis."""
    u = np.asarray(u, dtype=float)
    n = u.shape[axis]
    U = np.fft.rfft(u, axis=axis)
    k = np.arange(U.shape[axis])
    mult = -1j * np.sign(k).astype(complex)
    if n % 2 == 0:
        mult[-1] = 0.0
    shape = [1] * u.ndim
    shape[axis] = -1
    return np.fft.irfft(U * mult.reshape(shape), n=n, axis=axis)


def influx_trace(d: BoundaryDataGrid) -> BoundaryFiberGrid:
    """Boundary values of the transport solution: d on the influx half, 0 on outflux."""
    v = BoundaryFiberGrid(d.n_s, 2 * d.n_theta)
    v.values[:, v.influx] = d.values
    return v


def parity_parts(u: BoundaryFiberGrid):
    """(u+, u-) with u+-(x, xi) = (u(x, xi) +- u(x, -xi)) / 2."""
    a = u.antipode()
    return u.with_values(0.5 * (u.values + a)), u.with_values(0.5 * (u.values - a))


def alpha_extension(m: MetricModel, w: BoundaryDataGrid, parity: int = 1,
                    h_t: float = BULK_HT) -> BoundaryFiberGrid:
    """Extend influx data to dSM by ``parity * w o alpha^{-1}`` on the outflux half."""
    out = influx_trace(w)
    s = out.s
    psi_out = out.psi[np.r_[0:out.n_psi // 4, 3 * out.n_psi // 4:out.n_psi]]
    S, P = np.meshgrid(s, psi_out, indexing="ij")
    x0 = np.column_stack([np.cos(S.ravel()), np.sin(S.ravel())])
    back = (S + P).ravel()  # reversed direction: s + pi + psi + pi
    res = flow_to_boundary(flow_rhs(m), np.column_stack([x0, back]), h_t)
    xe, be = res.exit_state[:, :2], res.exit_state[:, 2]
    se = np.mod(np.arctan2(xe[:, 1], xe[:, 0]), 2.0 * np.pi)
    th_in = np.clip(wrap_angle(be - se), -0.5 * np.pi, 0.5 * np.pi)
    vals = parity * w.interpolate(se, th_in).reshape(S.shape)
    q = out.n_psi // 4
    out.values[:, :q] = vals[:, :q]
    out.values[:, 3 * q:] = vals[:, q:]
    return out


def alpha_pullback(m: MetricModel, v: BoundaryFiberGrid, geometry: BoundaryDataGrid,
                   h_t: float = BULK_HT, order: int = 1) -> BoundaryDataGrid:
    """(v o alpha) on the influx grid."""
    x0, ang = geometry.rays()
    res = flow_to_boundary(flow_rhs(m), np.column_stack([x0, ang]), h_t)
    xe, be = res.exit_state[:, :2], res.exit_state[:, 2]
    se = np.mod(np.arctan2(xe[:, 1], xe[:, 0]), 2.0 * np.pi)
    psi = wrap_angle(be - se - np.pi)
    return geometry.with_values(v.interpolate(se, psi, order=order))


# -- back-projections -------------------------------------------------------

def _bundle(m, u, mesh, n_theta, geometry, h_t):
    if isinstance(u, SphereBundleGrid):
        return u
    if mesh is None or n_theta is None:
        raise ValueError("mesh and n_theta are required for boundary data")
    return sharp_extension(m, u, mesh, n_theta, geometry, h_t)


def backproject_I0star(m: MetricModel, u, mesh: DiskMesh | None = None, n_theta: int | None = None,
                       geometry: FiberGeometry | None = None, h_t: float = BULK_HT) -> FieldGrid:
    """I0* u (x) = int_{S_x} u#(x, xi) dtheta."""
    U = _bundle(m, u, mesh, n_theta, geometry, h_t)
    vals = U.values.sum(axis=1) * (2.0 * np.pi / U.n_theta)
    return FieldGrid.from_masked(U.mesh, vals)


def backproject_I1star(m: MetricModel, u, mesh: DiskMesh | None = None, n_theta: int | None = None,
                       geometry: FiberGeometry | None = None, h_t: float = BULK_HT) -> FieldGrid:
    """I1* u (x) = int_{S_x} xi u#(x, xi) dtheta, contravariant components."""
    U = _bundle(m, u, mesh, n_theta, geometry, h_t)
    th = U.theta
    nodes = U.mesh.nodes
    el = np.exp(-m.lam(nodes[:, 0], nodes[:, 1]))
    d = 2.0 * np.pi / U.n_theta
    vx = el * (U.values @ np.cos(th)) * d
    vy = el * (U.values @ np.sin(th)) * d
    return FieldGrid.from_masked(U.mesh, np.column_stack([vx, vy]))


# -- differential operators on the mesh --------------------------------------

def masked_partials(F: np.ndarray, mask: np.ndarray, h: float):
    """d/dx, d/dy of ``F[i, j, ...]`` using only masked-in nodes.

    Central differences where both neighbours are inside, second-order
    one-sided stencils otherwise, first order as a last resort.  Returns
    ``(Fx, Fy, one_sided)``.
    """
    out = []
    one_sided = np.zeros(mask.shape, dtype=bool)
    for axis in (0, 1):
        D = np.zeros_like(F)
        mv = np.moveaxis(mask, axis, 0)
        Fv = np.moveaxis(F, axis, 0)
        Dv = np.moveaxis(D, axis, 0)
        osv = np.moveaxis(one_sided, axis, 0)
        pad = lambda a, k: np.roll(a, -k, axis=0)  # noqa: E731
        inside = lambda k: _shift_mask(mv, k)  # noqa: E731
        c = mv & inside(1) & inside(-1)
        f2 = mv & ~c & inside(1) & inside(2)
        b2 = mv & ~c & ~f2 & inside(-1) & inside(-2)
        f1 = mv & ~c & ~f2 & ~b2 & inside(1)
        b1 = mv & ~c & ~f2 & ~b2 & ~f1 & inside(-1)
        ext = (Ellipsis,) + (None,) * (F.ndim - 2)
        Dv[...] = np.where(c[ext], (pad(Fv, 1) - pad(Fv, -1)) / (2 * h), Dv)
        Dv[...] = np.where(f2[ext], (-3 * Fv + 4 * pad(Fv, 1) - pad(Fv, 2)) / (2 * h), Dv)
        Dv[...] = np.where(b2[ext], (3 * Fv - 4 * pad(Fv, -1) + pad(Fv, -2)) / (2 * h), Dv)
        Dv[...] = np.where(f1[ext], (pad(Fv, 1) - Fv) / h, Dv)
        Dv[...] = np.where(b1[ext], (Fv - pad(Fv, -1)) / h, Dv)
        osv |= mv & ~c
        out.append(D)
    return out[0], out[1], one_sided


def _shift_mask(mv: np.ndarray, k: int) -> np.ndarray:
    """mask value at index i + k along axis 0 (False beyond the array)."""
    out = np.zeros_like(mv)
    if k > 0:
        out[:-k] = mv[k:]
    else:
        out[-k:] = mv[:k]
    return out


def perp_divergence(m: MetricModel, v: FieldGrid) -> FieldGrid:
    """delta_perp v = (1/sqrt g) d_i (sqrt g (J v)^i), J v = (-v^2, v^1)."""
    mesh = v.mesh
    X, Y = mesh.XY
    sg = np.exp(2.0 * m.lam(X, Y))
    mask = mesh.mask
    ax, _, os1 = masked_partials(-sg * v.values[1], mask, mesh.h)
    _, by, os2 = masked_partials(sg * v.values[0], mask, mesh.h)
    vals = np.where(mask, (ax + by) / sg, 0.0)
    return FieldGrid(mesh, vals, {"one_sided_nodes": int((os1 | os2).sum())})


def h_perp(m: MetricModel, u: SphereBundleGrid) -> SphereBundleGrid:
    """xi_perp^i (d_i u - Gamma^k_ij xi^j d u / d xi^k) on a sphere-bundle grid.

    In angle coordinates this is exp(-lam) [(-sin th d_x + cos th d_y) u
    - (lam_x cos th + lam_y sin th) d_th u]; x-derivatives by masked finite
    differences, the th-derivative spectrally.
    """
    mesh = u.mesh
    F = mesh.scatter(u.values)
    Fx, Fy, os_ = masked_partials(F, mesh.mask, mesh.h)
    Fx, Fy = Fx[mesh.mask], Fy[mesh.mask]
    k = np.fft.rfftfreq(u.n_theta, 1.0 / u.n_theta)
    U = np.fft.rfft(u.values, axis=1)
    mult = 1j * k
    if u.n_theta % 2 == 0:
        mult[-1] = 0.0
    Ft = np.fft.irfft(U * mult, n=u.n_theta, axis=1)
    nodes = mesh.nodes
    lam, lx, ly = m.lam_grad(nodes[:, 0], nodes[:, 1])
    c, s = np.cos(u.theta), np.sin(u.theta)
    el = np.exp(-lam)[:, None]
    vals = el * (-s * Fx + c * Fy - (lx[:, None] * c + ly[:, None] * s) * Ft)
    out = SphereBundleGrid(mesh, u.n_theta, vals)
    return out


def h_perp_lift(m: MetricModel, h, mesh: DiskMesh, n_theta: int, grad_h=None) -> SphereBundleGrid:
    """H_perp applied to a base function: <xi_perp, grad h>_g = dh(xi_perp).

    ``grad_h`` is an exact gradient callable; without it the gradient of
    ``h`` (callable or FieldGrid) is taken by masked finite differences.
    """
    nodes = mesh.nodes
    if grad_h is not None:
        hx, hy = grad_h(nodes[:, 0], nodes[:, 1])
    else:
        H = h.values if isinstance(h, FieldGrid) else FieldGrid.from_function(mesh, h).values
        Hx, Hy, _ = masked_partials(H, mesh.mask, mesh.h)
        hx, hy = Hx[mesh.mask], Hy[mesh.mask]
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta
    el = np.exp(-m.lam(nodes[:, 0], nodes[:, 1]))[:, None]
    vals = el * (-np.asarray(hx)[:, None] * np.sin(th) + np.asarray(hy)[:, None] * np.cos(th))
    return SphereBundleGrid(mesh, n_theta, vals)
