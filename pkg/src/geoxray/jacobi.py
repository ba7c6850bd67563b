"""Scalar Jacobi solutions along geodesics, the fiber-angle derivatives, the
function phi = b d_theta(a) - a d_theta(b) by two routes, and the kernel W.

All quantities are integrated as one augmented RK4 system riding on the
geodesic flow.  Extra state layout (after x, y, th)::

    0 a   1 a'   2 b   3 b'
    4 Ta  5 Ta'  6 Tb  7 Tb'          (T = d/d theta, variational route)
    8 phi 9 phi' 10 phi''             (third-order ODE route)

The source of the variational equations is d_theta K(gamma(t)) =
dK(Y) = b * dK(perp), Y = b * perp being the Jacobi field of the fiber
variation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConjugatePointError, InversionFailureError
from .geodesic import (DEFAULT_HT, BoundaryRay, FlowPoint, GeodesicTrace, PhasePoint,
                       exp_inverse_batch, flow_rhs, flow_to_boundary, rk4_step, shoot,
                       shoot_grouped, step_counts, traces_from_history)
from .metric import B_FLOOR, T_FLOOR, MetricModel

N_EXTRA = 11
N_AB = 4


def _ab_extra(p: FlowPoint, E: np.ndarray) -> np.ndarray:
    K = p.terms.K
    d = np.empty_like(E)
    d[:, 0] = E[:, 1]
    d[:, 1] = -K * E[:, 0]
    d[:, 2] = E[:, 3]
    d[:, 3] = -K * E[:, 2]
    return d


def _full_extra(p: FlowPoint, E: np.ndarray) -> np.ndarray:
    t = p.terms
    K = t.K
    px, py = p.perp()
    vx, vy = p.velocity()
    a, b = E[:, 0], E[:, 2]
    dK_perp = t.K_x * px + t.K_y * py
    K_dot = t.K_x * vx + t.K_y * vy
    src = b * dK_perp
    d = np.empty_like(E)
    d[:, 0] = E[:, 1]
    d[:, 1] = -K * a
    d[:, 2] = E[:, 3]
    d[:, 3] = -K * b
    d[:, 4] = E[:, 5]
    d[:, 5] = -K * E[:, 4] - src * a
    d[:, 6] = E[:, 7]
    d[:, 7] = -K * E[:, 6] - src * b
    d[:, 8] = E[:, 9]
    d[:, 9] = E[:, 10]
    d[:, 10] = -4.0 * K * E[:, 9] - 2.0 * K_dot * E[:, 8] - 2.0 * src
    return d


def full_rhs(m: MetricModel):
    return flow_rhs(m, _full_extra, curvature=True)


def ab_rhs(m: MetricModel):
    return flow_rhs(m, _ab_extra, curvature=True)


def initial_state(x, angle, full: bool = True) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    S = np.zeros((n, 3 + (N_EXTRA if full else N_AB)))
    S[:, 0:2] = x
    S[:, 2] = angle
    S[:, 3] = 1.0  # a(0)
    S[:, 6] = 1.0  # b'(0)
    return S


@dataclass
class JacobiData:
    """Jacobi quantities sampled along one geodesic trace."""

    trace: GeodesicTrace
    a: np.ndarray
    a1: np.ndarray
    b: np.ndarray
    b1: np.ndarray
    theta_a: np.ndarray | None = None
    theta_b: np.ndarray | None = None
    phi_ode: np.ndarray | None = None
    phi1: np.ndarray | None = None
    phi2: np.ndarray | None = None

    @property
    def t(self) -> np.ndarray:
        return np.abs(self.trace.t)

    @property
    def wronskian(self) -> np.ndarray:
        return self.a * self.b1 - self.a1 * self.b

    @property
    def phi(self) -> np.ndarray:
        return phi_direct(self)

    @property
    def q(self) -> np.ndarray:
        return q_of(self)


def _jacobi_from_states(m: MetricModel, times, states, h_t) -> JacobiData:
    lam = m.lam(states[:, 0], states[:, 1])
    trace = GeodesicTrace(times, states[:, :2].copy(), states[:, 2].copy(), lam,
                          float(times[-1]), h_t)
    E = states[:, 3:]
    jd = JacobiData(trace, E[:, 0], E[:, 1], E[:, 2], E[:, 3])
    if E.shape[1] == N_EXTRA:
        jd.theta_a, jd.theta_b = E[:, 4], E[:, 6]
        jd.phi_ode, jd.phi1, jd.phi2 = E[:, 8], E[:, 9], E[:, 10]
    return jd


def solve_rays(m: MetricModel, x0, angle, h_t: float = DEFAULT_HT,
               with_theta: bool = True) -> list[JacobiData]:
    """Trace a batch of geodesics to the boundary together with their Jacobi data."""
    rhs = full_rhs(m) if with_theta else ab_rhs(m)
    S0 = initial_state(x0, angle, full=with_theta)
    res = flow_to_boundary(rhs, S0, h_t, record=True)
    return [_jacobi_from_states(m, t, S, h_t) for t, S in traces_from_history(m, res, h_t)]


def solve_ray(m: MetricModel, start: PhasePoint | BoundaryRay, h_t: float = DEFAULT_HT,
              with_theta: bool = True) -> JacobiData:
    p = start.phase_point(m) if isinstance(start, BoundaryRay) else start
    return solve_rays(m, p.x[None], np.array([p.angle]), h_t, with_theta)[0]


def _integrate_on_grid(rhs, S0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """RK4 along an explicit (per-trace) time grid; returns states at every sample."""
    out = np.empty((times.size,) + S0.shape)
    out[0] = S0
    S = S0
    for k, h in enumerate(np.diff(times)):
        S = rk4_step(rhs, S, h)
        out[k + 1] = S
    return out


def solve_ab(m: MetricModel, trace: GeodesicTrace):
    """a, a', b, b' on the time grid of ``trace`` (K evaluated along the same flow)."""
    t = np.abs(trace.t)
    angle = trace.theta[0] + (math.pi if trace.t[-1] < 0 else 0.0)
    S0 = initial_state(trace.x[0], angle, full=False)
    S = _integrate_on_grid(ab_rhs(m), S0, t)[:, 0, :]
    return S[:, 3], S[:, 4], S[:, 5], S[:, 6]


def theta_derivatives(m: MetricModel, start: PhasePoint | BoundaryRay, trace: GeodesicTrace,
                      ab: JacobiData | None = None, route: str = "variational",
                      dtheta: float = 1e-4):
    """(d_theta a, d_theta b) along ``trace``.

    ``route="variational"`` integrates the differentiated Jacobi equations;
    ``route="fd"`` re-solves a, b from the directions rotated by +-dtheta and
    takes central differences.  The fd route returns ``None`` for boundary
    rays whose perturbed directions leave the influx half (grazing).
    """
    p = start.phase_point(m) if isinstance(start, BoundaryRay) else start
    t = np.abs(trace.t)
    if route == "variational":
        if ab is not None and ab.theta_a is not None:
            return ab.theta_a, ab.theta_b
        S = _integrate_on_grid(full_rhs(m), initial_state(p.x, p.angle), t)[:, 0, :]
        return S[:, 7], S[:, 9]
    if route != "fd":
        raise ValueError(f"unknown route {route!r}")
    if isinstance(start, BoundaryRay) and abs(start.theta_in) + dtheta >= 0.5 * math.pi:
        return None
    angles = np.array([p.angle + dtheta, p.angle - dtheta])
    S0 = initial_state(np.repeat(p.x[None], 2, axis=0), angles, full=False)
    S = _integrate_on_grid(ab_rhs(m), S0, t)
    da = (S[:, 0, 3] - S[:, 1, 3]) / (2.0 * dtheta)
    db = (S[:, 0, 5] - S[:, 1, 5]) / (2.0 * dtheta)
    return da, db


def phi_direct(jd: JacobiData) -> np.ndarray:
    """phi = b d_theta(a) - a d_theta(b), pointwise."""
    return jd.b * jd.theta_a - jd.a * jd.theta_b


def phi_ode(m: MetricModel, trace: GeodesicTrace):
    """(phi, phi', phi'') from phi''' + 4 K phi' + 2 K' phi = -2 d_theta K, zero initial data."""
    t = np.abs(trace.t)
    angle = trace.theta[0] + (math.pi if trace.t[-1] < 0 else 0.0)
    S = _integrate_on_grid(full_rhs(m), initial_state(trace.x[0], angle), t)[:, 0, :]
    return S[:, 11], S[:, 12], S[:, 13]


def _q(phi, b, t, b_floor=B_FLOOR, t_floor=T_FLOOR):
    phi, b, t = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (phi, b, t)))
    late = t > t_floor
    if np.any(late & (np.abs(b) < b_floor)):
        raise ConjugatePointError("b vanishes away from t = 0")
    q = np.zeros_like(phi)
    q[late] = phi[late] / b[late] ** 2
    return q


def q_of(jd: JacobiData) -> np.ndarray:
    """q = d_theta(a/b) = phi / b^2, with the removable value q(0) = 0."""
    return _q(phi_direct(jd), jd.b, jd.t)


def _shoot_full(m: MetricModel, x, angle, t, h_t):
    t = np.atleast_1d(np.asarray(t, dtype=float))
    S0 = initial_state(x, angle)
    return shoot_grouped(full_rhs(m), S0, t, step_counts(t, h_t))


def Q_of(m: MetricModel, x, v, h_t: float = 1e-3) -> float:
    """Q(x, t xi) = q(x, xi, t) / t with t = |v|_g, and Q(x, 0) = 0."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    t = math.exp(float(m.lam(x[0], x[1]))) * float(np.hypot(*v))
    if t <= T_FLOOR:
        return 0.0
    S = _shoot_full(m, x[None], math.atan2(v[1], v[0]), np.array([t]), h_t)[0]
    a, b, Ta, Tb = S[3], S[5], S[7], S[9]
    return float(_q(b * Ta - a * Tb, b, t)) / t


def kernel_from_polar(m: MetricModel, x, t, angle, h_t: float = 1e-2) -> np.ndarray:
    """W = -(1/2pi) q / b for geodesic polar coordinates (t, angle) about x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float)
    W = np.zeros(t.shape)
    live = t > T_FLOOR
    if np.any(live):
        S = _shoot_full(m, x[live], angle[live], t[live], h_t)
        a, b, Ta, Tb = S[:, 3], S[:, 5], S[:, 7], S[:, 9]
        q = _q(b * Ta - a * Tb, b, t[live])
        W[live] = -q / (2.0 * math.pi * b)
    return W


def kernel_W_batch(m: MetricModel, x, y, h_t: float = 1e-2, tol: float = 1e-9):
    """Kernel of the smoothing operator with respect to the Riemannian area of y.

    Returns ``(W, converged)``; non-converged pairs carry NaN.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    _, t, ang, conv = exp_inverse_batch(m, x, y, tol=tol, h_t=h_t)
    W = np.full(t.shape, np.nan)
    W[conv] = kernel_from_polar(m, x[conv], t[conv], ang[conv], h_t)
    return W, conv


def kernel_W(m: MetricModel, x, y, h_t: float = 1e-3) -> float:
    """W(x, y) = -Q(x, v) |det D(exp_x^{-1})| sqrt g(x) / sqrt g(y) / (2 pi), v = exp_x^{-1}(y).

    With Q = q/t and the two-dimensional Jacobi identity
    |det D exp_x| = (b/t) * sqrt g(x)/sqrt g(y) (coordinate determinant), this
    collapses to -q / (2 pi b).
    """
    W, conv = kernel_W_batch(m, np.asarray(x)[None], np.asarray(y)[None], h_t)
    if not conv[0]:
        raise InversionFailureError(f"exp_inverse failed for pair {x}, {y}")
    return float(W[0])


def kernel_W_fd(m: MetricModel, x, y, delta: float = 1e-4, h_t: float = 1e-3) -> float:
    """Kernel via a finite-difference coordinate Jacobian of exp_x^{-1} (cross-check only)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ys = np.array([y, y + [delta, 0], y - [delta, 0], y + [0, delta], y - [0, delta]])
    xs = np.repeat(x[None], 5, axis=0)
    v, _, _, conv = exp_inverse_batch(m, xs, ys, tol=1e-13, h_t=h_t)
    if not np.all(conv):
        raise InversionFailureError("exp_inverse failed in finite-difference stencil")
    J = np.column_stack([(v[1] - v[2]) / (2 * delta), (v[3] - v[4]) / (2 * delta)])
    Q = Q_of(m, x, v[0], h_t)
    sg = m.sqrt_det(np.array([x[0], y[0]]), np.array([x[1], y[1]]))
    return -Q * abs(np.linalg.det(J)) * sg[0] / sg[1] / (2.0 * math.pi)
