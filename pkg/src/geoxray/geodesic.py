"""Geodesic flow on SM for conformal disk metrics.

For g = exp(2 lam) delta a unit-speed geodesic is ``x' = exp(-lam) (cos th,
sin th)`` with the Euclidean direction angle evolving as
``th' = exp(-lam) (lam_y cos th - lam_x sin th)``.  This is the geodesic
equation x'' + Gamma(x', x') = 0 restricted to |x'|_g = 1, so unit speed holds
by construction.  Integration is classical fixed-step RK4 over batches of
rays; exits through |x| = 1 are refined by bisection on the last step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, InversionFailureError, OutOfManifoldError, TrappedRayError
from .metric import MetricModel, MetricTerms

DEFAULT_HT = 1e-3
MAX_TIME = 50.0
GRAZING_TOL = 1e-6


class FlowPoint:
    """Geometric quantities at the current flow state, shared with extra ODE parts."""

    __slots__ = ("x", "y", "th", "el", "cos", "sin", "terms", "_lx", "_ly")

    def __init__(self, m: MetricModel, S: np.ndarray, curvature: bool):
        self.x, self.y, self.th = S[:, 0], S[:, 1], S[:, 2]
        if curvature:
            self.terms = m.terms(self.x, self.y)
            lam, lx, ly = self.terms.lam, self.terms.lam_x, self.terms.lam_y
        else:
            self.terms = None
            lam, lx, ly = m.lam_grad(self.x, self.y)
        self.el = np.exp(-lam)
        self.cos, self.sin = np.cos(self.th), np.sin(self.th)
        self._lx, self._ly = lx, ly

    def velocity(self):
        return self.el * self.cos, self.el * self.sin

    def perp(self):
        return -self.el * self.sin, self.el * self.cos


ExtraRHS = Callable[[FlowPoint, np.ndarray], np.ndarray]


def flow_rhs(m: MetricModel, extra: ExtraRHS | None = None, curvature: bool = False):
    """Right-hand side for state rows ``[x, y, th, *extra]``."""

    def rhs(S: np.ndarray) -> np.ndarray:
        p = FlowPoint(m, S, curvature)
        dS = np.empty_like(S)
        dS[:, 0] = p.el * p.cos
        dS[:, 1] = p.el * p.sin
        dS[:, 2] = p.el * (p._ly * p.cos - p._lx * p.sin)
        if extra is not None:
            dS[:, 3:] = extra(p, S[:, 3:])
        return dS

    return rhs


def rk4_step(rhs, S: np.ndarray, h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[:, None]
    k1 = rhs(S)
    k2 = rhs(S + 0.5 * h * k1)
    k3 = rhs(S + 0.5 * h * k2)
    k4 = rhs(S + h * k3)
    return S + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class FlowResult:
    """Outcome of flowing a batch of states to the boundary."""

    tau: np.ndarray
    exit_state: np.ndarray
    n_steps: np.ndarray
    history: np.ndarray | None = None  # (n_steps_max + 1, n, d), frozen after exit


def flow_to_boundary(rhs, S0: np.ndarray, h_t: float = DEFAULT_HT,
                     max_time: float = MAX_TIME, record: bool = False,
                     bisection_iters: int = 52) -> FlowResult:
    """Integrate every row of ``S0`` until |x| first exceeds 1.

    The exit time is located to ~1e-13 by bisection over the step that
    crossed the circle, re-running one RK4 step of variable length from the
    last interior state.
    """
    S = np.array(S0, dtype=float, copy=True)
    n = S.shape[0]
    t = np.zeros(n)
    steps = np.zeros(n, dtype=int)
    active = np.arange(n)
    hist = [S.copy()] if record else None
    max_steps = int(math.ceil(max_time / h_t))
    k = 0
    while active.size:
        if k >= max_steps:
            raise TrappedRayError(f"{active.size} ray(s) still inside after time {max_time}")
        Sn = rk4_step(rhs, S[active], h_t)
        if not np.all(np.isfinite(Sn[:, :3])):
            raise DomainError("geodesic state became non-finite")
        inside = Sn[:, 0] ** 2 + Sn[:, 1] ** 2 <= 1.0
        keep = active[inside]
        S[keep] = Sn[inside]
        t[keep] += h_t
        steps[keep] += 1
        active = keep
        k += 1
        if record:
            hist.append(S.copy())

    lo = np.zeros(n)
    hi = np.full(n, h_t)
    for _ in range(bisection_iters):
        mid = 0.5 * (lo + hi)
        Sm = rk4_step(rhs, S, mid)
        out = Sm[:, 0] ** 2 + Sm[:, 1] ** 2 > 1.0
        hi = np.where(out, mid, hi)
        lo = np.where(out, lo, mid)
        if np.all(hi - lo < 1e-15):
            break
    sigma = 0.5 * (lo + hi)
    S_exit = rk4_step(rhs, S, sigma)
    return FlowResult(t + sigma, S_exit, steps, np.stack(hist) if record else None)


def shoot(rhs, S0: np.ndarray, t: np.ndarray, n_steps: int) -> np.ndarray:
    """Integrate each row for its own time ``t`` using ``n_steps`` equal steps."""
    h = np.asarray(t, dtype=float) / n_steps
    S = np.array(S0, dtype=float, copy=True)
    for _ in range(n_steps):
        S = rk4_step(rhs, S, h)
    return S


def step_counts(t: np.ndarray, h_t: float, slack: float = 1.0, minimum: int = 4,
                ratio: float = 1.25) -> np.ndarray:
    """Per-row RK4 step counts >= slack * t / h_t, rounded up on a geometric ladder.

    The ladder keeps the number of distinct counts (and so of batches in
    ``shoot_grouped``) logarithmic in the spread of ``t``.
    """
    need = np.maximum(slack * np.asarray(t, dtype=float) / h_t, minimum)
    k = np.ceil(np.log(need / minimum) / math.log(ratio) - 1e-12)
    return np.ceil(minimum * ratio ** k).astype(int)


def shoot_grouped(rhs, S0: np.ndarray, t: np.ndarray, n_steps: np.ndarray) -> np.ndarray:
    """``shoot`` with a per-row step count; rows sharing a count run as one batch."""
    out = np.empty_like(np.asarray(S0, dtype=float))
    for n in np.unique(n_steps):
        rows = np.nonzero(n_steps == n)[0]
        out[rows] = shoot(rhs, S0[rows], t[rows], int(n))
    return out


# -- domain types -----------------------------------------------------------

def wrap_angle(a):
    """Wrap to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class PhasePoint:
    """Point of SM: base point and g-unit contravariant direction."""

    x: np.ndarray
    xi: np.ndarray

    @classmethod
    def from_angle(cls, m: MetricModel, x, angle: float) -> "PhasePoint":
        x = np.asarray(x, dtype=float)
        el = math.exp(-float(m.lam(x[0], x[1])))
        return cls(x, el * np.array([math.cos(angle), math.sin(angle)]))

    @classmethod
    def from_vector(cls, m: MetricModel, x, v) -> "PhasePoint":
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        norm = math.exp(float(m.lam(x[0], x[1]))) * float(np.hypot(*v))
        if norm == 0.0:
            raise ValueError("direction vector must be nonzero")
        return cls(x, v / norm)

    @property
    def angle(self) -> float:
        return math.atan2(self.xi[1], self.xi[0])


@dataclass(frozen=True)
class BoundaryRay:
    """Influx ray at boundary arc parameter ``s`` with angle ``theta_in`` from the inward normal."""

    s: float
    theta_in: float

    def __post_init__(self):
        if not -0.5 * math.pi <= self.theta_in <= 0.5 * math.pi:
            raise ValueError("theta_in must lie in [-pi/2, pi/2] (influx boundary)")

    @property
    def point(self) -> np.ndarray:
        return np.array([math.cos(self.s), math.sin(self.s)])

    @property
    def angle(self) -> float:
        return self.s + math.pi + self.theta_in

    def phase_point(self, m: MetricModel) -> PhasePoint:
        return PhasePoint.from_angle(m, self.point, self.angle)

    @property
    def grazing(self) -> bool:
        return abs(abs(self.theta_in) - 0.5 * math.pi) < GRAZING_TOL

    @classmethod
    def from_phase_point(cls, p: PhasePoint) -> "BoundaryRay":
        s = math.atan2(p.x[1], p.x[0]) % (2.0 * math.pi)
        th = float(wrap_angle(p.angle - s - math.pi))
        return cls(s, float(np.clip(th, -0.5 * math.pi, 0.5 * math.pi)))


@dataclass
class GeodesicTrace:
    """Unit-speed geodesic sampled at ``t`` (uniform step plus the final exit sample)."""

    t: np.ndarray
    x: np.ndarray
    theta: np.ndarray
    lam: np.ndarray
    tau: float
    h_t: float

    @property
    def xi(self) -> np.ndarray:
        el = np.exp(-self.lam)
        return np.stack([el * np.cos(self.theta), el * np.sin(self.theta)], axis=-1)

    @property
    def perp(self) -> np.ndarray:
        el = np.exp(-self.lam)
        return np.stack([-el * np.sin(self.theta), el * np.cos(self.theta)], axis=-1)

    def start(self) -> PhasePoint:
        return PhasePoint(self.x[0], self.xi[0])

    def end(self) -> PhasePoint:
        return PhasePoint(self.x[-1], self.xi[-1])


def _initial_states(x, angle) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    angle = np.broadcast_to(np.asarray(angle, dtype=float), (x.shape[0],))
    return np.column_stack([x[:, 0], x[:, 1], angle])


def _check_start(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(np.sum(x * x, axis=1) > (1.0 + 1e-9) ** 2):
        raise DomainError("start point outside the closed unit disk")


def traces_from_history(m: MetricModel, res: FlowResult, h_t: float):
    """Split a recorded batch flow into per-ray (times, states) arrays."""
    out = []
    for i in range(res.tau.size):
        k = res.n_steps[i]
        states = np.vstack([res.history[: k + 1, i, :], res.exit_state[i][None]])
        times = np.append(h_t * np.arange(k + 1), res.tau[i])
        out.append((times, states))
    return out


def integrate_geodesic(m: MetricModel, start: PhasePoint, direction_of_time: int = 1,
                       h_t: float = DEFAULT_HT) -> GeodesicTrace:
    """Trace the maximal geodesic from ``start`` to the boundary.

    With ``direction_of_time = -1`` the trace follows gamma(-t); sample times
    are then negative and ``theta`` stores the forward velocity angle.
    """
    if direction_of_time not in (1, -1):
        raise ValueError("direction_of_time must be +1 or -1")
    _check_start(start.x)
    flip = 0.0 if direction_of_time == 1 else math.pi
    S0 = _initial_states(start.x, start.angle + flip)
    res = flow_to_boundary(flow_rhs(m), S0, h_t, record=True)
    times, states = traces_from_history(m, res, h_t)[0]
    lam = m.lam(states[:, 0], states[:, 1])
    return GeodesicTrace(direction_of_time * times, states[:, :2].copy(), states[:, 2] - flip,
                         lam, float(res.tau[0]), h_t)


def exit_states(m: MetricModel, x, angle, h_t: float = DEFAULT_HT):
    """Batch forward flow: returns (tau, exit points (n,2), exit direction angles)."""
    _check_start(x)
    res = flow_to_boundary(flow_rhs(m), _initial_states(x, angle), h_t)
    return res.tau, res.exit_state[:, :2], res.exit_state[:, 2]


def exit_time(m: MetricModel, p: PhasePoint, h_t: float = DEFAULT_HT) -> float:
    """Time for the geodesic from an arbitrary (x, xi) in SM to reach the boundary."""
    return float(exit_states(m, p.x, p.angle, h_t)[0][0])


def tau(m: MetricModel, r: BoundaryRay, h_t: float = DEFAULT_HT) -> float:
    """Length of the maximal geodesic entering through the influx ray ``r``."""
    return float(exit_states(m, r.point, r.angle, h_t)[0][0])


def exp_map(m: MetricModel, x, v, h_t: float = DEFAULT_HT) -> np.ndarray:
    """gamma_{x, v/|v|_g}(|v|_g); raises OutOfManifoldError if the geodesic exits first."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_start(x)
    t = math.exp(float(m.lam(x[0], x[1]))) * float(np.hypot(*v))
    if t == 0.0:
        return x.copy()
    angle = math.atan2(v[1], v[0])
    n_steps = max(1, int(math.ceil(t / h_t)))
    rhs = flow_rhs(m)
    S = _initial_states(x, angle)
    h = t / n_steps
    for _ in range(n_steps):
        S = rk4_step(rhs, S, h)
        if S[0, 0] ** 2 + S[0, 1] ** 2 > 1.0 + 1e-12:
            te = exit_time(m, PhasePoint.from_angle(m, x, angle), h_t)
            raise OutOfManifoldError(f"geodesic exits M at t={te:.6g} < |v|_g={t:.6g}", te)
    return S[0, :2].copy()


def _jacobi_b_extra(p: FlowPoint, E: np.ndarray) -> np.ndarray:
    d = np.empty_like(E)
    d[:, 0] = E[:, 1]
    d[:, 1] = -p.terms.K * E[:, 0]
    return d


def exp_inverse_batch(m: MetricModel, x, y, tol: float = 1e-9, max_iter: int = 30,
                      h_t: float = 1e-2):
    """Vectorized shooting: find (t, angle) with exp_x(t * xi(angle)) = y.

    Damped Newton in geodesic polar coordinates.  The Jacobian columns are
    the exit velocity (d/dt) and the Jacobi field b * perp (d/d angle), so a
    single integration of the geodesic plus the scalar Jacobi equation gives
    both residual and Jacobian.  Returns ``(v, t, angle, converged)`` where
    ``v`` holds contravariant tangent vectors at ``x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = x.shape[0]
    lam_x = m.lam(x[:, 0], x[:, 1])
    d = y - x
    dist = np.hypot(d[:, 0], d[:, 1])
    same = dist < 1e-14
    lam_mid = m.lam(0.5 * (x[:, 0] + y[:, 0]), 0.5 * (x[:, 1] + y[:, 1]))
    t = np.where(same, 0.0, np.exp(lam_mid) * dist)
    ang = np.arctan2(d[:, 1], d[:, 0])
    rhs = flow_rhs(m, _jacobi_b_extra, curvature=True)
    # step counts are frozen per pair so the discrete map stays smooth in t
    n_steps = step_counts(t, h_t, slack=1.2)

    def evaluate(tt, aa, idx):
        S0 = np.column_stack([x[idx, 0], x[idx, 1], aa, np.zeros(idx.size), np.ones(idx.size)])
        return shoot_grouped(rhs, S0, tt, n_steps[idx])

    conv = same.copy()
    idx = np.nonzero(~conv)[0]
    S = evaluate(t[idx], ang[idx], idx)
    res = S[:, :2] - y[idx]
    rn = np.hypot(res[:, 0], res[:, 1])
    for _ in range(max_iter):
        done = rn <= tol
        conv[idx[done]] = True
        if np.all(done):
            break
        keep = ~done
        idx, S, res, rn = idx[keep], S[keep], res[keep], rn[keep]
        el = np.exp(-m.lam(S[:, 0], S[:, 1]))
        c, s = np.cos(S[:, 2]), np.sin(S[:, 2])
        b = S[:, 3]
        # J = [[el c, -b el s], [el s, b el c]]; det = b el^2
        det = b * el * el
        dt = -(b * el * c * res[:, 0] + b * el * s * res[:, 1]) / det
        da = -(-el * s * res[:, 0] + el * c * res[:, 1]) / det
        step = 1.0
        pending = np.arange(idx.size)
        new_t, new_a = t[idx].copy(), ang[idx].copy()
        newS, newres, newrn = S.copy(), res.copy(), rn.copy()
        for _ in range(8):
            tt = np.maximum(t[idx[pending]] + step * dt[pending], 1e-12)
            aa = ang[idx[pending]] + step * da[pending]
            Sp = evaluate(tt, aa, idx[pending])
            rp = Sp[:, :2] - y[idx[pending]]
            rnp = np.hypot(rp[:, 0], rp[:, 1])
            ok = (rnp < rn[pending]) | (rnp <= tol)
            sel = pending[ok]
            new_t[sel], new_a[sel] = tt[ok], aa[ok]
            newS[sel], newres[sel], newrn[sel] = Sp[ok], rp[ok], rnp[ok]
            pending = pending[~ok]
            if pending.size == 0:
                break
            step *= 0.5
        if pending.size:
            # no decrease along the Newton direction: take the smallest step anyway
            sel = pending
            tt = np.maximum(t[idx[sel]] + step * dt[sel], 1e-12)
            aa = ang[idx[sel]] + step * da[sel]
            Sp = evaluate(tt, aa, idx[sel])
            rp = Sp[:, :2] - y[idx[sel]]
            new_t[sel], new_a[sel] = tt, aa
            newS[sel], newres[sel], newrn[sel] = Sp, rp, np.hypot(rp[:, 0], rp[:, 1])
        t[idx], ang[idx] = new_t, new_a
        S, res, rn = newS, newres, newrn
    else:
        done = rn <= tol
        conv[idx[done]] = True

    el0 = np.exp(-lam_x)
    v = np.column_stack([t * el0 * np.cos(ang), t * el0 * np.sin(ang)])
    v[same] = 0.0
    t = np.where(same, 0.0, t)
    return v, t, ang, conv


def exp_inverse(m: MetricModel, x, y, tol: float = 1e-9, max_iter: int = 30,
                h_t: float = 1e-2) -> np.ndarray:
    """Tangent vector v at x with exp_map(x, v) = y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_start(x)
    _check_start(y)
    v, _, _, conv = exp_inverse_batch(m, x[None], y[None], tol, max_iter, h_t)
    if not conv[0]:
        raise InversionFailureError(f"shooting from {x} to {y} did not converge")
    return v[0]


def backtrace(m: MetricModel, p: PhasePoint, h_t: float = DEFAULT_HT):
    """Entry ray in the influx boundary of the geodesic through ``p`` and the time from entry to p."""
    _check_start(p.x)
    tau_b, xe, ae = exit_states(m, p.x, p.angle + math.pi, h_t)
    entry = PhasePoint.from_angle(m, xe[0], float(ae[0]) + math.pi)
    return BoundaryRay.from_phase_point(entry), float(tau_b[0])


def scattering_relation(m: MetricModel, r: BoundaryRay, h_t: float = DEFAULT_HT) -> PhasePoint:
    """alpha(x, xi): exit point and exit direction of the geodesic entering through ``r``."""
    _, xe, ae = exit_states(m, r.point, r.angle, h_t)
    return PhasePoint.from_angle(m, xe[0], float(ae[0]))


def flow_for_time(m: MetricModel, p: PhasePoint, t: float, h_t: float = DEFAULT_HT) -> PhasePoint:
    """Flow ``p`` forward for time t (no boundary check)."""
    if t == 0:
        return p
    n_steps = max(1, int(math.ceil(abs(t) / h_t)))
    S = shoot(flow_rhs(m), _initial_states(p.x, p.angle), np.array([t]), n_steps)
    return PhasePoint.from_angle(m, S[0, :2], float(S[0, 2]))
