"""Conformal test metrics g = exp(2*lam) * delta on the closed unit disk.

Every metric is described by a closed-form conformal factor ``lam(x, y)``.
Derivatives up to third order are produced symbolically once and compiled to
vectorized numpy callables, so curvature and its gradient are exact up to
floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
import sympy as sp

from .errors import DomainError

_X, _Y = sp.symbols("x y", real=True)

DOMAIN_TOL = 1e-9
B_FLOOR = 1e-8
T_FLOOR = 1e-6


class MetricTerms(NamedTuple):
    """Conformal factor and curvature data evaluated at a batch of points."""

    lam: np.ndarray
    lam_x: np.ndarray
    lam_y: np.ndarray
    K: np.ndarray
    K_x: np.ndarray
    K_y: np.ndarray


def _compile(expr: sp.Expr) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    f = sp.lambdify((_X, _Y), expr, modules="numpy", cse=True)

    def wrapped(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = f(x, y)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x, y).shape).copy()

    return wrapped


def _bump_terms(eps: float, cx: float, cy: float, width: float):
    """Closed-form [lam, lam_x, lam_y, lap lam, d_x lap lam, d_y lap lam] for the Gaussian bump."""
    a = 1.0 / width ** 2

    def f(x, y):
        dx, dy = x - cx, y - cy
        r2 = dx * dx + dy * dy
        lam = eps * np.exp(-a * r2)
        c = lam * (16.0 * a * a - 8.0 * a ** 3 * r2)
        return [lam, -2.0 * a * dx * lam, -2.0 * a * dy * lam,
                lam * (4.0 * a * a * r2 - 4.0 * a), c * dx, c * dy]

    return f


def _constant_curvature_terms(c: float):
    """Closed-form terms for lam = -log(1 + c r^2 / 4); lap lam = -c exp(2 lam)."""

    def f(x, y):
        D = 1.0 + 0.25 * c * (x * x + y * y)
        lap_grad = c * c / D ** 3
        return [-np.log(D), -0.5 * c * x / D, -0.5 * c * y / D, -c / (D * D),
                lap_grad * x, lap_grad * y]

    return f


@dataclass(frozen=True, eq=False)
class MetricModel:
    """Conformal metric on the closed unit disk.

    ``kind`` is one of ``euclidean``, ``constant-curvature``,
    ``conformal-bump`` or ``conformal-expression``; ``params`` records the
    constructor arguments so the model can be serialized back to a config
    block.
    """

    kind: str
    params: dict
    lam_expr: sp.Expr = field(repr=False)

    def __post_init__(self):
        lam = self.lam_expr
        lx, ly = sp.diff(lam, _X), sp.diff(lam, _Y)
        lxx, lxy, lyy = sp.diff(lx, _X), sp.diff(lx, _Y), sp.diff(ly, _Y)
        K = -sp.exp(-2 * lam) * (lxx + lyy)
        if self.kind == "constant-curvature":
            K = sp.simplify(K)
        Kx, Ky = sp.diff(K, _X), sp.diff(K, _Y)
        names = dict(lam=lam, lam_x=lx, lam_y=ly, lam_xx=lxx, lam_xy=lxy,
                     lam_yy=lyy, K=K, K_x=Kx, K_y=Ky)
        object.__setattr__(self, "_fn", {k: _compile(v) for k, v in names.items()})
        # K and dK from lam, grad lam, lap lam and grad lap lam: far smaller
        # expressions than differentiating K symbolically
        lap = lxx + lyy
        joint = sp.lambdify((_X, _Y), [lam, lx, ly, lap, sp.diff(lap, _X), sp.diff(lap, _Y)],
                            modules="numpy", cse=True)
        if self.kind == "constant-curvature":
            joint = _constant_curvature_terms(self.params["c"])
        if self.kind == "conformal-bump":
            joint = _bump_terms(self.params["epsilon"], *self.params["center"], self.params["width"])
        object.__setattr__(self, "_terms", joint)

    # -- raw evaluation (no domain checks; used by the integrators) ---------

    def lam(self, x, y):
        return self._fn["lam"](x, y)

    def lam_grad(self, x, y):
        return self._fn["lam"](x, y), self._fn["lam_x"](x, y), self._fn["lam_y"](x, y)

    def terms(self, x, y) -> MetricTerms:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        lam, lx, ly, lap, lap_x, lap_y = (np.broadcast_to(np.asarray(v, dtype=float), shape)
                                          for v in self._terms(x, y))
        e = np.exp(-2.0 * lam)
        K = -e * lap
        return MetricTerms(lam, lx, ly, K, -e * lap_x - 2.0 * lx * K, -e * lap_y - 2.0 * ly * K)

    def sqrt_det(self, x, y):
        return np.exp(2.0 * self.lam(x, y))

    def lam_hessian(self, x, y):
        f = self._fn
        return f["lam_xx"](x, y), f["lam_xy"](x, y), f["lam_yy"](x, y)

    def to_config(self) -> dict:
        return {"kind": self.kind, **self.params}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"MetricModel({self.kind}{', ' if args else ''}{args})"


# -- constructors -----------------------------------------------------------

def euclidean() -> MetricModel:
    return MetricModel("euclidean", {}, sp.Integer(0))


def constant_curvature(c: float) -> MetricModel:
    """Model metric with curvature ``c``: lam = -log(1 + c |x|^2 / 4)."""
    c = float(c)
    if 1.0 + c / 4.0 <= 0.0:
        raise DomainError(f"1 + c|x|^2/4 must stay positive on the disk (c={c})")
    lam = -sp.log(1 + sp.nsimplify(c) * (_X**2 + _Y**2) / 4)
    return MetricModel("constant-curvature", {"c": c}, lam)


def conformal_bump(epsilon: float, center: Sequence[float] = (0.0, 0.0),
                   width: float = 0.3) -> MetricModel:
    """Gaussian bump lam = epsilon * exp(-|x - center|^2 / width^2)."""
    cx, cy = (float(v) for v in center)
    if width <= 0:
        raise ValueError("width must be positive")
    r2 = (_X - sp.Float(cx)) ** 2 + (_Y - sp.Float(cy)) ** 2
    lam = sp.Float(epsilon) * sp.exp(-r2 / sp.Float(width) ** 2)
    return MetricModel("conformal-bump",
                       {"epsilon": float(epsilon), "center": [cx, cy], "width": float(width)},
                       lam)


def conformal_expression(expression: str) -> MetricModel:
    """Arbitrary conformal factor given as a sympy-parsable string in x, y."""
    lam = sp.sympify(expression, locals={"x": _X, "y": _Y})
    extra = lam.free_symbols - {_X, _Y}
    if extra:
        raise ValueError(f"expression has unknown symbols: {sorted(map(str, extra))}")
    return MetricModel("conformal-expression", {"expression": expression}, lam)


def from_config(block: dict) -> MetricModel:
    kind = block["kind"]
    if kind == "euclidean":
        return euclidean()
    if kind == "constant-curvature":
        return constant_curvature(block["c"])
    if kind == "conformal-bump":
        return conformal_bump(block["epsilon"], block.get("center", (0.0, 0.0)),
                              block.get("width", 0.3))
    if kind == "conformal-expression":
        return conformal_expression(block["expression"])
    raise ValueError(f"unknown metric kind {kind!r}")


# -- point operations -------------------------------------------------------

def _check_domain(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("points must have a trailing dimension of 2")
    r2 = np.sum(x * x, axis=-1)
    if np.any(r2 > (1.0 + DOMAIN_TOL) ** 2):
        raise DomainError("point outside the closed unit disk")
    return x


def christoffel(m: MetricModel, x) -> np.ndarray:
    """Christoffel symbols ``G[k, i, j]`` at a point (or ``[..., k, i, j]``)."""
    x = _check_domain(x)
    _, lx, ly = m.lam_grad(x[..., 0], x[..., 1])
    G = np.empty(x.shape[:-1] + (2, 2, 2))
    G[..., 0, 0, 0] = lx
    G[..., 0, 0, 1] = G[..., 0, 1, 0] = ly
    G[..., 0, 1, 1] = -lx
    G[..., 1, 0, 0] = -ly
    G[..., 1, 0, 1] = G[..., 1, 1, 0] = lx
    G[..., 1, 1, 1] = ly
    return G


def metric_tensor(m: MetricModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    e = np.exp(2.0 * m.lam(x[..., 0], x[..., 1]))
    return e[..., None, None] * np.eye(2)


def curvature(m: MetricModel, x):
    x = _check_domain(x)
    return m._fn["K"](x[..., 0], x[..., 1])


def curvature_gradient(m: MetricModel, x) -> np.ndarray:
    """Riemannian gradient of K (contravariant components): exp(-2 lam) dK."""
    x = _check_domain(x)
    t = m.terms(x[..., 0], x[..., 1])
    e = np.exp(-2.0 * t.lam)
    return np.stack([e * t.K_x, e * t.K_y], axis=-1)


def grad_K_sup(m: MetricModel, mesh) -> float:
    """Maximum over mesh nodes of |grad K|_g = exp(-lam) |dK|."""
    pts = mesh.nodes if hasattr(mesh, "nodes") else np.asarray(mesh, dtype=float)
    t = m.terms(pts[:, 0], pts[:, 1])
    return float(np.max(np.exp(-t.lam) * np.hypot(t.K_x, t.K_y)))


def boundary_convexity(m: MetricModel, n_samples: int = 64) -> float:
    """Minimum over boundary samples of -<nabla_xi nu, xi>_g.

    ``nu`` is the inward unit normal field -exp(-lam) x/|x| and ``xi`` the
    counterclockwise unit tangent.
    """
    if n_samples < 16:
        raise ValueError("need at least 16 boundary samples")
    s = 2.0 * np.pi * np.arange(n_samples) / n_samples
    p = np.stack([np.cos(s), np.sin(s)], axis=-1)
    lam, lx, ly = m.lam_grad(p[:, 0], p[:, 1])
    el = np.exp(-lam)
    nu = -el[:, None] * p
    xi = el[:, None] * np.stack([-p[:, 1], p[:, 0]], axis=-1)
    dlam = np.stack([lx, ly], axis=-1)
    # d_i nu^k on |x| = 1: exp(-lam) (lam_i x^k - delta_ik + x_i x_k)
    dnu = el[:, None, None] * (dlam[:, :, None] * p[:, None, :]
                               - np.eye(2)[None] + p[:, :, None] * p[:, None, :])
    cov = np.einsum("ni,nik->nk", xi, dnu)
    cov += np.einsum("nkij,ni,nj->nk", christoffel(m, p), xi, nu)
    inner = np.exp(2.0 * lam) * np.einsum("nk,nk->n", cov, xi)
    return float(np.min(-inner))


@dataclass
class SimplicityReport:
    convexity_margin: float
    min_b: float
    conjugate_point_found: bool
    sampled_ray_count: int
    conjugate_time: float | None = None
    diagnostics: list[str] = field(default_factory=list)

    @property
    def simple(self) -> bool:
        return self.convexity_margin > 0 and not self.conjugate_point_found


def check_simplicity(m: MetricModel, ray_budget: int = 64, h_t: float = 1e-2,
                     b_floor: float = B_FLOOR, t_floor: float = T_FLOOR) -> SimplicityReport:
    """Numerically certify simplicity: convex boundary and no conjugate points.

    Rays are a quasi-uniform (s, theta_in) sample of the influx boundary with
    roughly ``ray_budget`` members.  Integration failures are recorded in the
    report instead of raised.
    """
    from .errors import GeoXrayError
    from .jacobi import solve_rays

    if ray_budget < 1:
        raise ValueError("ray budget must be at least 1")
    margin = boundary_convexity(m, 64)
    n_s = max(1, int(round(math.sqrt(ray_budget))))
    n_t = max(1, int(math.ceil(ray_budget / n_s)))
    s = 2.0 * np.pi * (np.arange(n_s) + 0.5) / n_s
    th = -0.5 * np.pi + (np.arange(n_t) + 0.5) * np.pi / n_t
    S, TH = np.meshgrid(s, th, indexing="ij")
    S, TH = S.ravel()[:ray_budget], TH.ravel()[:ray_budget]
    x0 = np.stack([np.cos(S), np.sin(S)], axis=-1)
    beta = S + np.pi + TH

    report = SimplicityReport(margin, math.inf, False, int(S.size))
    try:
        results = solve_rays(m, x0, beta, h_t=h_t, with_theta=False)
    except GeoXrayError as exc:
        report.diagnostics.append(f"integration failure: {exc}")
        report.conjugate_point_found = True
        return report
    for k, jd in enumerate(results):
        late = jd.t > t_floor
        if not np.any(late):
            continue
        b = jd.b[late]
        report.min_b = min(report.min_b, float(b.min()))
        bad = np.nonzero(b < b_floor)[0]
        if bad.size:
            t_hit = float(jd.t[late][bad[0]])
            report.conjugate_point_found = True
            if report.conjugate_time is None or t_hit < report.conjugate_time:
                report.conjugate_time = t_hit
    return report
