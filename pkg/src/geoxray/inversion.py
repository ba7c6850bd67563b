"""The smoothing error operator as a dense kernel matrix, its norm, the Neumann
series for (I + W^2)^{-1}, and the two reconstruction pipelines."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import transforms as tr
from .errors import DivergenceRiskError, GeoXrayError, InversionFailureError
from .geodesic import flow_rhs, flow_to_boundary
from .grids import BoundaryDataGrid, DiskMesh, FieldGrid
from .jacobi import N_EXTRA, _full_extra, initial_state, kernel_W_batch
from .metric import MetricModel

log = logging.getLogger(__name__)

KERNEL_HT = 5e-2
NEUMANN_TOL = 1e-8
NEUMANN_MAX_TERMS = 50
# power iteration approaches the norm from below; refuse this close to 1
NORM_MARGIN = 1e-6


@dataclass
class KernelOperator:
    """(W f)(x_k) ~ sum_l matrix[k, l] f(x_l) weights[l] over masked-in nodes."""

    mesh: DiskMesh
    matrix: np.ndarray
    weights: np.ndarray
    norm: float | None = None
    norm_residual: float | None = None
    norm_iterations: int | None = None

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ (self.weights * f)

    def adjoint(self) -> "KernelOperator":
        """Adjoint in the weighted L^2 pairing: matrix transpose, same weights."""
        return KernelOperator(self.mesh, self.matrix.T.copy(), self.weights,
                              self.norm, self.norm_residual, self.norm_iterations)

    def scaled(self, factor: float) -> "KernelOperator":
        return KernelOperator(self.mesh, factor * self.matrix, self.weights)

    def weighted_norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.weights * f * f)))


def build_W(m: MetricModel, mesh: DiskMesh, h_t: float = KERNEL_HT, tol: float = 1e-9,
            row_chunk: int = 40) -> KernelOperator:
    """Assemble the kernel matrix pair by pair (diagonal set to 0)."""
    P = mesh.nodes
    N = P.shape[0]
    W = np.zeros((N, N))
    for lo in range(0, N, row_chunk):
        rows = np.arange(lo, min(N, lo + row_chunk))
        X = np.repeat(P[rows], N, axis=0)
        Y = np.tile(P, (rows.size, 1))
        vals, conv = kernel_W_batch(m, X, Y, h_t=h_t, tol=tol)
        if not np.all(conv):
            k = int(np.nonzero(~conv)[0][0])
            raise InversionFailureError(
                f"exp_inverse failed for pair x={X[k].tolist()}, y={Y[k].tolist()}")
        W[rows] = vals.reshape(rows.size, N)
    np.fill_diagonal(W, 0.0)
    return KernelOperator(mesh, W, mesh.weights(m))


def apply_W_direct(m: MetricModel, f, mesh: DiskMesh, n_theta: int = 64,
                   h_t: float = 2e-2, b_guard: float = 1e-6) -> FieldGrid:
    """W f at the mesh nodes from the fiber-time integral of q * f(gamma).

    Independent of the kernel matrix: no exponential-map inversion, just
    fans of rays from every node carrying the variational Jacobi system and
    a running integral of q f.  ``f`` is a callable or a FieldGrid.
    """
    f = f if callable(f) else (lambda x, y: f)
    P = mesh.nodes
    th = 2.0 * np.pi * np.arange(n_theta) / n_theta

    def extra(p, E):
        d = np.empty_like(E)
        d[:, :N_EXTRA] = _full_extra(p, E[:, :N_EXTRA])
        a, b, Ta, Tb = E[:, 0], E[:, 2], E[:, 4], E[:, 6]
        ok = np.abs(b) > b_guard
        q = np.zeros_like(b)
        q[ok] = (b[ok] * Ta[ok] - a[ok] * Tb[ok]) / b[ok] ** 2
        d[:, N_EXTRA] = q * f(p.x, p.y)
        return d

    rhs = flow_rhs(m, extra, curvature=True)
    X = np.repeat(P, n_theta, axis=0)
    A = np.tile(th, P.shape[0])
    S0 = np.column_stack([initial_state(X, A), np.zeros(A.size)])
    res = flow_to_boundary(rhs, S0, h_t)
    integral = res.exit_state[:, 3 + N_EXTRA].reshape(P.shape[0], n_theta)
    vals = -integral.sum(axis=1) * (2.0 * np.pi / n_theta) / (2.0 * np.pi)
    return FieldGrid.from_masked(mesh, vals)


def norm_estimate(op: KernelOperator, tol: float = 1e-8, max_iter: int = 500) -> float:
    """Largest singular value of the operator on weighted L^2.

    Power iteration on B^T B with B = sqrt(w) W sqrt(w).  The start vector
    is drawn from a fixed-seed generator, so reruns are bit-identical; a
    symmetric start such as the constant vector would miss the top singular
    vector whenever the metric is radially symmetric.
    """
    s = np.sqrt(op.weights)
    B = s[:, None] * op.matrix * s[None, :]
    n = B.shape[0]
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    sigma2 = 0.0
    resid = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        u = B.T @ (B @ v)
        new = float(np.linalg.norm(u))
        if new == 0.0:
            sigma2, resid = 0.0, 0.0
            break
        u /= new
        resid = abs(new - sigma2) / new
        sigma2, v = new, u
        if resid < tol:
            break
    else:
        log.warning("norm power iteration stopped at %d iterations, residual %.2e", max_iter, resid)
    op.norm = math.sqrt(sigma2)
    op.norm_residual = resid
    op.norm_iterations = it
    return op.norm


@dataclass
class NeumannResult:
    values: np.ndarray
    terms: int
    term_norms: list[float]
    converged: bool
    warnings: list[str] = field(default_factory=list)


def neumann_apply(op: KernelOperator, r: np.ndarray, tol: float = NEUMANN_TOL,
                  max_terms: int = NEUMANN_MAX_TERMS) -> NeumannResult:
    """sum_k (-1)^k W^{2k} r, stopping before the first term below tol * |r|.

    ``terms`` counts the terms actually summed, r itself included.
    """
    if op.norm is None:
        norm_estimate(op)
    if op.norm >= 1.0 - NORM_MARGIN:
        raise DivergenceRiskError(f"operator norm estimate {op.norm:.4g} >= 1; Neumann series refused")
    r = np.asarray(r, dtype=float)
    total = r.copy()
    term = r.copy()
    r_norm = op.weighted_norm(r)
    norms = [r_norm]
    if r_norm == 0.0:
        return NeumannResult(total, 1, norms, True)
    for k in range(1, max_terms):
        term = -op.apply(op.apply(term))
        tn = op.weighted_norm(term)
        norms.append(tn)
        if tn < tol * r_norm:
            return NeumannResult(total, k, norms, True)
        total += term
    return NeumannResult(total, max_terms, norms, False,
                         [f"max_terms={max_terms} reached with term norm {norms[-1]:.3e}"])


# -- pipelines ---------------------------------------------------------------

@dataclass
class Reconstruction:
    field: FieldGrid
    single_term: FieldGrid
    diagnostics: dict


def _stage(label, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except GeoXrayError as exc:
        exc.args = (f"[{label}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        exc.stage = label
        raise


def _transfer(values: np.ndarray, src: DiskMesh, dst: DiskMesh) -> np.ndarray:
    """Move masked nodal values between meshes (piecewise linear, nearest beyond the hull)."""
    if src == dst:
        return values
    from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
    lin = LinearNDInterpolator(src.nodes, values)
    out = lin(dst.nodes)
    bad = np.isnan(out)
    if np.any(bad):
        out[bad] = NearestNDInterpolator(src.nodes, values)(dst.nodes[bad])
    return out


def _neumann_correct(op, r: FieldGrid, tol, max_terms, truth, m):
    diag = {"norm_estimate": None, "neumann_terms": 1, "residual_history": []}
    if op is None:
        return r, diag
    if op.norm is None:
        norm_estimate(op)
    r_coarse = _transfer(r.masked(), r.mesh, op.mesh)
    res = neumann_apply(op, r_coarse, tol, max_terms)
    corr = _transfer(res.values - r_coarse, op.mesh, r.mesh)
    out = FieldGrid.from_masked(r.mesh, r.masked() + corr)
    diag.update(norm_estimate=op.norm, neumann_terms=res.terms,
                residual_history=res.term_norms, neumann_converged=res.converged,
                warnings=res.warnings)
    return out, diag


def _finish(m, out, single, diag, truth):
    if truth is not None:
        t = truth if isinstance(truth, FieldGrid) else FieldGrid.from_function(out.mesh, truth)
        from .grids import relative_error
        diag["relative_error_if_truth_given"] = relative_error(m, out, t)
        diag["single_term_relative_error"] = relative_error(m, single, t)
    else:
        diag["relative_error_if_truth_given"] = None
    return Reconstruction(out, single, diag)


def function_rhs(m: MetricModel, data: BoundaryDataGrid, mesh: DiskMesh, n_theta: int,
                 geometry: tr.FiberGeometry | None = None, h_t: float = tr.BULK_HT) -> FieldGrid:
    """(1/4pi) delta_perp I1*(alpha* H (I0 f)^- ) = f + W^2 f, sampled on ``mesh``."""
    geo = geometry or _stage("geometry", tr.FiberGeometry.compute, m, mesh, n_theta, h_t)
    trace = tr.influx_trace(data)
    _, odd = tr.parity_parts(trace)
    hil = odd.with_values(tr.fiber_hilbert(2.0 * odd.values, axis=1))
    ws = _stage("pullback", tr.pullback_sharp, m, hil, mesh, n_theta, geometry=geo)
    V = tr.backproject_I1star(m, ws)
    r = tr.perp_divergence(m, V)
    r.values = r.values / (4.0 * math.pi)
    return r


def potential_rhs(m: MetricModel, data: BoundaryDataGrid, mesh: DiskMesh, n_theta: int,
                  geometry: tr.FiberGeometry | None = None, h_t: float = tr.BULK_HT) -> FieldGrid:
    """(1/4pi) I0*(alpha* H (I1 H_perp h)^+) = h + (W*)^2 h, sampled on ``mesh``."""
    geo = geometry or _stage("geometry", tr.FiberGeometry.compute, m, mesh, n_theta, h_t)
    trace = tr.influx_trace(data)
    even, _ = tr.parity_parts(trace)
    hil = even.with_values(tr.fiber_hilbert(2.0 * even.values, axis=1))
    ws = _stage("pullback", tr.pullback_sharp, m, hil, mesh, n_theta, geometry=geo)
    r = tr.backproject_I0star(m, ws)
    r.values = r.values / (4.0 * math.pi)
    return r


def reconstruct_function(m: MetricModel, data: BoundaryDataGrid, mesh: DiskMesh,
                         n_theta: int | None = None, op: KernelOperator | None = None,
                         tol: float = NEUMANN_TOL, max_terms: int = NEUMANN_MAX_TERMS,
                         truth=None, geometry: tr.FiberGeometry | None = None) -> Reconstruction:
    """Recover f from I0 f.  Without ``op`` only the leading term is returned."""
    n_theta = n_theta or data.n_theta
    r = function_rhs(m, data, mesh, n_theta, geometry)
    out, diag = _stage("neumann", _neumann_correct, op, r, tol, max_terms, truth, m)
    return _finish(m, out, r, diag, truth)


def reconstruct_potential(m: MetricModel, data: BoundaryDataGrid, mesh: DiskMesh,
                          n_theta: int | None = None, op: KernelOperator | None = None,
                          tol: float = NEUMANN_TOL, max_terms: int = NEUMANN_MAX_TERMS,
                          truth=None, geometry: tr.FiberGeometry | None = None) -> Reconstruction:
    """Recover h from I1 of its rotated gradient; the series runs in the adjoint."""
    n_theta = n_theta or data.n_theta
    r = potential_rhs(m, data, mesh, n_theta, geometry)
    adj = op.adjoint() if op is not None else None
    if adj is not None and op.norm is None:
        adj.norm = norm_estimate(op)
    out, diag = _stage("neumann", _neumann_correct, adj, r, tol, max_terms, truth, m)
    return _finish(m, out, r, diag, truth)
