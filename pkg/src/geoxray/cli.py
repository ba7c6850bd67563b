"""Config-driven experiment runner.

    geoxray run CONFIG [--out DIR] [--threads N] [--quiet]
    geoxray validate CONFIG

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import grids as G
from . import inversion as inv
from . import jacobi, phantoms
from . import metric as M
from . import transforms as tr
from .config import ExperimentConfig, load_config
from .errors import ConfigError, GeoXrayError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
log = logging.getLogger("geoxray")


def _metric(cfg: ExperimentConfig) -> M.MetricModel:
    return M.from_config(cfg.metric.model_dump())


def _phantom(cfg: ExperimentConfig) -> phantoms.Phantom:
    p = cfg.phantom
    if p.kind == "gaussian":
        return phantoms.gaussian(p.center, p.width)
    if p.kind == "polynomial-potential":
        return phantoms.polynomial_potential()
    return phantoms.from_grid_file(p.path)


def _require_simple(m: M.MetricModel, budget: int = 64):
    rep = M.check_simplicity(m, ray_budget=budget)
    if not rep.simple:
        from .errors import ConjugatePointError
        why = (f"conjugate point at t = {rep.conjugate_time:.4g}" if rep.conjugate_point_found
               else f"boundary not strictly convex (margin {rep.convexity_margin:.4g})")
        raise ConjugatePointError(f"[preflight] metric is not simple: {why}")
    return rep


# -- tasks -------------------------------------------------------------------

def task_forward(cfg, m, out: Path) -> dict:
    ph = _phantom(cfg)
    bd = G.BoundaryDataGrid(cfg.grids.n_s, cfg.grids.n_theta)
    data, tau = tr.forward_I0(m, ph, bd, cfg.solver.h_t, return_tau=True)
    S, TH = np.meshgrid(bd.s, bd.theta, indexing="ij")
    G.write_csv(out / "summary.csv", {"s": S, "theta_in": TH, "I0": data.values, "tau": tau.values})
    G.write_boundary(out / "I0", data)
    G.write_boundary(out / "tau", tau)
    return {"phantom": ph.name, "rays": int(data.values.size)}


def _kernel(cfg, m) -> inv.KernelOperator:
    op = inv.build_W(m, G.DiskMesh(cfg.grids.kernel_n), h_t=cfg.solver.kernel_h_t)
    inv.norm_estimate(op)
    return op


def _write_reconstruction(out: Path, rec: inv.Reconstruction, truth: G.FieldGrid):
    mesh = rec.field.mesh
    P = mesh.nodes
    G.write_field(out / "reconstruction", rec.field)
    G.write_field(out / "single_term", rec.single_term)
    G.write_field(out / "truth", truth)
    G.write_csv(out / "summary.csv", {"x": P[:, 0], "y": P[:, 1], "reconstruction": rec.field.masked(),
                                      "single_term": rec.single_term.masked(), "truth": truth.masked()})


def task_invert_function(cfg, m, out: Path) -> dict:
    _require_simple(m)
    ph = _phantom(cfg)
    bd = G.BoundaryDataGrid(cfg.grids.n_s, cfg.grids.n_theta)
    data = tr.forward_I0(m, ph, bd, cfg.solver.h_t)
    op = _kernel(cfg, m)
    mesh = G.DiskMesh(cfg.grids.n)
    truth = G.FieldGrid.from_function(mesh, ph)
    rec = inv.reconstruct_function(m, data, mesh, cfg.grids.n_theta, op=op, tol=cfg.solver.tol,
                                   max_terms=cfg.solver.max_terms, truth=truth)
    _write_reconstruction(out, rec, truth)
    return rec.diagnostics


def task_invert_potential(cfg, m, out: Path) -> dict:
    _require_simple(m)
    ph = _phantom(cfg)
    bd = G.BoundaryDataGrid(cfg.grids.n_s, cfg.grids.n_theta)
    data = tr.lift_transform(m, ph.grad, bd, cfg.solver.h_t)
    op = _kernel(cfg, m)
    mesh = G.DiskMesh(cfg.grids.n)
    truth = G.FieldGrid.from_function(mesh, ph)
    rec = inv.reconstruct_potential(m, data, mesh, cfg.grids.n_theta, op=op, tol=cfg.solver.tol,
                                    max_terms=cfg.solver.max_terms, truth=truth)
    _write_reconstruction(out, rec, truth)
    return rec.diagnostics


def verify_rays(m: M.MetricModel, n_rays: int, seed: int, h_t: float):
    """Per-ray checks of the two phi routes on random influx rays."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.0, 2.0 * np.pi, n_rays)
    th = rng.uniform(-0.45 * np.pi, 0.45 * np.pi, n_rays)
    x0 = np.column_stack([np.cos(s), np.sin(s)])
    rows = {k: np.empty(n_rays) for k in
            ("s", "theta_in", "tau", "phi_route_diff", "wronskian_dev", "phi0", "phi1_0", "phi2_0")}
    for k, jd in enumerate(jacobi.solve_rays(m, x0, s + np.pi + th, h_t=h_t, with_theta=True)):
        rows["s"][k], rows["theta_in"][k] = s[k], th[k]
        rows["tau"][k] = jd.t[-1]
        rows["phi_route_diff"][k] = np.max(np.abs(jacobi.phi_direct(jd) - jd.phi_ode))
        rows["wronskian_dev"][k] = np.max(np.abs(jd.wronskian - 1.0))
        rows["phi0"][k] = abs(jd.phi_ode[0])
        rows["phi1_0"][k] = abs(jd.phi1[0])
        rows["phi2_0"][k] = abs(jd.phi2[0])
    return rows


def task_verify_jacobi(cfg, m, out: Path) -> dict:
    rows = verify_rays(m, cfg.study.n_rays, cfg.seed, cfg.solver.h_t)
    G.write_csv(out / "summary.csv", rows)
    return {"rays": cfg.study.n_rays,
            "max_phi_route_diff": float(rows["phi_route_diff"].max()),
            "max_wronskian_dev": float(rows["wronskian_dev"].max())}


def task_kernel_norm(cfg, m, out: Path) -> dict:
    op = _kernel(cfg, m)
    gks = M.grad_K_sup(m, G.DiskMesh(cfg.grids.n))
    G.write_grid(out / "kernel", op.matrix, "kernel-matrix", n=op.mesh.n, h=op.mesh.h)
    G.write_csv(out / "summary.csv", {"grad_K_sup": [gks], "W_norm": [op.norm],
                                      "residual": [op.norm_residual],
                                      "iterations": [op.norm_iterations],
                                      "max_abs_entry": [float(np.abs(op.matrix).max())]})
    return {"norm_estimate": op.norm, "norm_residual": op.norm_residual, "grad_K_sup": gks}


def scaling_study(epsilons, kernel_n: int, n: int, center=(0.0, 0.0), width: float = 0.3,
                  h_t: float = inv.KERNEL_HT):
    gks, norms = [], []
    for eps in epsilons:
        m = M.conformal_bump(eps, center, width)
        op = inv.build_W(m, G.DiskMesh(kernel_n), h_t=h_t)
        norms.append(inv.norm_estimate(op))
        gks.append(M.grad_K_sup(m, G.DiskMesh(n)))
    slope = float(np.polyfit(np.log(gks), np.log(norms), 1)[0])
    return np.array(gks), np.array(norms), slope


def task_scaling_study(cfg, m, out: Path) -> dict:
    center, width = (0.0, 0.0), 0.3
    if cfg.metric.kind == "conformal-bump":
        center, width = cfg.metric.center, cfg.metric.width
    eps = list(cfg.study.epsilons)
    gks, norms, slope = scaling_study(eps, cfg.grids.kernel_n, cfg.grids.n, center, width,
                                      cfg.solver.kernel_h_t)
    G.write_csv(out / "summary.csv", {"epsilon": eps, "grad_K_sup": gks, "W_norm": norms})
    return {"loglog_slope": slope}


TASK_FUNCS = {
    "forward": task_forward,
    "invert-function": task_invert_function,
    "invert-potential": task_invert_potential,
    "verify-jacobi": task_verify_jacobi,
    "kernel-norm": task_kernel_norm,
    "scaling-study": task_scaling_study,
}


# -- commands ----------------------------------------------------------------

def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output)
    try:
        m = _metric(cfg)
    except (ValueError, GeoXrayError) as exc:
        print(f"config error: metric: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(args.threads):
                diag = TASK_FUNCS[cfg.task](cfg, m, out)
        else:
            diag = TASK_FUNCS[cfg.task](cfg, m, out)
    except GeoXrayError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        (out / "diagnostics.json").write_text(json.dumps(
            {"task": cfg.task, "status": "failed", "error": str(exc),
             "stage": getattr(exc, "stage", None)}, indent=2) + "\n")
        return EXIT_NUMERIC
    record = {"task": cfg.task, "status": "ok", "config": cfg.model_dump(mode="json"),
              "runtime_s": time.perf_counter() - t0, **_json_safe(diag)}
    (out / "diagnostics.json").write_text(json.dumps(record, indent=2) + "\n")
    log.info("%s finished in %.1f s; outputs in %s", cfg.task, record["runtime_s"], out)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
        m = _metric(cfg)
    except ConfigError as exc:
        print("invalid:")
        for p in exc.problems:
            print(f"  - {p}")
        return EXIT_CONFIG
    except (ValueError, GeoXrayError) as exc:
        print(f"invalid:\n  - metric: {exc}")
        return EXIT_CONFIG
    rep = M.check_simplicity(m, ray_budget=16)
    if rep.simple:
        print("valid; simple: yes")
    elif rep.conjugate_point_found and rep.conjugate_time is not None:
        print(f"valid; simple: NO (conjugate point at t ≈ {rep.conjugate_time:.3g})")
    elif rep.conjugate_point_found:
        print(f"valid; simple: NO ({'; '.join(rep.diagnostics)})")
    else:
        print(f"valid; simple: NO (boundary not strictly convex, margin {rep.convexity_margin:.3g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geoxray", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute the task named in a config file")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--threads", type=int, default=0, help="BLAS thread cap; 0 = library default")
    run.add_argument("--quiet", action="store_true")
    run.set_defaults(func=cmd_run)
    val = sub.add_parser("validate", help="check a config and run a quick simplicity preflight")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
