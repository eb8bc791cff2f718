"""Config-driven experiment runner.

Every pipeline reads a JSON config, writes CSV artifacts with 17 significant
digits plus a report.json, and renders diagnostic figures next to them
(``--no-figures`` switches the figures off).  Reruns with the same config and
seed produce byte-identical CSV files.

Exit codes: 0 success, 2 config schema violation (the message names the
field path), 3 solver or probe failure (the message names the error).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, plots
from .config import (SCHEMAS, domain_from_config, field_from_config,
                     validate_pipeline_config)
from .errors import EmptyFreeBoundary, LmalabError, SchemaError
from .geometry import Grid, ScalarField
from .linma import cofactor_field, discrete_hessian
from .ma import (EllipticityBounds, MAProblem, MASolverParams, solve_ma,
                 verify_ma_residual)
from .obstacle import (DroppingParams, LCPSolverParams, ObstacleProblem,
                       assemble_operator, complementarity_residual,
                       free_boundary, perron_dropping,
                       solve_obstacle_activeset, solve_obstacle_psor)
from .regularity import (alpha_from_theta, growth_check, holder_exponent,
                         two_case_modulus)
from .sections import (IterationParams, fit_delta_recursion, harnack_quotient,
                       iterate_normalization, section_ball_probe)
from .linma import TensorField

PIPELINES = ("solve-ma", "solve-obstacle", "probe-sections", "probe-harnack",
             "probe-normalization", "probe-holder", "full-pipeline")


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _report(out_dir, pipeline, config, seed, t0, payload):
    report = {
        "pipeline": pipeline,
        "config_hash": _config_hash(config),
        "seed": seed,
        "versions": {"lmalab": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "wall_time_s": time.perf_counter() - t0,
    }
    report.update(payload)
    with open(Path(out_dir) / "report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")
    return report


# ---------------------------------------------------------------------------
# shared builders
# ---------------------------------------------------------------------------

def _ma_params(cfg):
    solver = cfg.get("solver", cfg.get("ma_solver", {})) or {}
    return MASolverParams(
        tol_ma=solver.get("tol_ma", 1e-8),
        tol_convex=solver.get("tol_convex", 1e-10),
        stencil_width=solver.get("stencil_width", 1),
        max_newton=solver.get("max_newton", 200),
    )


def _lcp_params(cfg):
    solver = cfg.get("solver", {}) or {}
    return LCPSolverParams(
        tol_lcp=solver.get("tol_lcp", 1e-8),
        omega=solver.get("omega", 1.5),
        max_sweeps=solver.get("max_sweeps", 200_000),
        max_outer=solver.get("max_outer", 200),
    )


def _solve_potential(cfg_w, domain, grid, ma_params):
    """Potential field w from a w_source/potential config block."""
    kind = cfg_w["kind"]
    if kind == "file":
        return ScalarField.read_csv(cfg_w["path"]), {"w_source": "file"}
    if kind == "analytic":
        w = field_from_config({"kind": "expression", "expr": cfg_w["expr"]}, grid)
        return w, {"w_source": "analytic"}
    f = field_from_config(cfg_w["f"], grid)
    interior = f.interior_values()
    bounds = cfg_w.get("bounds")
    bounds = EllipticityBounds(*bounds) if bounds else EllipticityBounds(
        max(float(interior.min()), 1e-12), float(interior.max()))
    w = solve_ma(MAProblem(domain, f, bounds), grid, ma_params)
    return w, {"w_source": "solve", "ma_iterations": w.meta.get("iterations"),
               "ma_residual": w.meta.get("residual")}


def _coefficients(cfg_w, domain, grid, ma_params):
    """Cofactor tensor W from a w_source config block."""
    if cfg_w["kind"] == "identity":
        eye = np.eye(grid.ndim) if grid.ndim == 2 else np.array([[1.0]])
        return TensorField.constant(grid, eye), None, {"w_source": "identity"}
    w, meta = _solve_potential(cfg_w, domain, grid, ma_params)
    return cofactor_field(discrete_hessian(w)), w, meta


def _solve_lcp(problem, method, params):
    if method == "activeset":
        return solve_obstacle_activeset(problem, params)
    if method == "perron":
        v0 = default_supersolution(problem)
        v = perron_dropping(problem, v0, DroppingParams(tol_op=params.tol_op))
        A, info = assemble_operator(problem.W, problem.grid)
        res = complementarity_residual(A, v.values.ravel(),
                                       problem.phi.values.ravel(), info["interior"])
        from .obstacle import _make_solution
        return _make_solution(problem, v.values.ravel(), res,
                              v.meta.get("sweeps", 0), "perron", info)
    return solve_obstacle_psor(problem, params)


def default_supersolution(problem):
    """Scaled solve of (operator) v = -1: nonnegative, above the obstacle."""
    import scipy.sparse.linalg as spla
    A, info = assemble_operator(problem.W, problem.grid)
    rhs = np.zeros(problem.grid.size)
    rhs[info["interior"]] = 1.0
    G = spla.spsolve(A.tocsc(), rhs)
    phi = problem.phi.values.ravel()
    pos = G > 1e-14
    scale = float(np.max(phi[pos] / G[pos])) if pos.any() else 0.0
    scale = max(scale, 0.0) * 1.05 + 1e-9
    return ScalarField(problem.grid, (scale * G).reshape(problem.grid.shape))


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def run_solve_ma(config, out, seed, figures):
    domain = domain_from_config(config["domain"])
    grid = Grid.from_domain(domain, config["grid"]["h"])
    f = field_from_config(config["f"], grid)
    interior = f.interior_values()
    bounds = EllipticityBounds(max(float(interior.min()), 1e-12), float(interior.max()))
    params = _ma_params(config)
    w = solve_ma(MAProblem(domain, f, bounds), grid, params)
    w.to_csv(out / "w.csv")
    rep = verify_ma_residual(w, f, params.stencil_width)
    if figures:
        plots.field_figure(w, out / "w.png", "potential w")
        H = discrete_hessian(w)
        resid = ScalarField(grid, np.where(H.valid, np.abs(H.det() - f.values), 0.0))
        plots.field_figure(resid, out / "residual.png", "|det_h D2w - f|")
    return {
        "max_residual": rep.max_residual,
        "mean_residual": rep.mean_residual,
        "convexity_margin": rep.convexity_margin,
        "iterations": w.meta.get("iterations"),
        "tolerances": {"tol_ma": params.tol_ma, "tol_convex": params.tol_convex},
    }


def run_solve_obstacle(config, out, seed, figures):
    domain = domain_from_config(config["domain"])
    grid = Grid.from_domain(domain, config["grid"]["h"])
    W, w, meta = _coefficients(config["w_source"], domain, grid, _ma_params(config))
    phi = field_from_config(config["obstacle"], grid)
    problem = ObstacleProblem(W, phi)
    params = _lcp_params(config)
    method = (config.get("solver") or {}).get("method", "psor")
    sol = _solve_lcp(problem, method, params)
    sol.u.to_csv(out / "u.csv")
    ScalarField(grid, sol.contact.astype(float)).to_csv(out / "contact_mask.csv")
    fb_points = np.zeros((0, 2))
    try:
        fb = free_boundary(sol)
        fb_points = fb.points if grid.ndim == 2 else np.column_stack(
            [fb.points[:, 0], np.zeros(len(fb.points))])
    except EmptyFreeBoundary:
        pass
    write_csv(out / "free_boundary.csv", ["x", "y"], fb_points)
    if figures:
        plots.field_figure(sol.u, out / "u.png", f"obstacle solution ({sol.solver})",
                           overlay_points=fb_points if grid.ndim == 2 else None)
    return {
        "solver": sol.solver,
        "iterations": sol.iterations,
        "comp_residual": sol.comp_residual,
        "contact_nodes": int(sol.contact.sum()),
        "free_boundary_points": int(len(fb_points)),
        "warnings": sol.warnings,
        "tolerances": {"tol_lcp": params.tol_lcp, "omega": params.omega},
        **meta,
    }


def run_probe_sections(config, out, seed, figures):
    domain = domain_from_config(config["domain"])
    grid = Grid.from_domain(domain, config["grid"]["h"])
    w, meta = _solve_potential(config["potential"], domain, grid, _ma_params(config))
    probe = section_ball_probe(w, config["x0"], config["heights"])
    write_csv(out / "sections.csv", ["h", "r_in", "r_out"],
              zip(probe.heights, probe.inradii, probe.circumradii))
    if figures:
        plots.loglog_fit_figure(probe.heights, probe.circumradii, probe.sigma,
                                np.log(probe.C2), out / "sections.png",
                                "section circumradius vs height", "h", "r_out")
    return {
        "C1": probe.C1, "C2": probe.C2, "sigma": probe.sigma,
        "fit_residual": probe.fit_residual,
        "inclusions_hold": probe.inclusions_hold(),
        "tolerances": {"tol_ma": _ma_params(config).tol_ma},
        **meta,
    }


def run_probe_harnack(config, out, seed, figures):
    domain = domain_from_config(config["domain"])
    grid = Grid.from_domain(domain, config["grid"]["h"])
    w, meta = _solve_potential(config["potential"], domain, grid, _ma_params(config))
    W = cofactor_field(discrete_hessian(w))
    x0 = np.asarray(config["x0"], dtype=float)
    h = config["h"]
    draws = config.get("draws", 10)
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(draws):
        coef = rng.normal(0.0, 1.0, 3)

        def data(pts, c=coef):
            return np.exp(c[0] + c[1] * (pts[:, 0] - x0[0]) + c[2] * (pts[:, 1] - x0[1]))

        q = harnack_quotient(W, w, x0, h, data)
        rows.append((k + 1, q))
    quotients = [q for _, q in rows]
    write_csv(out / "harnack.csv", ["draw", "quotient"], rows)
    if figures:
        plots.quotients_figure(quotients, out / "harnack.png",
                               f"Harnack quotients at h = {h}")
    return {"max_quotient": max(quotients), "h": h, "draws": draws,
            "tolerances": {"tol_ma": _ma_params(config).tol_ma}, **meta}


def run_probe_normalization(config, out, seed, figures):
    domain = domain_from_config(config["domain"])
    grid = Grid.from_domain(domain, config["grid"]["h"])
    w, meta = _solve_potential(config["potential"], domain, grid, _ma_params(config))
    it = config["iteration"]
    params = IterationParams(h0=it["h0"], theta=it.get("theta", 0.2),
                             eps=it.get("eps", 0.0), k_max=it.get("k_max", 4),
                             C_cfg=it.get("C_cfg", 2.0), mu0=it.get("mu0", 0.5))
    result = iterate_normalization(w, config["x0"], params)
    fit = fit_delta_recursion(result)
    rows = []
    for s in result.steps:
        A = s.A
        rows.append((s.k, s.delta, s.r_in, s.r_out, A[0, 0], A[0, 1], A[1, 1]))
    write_csv(out / "normalization.csv",
              ["k", "delta_k", "r_in", "r_out", "A11", "A12", "A22"], rows)
    if figures and result.steps:
        ks = [s.k for s in result.steps]
        plots.delta_figure(ks, result.deltas(), fit.profile,
                           out / "normalization.png", "normalization defect")
    return {
        "nu": result.nu, "steps": len(result.steps),
        "truncated_reason": result.truncated_reason,
        "C_fit": fit.C, "profile_dominates": fit.dominated,
        "contraction_ok": fit.contraction_ok,
        "h0": params.h0, "eps": params.eps, "theta": params.theta,
        "tolerances": {"mvee_tol": params.mvee_tol,
                       "tol_ma": _ma_params(config).tol_ma},
        **meta,
    }


def _pick_anchor(fb_points):
    """Deterministic free-boundary anchor: the lexicographically largest point."""
    idx = np.lexsort(fb_points.T[::-1])
    return fb_points[idx[-1]]


def run_probe_holder(config, out, seed, figures):
    domain = domain_from_config(config["domain"])
    grid = Grid.from_domain(domain, config["grid"]["h"])
    W, w, meta = _coefficients(config["w_source"], domain, grid, _ma_params(config))
    phi = field_from_config(config["obstacle"], grid)
    problem = ObstacleProblem(W, phi)
    params = _lcp_params(config)
    method = (config.get("solver") or {}).get("method", "activeset")
    sol = _solve_lcp(problem, method, params)
    fb = free_boundary(sol)
    y0 = _pick_anchor(fb.points)
    radii = config.get("radii", [2.0**-k for k in range(2, 7)])
    fit = holder_exponent(sol.u, phi, y0, radii)
    write_csv(out / "exponent_fit.csv", ["r", "M"], zip(fit.radii, fit.values))

    growth_rows = []
    if w is not None:
        heights = config.get("growth_heights", [2.0**-k for k in range(3, 7)])
        try:
            for rep in growth_check(sol.u, phi, w, y0, heights):
                growth_rows.append((rep.h, rep.kappa, rep.s,
                                    rep.ratio if rep.ratio == rep.ratio else -1.0))
        except LmalabError:
            pass
    write_csv(out / "growth.csv", ["h", "kappa", "s", "ratio"], growth_rows)

    gamma = config.get("gamma", 0.9)
    theta = config.get("theta", 0.1)
    rng = np.random.default_rng(seed)
    n_pairs = config.get("pairs", 100)
    band = config.get("pair_band", 8 * grid.spacing)
    pairs = []
    for _ in range(n_pairs):
        base = fb.points[rng.integers(0, len(fb.points))]
        offs = rng.normal(0.0, band, (2, grid.ndim))
        pairs.append((base + offs[0], base + offs[1]))
    mod = two_case_modulus(sol.u, phi, pairs, gamma, fb.points)

    if figures:
        plots.loglog_fit_figure(fit.radii, fit.values, fit.alpha_hat, fit.intercept,
                                out / "exponent.png", "gradient growth from the "
                                "free boundary", "r", "max |Du - Du(y0)|")
        plots.field_figure(sol.u, out / "u.png", "obstacle solution",
                           overlay_points=fb.points)
    return {
        "alpha_hat": fit.alpha_hat,
        "alpha_stderr": fit.stderr,
        "fit_residual": fit.residual,
        "alpha_predicted": alpha_from_theta(theta),
        "theta": theta,
        "gamma": gamma,
        "anchor": [float(v) for v in y0],
        "seminorms": {"case1": mod.case1_max, "case2": mod.case2_max,
                      "chain_max": mod.chain_max,
                      "case1_pairs": mod.case1_count, "case2_pairs": mod.case2_count,
                      "skipped_pairs": mod.skipped},
        "solver": sol.solver,
        "tolerances": {"tol_lcp": params.tol_lcp, "tol_ma": _ma_params(config).tol_ma},
        **meta,
    }


def run_full_pipeline(config, out, seed, figures):
    domain = domain_from_config(config["domain"])
    grid = Grid.from_domain(domain, config["grid"]["h"])
    ma_params = _ma_params({"solver": config.get("ma_solver", {})})
    f = field_from_config(config["f"], grid)
    interior = f.interior_values()
    bounds = EllipticityBounds(max(float(interior.min()), 1e-12), float(interior.max()))
    w = solve_ma(MAProblem(domain, f, bounds), grid, ma_params)
    w.to_csv(out / "w.csv")
    rep_ma = verify_ma_residual(w, f)

    W = cofactor_field(discrete_hessian(w))
    phi = field_from_config(config["obstacle"], grid)
    problem = ObstacleProblem(W, phi)
    sol = _solve_lcp(problem, (config.get("solver") or {}).get("method", "activeset"),
                     _lcp_params(config))
    sol.u.to_csv(out / "u.csv")
    ScalarField(grid, sol.contact.astype(float)).to_csv(out / "contact_mask.csv")
    fb = free_boundary(sol)
    write_csv(out / "free_boundary.csv", ["x", "y"],
              fb.points if grid.ndim == 2 else np.column_stack(
                  [fb.points[:, 0], np.zeros(len(fb.points))]))

    heights = config.get("heights", [2.0**-k for k in range(4, 9)])
    probe = section_ball_probe(w, np.zeros(grid.ndim), heights)
    write_csv(out / "sections.csv", ["h", "r_in", "r_out"],
              zip(probe.heights, probe.inradii, probe.circumradii))

    y0 = _pick_anchor(fb.points)
    radii = config.get("radii", [2.0**-k for k in range(2, 7)])
    fit = holder_exponent(sol.u, phi, y0, radii)
    write_csv(out / "exponent_fit.csv", ["r", "M"], zip(fit.radii, fit.values))
    growth_rows = [(rep.h, rep.kappa, rep.s,
                    rep.ratio if rep.ratio == rep.ratio else -1.0)
                   for rep in growth_check(sol.u, phi, w, y0,
                                           config.get("heights", [2.0**-k for k in range(3, 7)]))]
    write_csv(out / "growth.csv", ["h", "kappa", "s", "ratio"], growth_rows)

    if figures:
        plots.field_figure(w, out / "w.png", "potential w")
        plots.field_figure(sol.u, out / "u.png", "obstacle solution",
                           overlay_points=fb.points)
        plots.loglog_fit_figure(fit.radii, fit.values, fit.alpha_hat, fit.intercept,
                                out / "exponent.png", "gradient growth", "r", "M(r)")
    return {
        "ma": {"max_residual": rep_ma.max_residual,
               "convexity_margin": rep_ma.convexity_margin,
               "iterations": w.meta.get("iterations")},
        "obstacle": {"solver": sol.solver, "iterations": sol.iterations,
                     "comp_residual": sol.comp_residual,
                     "contact_nodes": int(sol.contact.sum())},
        "sections": {"C1": probe.C1, "C2": probe.C2, "sigma": probe.sigma},
        "holder": {"alpha_hat": fit.alpha_hat, "fit_residual": fit.residual,
                   "anchor": [float(v) for v in y0]},
        "tolerances": {"tol_ma": ma_params.tol_ma,
                       "tol_lcp": _lcp_params(config).tol_lcp},
    }


_RUNNERS = {
    "solve-ma": run_solve_ma,
    "solve-obstacle": run_solve_obstacle,
    "probe-sections": run_probe_sections,
    "probe-harnack": run_probe_harnack,
    "probe-normalization": run_probe_normalization,
    "probe-holder": run_probe_holder,
    "full-pipeline": run_full_pipeline,
}


def run_experiment(pipeline, config, out_dir, seed=None, figures=True, verbose=False):
    """Validate, run, and write artifacts.  Returns the report dict."""
    validate_pipeline_config(pipeline, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if seed is None:
        seed = int(config.get("seed", 0))
    t0 = time.perf_counter()
    payload = _RUNNERS[pipeline](config, out, seed, figures)
    report = _report(out, pipeline, config, seed, t0, payload)
    if verbose:
        print(json.dumps(report, indent=1, sort_keys=True, default=float))
    return report


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="lmalab",
        description="Experiment runner for the obstacle-problem laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PIPELINES:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--verbose", action="store_true")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    ps = sub.add_parser("schema", help="print a pipeline config schema")
    ps.add_argument("pipeline", nargs="?", choices=PIPELINES)
    args = parser.parse_args(argv)

    if args.command == "schema":
        if args.pipeline:
            print(json.dumps(SCHEMAS[args.pipeline], indent=1, sort_keys=True))
        else:
            print("\n".join(PIPELINES))
        return 0

    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out or config.get("output_dir")
    if not out_dir:
        print("no output directory: pass --out or set output_dir", file=sys.stderr)
        return 2
    try:
        run_experiment(args.command, config, out_dir, seed=args.seed,
                       figures=not args.no_figures, verbose=args.verbose)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LmalabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
