"""Config-driven commands: solve, verify, convergence and compare-msfem."""
import csv
import json
import logging
import os
import time
from pathlib import Path

import numpy as np

from .coefficients import coefficient_from_spec, source_from_spec
from .diagnostics import (ERROR_COLUMNS, ReferenceElement, estimate_infsup_constants, fmt_number,
                          poincare_ratio, run_convergence_study, run_hash, verify_bundle)
from .driver import build_hierarchy, run_mh2m
from .errors import ConfigError, MH2MError, ThresholdError
from .local import dump_cache
from .mesh import mesh_summary, write_mesh, write_mesh_summary
from .oracles import ManufacturedCase, get_case, linear_extension_deviation, solve_msfem, solve_reference
from .skeleton import assemble_system, assemble_system_equivalent, solve

log = logging.getLogger("mh2m")

DEFAULT_BANDS = {0: (0.9, 1.3), 1: (1.8, 2.4)}
SWEEP_AXIS = {"target_H": "H_Gamma", "n_gamma": "H_Gamma", "n_lambda_per_gamma": "H_Lambda",
              "target_h": "h", "h_fraction": "h"}


def resolve_threads(cli_value=None):
    """CLI flag, then MH2M_THREADS, then 1."""
    if cli_value is not None:
        n = int(cli_value)
    else:
        env = os.environ.get("MH2M_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError as exc:
            raise ConfigError(f"MH2M_THREADS must be an integer, got {env!r}") from exc
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def resolve_problem(cfg):
    """ManufacturedCase for the config (exact solution may be missing)."""
    p = cfg.problem
    if p.case is not None:
        return get_case(p.case, **p.case_params)
    A = coefficient_from_spec(p.coefficient)
    f = source_from_spec(p.source)
    return ManufacturedCase("custom", A, f, description="configured coefficient and source")


def _domain(cfg):
    return cfg.problem.mesh_file if cfg.problem.mesh_file else tuple(cfg.problem.domain)


def _hierarchy_kwargs(cfg, **override):
    d = cfg.discretization
    kw = dict(domain=_domain(cfg), target_H=d.target_H, n_gamma=d.n_gamma,
              n_lambda_per_gamma=d.n_lambda_per_gamma, target_h=d.target_h, h_fraction=d.h_fraction)
    kw.update(override)
    return kw


def _run(cfg, case, threads, **override):
    hier = build_hierarchy(threads=threads, **_hierarchy_kwargs(cfg, **override))
    res = run_mh2m(hier, cfg.discretization.k, case.A, case.f, form=cfg.solver.form, method=cfg.solver.method,
                   rtol=cfg.solver.rtol, threads=threads)
    return res


# --------------------------------------------------------------------------
# writers


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_solution_csv(res, path):
    fh, wr = _writer(path)
    with fh:
        wr.writerow(["element", "x", "y", "u"])
        for t, c in enumerate(res.caches):
            uh = res.bundle.u_h(t)
            sub = c.V.submesh
            for v, (x, y) in enumerate(sub.vertices):
                wr.writerow([t, fmt_number(x), fmt_number(y), fmt_number(uh[v])])


def write_lambda_csv(res, path):
    fh, wr = _writer(path)
    with fh:
        wr.writerow(["element", "local_edge", "segment", "node", "x", "y", "lambda"])
        for t, c in enumerate(res.caches):
            lam = res.bundle.lam[t]
            b = c.block
            for le in range(3):
                v = b.views[le]
                for s in range(len(v) - 1):
                    tn = [0.5 * (v[s] + v[s + 1])] if b.k == 0 else [v[s], v[s + 1]]
                    pts = b.point(le, tn)
                    for r, (x, y) in enumerate(pts):
                        wr.writerow([t, le, s, r, fmt_number(x), fmt_number(y), fmt_number(lam[b.dof(le, s, r)])])


def write_rho_csv(res, path):
    fh, wr = _writer(path)
    with fh:
        wr.writerow(["dof", "x", "y", "rho"])
        for i, (x, y) in enumerate(res.trace_space.dof_coords):
            wr.writerow([i, fmt_number(x), fmt_number(y), fmt_number(res.bundle.rho[i])])


def write_json(obj, path):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _out_dir(cfg, out):
    d = Path(out if out is not None else cfg.outputs.dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _base_report(cfg, res, case):
    hier = res.hierarchy
    nlam = sum(c.block.ndofs for c in res.caches)
    nV = sum(c.V.ndofs for c in res.caches)
    return {
        "run_hash": run_hash(cfg.to_dict()),
        "mode": cfg.mode,
        "dofs": {"gamma": res.trace_space.ndofs, "lambda": nlam, "local_V": nV, "elements": hier.mesh.N},
        "mesh": mesh_summary(hier.mesh, hier.partition, hier.submeshes),
        "hierarchy": hier.report.as_dict() if hier.report is not None else None,
        "timings_ms": {"offline": 1e3 * res.timings["offline_s"], "online": 1e3 * res.timings["online_s"],
                       "assembly": 1e3 * res.system.assembly_seconds, "solve": 1e3 * res.info.seconds},
        "solver": {"method": res.info.method, "residual": res.info.residual, "iterations": res.info.iterations,
                   "form": res.system.form},
        "monitored": {"poincare_ratio_max": max(poincare_ratio(c, case.A, case.f) for c in res.caches)},
    }


def _write_solution(cfg, res, outdir, report):
    hier = res.hierarchy
    write_mesh(hier.mesh, outdir / "mesh.txt")
    write_mesh_summary(mesh_summary(hier.mesh, hier.partition, hier.submeshes), outdir / "mesh_summary.json")
    if "csv" in cfg.outputs.formats:
        write_solution_csv(res, outdir / "solution_u.csv")
        write_lambda_csv(res, outdir / "lambda.csv")
        write_rho_csv(res, outdir / "rho.csv")
    if cfg.outputs.dump_caches:
        cdir = outdir / "caches"
        cdir.mkdir(exist_ok=True)
        for c in res.caches:
            dump_cache(c, cdir / f"element_{c.owner:05d}.bin")
    if "json" in cfg.outputs.formats:
        write_json(report, outdir / "report.json")


# --------------------------------------------------------------------------
# commands


def cmd_solve(cfg, out=None, threads=None):
    threads = resolve_threads(threads)
    case = resolve_problem(cfg)
    res = _run(cfg, case, threads)
    outdir = _out_dir(cfg, out)
    report = _base_report(cfg, res, case)
    inv = verify_bundle(res.bundle, res.caches, res.system, res.info, cfg.thresholds)
    report["invariants"] = inv.as_dict()
    report["invariants_passed"] = inv.passed
    _write_solution(cfg, res, outdir, report)
    log.info("solve: %d skeleton dofs, residual %.3g", res.trace_space.ndofs, res.info.residual)
    return 0


def verification_suite(cfg, res, case):
    """Invariant report for one run plus cross-checks of the operators."""
    inv = verify_bundle(res.bundle, res.caches, res.system, res.info, cfg.thresholds)
    S_flux = assemble_system(res.trace_space, res.caches)
    S_en = assemble_system_equivalent(res.trace_space, res.caches)
    if S_flux.ndofs:
        kscale = max(np.max(np.abs(S_flux.K)), 1e-300)
        bscale = max(np.max(np.abs(S_flux.rhs)), 1e-300)
        inv.add("form_equivalence_K", np.max(np.abs(S_flux.K - S_en.K)) / kscale, 1e-10)
        inv.add("form_equivalence_rhs", np.max(np.abs(S_flux.rhs - S_en.rhs)) / bscale, 1e-10)
        a_cg, _ = solve(res.system, "cg", cfg.solver.rtol)
        a_d, _ = solve(res.system, "direct")
        inv.add("direct_vs_cg", np.max(np.abs(a_cg - a_d)) / max(np.max(np.abs(a_d)), 1.0), 1e-9)
    hier = res.hierarchy
    for t in cfg.diagnostics.infsup_elements:
        if not 0 <= t < len(res.caches):
            raise ConfigError(f"diagnostics.infsup_elements: no element {t}")
        ref = ReferenceElement(hier.mesh, hier.partition, res.trace_space, res.caches[t], case.A,
                               cfg.diagnostics.reference_factor)
        beta, _ = estimate_infsup_constants(res.caches[t], ref)
        inv.add(f"beta_lower_bound_element_{t}", 1.0 - beta, 1e-9)
    return inv


def cmd_verify(cfg, out=None, threads=None):
    threads = resolve_threads(threads)
    case = resolve_problem(cfg)
    res = _run(cfg, case, threads)
    outdir = _out_dir(cfg, out)
    report = _base_report(cfg, res, case)
    inv = verification_suite(cfg, res, case)
    report["invariants"] = inv.as_dict()
    report["invariants_passed"] = inv.passed
    _write_solution(cfg, res, outdir, report)
    if not inv.passed:
        names = ", ".join(f"{i.name}={i.value:.3g} (threshold {i.threshold:.3g})" for i in inv.failures())
        raise ThresholdError(f"invariant thresholds breached: {names}")
    return 0


def _oracle_case(cfg, case):
    """Case with gradients from a fine reference solve when no closed form exists."""
    if case.has_exact:
        return case
    if cfg.problem.mesh_file:
        raise ConfigError("reference-oracle errors need a rectangular domain")
    k = cfg.discretization.k
    ref = solve_reference(tuple(cfg.problem.domain), cfg.diagnostics.reference_n, case.A, case.f, p=k + 1)
    return ManufacturedCase(case.name, case.A, case.f, ref, ref.gradient, case.description + " (reference oracle)")


def cmd_convergence(cfg, out=None, threads=None):
    threads = resolve_threads(threads)
    case = _oracle_case(cfg, resolve_problem(cfg))
    sweep = cfg.sweep
    if sweep.parameter not in SWEEP_AXIS:
        raise ConfigError(f"sweep.parameter must be one of {sorted(SWEEP_AXIS)}")
    axis = SWEEP_AXIS[sweep.parameter]
    k = cfg.discretization.k
    levels = [_hierarchy_kwargs(cfg, **{sweep.parameter: v}) for v in sweep.values]
    report = run_convergence_study(levels, case, k, parameter=axis,
                                   reference_factor=cfg.diagnostics.reference_factor,
                                   proxies=cfg.diagnostics.error_proxies, form=cfg.solver.form,
                                   method=cfg.solver.method, rtol=cfg.solver.rtol, threads=threads,
                                   config=cfg.to_dict())
    rates, mono = report.rates, report.monotone
    outdir = _out_dir(cfg, out)
    report.write_csv(outdir / "errors.csv")
    bands = sweep.rate_bands or {"err_u_H1A": DEFAULT_BANDS[k]}
    checks = {}
    for col, (lo, hi) in bands.items():
        if col not in rates:
            raise ConfigError(f"sweep.rate_bands: unknown error column {col!r}")
        checks[col] = {"rate": rates[col], "band": [lo, hi], "passed": bool(lo <= rates[col] <= hi)}
    for col, ok in mono.items():
        if ok is False:
            log.warning("non-monotone error sequence in %s", col)
    write_json({"run_hash": run_hash(cfg.to_dict()), "study": report.as_dict(), "rate_checks": checks},
               outdir / "report.json")
    bad = [c for c, v in checks.items() if not v["passed"]]
    if bad:
        raise ThresholdError("rates outside band: " + ", ".join(
            f"{c}={checks[c]['rate']:.3f} not in {checks[c]['band']}" for c in bad))
    return 0


def cmd_compare_msfem(cfg, out=None, threads=None):
    threads = resolve_threads(threads)
    case = resolve_problem(cfg)
    outdir = _out_dir(cfg, out)
    gaps, rows, levels = [], [], []
    poly = None
    for li, lev in enumerate(cfg.msfem.levels):
        res = _run(cfg, case, threads, **lev)
        ms = solve_msfem(res.trace_space, res.caches, case.f, cfg.solver.method)
        diff = np.abs(res.bundle.rho - ms.rho)
        gap = float(diff.max()) if diff.size else 0.0
        gaps.append(gap)
        levels.append(dict(lev, h=max(s.h for s in res.hierarchy.submeshes), gap=gap))
        for i, (x, y) in enumerate(res.trace_space.dof_coords):
            rows.append([li, i, fmt_number(x), fmt_number(y), fmt_number(res.bundle.rho[i]), fmt_number(ms.rho[i]), fmt_number(diff[i])])
        if li == 0:
            dev = [linear_extension_deviation(c, res.trace_space, (0.3, 1.0, -0.7)) for c in res.caches]
            poly = float(max(dev))
    fh, wr = _writer(outdir / "msfem_comparison.csv")
    with fh:
        wr.writerow(["level", "dof", "x", "y", "rho_mh2m", "rho_msfem", "abs_diff"])
        wr.writerows(rows)
    decreasing = bool(all(b < a for a, b in zip(gaps, gaps[1:])))
    if not decreasing:
        log.warning("MH2M/MsFEM skeleton gap did not decrease across levels: %s", gaps)
    write_json({"run_hash": run_hash(cfg.to_dict()), "levels": levels, "gap_decreasing": decreasing,
                "linear_extension_deviation": poly}, outdir / "report.json")
    return 0


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "convergence": cmd_convergence,
            "compare-msfem": cmd_compare_msfem}


def run_command(cfg, mode=None, out=None, threads=None):
    mode = mode or cfg.mode
    if mode not in COMMANDS:
        raise ConfigError(f"unknown mode {mode!r}")
    t0 = time.perf_counter()
    code = COMMANDS[mode](cfg, out=out, threads=threads)
    log.info("%s finished in %.2f s", mode, time.perf_counter() - t0)
    return code


__all__ = ["cmd_solve", "cmd_verify", "cmd_convergence", "cmd_compare_msfem", "run_command", "resolve_threads",
           "resolve_problem", "ERROR_COLUMNS", "MH2MError"]
