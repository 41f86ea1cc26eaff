"""End-to-end orchestration: reference steady state, continuation to the
target cost, the monitored flow, and the post-convergence audits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from .config import RunConfig
from .cost import CostModel
from .errors import (
    ConfigurationError,
    ContinuationError,
    CoverageError,
    DimensionError,
    FlowVerdictError,
    ObliquenessError,
    OracleInapplicableError,
    ParotError,
)
from .flow import (
    Problem,
    assemble_state,
    dual_gradient_check,
    dual_potential,
    duality_gap,
    run_flow,
    transport_map,
    write_json,
    write_potential_csv,
    write_rows_csv,
)
from .geometry import DensityField, GridDomain, build_grid, density_from_spec, normalize_densities
from .initdata import check_IC, continuation_initial_data, solve_steady
from .oracle import compare_to_oracle, kantorovich_from_densities, monotone_rearrangement_1d, submodular

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_BREACH, EXIT_CONTINUATION, EXIT_VERIFY = 0, 1, 2, 3, 4

DUALITY_TOL = 1e-10
DUAL_GRAD_TOL = 1e-5


@dataclass
class Setup:
    source: GridDomain
    target: GridDomain
    rho: DensityField
    rho_star: DensityField
    cost: CostModel
    reference: CostModel
    problem: Problem
    reference_problem: Problem

    @property
    def h(self) -> float:
        return float(max(np.max(self.source.spacing), np.max(self.target.spacing)))


def build_setup(cfg: RunConfig) -> Setup:
    cfg.check_costs()
    src = build_grid(cfg.source_spec(), cfg["grid.resolution"])
    tgt = build_grid(cfg.target_spec(), cfg["grid.target_resolution"] or cfg["grid.resolution"])
    rho = density_from_spec(src, cfg.density_spec("rho"))
    rho_star = density_from_spec(tgt, cfg.density_spec("rho_star"))
    rho, rho_star = normalize_densities(rho, rho_star)
    cost, ref = cfg.cost(), cfg.reference_cost()
    prob = Problem(cost, src, tgt, rho, rho_star)
    return Setup(src, tgt, rho, rho_star, cost, ref, prob, prob.with_cost(ref))


def sigma_stage(setup: Setup, cfg: RunConfig) -> dict:
    n = setup.source.dim
    if n < 2:
        return {"applicable": False, "sigma": 0.0, "thresholds": None}
    est = dg.estimate_sigma_mtw(setup.cost, setup.source, setup.target, cfg["mtw.directions"],
                                cfg["mtw.max_x"], cfg["mtw.max_y"], cfg["mtw.refine"], cfg["seed"])
    th = dg.dichotomy_thresholds(n, est.sigma)
    return {
        "applicable": True,
        "sigma": est.sigma,
        "min_value": est.min_value,
        "witness": est.witness,
        "samples": est.samples,
        "fd_step": est.delta,
        "thresholds": {"safe": th.safe_bound, "blowup": th.blowup_bound},
        "_thresholds": th,
    }


def audit_state(state, problem: Problem, cfg: RunConfig) -> dict:
    """Transport-map, duality and oracle audits of a converged state."""
    grid = state.grid
    h = float(max(np.max(problem.source.spacing), np.max(problem.target.spacing)))
    out: dict = {}
    tm = transport_map(state, problem)
    out["transport_map"] = {
        "injective": tm.injective, "collisions": len(tm.collisions), "containment": tm.containment,
        "contained": tm.contained, "monotone": tm.monotone,
    }
    checks = {"injective": tm.injective, "contained": tm.contained}
    if tm.monotone is not None:
        checks["monotone"] = tm.monotone
    mass = state.mass_error
    out["mass_error"] = mass
    checks["mass_balance"] = mass <= 5 * h
    ustar = None
    try:
        dual, ustar = dual_potential(state, problem, cfg["verify.coverage_tol"], tm)
        gap = duality_gap(state, problem, dual)
        tgt = problem.target
        ok = np.isfinite(ustar[tgt.interior])
        grad_err = dual_gradient_check(problem, dual, Y=tgt.points[tgt.interior[ok]])
        out["duality"] = {"identity_max": gap, "gradient_fd_max": grad_err,
                          "coverage": float(np.mean(np.isfinite(ustar[tgt.active])))}
        checks["duality_identity"] = gap <= DUALITY_TOL
        checks["dual_gradient"] = grad_err <= DUAL_GRAD_TOL
    except CoverageError as exc:
        out["duality"] = {"error": str(exc)}
        checks["coverage"] = False

    oracle: dict = {}
    act = grid.active
    T = state.T[act]
    T_or = None
    if grid.dim == 1:
        try:
            T_or = monotone_rearrangement_1d(problem.rho, problem.rho_star, problem.cost)
        except OracleInapplicableError as exc:
            oracle["rearrangement"] = f"skipped: {exc}"
    plan = None
    cap = cfg["verify.oracle_cap"]
    if len(act) <= cap and len(problem.target.active) <= cap:
        plan = kantorovich_from_densities(problem.rho, problem.rho_star, problem.cost, cap)
        oracle["lp_marginal_error"] = plan.marginal_error()
    else:
        oracle["kantorovich"] = "skipped: node count above the size cap"
    us = None if ustar is None else ustar[problem.target.active]
    cmp = compare_to_oracle(T, problem.rho, problem.rho_star, problem.cost, T_or, plan,
                            state.u[act] if us is not None else None, us)
    oracle.update(cmp.as_dict())
    out["oracle"] = oracle
    checks["oracle"] = cmp.passed
    out["checks"] = checks
    out["passed"] = all(bool(v) for v in checks.values())
    return out


def _ic_dict(ic) -> dict:
    return {
        "boundary_residual": ic.boundary_residual, "min_eig": ic.min_eig, "containment": ic.containment,
        "strict_margin": ic.strict_margin, "strict_pairs": ic.strict_pairs, "passed": ic.passed,
    }


def _finish(report, out: Path | None, code: int, extra_files=None):
    report["exit_code"] = code
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(sanitize(report), out / "report.json")
    return code, report


def sanitize(obj):
    """JSON-safe copy: drops private keys, maps non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    return obj


def run_pipeline(cfg: RunConfig, out: Path | None = None) -> tuple[int, dict]:
    report: dict = {"config": cfg.as_dict(), "stages": {}}
    st = report["stages"]
    try:
        setup = build_setup(cfg)
    except (ConfigurationError, DimensionError) as exc:
        report["error"] = str(exc)
        return _finish(report, out, EXIT_CONFIG)
    fc, cc = cfg.flow_config(), cfg.continuation_config()
    n = setup.source.dim

    # reference steady state
    try:
        u0, rep0 = solve_steady(setup.reference_problem, fc, cc)
    except FlowVerdictError as exc:
        st["steady"] = {"verdict": exc.report.verdict if exc.report else "failed", "error": str(exc)}
        report["verdict"] = st["steady"]["verdict"]
        return _finish(report, out, EXIT_VERIFY)
    except (ContinuationError, ObliquenessError) as exc:
        st["steady"] = {"error": str(exc)}
        return _finish(report, out, EXIT_CONTINUATION)
    st["steady"] = rep0.summary()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_rows_csv(rep0, out / "steady_flow.csv")

    # structural constants
    sig = sigma_stage(setup, cfg)
    st["mtw"] = sig
    sigma = sig["sigma"]

    # initial-omega predicate on the reference data
    state0 = assemble_state(u0, setup.reference_problem)
    if n >= 2:
        pred = dg.initial_omega_predicate(state0, sigma)
        st["initial_omega"] = {"value": pred.value, "bound": pred.bound, "holds": pred.holds}
        log.info("initial omega predicate: max|W| = %.6g vs bound %.6g -> %s", pred.value, pred.bound, pred.holds)
    else:
        st["initial_omega"] = {"value": state0.W_norm, "bound": None, "holds": "n/a"}
        log.info("initial omega predicate: max|W| = %.6g; n/a in one dimension", state0.W_norm)

    # continuation to the target cost
    try:
        cont = continuation_initial_data(setup.reference, setup.cost, u0, setup.reference_problem, cc)
    except (ContinuationError, ObliquenessError) as exc:
        st["continuation"] = {"error": str(exc), "last_good_s": getattr(exc, "last_good_s", None)}
        return _finish(report, out, EXIT_CONTINUATION)
    ic = check_IC(cont.u, setup.problem, max_pairs=cfg["verify.strict_pairs"], seed=cfg["seed"])
    st["continuation"] = {
        "steps": cont.steps, "newton_iterations": cont.newton_iterations, "kappa": cont.kappa,
        "boundary_residual": cont.boundary_residual, "ic": _ic_dict(ic),
    }
    if not ic.passed:
        return _finish(report, out, EXIT_CONTINUATION)

    # the flow
    monitor = dg.make_monitor(sig.get("_thresholds"))
    state = assemble_state(cont.u, setup.problem)
    rep = run_flow(state, fc, setup.problem, monitor)
    st["flow"] = rep.summary()
    report["verdict"] = rep.verdict
    # in-memory handles for callers; sanitize() keeps them out of report.json
    report["_final"], report["_problem"] = rep.final, setup.problem
    if out is not None:
        write_rows_csv(rep, out / "flow.csv")
        write_potential_csv(rep.final, out / "potential.csv")
    if rep.verdict == "dichotomy_breach":
        return _finish(report, out, EXIT_BREACH)
    if rep.verdict != "converged":
        return _finish(report, out, EXIT_VERIFY)

    try:
        audit = audit_state(rep.final, setup.problem, cfg)
    except ParotError as exc:
        audit = {"passed": False, "error": str(exc)}
    st["audit"] = audit
    return _finish(report, out, EXIT_OK if audit["passed"] else EXIT_VERIFY)
