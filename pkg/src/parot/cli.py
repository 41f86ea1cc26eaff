"""Command-line entry point: ``parot <subcommand> [--config PATH] [--out DIR]``.

Exit codes: 0 ok, 1 configuration error, 2 dichotomy breach,
3 continuation failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import diagnostics as dg
from .config import RunConfig
from .errors import (
    ConfigurationError,
    ContinuationError,
    DimensionError,
    FlowVerdictError,
    ObliquenessError,
    ParotError,
)
from .flow import assemble_state, read_potential_csv, run_flow, write_json, write_potential_csv, write_rows_csv
from .initdata import check_IC, continuation_initial_data, solve_steady
from .pipeline import (
    EXIT_BREACH,
    EXIT_CONFIG,
    EXIT_CONTINUATION,
    EXIT_OK,
    EXIT_VERIFY,
    _ic_dict,
    audit_state,
    build_setup,
    run_pipeline,
    sanitize,
    sigma_stage,
)

log = logging.getLogger("parot")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("PAROT_LOG", "error").strip().lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _load(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_mapping({})
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.resolution is not None:
        over["grid.resolution"] = args.resolution
    return cfg.override(**over) if over else cfg


def _out(args, cfg) -> Path:
    return Path(args.out) if args.out else cfg.path("output.dir")


def _emit(report: dict, out: Path, name: str, code: int) -> int:
    report["exit_code"] = code
    out.mkdir(parents=True, exist_ok=True)
    write_json(sanitize(report), out / name)
    return code


def _verdict_code(verdict: str) -> int:
    if verdict == "converged":
        return EXIT_OK
    return EXIT_BREACH if verdict == "dichotomy_breach" else EXIT_VERIFY


# -- subcommands -------------------------------------------------------------


def cmd_pipeline(cfg, out):
    code, rep = run_pipeline(cfg, out)
    print(f"pipeline: verdict={rep.get('verdict', 'n/a')} exit={code}")
    return code


def cmd_steady(cfg, out):
    setup = build_setup(cfg)
    report = {"config": cfg.as_dict()}
    try:
        u0, rep = solve_steady(setup.reference_problem, cfg.flow_config(), cfg.continuation_config())
    except FlowVerdictError as exc:
        report["error"] = str(exc)
        if exc.report is not None:
            report["steady"] = exc.report.summary()
        return _emit(report, out, "steady.json", EXIT_VERIFY)
    report["steady"] = rep.summary()
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rep, out / "steady_flow.csv")
    write_potential_csv(rep.final, out / "steady_potential.csv")
    print(f"steady: {rep.verdict} after {rep.steps} steps")
    return _emit(report, out, "steady.json", EXIT_OK)


def _initial_data(cfg, setup, report):
    u0, rep0 = solve_steady(setup.reference_problem, cfg.flow_config(), cfg.continuation_config())
    report["steady"] = rep0.summary()
    cont = continuation_initial_data(setup.reference, setup.cost, u0, setup.reference_problem,
                                     cfg.continuation_config())
    ic = check_IC(cont.u, setup.problem, max_pairs=cfg["verify.strict_pairs"], seed=cfg["seed"])
    report["continuation"] = {
        "steps": cont.steps, "s_values": cont.s_values, "newton_iterations": cont.newton_iterations,
        "kappa": cont.kappa, "boundary_residual": cont.boundary_residual, "ic": _ic_dict(ic),
    }
    return cont, ic


def cmd_init(cfg, out):
    setup = build_setup(cfg)
    report = {"config": cfg.as_dict()}
    try:
        cont, ic = _initial_data(cfg, setup, report)
    except FlowVerdictError as exc:
        report["error"] = str(exc)
        return _emit(report, out, "init.json", EXIT_VERIFY)
    except (ContinuationError, ObliquenessError) as exc:
        report["error"] = str(exc)
        return _emit(report, out, "init.json", EXIT_CONTINUATION)
    out.mkdir(parents=True, exist_ok=True)
    write_potential_csv(assemble_state(cont.u, setup.problem), out / "initial_potential.csv", normalize=False)
    print(f"init: {cont.steps} continuation steps, admissible={ic.passed}")
    return _emit(report, out, "init.json", EXIT_OK if ic.passed else EXIT_CONTINUATION)


def cmd_flow(cfg, out):
    setup = build_setup(cfg)
    report = {"config": cfg.as_dict()}
    if cfg["flow.initial"] is not None:
        u = read_potential_csv(cfg.path("flow.initial"), setup.source)
    else:
        try:
            cont, ic = _initial_data(cfg, setup, report)
        except FlowVerdictError as exc:
            report["error"] = str(exc)
            return _emit(report, out, "flow.json", EXIT_VERIFY)
        except (ContinuationError, ObliquenessError) as exc:
            report["error"] = str(exc)
            return _emit(report, out, "flow.json", EXIT_CONTINUATION)
        u = cont.u
    sig = sigma_stage(setup, cfg)
    report["mtw"] = sig
    rep = run_flow(assemble_state(u, setup.problem), cfg.flow_config(), setup.problem,
                   dg.make_monitor(sig.get("_thresholds")))
    report["flow"] = rep.summary()
    out.mkdir(parents=True, exist_ok=True)
    write_rows_csv(rep, out / "flow.csv")
    write_potential_csv(rep.final, out / "potential.csv")
    print(f"flow: {rep.verdict} after {rep.steps} steps")
    return _emit(report, out, "flow.json", _verdict_code(rep.verdict))


def cmd_mtw(cfg, out):
    setup = build_setup(cfg)
    if setup.source.dim < 2:
        raise DimensionError("the MTW tensor needs dimension at least 2")
    sig = sigma_stage(setup, cfg)
    report = {"config": cfg.as_dict(), "mtw": sig}
    print(f"mtw: sigma={sig['sigma']:.6g}")
    return _emit(report, out, "mtw.json", EXIT_OK)


def cmd_poly(cfg, out):
    res = dg.analyze_polynomial(cfg["poly.n"], cfg["poly.sigma"], cfg["poly.C"])
    report = {"config": cfg.as_dict(), "poly": dataclasses.asdict(res)}
    print(json.dumps(sanitize(report["poly"]), sort_keys=True))
    return _emit(report, out, "poly.json", EXIT_OK)


def cmd_verify(cfg, out):
    if cfg["verify.potential"] is None:
        raise ConfigurationError("verify needs verify.potential")
    setup = build_setup(cfg)
    u = read_potential_csv(cfg.path("verify.potential"), setup.source)
    state = assemble_state(u, setup.problem)
    audit = audit_state(state, setup.problem, cfg)
    report = {"config": cfg.as_dict(), "audit": audit}
    print(f"verify: passed={audit['passed']}")
    return _emit(report, out, "verify.json", EXIT_OK if audit["passed"] else EXIT_VERIFY)


HELP = {
    "pipeline": "full run: steady state, continuation, monitored flow, audits",
    "steady": "steady state of the reference cost",
    "init": "continuation to the target cost and admissibility checks",
    "flow": "monitored flow from flow.initial or freshly built initial data",
    "mtw": "sampled MTW lower bound and dichotomy thresholds",
    "poly": "roots and bounds of the dichotomy polynomial",
    "verify": "audit a stored potential (verify.potential)",
}

COMMANDS = {
    "pipeline": cmd_pipeline,
    "steady": cmd_steady,
    "init": cmd_init,
    "flow": cmd_flow,
    "mtw": cmd_mtw,
    "poly": cmd_poly,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parot", description="Parabolic optimal-transport flow for general costs.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", metavar="PATH", help="key = value config file (defaults if omitted)")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="sampler seed (overrides seed)")
        p.add_argument("--resolution", type=int, help="grid resolution (overrides grid.resolution)")
    return ap


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        out = _out(args, cfg)
        return COMMANDS[args.command](cfg, out)
    except (ConfigurationError, DimensionError) as exc:
        print(f"parot: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContinuationError, ObliquenessError) as exc:
        print(f"parot: continuation failed: {exc}", file=sys.stderr)
        return EXIT_CONTINUATION
    except ParotError as exc:
        print(f"parot: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
