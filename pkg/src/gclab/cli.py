"""Command-line front end.

    gclab eigen-check|solve|estimate|sweep|convergence --config FILE [--out DIR] [--seed N]

The config file is JSON holding one object keyed by the command name, e.g.
``{"solve": {"name": "cosh", "n_cells": 64}}``.  Every default is written back
into the produced reports.  Exit codes: 0 success, 1 check or convergence
failure, 2 configuration error, 3 numeric range error, 4 empty Sigma,
5 rim-adjacent maximum (only with ``strict_rim``).
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .eigensys import oracle_suite
from .errors import EmptySigmaError, GclabError, InputError, StudyError, WeightRangeError
from .estimator import auxiliary_config, bound_report, parameter_sweep, phi_eval, tau_field
from .fieldcalc import gradient_bound_check
from .fieldio import write_field, write_json, write_jsonl, write_table
from .manufactured import names as manufactured_names
from .solver import (SolverConfig, convergence_study, newton_solve, problem_from_manufactured,
                     sup_error)

log = logging.getLogger("gclab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RANGE, EXIT_EMPTY, EXIT_RIM = 0, 1, 2, 3, 4, 5


class ConfigError(Exception):
    pass


_SOLVER_DEFAULTS = {f.name: f.default for f in dataclasses.fields(SolverConfig)}
_SOLVER_DEFAULTS.pop("seed")

_PROBLEM = {"name": "cosh", "R": 1.0, "half_width": None, "scale": 1.0}

DEFAULTS = {
    "eigen-check": {"dims": [2, 3, 4, 5], "n_matrices": 100, "gap_min": 0.5, "h": 1e-5,
                    "bound": 2.0, "tol_first": 1e-6, "tol_second": 1e-4, "seed": 0},
    "solve": dict(_PROBLEM, n_cells=64, seed=0, solver=_SOLVER_DEFAULTS),
    "estimate": dict(_PROBLEM, n_cells=64, seed=0, m=None, M=None, beta=4.0, c0=None,
                     gap_floor=1e-9, strict_rim=False, solver=_SOLVER_DEFAULTS),
    "convergence": dict(_PROBLEM, levels=[32, 64, 128], seed=0, solver=_SOLVER_DEFAULTS),
    "sweep": {"name": "cosh", "radii": [0.5, 1.0, 2.0], "levels": [64], "scales": [1.0],
              "beta": 4.0, "gap_floor": 1e-9, "seed": 0, "solver": _SOLVER_DEFAULTS},
}
DEFAULTS["convergence"].pop("half_width")


def _merge(defaults, given, where):
    if not isinstance(given, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        out[k] = _merge(defaults[k], v, f"{where}.{k}") if isinstance(defaults[k], dict) else v
    return out


def load_config(path, command, seed=None):
    """Read ``path`` and return the fully materialised settings for ``command``."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict) or len(raw) != 1:
        raise ConfigError("config must hold exactly one top-level command object")
    (key, body), = raw.items()
    if key != command:
        raise ConfigError(f"config is for {key!r}, not {command!r}")
    cfg = _merge(DEFAULTS[command], body, command)
    if seed is not None:
        cfg["seed"] = int(seed)
    if "name" in cfg and cfg["name"] not in manufactured_names():
        raise ConfigError(f"unknown manufactured solution {cfg['name']!r}")
    return cfg


def _solver_config(cfg):
    try:
        return SolverConfig(seed=int(cfg["seed"]), **cfg["solver"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _problem(cfg, n_cells):
    return problem_from_manufactured(cfg["name"], R=cfg["R"], n_cells=n_cells,
                                     half_width=cfg.get("half_width"), scale=cfg["scale"])


# ---------------------------------------------------------------------------
# commands


def cmd_eigen_check(cfg, out):
    dims = tuple(int(d) for d in cfg["dims"])
    if not dims or min(dims) < 2:
        raise ConfigError("dims must be a non-empty list of integers >= 2")
    summary = oracle_suite(dims=dims, n_matrices=int(cfg["n_matrices"]), gap_min=cfg["gap_min"],
                           h=cfg["h"], seed=cfg["seed"], bound=cfg["bound"],
                           tol_first=cfg["tol_first"], tol_second=cfg["tol_second"])
    write_json(out / "eigen_check.json", {"config": cfg, "summary": summary})
    return EXIT_OK if summary["passed"] else EXIT_FAIL


def cmd_solve(cfg, out):
    spec = _problem(cfg, cfg["n_cells"])
    st = newton_solve(spec, _solver_config(cfg))
    write_field(out / "solution.csv", st.u, "u")
    write_jsonl(out / "solve_log.jsonl", st.log)
    report = {"config": cfg, "grid": spec.grid.metadata(), "state": st.summary(),
              "m": spec.m, "M": spec.M}
    if st.converged:
        report["sup_error"] = sup_error(st, spec)
        report["gradient_bound"] = gradient_bound_check(st.u, spec.R).as_dict()
    write_json(out / "solve_report.json", report)
    return EXIT_OK if st.converged else EXIT_FAIL


def cmd_estimate(cfg, out):
    levels = cfg["n_cells"] if isinstance(cfg["n_cells"], list) else [cfg["n_cells"]]
    if not levels:
        raise ConfigError("n_cells list is empty")
    solver = _solver_config(cfg)
    states = []
    for n in levels:
        spec = _problem(cfg, n)
        st = newton_solve(spec, solver)
        if not st.converged:
            write_json(out / "estimate_report.json",
                       {"config": cfg, "failed_level": n, "state": st.summary()})
            return EXIT_FAIL
        states.append((n, spec, st))
    # one set of constants for every level: measured on the finest grid
    _, fine_spec, fine_st = max(states, key=lambda s: s[0])
    aux = auxiliary_config(fine_st.u, fine_spec, m=cfg["m"], M=cfg["M"], beta=cfg["beta"],
                           c0=cfg["c0"], gap_floor=cfg["gap_floor"],
                           strict_rim=cfg["strict_rim"])
    reports = []
    code = EXIT_OK
    for n, spec, st in states:
        try:
            rep = bound_report(st.u, aux, spec)
        except (WeightRangeError, EmptySigmaError) as exc:
            write_json(out / "estimate_report.json",
                       {"config": cfg, "auxiliary": aux.as_dict(), "failed_level": n,
                        "error": type(exc).__name__, "message": str(exc),
                        "node": list(getattr(exc, "node", None) or [])})
            raise
        phi = phi_eval(st.u, tau_field(st.u, aux), aux)
        write_field(out / f"phi_n{n}.csv", st.u, "phi", values=phi.values)
        reports.append(dict(rep.as_dict(), n_cells=n))
        if not rep.chain_holds:
            code = EXIT_FAIL
        elif rep.rim_adjacent and aux.strict_rim and code == EXIT_OK:
            code = EXIT_RIM
    payload = {"config": cfg, "auxiliary": aux.as_dict(), "reports": reports}
    if len(reports) > 1:
        payload["refinement"] = [
            {"from": a["n_cells"], "to": b["n_cells"],
             "phi_max_change": abs(b["phi_max"] - a["phi_max"]) / abs(a["phi_max"]),
             "eta_lambda1_max_change":
                 abs(b["eta_lambda1_max"] - a["eta_lambda1_max"]) / abs(a["eta_lambda1_max"])}
            for a, b in zip(reports, reports[1:])]
    write_json(out / "estimate_report.json", payload)
    return code


def cmd_convergence(cfg, out):
    levels = [int(n) for n in cfg["levels"]]
    if len(levels) < 2:
        raise ConfigError("a convergence study needs at least two levels")
    columns = ["n_cells", "h", "iterations", "residual", "sup_error", "order", "status"]
    try:
        rows = convergence_study(cfg["name"], levels, R=cfg["R"], config=_solver_config(cfg),
                                 scale=cfg["scale"])
        for r in rows:
            r["status"] = "ok"
        code = EXIT_OK
    except StudyError as exc:
        rows = [{"n_cells": exc.level, "status": f"failed: {exc}"}]
        code = EXIT_FAIL
    write_table(out / "convergence.csv", rows, columns)
    write_json(out / "convergence.json", {"config": cfg, "rows": rows})
    return code


def cmd_sweep(cfg, out):
    for key in ("radii", "levels", "scales"):
        if not cfg[key]:
            raise ConfigError(f"{key} must be a non-empty list")
    rows = parameter_sweep(cfg["name"], radii=cfg["radii"], levels=cfg["levels"],
                           scales=cfg["scales"], solver_config=_solver_config(cfg),
                           beta=cfg["beta"], gap_floor=cfg["gap_floor"])
    write_table(out / "sweep.csv", rows)
    write_json(out / "sweep.json", {"config": cfg, "rows": rows})
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_FAIL


COMMANDS = {"eigen-check": cmd_eigen_check, "solve": cmd_solve, "estimate": cmd_estimate,
            "convergence": cmd_convergence, "sweep": cmd_sweep}


# ---------------------------------------------------------------------------


def _thread_limit():
    raw = os.environ.get("GCLAB_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"GCLAB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"GCLAB_THREADS must be a positive integer, got {raw!r}")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="gclab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gclab {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", default="gclab-out", help="output directory (default: gclab-out)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.command, args.seed)
        threads = _thread_limit()
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if threads is None:
            return COMMANDS[args.command](cfg, out)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](cfg, out)
    except (ConfigError, InputError) as exc:
        print(f"gclab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WeightRangeError as exc:
        print(f"gclab: range error: {exc}", file=sys.stderr)
        return EXIT_RANGE
    except EmptySigmaError as exc:
        print(f"gclab: empty Sigma: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except GclabError as exc:
        print(f"gclab: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
