"""Command-line front end.

Subcommands:

* ``solve``     one problem, one scheme, one start; prints the homotopy trace
                and the final stationarity certificate.
* ``campaign``  problem set x scheme set x start set; writes results.csv and
                profile.csv.
* ``oracle``    branch-enumeration global reference value.
* ``check``     verify a stationarity kind at a given point.

Exit codes: 0 when every requested run completed (converged or controlled
budget exhaustion), 1 when some run failed hard, 2 on bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import (
    RunRecord, branch_enumerate_global, builtin_names, make_benchmark,
    performance_profile, profile_to_csv, results_to_csv,
)
from .driver import DriverOptions, SolveTrace, solve_mpsc
from .exceptions import ParseError, SwitchoptError
from .expr import load_problem_file
from .nlp import NlpOptions
from .problem import MpscProblem, evaluate
from .relaxation import Scheme
from .stationarity import verify_stationarity

_COMPLETED = ("certified", "t_min")


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def _resolve_problem(spec: str) -> Tuple[MpscProblem, List[np.ndarray]]:
    """A problem argument is a file path or a built-in name with parameters.

    Built-in parameters use ``name:key=value,key=value``, e.g.
    ``portfolio:n=8,seed=3``.
    """
    if os.path.exists(spec):
        loaded = load_problem_file(spec)
        return loaded.problem, loaded.starts
    name, _, rest = spec.partition(":")
    params: Dict[str, int] = {}
    if rest:
        for item in rest.split(","):
            key, _, value = item.partition("=")
            if not value:
                raise ValueError(f"bad parameter '{item}' in problem spec '{spec}'")
            params[key.strip()] = int(value)
    if name not in builtin_names():
        raise ValueError(
            f"'{spec}' is neither a file nor a built-in problem "
            f"(built-ins: {', '.join(builtin_names())})"
        )
    return make_benchmark(name, **params), []


def _parse_point(text: str, n: int) -> np.ndarray:
    parts = [p for p in text.replace(",", " ").split() if p]
    vec = np.array([float(p) for p in parts])
    if vec.size != n:
        raise ValueError(f"point has {vec.size} coordinates, expected {n}")
    return vec


def _starts_from_spec(spec: str, n: int, file_starts: List[np.ndarray]) -> Tuple[List[np.ndarray], Optional[str]]:
    """Start-point generators: grid[:v1,v2,...], random:COUNT:SEED, file, or a literal point."""
    if spec == "file":
        if not file_starts:
            raise ValueError("problem file provided no start points")
        return list(file_starts), None
    if spec.startswith("grid"):
        _, _, levels_text = spec.partition(":")
        levels = [float(v) for v in levels_text.split(",")] if levels_text else [0.0, 0.5, 1.0]
        if len(levels) ** n > 100000:
            raise ValueError("grid start set too large")
        mesh = np.meshgrid(*([np.asarray(levels)] * n), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        return [pts[i] for i in range(pts.shape[0])], None
    if spec.startswith("random"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError("random starts need the form random:COUNT:SEED")
        count, seed = int(parts[1]), int(parts[2])
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0.0, 1.0, size=(count, n))
        header = f"rng=PCG64 seed={seed} count={count}"
        return [pts[i] for i in range(count)], header
    return [_parse_point(spec, n)], None


def _driver_options(args, scheme: Scheme) -> DriverOptions:
    sub = NlpOptions(tol_kkt=args.subtol)
    return DriverOptions(
        scheme=scheme, t0=args.t0, t_shrink=args.shrink, t_min=args.tmin,
        tol_outer=args.tol, subsolver=sub, restarts=args.restarts,
        min_kind=args.min_kind,
    )


def _add_driver_flags(p: argparse.ArgumentParser):
    p.add_argument("--scheme", default="ks", choices=["ks", "scholtes", "su", "kdb"])
    p.add_argument("--t0", type=float, default=0.01)
    p.add_argument("--shrink", type=float, default=0.01)
    p.add_argument("--tmin", type=float, default=1e-8)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--subtol", type=float, default=1e-6)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--min-kind", default="W", choices=["none", "W", "M", "S"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_solve(args) -> int:
    problem, file_starts = _resolve_problem(args.problem)
    if args.start is not None:
        x0 = _parse_point(args.start, problem.n)
    elif file_starts:
        x0 = file_starts[0]
    else:
        x0 = np.zeros(problem.n)
    opts = _driver_options(args, Scheme.parse(args.scheme))
    trace = solve_mpsc(problem, x0, opts)

    print(f"problem {problem.name}  scheme {args.scheme}  start {x0.tolist()}")
    for it in trace.iterations:
        print(f"  k={it.k} t={it.t:.3e} f={it.f:.10g} feas={it.feas_violation:.3e} "
              f"kkt={it.cert_residual:.3e} sub={it.sub_status}")
    kind = trace.final_kind
    print(f"status {trace.status}  restarts {trace.restarts_used}")
    print(f"final x = {np.array2string(trace.final_x, precision=8)}")
    print(f"final f = {trace.final_f:.10g}")
    if trace.certificate is not None:
        c = trace.certificate
        print(f"certificate kind={kind} residual={c.residual:.3e} "
              f"licq={c.cq_flags.mpsc_licq} mfcq={c.cq_flags.mpsc_mfcq} "
              f"nnamcq={c.cq_flags.nnamcq}")
    else:
        print("certificate kind=none (classification unavailable)")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "trace.csv"), "w", encoding="utf-8") as fh:
            fh.write("k,t,f,feas,kkt_res\n")
            for it in trace.iterations:
                fh.write(f"{it.k},{it.t:.12g},{it.f:.12g},"
                         f"{it.feas_violation:.12g},{it.cert_residual:.12g}\n")
        payload = {
            "problem": problem.name, "scheme": args.scheme,
            "status": trace.status, "kind": kind,
            "x": trace.final_x.tolist(), "f": trace.final_f,
            "restarts": trace.restarts_used,
        }
        if trace.certificate is not None:
            payload["residual"] = trace.certificate.residual
            payload["multipliers"] = {
                "lam": trace.certificate.multipliers.lam.tolist(),
                "rho": trace.certificate.multipliers.rho.tolist(),
                "mu": trace.certificate.multipliers.mu.tolist(),
                "nu": trace.certificate.multipliers.nu.tolist(),
            }
        with open(os.path.join(args.out, "certificate.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0 if trace.status in _COMPLETED else 1


def _run_one(problem: MpscProblem, scheme_label: str, start_id: int,
             x0: np.ndarray, opts: DriverOptions) -> Tuple[RunRecord, SolveTrace]:
    tic = time.perf_counter()
    trace = solve_mpsc(problem, x0, opts)
    elapsed_ms = (time.perf_counter() - tic) * 1000.0
    rec = evaluate(problem, trace.final_x)
    record = RunRecord(
        solver=scheme_label, problem=problem.name, start_id=start_id,
        f=trace.final_f, feas_violation=rec.feasibility_violation(),
        status=trace.status, time_ms=elapsed_ms,
        evaluations=trace.total_evaluations,
    )
    return record, trace


def _cmd_campaign(args) -> int:
    specs = [s for s in args.problems.split(",") if s]
    schemes = [s for s in args.schemes.split(",") if s]
    problems = []
    start_sets = []
    header: Optional[str] = None
    for spec in specs:
        problem, file_starts = _resolve_problem(spec)
        starts, hdr = _starts_from_spec(args.starts, problem.n, file_starts)
        header = header or hdr
        problems.append(problem)
        start_sets.append(starts)

    f_min: Dict[str, float] = {}
    for problem in problems:
        if args.fmin is not None:
            f_min[problem.name] = args.fmin
        else:
            oracle = branch_enumerate_global(problem, cap=args.cap)
            f_min[problem.name] = oracle.f

    tasks = []
    for problem, starts in zip(problems, start_sets):
        for scheme_label in schemes:
            opts = _driver_options(args, Scheme.parse(scheme_label))
            for sid, x0 in enumerate(starts):
                tasks.append((problem, scheme_label, sid, x0, opts))

    records: List[RunRecord] = []
    failures = 0
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        for record, trace in pool.map(lambda t: _run_one(*t), tasks):
            records.append(record)
            if trace.status not in _COMPLETED:
                failures += 1

    table = performance_profile(records, f_min, delta=args.delta,
                                feas_tol=args.feas_tol)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "results.csv"), "w", encoding="utf-8") as fh:
        fh.write(results_to_csv(table, header_comment=header))
    with open(os.path.join(args.out, "profile.csv"), "w", encoding="utf-8") as fh:
        fh.write(profile_to_csv(table, header_comment=header))
    print(f"campaign complete: {len(records)} runs, {failures} failures, "
          f"output in {args.out}")
    return 0 if failures == 0 else 1


def _cmd_oracle(args) -> int:
    problem, _ = _resolve_problem(args.problem)
    result = branch_enumerate_global(problem, cap=args.cap,
                                     multistarts=args.multistarts)
    print(f"problem {problem.name}")
    print(f"f* = {result.f:.10g}")
    print(f"x* = {np.array2string(result.x, precision=8)}")
    print(f"branch = {''.join(result.branch.assignment)} "
          f"({result.n_branches} branches, {result.n_feasible} feasible solves)")
    return 0


def _cmd_check(args) -> int:
    problem, _ = _resolve_problem(args.problem)
    x = _parse_point(args.point, problem.n)
    cert = verify_stationarity(problem, x, args.kind, args.tol)
    holds = cert.kind != "none"
    print(f"problem {problem.name}  point {x.tolist()}")
    print(f"kind {args.kind}: {'holds' if holds else 'fails'} "
          f"(residual {cert.residual:.3e}, tol {args.tol:g})")
    print(f"partition: i_g={list(cert.partition.i_g)} i_G={list(cert.partition.i_G)} "
          f"i_H={list(cert.partition.i_H)} i_GH={list(cert.partition.i_GH)}")
    print(f"cq: licq={cert.cq_flags.mpsc_licq} mfcq={cert.cq_flags.mpsc_mfcq} "
          f"nnamcq={cert.cq_flags.nnamcq}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchopt",
        description="Relaxation-homotopy solver for switching-constrained programs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one problem from one start")
    p_solve.add_argument("--problem", required=True)
    p_solve.add_argument("--start", default=None,
                         help="comma-separated coordinates (default: zeros)")
    p_solve.add_argument("--out", default=None, help="artifact directory")
    _add_driver_flags(p_solve)

    p_camp = sub.add_parser("campaign", help="run a problem x scheme x start grid")
    p_camp.add_argument("--problems", required=True,
                        help="comma-separated problem specs")
    p_camp.add_argument("--schemes", default="ks",
                        help="comma-separated scheme names")
    p_camp.add_argument("--starts", default="grid",
                        help="grid[:v1,v2,...] | random:COUNT:SEED | file | point")
    p_camp.add_argument("--delta", type=float, default=1.0)
    p_camp.add_argument("--feas-tol", type=float, default=1e-6)
    p_camp.add_argument("--fmin", type=float, default=None,
                        help="override the oracle reference value")
    p_camp.add_argument("--cap", type=int, default=16)
    p_camp.add_argument("--jobs", type=int, default=1)
    p_camp.add_argument("--out", required=True)
    _add_driver_flags(p_camp)

    p_oracle = sub.add_parser("oracle", help="branch-enumeration global value")
    p_oracle.add_argument("--problem", required=True)
    p_oracle.add_argument("--cap", type=int, default=16)
    p_oracle.add_argument("--multistarts", type=int, default=3)

    p_check = sub.add_parser("check", help="verify a stationarity kind at a point")
    p_check.add_argument("--problem", required=True)
    p_check.add_argument("--point", required=True)
    p_check.add_argument("--kind", default="M", choices=["W", "M", "S"])
    p_check.add_argument("--tol", type=float, default=1e-6)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "solve": _cmd_solve, "campaign": _cmd_campaign,
        "oracle": _cmd_oracle, "check": _cmd_check,
    }
    try:
        return handlers[args.command](args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SwitchoptError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
