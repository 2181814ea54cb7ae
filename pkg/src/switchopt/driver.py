"""Relaxation-homotopy driver.

Shrinks the relaxation parameter geometrically, solves each surrogate with
warm starts, regroups the surrogate multipliers into switching-problem
multipliers, and classifies the limit point.  An optional active-set polish
(Gauss-Newton snap onto the active manifold plus a multiplier refit) tightens
each iterate so that the regrouping identity holds to near machine precision.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import InfeasiblePoint, SwitchoptError
from .nlp import NlpOptions, NlpResult, solve_nlp
from .problem import Array, EvalRecord, Multipliers, MpscProblem, as_vector, evaluate
from .relaxation import (
    NlpProblem, Scheme, SchemeKind, _QUADRANT_SIGNS, build_relaxed,
    dphi_su, switch_rows_eval,
)
from .stationarity import (
    KIND_RANK, StationarityCertificate, classify_stationarity, _fit_multipliers,
)

__all__ = [
    "DriverOptions", "IterationRecord", "SolveTrace", "solve_mpsc",
    "recover_mpsc_multipliers", "switch_multiplier_matrix",
]

_CORNER_FRACTION = 0.25  # |shifted args| below this times t count as a corner


@dataclass(frozen=True)
class DriverOptions:
    """Homotopy schedule and policies.

    The parameter sequence is t_k = t0 * t_shrink^(k-1); the loop ends when
    the next parameter would drop below ``t_min`` or when the current iterate
    is switching-feasible with a recovered-certificate residual below
    ``tol_outer``.  ``restarts`` deterministic perturbed restarts are spent
    when the final certificate is weaker than ``min_kind``.
    """

    scheme: Scheme = field(default_factory=Scheme.ks)
    t0: float = 0.01
    t_shrink: float = 0.01
    t_min: float = 1e-8
    tol_outer: float = 1e-4
    subsolver: NlpOptions = field(default_factory=NlpOptions)
    polish: bool = True
    restarts: int = 1
    min_kind: str = "W"
    enum_cap: int = 20

    def __post_init__(self):
        if not (0 < self.t_shrink < 1):
            raise ValueError("t_shrink must lie in (0, 1)")
        if not (0 < self.t_min < self.t0):
            raise ValueError("need 0 < t_min < t0")
        if self.tol_outer <= 0:
            raise ValueError("tol_outer must be positive")
        if self.min_kind not in KIND_RANK:
            raise ValueError("min_kind must be one of none|W|M|S")


@dataclass
class IterationRecord:
    """One outer iteration: surrogate solve, recovery, residual bookkeeping."""

    k: int
    t: float
    x: Array
    f: float
    sub_status: str
    sub_kkt_residual: float
    sw_violation: float
    feas_violation: float
    multipliers: Multipliers
    surrogate_stat_norm: float
    mpsc_stat_norm: float
    regroup_gap: float
    cert_residual: float
    supp_mu: Tuple[int, ...]
    supp_nu: Tuple[int, ...]
    polished: bool
    evaluations: int


@dataclass
class SolveTrace:
    """Full record of one homotopy run."""

    problem: str
    scheme: Scheme
    iterations: List[IterationRecord]
    final_x: Array
    final_f: float
    certificate: Optional[StationarityCertificate]
    status: str  # certified | t_min | subsolver_failure
    restarts_used: int
    degraded: bool
    wall_time_s: float
    total_evaluations: int

    @property
    def final_kind(self) -> str:
        return self.certificate.kind if self.certificate is not None else "none"


# ---------------------------------------------------------------------------
# multiplier recovery
# ---------------------------------------------------------------------------

def switch_multiplier_matrix(nlp: NlpProblem, lambda_ineq: Array, q: int) -> Array:
    """Extract the (q, rows_per_pair) relaxation-row multiplier matrix."""
    if nlp.scheme is None or nlp.t is None:
        raise ValueError("surrogate lacks scheme provenance")
    S = nlp.scheme.rows_per_pair
    out = np.zeros((q, S))
    for row, tag in enumerate(nlp.row_tags):
        if tag[0] == "switch":
            out[tag[1], tag[2] - 1] = lambda_ineq[row]
    return out


def _ks_row_mode(a: float, b: float, t: float) -> str:
    if max(abs(a), abs(b)) <= _CORNER_FRACTION * t:
        return "corner"
    return "G" if abs(a) <= abs(b) else "H"


def _coerce_row_matrix(row_multipliers, q: int, rows_per_pair: int) -> Array:
    if isinstance(row_multipliers, dict):
        out = np.zeros((q, rows_per_pair))
        for (l, s), v in row_multipliers.items():
            if not (0 <= l < q and 1 <= s <= rows_per_pair):
                raise ValueError(f"row key ({l}, {s}) outside the scheme's row grid")
            out[l, s - 1] = float(v)
        return out
    out = np.asarray(row_multipliers, dtype=float)
    if out.shape != (q, rows_per_pair):
        raise ValueError(
            f"row multipliers have shape {out.shape}, expected {(q, rows_per_pair)}"
        )
    return out


def recover_mpsc_multipliers(problem: MpscProblem, x, t: float, row_multipliers,
                             scheme: Union[Scheme, SchemeKind, str],
                             lam=None, rho=None) -> Multipliers:
    """Regroup surrogate-row multipliers onto the switching maps.

    For the KS rows the eight edge formulas apply: an active row pinned at
    G_l = +-t contributes its multiplier times the complementary shifted
    argument to mu_l, a row pinned at H_l = +-t contributes to nu_l, and
    corner rows (both arguments near zero, where the row gradient vanishes)
    contribute nothing.  Row modes are decided by dominance of the two
    shifted arguments, with a corner band of 0.25 t.

    SCHOLTES uses the signed two-sided multiplier: mu_l = xi_l H_l(x) and
    nu_l = xi_l G_l(x).  SU and KDB aggregate by the exact chain rule, so the
    regrouped stationarity equation reproduces the surrogate one identically.

    ``lam`` / ``rho`` are passed through into the returned block.
    """
    sch = scheme if isinstance(scheme, Scheme) else (
        Scheme(kind=scheme) if isinstance(scheme, SchemeKind) else Scheme.parse(str(scheme))
    )
    if t <= 0:
        raise ValueError("recovery requires t > 0")
    q = problem.q
    M = _coerce_row_matrix(row_multipliers, q, sch.rows_per_pair)
    rec = evaluate(problem, x)
    mu = np.zeros(q)
    nu = np.zeros(q)

    if sch.kind is SchemeKind.KS:
        for l in range(q):
            for s in range(1, 5):
                m = M[l, s - 1]
                if m == 0.0:
                    continue
                sG, sH = _QUADRANT_SIGNS[s]
                a = sG * rec.G[l] - t
                b = sH * rec.H[l] - t
                mode = _ks_row_mode(a, b, t)
                if mode == "G":
                    mu[l] += m * b * sG
                elif mode == "H":
                    nu[l] += m * a * sH
    elif sch.kind is SchemeKind.SCHOLTES:
        xi = M[:, 0] - M[:, 1]
        mu = xi * rec.H
        nu = xi * rec.G
    elif sch.kind is SchemeKind.SU:
        args = {
            1: (rec.G - rec.H, 1.0, 1.0, 1.0, -1.0),
            2: (rec.G + rec.H, 1.0, -1.0, 1.0, 1.0),
            3: (-rec.G - rec.H, -1.0, 1.0, -1.0, -1.0),
            4: (-rec.G + rec.H, -1.0, -1.0, -1.0, 1.0),
        }
        for s, (arg, cG, cH, dG, dH) in args.items():
            m = M[:, s - 1]
            if not np.any(m):
                continue
            d = np.asarray([dphi_su(z, t) for z in arg])
            mu += m * (cG - d * dG)
            nu += m * (cH - d * dH)
    else:  # KDB
        if sch.kdb_mode == "quartic":
            m = M[:, 0]
            mu = m * 2.0 * rec.G * (rec.H ** 2 - t * t)
            nu = m * 2.0 * rec.H * (rec.G ** 2 - t * t)
        else:
            G, H = rec.G, rec.H
            coef = {
                1: (H - t, G - t),
                2: (-(H - t), -G - t),
                3: (H + t, G + t),
                4: (-H - t, -(G - t)),
            }
            for s, (cG, cH) in coef.items():
                mu += M[:, s - 1] * cG
                nu += M[:, s - 1] * cH

    lam_arr = np.zeros(problem.m) if lam is None else as_vector(lam, problem.m, "lam")
    rho_arr = np.zeros(problem.p) if rho is None else as_vector(rho, problem.p, "rho")
    return Multipliers(lam=lam_arr, rho=rho_arr, mu=mu, nu=nu)


# ---------------------------------------------------------------------------
# active-set polish
# ---------------------------------------------------------------------------

@dataclass
class _PolishOutcome:
    x: Array
    lam: Array
    rho: Array
    snapped: bool
    refit: bool


def _active_rows(nlp: NlpProblem, ev_ci: Array, lam: Array) -> List[int]:
    """Rows the refit may carry: multiplier-backed, or sitting exactly on the
    boundary.  The boundary band is tight on purpose; a loose band lets the
    refit amplify spurious gradient components of nearly-degenerate rows."""
    if lam.size == 0:
        return []
    lam_thresh = 1e-9 * (1.0 + float(np.max(lam, initial=0.0)))
    band = 1e-9
    return [
        r for r in range(nlp.m_ineq)
        if (lam[r] > lam_thresh and ev_ci[r] > -1e-3) or ev_ci[r] > -band
    ]


def _snap_targets(problem: MpscProblem, nlp: NlpProblem, scheme: Scheme, t: float,
                  x: Array, active: Sequence[int], lam: Array) -> List[Tuple]:
    """Equations pinning the believed-active manifold, as symbolic descriptors.

    Pin targets on the same map can conflict when the subsolver carries stale
    multipliers (e.g. G = +t and G = -t claimed at once); the larger
    multiplier weight wins so the snap system stays consistent.
    """
    rec = evaluate(problem, x)
    eqs: List[Tuple] = []
    # per pair: candidate pin targets with accumulated multiplier weight
    g_pins: Dict[int, Dict[float, float]] = {}
    h_pins: Dict[int, Dict[float, float]] = {}
    prod_pins: Dict[int, Dict[float, float]] = {}
    lam_thresh = 1e-9 * (1.0 + float(np.max(lam, initial=0.0)))
    for r in active:
        tag = nlp.row_tags[r]
        if lam[r] <= lam_thresh:
            continue  # weakly active rows are refit but not snapped
        if tag[0] == "g":
            eqs.append(("g", tag[1]))
            continue
        l, s = tag[1], tag[2]
        if scheme.kind is SchemeKind.KS:
            sG, sH = _QUADRANT_SIGNS[s]
            a = sG * rec.G[l] - t
            b = sH * rec.H[l] - t
            mode = _ks_row_mode(a, b, t)
            if mode in ("G", "corner"):
                g_pins.setdefault(l, {})
                g_pins[l][sG * t] = g_pins[l].get(sG * t, 0.0) + lam[r]
            if mode in ("H", "corner"):
                h_pins.setdefault(l, {})
                h_pins[l][sH * t] = h_pins[l].get(sH * t, 0.0) + lam[r]
        elif scheme.kind is SchemeKind.SCHOLTES:
            target = t if s == 1 else -t
            prod_pins.setdefault(l, {})
            prod_pins[l][target] = prod_pins[l].get(target, 0.0) + lam[r]
        else:
            eqs.append(("row", l, s))
    for l in sorted(g_pins):
        target = max(g_pins[l].items(), key=lambda kv: kv[1])[0]
        eqs.append(("G", l, target))
    for l in sorted(h_pins):
        target = max(h_pins[l].items(), key=lambda kv: kv[1])[0]
        eqs.append(("H", l, target))
    for l in sorted(prod_pins):
        target = max(prod_pins[l].items(), key=lambda kv: kv[1])[0]
        eqs.append(("prod", l, target))
    for j in range(problem.p):
        eqs.append(("h", j))
    # deduplicate while preserving order
    seen = set()
    out = []
    for e in eqs:
        if e not in seen:
            seen.add(e)
            out.append(e)
    return out


def _snap_residual(problem: MpscProblem, scheme: Scheme, t: float,
                   eqs: Sequence[Tuple], x: Array) -> Tuple[Array, Array]:
    rec = evaluate(problem, x)
    need_rows = any(e[0] == "row" for e in eqs)
    if need_rows:
        row_vals, row_jac = switch_rows_eval(rec, scheme, t)
        per_pair = scheme.rows_per_pair
    vals = np.zeros(len(eqs))
    jac = np.zeros((len(eqs), problem.n))
    for i, e in enumerate(eqs):
        kind = e[0]
        if kind == "g":
            vals[i] = rec.g[e[1]]
            jac[i] = rec.jac_g[e[1]]
        elif kind == "h":
            vals[i] = rec.h[e[1]]
            jac[i] = rec.jac_h[e[1]]
        elif kind == "G":
            vals[i] = rec.G[e[1]] - e[2]
            jac[i] = rec.jac_G[e[1]]
        elif kind == "H":
            vals[i] = rec.H[e[1]] - e[2]
            jac[i] = rec.jac_H[e[1]]
        elif kind == "prod":
            l = e[1]
            vals[i] = rec.G[l] * rec.H[l] - e[2]
            jac[i] = rec.H[l] * rec.jac_G[l] + rec.G[l] * rec.jac_H[l]
        else:  # explicit relaxation row
            l, s = e[1], e[2]
            idx = l * per_pair + (s - 1)
            vals[i] = row_vals[idx]
            jac[i] = row_jac[idx]
    return vals, jac


def _polish_iterate(problem: MpscProblem, nlp: NlpProblem, scheme: Scheme, t: float,
                    result: NlpResult) -> _PolishOutcome:
    x = result.x.copy()
    lam = result.lam.copy()
    rho = result.rho.copy()
    ev = nlp.evaluate(x)
    active = _active_rows(nlp, ev.c_ineq, lam)
    eqs = _snap_targets(problem, nlp, scheme, t, x, active, lam)
    snapped = False

    if eqs:
        pre_ci_max = float(np.max(ev.c_ineq)) if ev.c_ineq.size else 0.0
        x_try = x.copy()
        ok = False
        vals, jac = _snap_residual(problem, scheme, t, eqs, x_try)
        pre_norm = float(np.max(np.abs(vals)))
        guard = max(1e-3, 1e3 * pre_norm) * (1.0 + float(np.max(np.abs(x))))
        for _ in range(12):
            norm = float(np.max(np.abs(vals)))
            if norm <= 1e-13:
                ok = True
                break
            step, *_ = np.linalg.lstsq(jac, -vals, rcond=None)
            accepted = False
            for alpha in (1.0, 0.5, 0.25):
                cand = x_try + alpha * step
                v2, j2 = _snap_residual(problem, scheme, t, eqs, cand)
                if float(np.max(np.abs(v2))) < norm:
                    x_try, vals, jac = cand, v2, j2
                    accepted = True
                    break
            if not accepted:
                break
        if not ok:
            ok = float(np.max(np.abs(vals))) <= 1e-11
        if ok and float(np.linalg.norm(x_try - x)) <= guard:
            ev_try = nlp.evaluate(x_try)
            post_ci_max = float(np.max(ev_try.c_ineq)) if ev_try.c_ineq.size else 0.0
            if post_ci_max <= max(pre_ci_max, 0.0) + 1e-8:
                x = x_try
                ev = ev_try
                snapped = True

    # Multiplier refit on rows sitting exactly on their boundary (snapped
    # rows evaluate to ~0 there).  Rows merely close to the boundary stay
    # out: fitting them trades a complementarity violation for a spurious
    # stationarity gain through their small gradient components.
    refit = False
    refit_rows = [r for r in active if ev.c_ineq[r] >= -1e-11]
    if refit_rows or nlp.m_eq:
        cols = []
        nonneg = []
        owners = []
        for r in refit_rows:
            cols.append(ev.jac_ineq[r])
            nonneg.append(True)
            owners.append(("ineq", r))
        for j in range(nlp.m_eq):
            cols.append(ev.jac_eq[j])
            nonneg.append(False)
            owners.append(("eq", j))
        A = np.column_stack(cols) if cols else np.zeros((nlp.n, 0))
        z, res_fit = _fit_multipliers(A, np.asarray(nonneg, bool), ev.grad_f)
        # keep the refit only if it does not worsen the stationarity norm
        r_old = ev.grad_f.copy()
        if lam.size:
            r_old += ev.jac_ineq.T @ lam
        if rho.size:
            r_old += ev.jac_eq.T @ rho
        if res_fit <= float(np.linalg.norm(r_old)) + 1e-15:
            lam = np.zeros(nlp.m_ineq)
            rho = np.zeros(nlp.m_eq)
            for (owner, idx), v in zip(owners, z):
                if owner == "ineq":
                    lam[idx] = max(v, 0.0)
                else:
                    rho[idx] = v
            refit = True
    return _PolishOutcome(x=x, lam=lam, rho=rho, snapped=snapped, refit=refit)


# ---------------------------------------------------------------------------
# homotopy loop
# ---------------------------------------------------------------------------

def _certificate_residual(rec: EvalRecord, mults: Multipliers) -> Tuple[float, float]:
    """(stationarity norm, full certificate residual) for recovered multipliers."""
    r = mults.stationarity_vector(rec)
    stat = float(np.max(np.abs(r))) if r.size else 0.0
    cert = stat
    if mults.lam.size:
        cert = max(cert, float(np.max(-np.minimum(mults.lam, 0.0))))
        cert = max(cert, float(np.max(np.abs(mults.lam * rec.g))))
    if mults.mu.size:
        cert = max(cert, float(np.max(np.abs(mults.mu * rec.G))))
        cert = max(cert, float(np.max(np.abs(mults.nu * rec.H))))
    return stat, cert


def _surrogate_stationarity(rec: EvalRecord, scheme: Scheme, t: float,
                            lam: Array, rho: Array) -> Array:
    m = rec.g.size
    r = rec.grad_f.copy()
    if m:
        r += rec.jac_g.T @ lam[:m]
    if rho.size:
        r += rec.jac_h.T @ rho
    if rec.G.size:
        _, jac = switch_rows_eval(rec, scheme, t)
        r += jac.T @ lam[m:]
    return r


def _run_homotopy(problem: MpscProblem, x0: Array, opts: DriverOptions) -> SolveTrace:
    started = time.perf_counter()
    scheme = opts.scheme
    records: List[IterationRecord] = []
    x = x0.copy()
    warm_lam: Optional[Array] = None
    warm_rho: Optional[Array] = None
    degraded = False
    status = "t_min"
    total_evals = 0

    t = opts.t0
    k = 0
    while True:
        k += 1
        nlp = build_relaxed(problem, scheme, t)
        result = solve_nlp(nlp, x, opts.subsolver, lam0=warm_lam, rho0=warm_rho)
        total_evals += result.evals.evaluations
        if result.status in ("failed", "unbounded_suspected"):
            status = "subsolver_failure"
            x = result.x
            degraded = True
            break
        if result.status != "converged":
            degraded = True

        if opts.polish:
            outcome = _polish_iterate(problem, nlp, scheme, t, result)
        else:
            outcome = _PolishOutcome(x=result.x, lam=result.lam, rho=result.rho,
                                     snapped=False, refit=False)
        x = outcome.x
        lam_full = outcome.lam
        rho = outcome.rho

        rec = evaluate(problem, x)
        row_matrix = switch_multiplier_matrix(nlp, lam_full, problem.q)
        lam_g = lam_full[:problem.m]
        mults = recover_mpsc_multipliers(problem, x, t, row_matrix, scheme,
                                         lam=lam_g, rho=rho)
        r_sub = _surrogate_stationarity(rec, scheme, t, lam_full, rho)
        r_mpsc = mults.stationarity_vector(rec)
        gap = float(np.max(np.abs(r_sub - r_mpsc))) if r_sub.size else 0.0
        stat_norm, cert_res = _certificate_residual(rec, mults)
        sw_viol = rec.switching_violation()
        feas_viol = rec.feasibility_violation()

        records.append(IterationRecord(
            k=k, t=t, x=x.copy(), f=rec.f, sub_status=result.status,
            sub_kkt_residual=result.kkt_residual, sw_violation=sw_viol,
            feas_violation=feas_viol, multipliers=mults,
            surrogate_stat_norm=float(np.max(np.abs(r_sub))) if r_sub.size else 0.0,
            mpsc_stat_norm=stat_norm, regroup_gap=gap, cert_residual=cert_res,
            supp_mu=tuple(int(i) for i in np.nonzero(mults.mu)[0]),
            supp_nu=tuple(int(i) for i in np.nonzero(mults.nu)[0]),
            polished=outcome.snapped, evaluations=result.evals.evaluations,
        ))

        if feas_viol <= opts.tol_outer and cert_res <= opts.tol_outer:
            status = "certified"
            break
        t_next = t * opts.t_shrink
        if t_next < opts.t_min:
            status = "t_min"
            break
        t = t_next
        warm_lam = lam_full
        warm_rho = rho

    final_rec = evaluate(problem, x)
    certificate: Optional[StationarityCertificate] = None
    try:
        # at a balanced near-biactive point |G| and |H| can both reach
        # sqrt(|G H|), so the activity tolerance must cover that scale
        sw = final_rec.switching_violation()
        tol_cert = max(opts.tol_outer,
                       1.5 * math.sqrt(max(sw, 0.0)),
                       2.0 * final_rec.feasibility_violation()) + 1e-12
        certificate = classify_stationarity(problem, x, tol_cert,
                                            enum_cap=opts.enum_cap)
    except (InfeasiblePoint, SwitchoptError):
        certificate = None

    return SolveTrace(
        problem=problem.name, scheme=scheme, iterations=records,
        final_x=x.copy(), final_f=final_rec.f, certificate=certificate,
        status=status, restarts_used=0, degraded=degraded,
        wall_time_s=time.perf_counter() - started, total_evaluations=total_evals,
    )


def _perturbed_start(x0: Array, attempt: int) -> Array:
    w = np.sin(1.234 * (np.arange(x0.size) + 1.0))
    w /= float(np.max(np.abs(w)))
    return x0 + 0.05 * attempt * (1.0 + float(np.max(np.abs(x0)))) * w


def _trace_score(trace: SolveTrace) -> Tuple:
    kind = trace.final_kind
    f = trace.final_f if math.isfinite(trace.final_f) else math.inf
    return (KIND_RANK[kind], -f)


def solve_mpsc(problem: MpscProblem, x0, opts: Optional[DriverOptions] = None) -> SolveTrace:
    """Run the homotopy from ``x0``, restarting deterministically on failure.

    The trace records every outer iteration.  When the achieved stationarity
    kind is weaker than ``opts.min_kind``, up to ``opts.restarts`` retries run
    from deterministic asymmetric perturbations of ``x0``; the best trace by
    (kind, objective) is returned with ``restarts_used`` set accordingly.
    """
    opts = opts or DriverOptions()
    base = as_vector(x0, problem.n, "x0")
    if not np.all(np.isfinite(base)):
        raise ValueError("x0 must be finite")
    best: Optional[SolveTrace] = None
    for attempt in range(opts.restarts + 1):
        start = base if attempt == 0 else _perturbed_start(base, attempt)
        trace = _run_homotopy(problem, start, opts)
        trace.restarts_used = attempt
        if best is None or _trace_score(trace) > _trace_score(best):
            best = trace
        if KIND_RANK[best.final_kind] >= KIND_RANK[opts.min_kind]:
            break
    return best
