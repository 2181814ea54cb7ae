"""Self-contained first-order NLP subsolver.

Outer loop: augmented Lagrangian in Powell-Hestenes-Rockafellar form over the
inequality and equality blocks.  Inner loop: limited-memory quasi-Newton with
Armijo backtracking.  Everything is deterministic; identical inputs produce
identical outputs bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .exceptions import DimensionMismatch, EvaluationFailure
from .problem import Array, as_vector
from .relaxation import NlpEval, NlpProblem

__all__ = ["NlpOptions", "NlpResult", "EvalCounters", "solve_nlp", "kkt_residual"]

_SIGMA_MAX = 1e12
_UNBOUNDED_OBJECTIVE = -1e16
_UNBOUNDED_NORM = 1e10


@dataclass(frozen=True)
class NlpOptions:
    """Tolerances and budgets for ``solve_nlp``.

    tol_kkt is the target for the combined KKT residual (stationarity,
    feasibility, complementarity).  max_inner_evals bounds the number of
    problem evaluations a single inner minimization may spend.
    """

    tol_kkt: float = 1e-6
    max_outer: int = 50
    max_inner_evals: int = 5000
    penalty_init: float = 10.0
    penalty_growth: float = 10.0
    multiplier_safeguard: float = 1e8
    lbfgs_memory: int = 10
    inner_tol_init: float = 1e-2
    inner_tol_floor: float = 0.05

    def __post_init__(self):
        if min(self.tol_kkt, self.penalty_init, self.multiplier_safeguard,
               self.inner_tol_init) <= 0:
            raise ValueError("tolerances and penalties must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.max_outer <= 0 or self.max_inner_evals <= 0:
            raise ValueError("iteration budgets must be positive")


@dataclass
class EvalCounters:
    evaluations: int = 0
    inner_iterations: int = 0
    outer_iterations: int = 0


@dataclass
class NlpResult:
    """Outcome of one subsolver run."""

    x: Array
    lam: Array
    rho: Array
    kkt_residual: float
    feas_violation: float
    status: str  # converged | max_iter | unbounded_suspected | failed
    evals: EvalCounters
    f: float = math.nan

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def kkt_residual(nlp: NlpProblem, x, lambda_ineq, rho_eq) -> float:
    """Combined KKT residual at (x, lambda, rho).

    Maximum of the stationarity-equation infinity norm, the feasibility
    violation and the complementarity violation max_i |lambda_i c_i(x)|.
    Requires lambda_ineq >= 0.
    """
    lam = as_vector(lambda_ineq, nlp.m_ineq, "lambda_ineq") if nlp.m_ineq else np.zeros(0)
    rho = as_vector(rho_eq, nlp.m_eq, "rho_eq") if nlp.m_eq else np.zeros(0)
    if lam.size and float(np.min(lam)) < 0:
        raise ValueError("lambda_ineq must be componentwise nonnegative")
    ev = nlp.evaluate(as_vector(x, nlp.n))
    return _kkt_residual_from_eval(ev, lam, rho)


def _kkt_residual_from_eval(ev: NlpEval, lam: Array, rho: Array) -> float:
    r = ev.grad_f.copy()
    if lam.size:
        r += ev.jac_ineq.T @ lam
    if rho.size:
        r += ev.jac_eq.T @ rho
    stat = float(np.max(np.abs(r))) if r.size else 0.0
    feas = ev.feasibility_violation()
    comp = float(np.max(np.abs(lam * ev.c_ineq))) if lam.size else 0.0
    return max(stat, feas, comp)


# ---------------------------------------------------------------------------
# Inner minimization: L-BFGS with Armijo backtracking
# ---------------------------------------------------------------------------

def _lbfgs_minimize(value_grad: Callable[[Array], Tuple[float, Array]],
                    x0: Array, gtol: float, max_evals: int,
                    memory: int, counters: EvalCounters) -> Tuple[Array, float, Array, str]:
    """Minimize a smooth function; returns (x, f, grad, status)."""
    x = x0.copy()
    f, g = value_grad(x)
    counters.evaluations += 1
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        return x, f, g, "failed"

    s_hist: list[Array] = []
    y_hist: list[Array] = []
    evals = 1
    first = True
    while evals < max_evals:
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm <= gtol:
            return x, f, g, "converged"
        if f <= _UNBOUNDED_OBJECTIVE or float(np.max(np.abs(x))) >= _UNBOUNDED_NORM:
            return x, f, g, "unbounded_suspected"

        d = _two_loop_direction(g, s_hist, y_hist)
        if float(d @ g) >= -1e-14 * float(np.linalg.norm(d) * np.linalg.norm(g) + 1e-300):
            d = -g
            s_hist.clear()
            y_hist.clear()

        step = min(1.0, 1.0 / max(1.0, gnorm)) if first else 1.0
        slope = float(g @ d)
        accepted = False
        for _ in range(60):
            x_new = x + step * d
            f_new, g_new = value_grad(x_new)
            counters.evaluations += 1
            evals += 1
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
            if evals >= max_evals:
                break
        if not accepted:
            if np.array_equal(d, -g):
                return x, f, g, "stalled"
            # retry once from a fresh steepest-descent memory
            s_hist.clear()
            y_hist.clear()
            continue

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g = x_new, f_new, g_new
        counters.inner_iterations += 1
        first = False
    return x, f, g, "max_evals"


def _two_loop_direction(g: Array, s_hist, y_hist) -> Array:
    q = -g.copy()
    if not s_hist:
        return q
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    for s, y, r in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = r * float(s @ q)
        alphas.append(a)
        q -= a * y
    s_last, y_last = s_hist[-1], y_hist[-1]
    gamma = float(s_last @ y_last) / max(float(y_last @ y_last), 1e-300)
    q *= gamma
    for (s, y, r), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = r * float(y @ q)
        q += (a - b) * s
    return q


# ---------------------------------------------------------------------------
# Outer augmented-Lagrangian loop
# ---------------------------------------------------------------------------

def solve_nlp(nlp: NlpProblem, x0, opts: Optional[NlpOptions] = None,
              lam0=None, rho0=None) -> NlpResult:
    """Find an approximate KKT point of ``nlp`` from ``x0``.

    Multiplier updates are lam <- max(0, lam + sigma c_ineq) and
    rho <- rho + sigma c_eq; the penalty grows by ``penalty_growth`` whenever
    the constraint violation fails to halve.  ``lam0`` / ``rho0`` warm-start
    the multipliers.  The best iterate seen is always returned, even when a
    budget runs out.
    """
    opts = opts or NlpOptions()
    x = as_vector(x0, nlp.n, "x0")
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    mi, me = nlp.m_ineq, nlp.m_eq
    lam = np.zeros(mi) if lam0 is None else np.maximum(as_vector(lam0, mi, "lam0"), 0.0)
    rho = np.zeros(me) if rho0 is None else as_vector(rho0, me, "rho0")
    sigma = opts.penalty_init
    counters = EvalCounters()

    def al_value_grad(z: Array) -> Tuple[float, Array]:
        try:
            ev = nlp.evaluate(z)
        except EvaluationFailure:
            return math.inf, np.zeros(nlp.n)
        if not np.isfinite(ev.f):
            return math.inf, np.zeros(nlp.n)
        val = ev.f
        grad = ev.grad_f.copy()
        if mi:
            shifted = lam + sigma * ev.c_ineq
            act = shifted > 0.0
            val += (0.5 / sigma) * (float(shifted[act] @ shifted[act]) - float(lam @ lam))
            if np.any(act):
                grad += ev.jac_ineq[act].T @ shifted[act]
        if me:
            val += float(rho @ ev.c_eq) + 0.5 * sigma * float(ev.c_eq @ ev.c_eq)
            grad += ev.jac_eq.T @ (rho + sigma * ev.c_eq)
        if not np.all(np.isfinite(grad)):
            return math.inf, np.zeros(nlp.n)
        return val, grad

    best: Optional[NlpResult] = None
    prev_viol = math.inf
    prev_res = math.inf
    stalled_outers = 0
    inner_tol = opts.inner_tol_init
    status = "max_iter"

    for outer in range(opts.max_outer):
        counters.outer_iterations = outer + 1
        x, _, _, inner_status = _lbfgs_minimize(
            al_value_grad, x, gtol=inner_tol, max_evals=opts.max_inner_evals,
            memory=opts.lbfgs_memory, counters=counters,
        )
        if inner_status == "failed":
            status = "failed"
            break
        if inner_status == "unbounded_suspected":
            status = "unbounded_suspected"
            break

        try:
            ev = nlp.evaluate(x)
        except EvaluationFailure:
            status = "failed"
            break
        lam_new = np.maximum(0.0, lam + sigma * ev.c_ineq) if mi else lam
        rho_new = rho + sigma * ev.c_eq if me else rho
        viol = ev.feasibility_violation()
        res = _kkt_residual_from_eval(ev, lam_new, rho_new)

        cand = NlpResult(
            x=x.copy(), lam=lam_new.copy(), rho=rho_new.copy(),
            kkt_residual=res, feas_violation=viol, status="max_iter",
            evals=counters, f=ev.f,
        )
        if best is None or (res, viol) < (best.kkt_residual, best.feas_violation):
            best = cand
        if res <= opts.tol_kkt and viol <= opts.tol_kkt:
            status = "converged"
            best = cand
            break

        # grow the penalty when feasibility stalls, or when the iterate is
        # feasible but the residual stalls (stale multipliers unwind faster
        # under a large penalty since lam <- max(0, lam + sigma c))
        res_stalled = res > 0.7 * prev_res
        if (viol > 0.5 * prev_viol or (viol <= opts.tol_kkt and res_stalled)) \
                and sigma < _SIGMA_MAX:
            sigma = min(sigma * opts.penalty_growth, _SIGMA_MAX)
        stalled_outers = stalled_outers + 1 if (res_stalled and viol <= opts.tol_kkt) else 0
        if stalled_outers >= 8 and sigma >= _SIGMA_MAX:
            break  # no further progress available at the penalty cap
        prev_viol = viol
        prev_res = res
        bound = opts.multiplier_safeguard
        lam = np.minimum(lam_new, bound)
        rho = np.clip(rho_new, -bound, bound)
        inner_tol = max(0.2 * inner_tol, opts.inner_tol_floor * opts.tol_kkt)

    if best is None:
        # never completed a single outer evaluation cycle
        try:
            ev = nlp.evaluate(x)
            res = _kkt_residual_from_eval(ev, lam, rho)
            viol = ev.feasibility_violation()
            fval = ev.f
        except EvaluationFailure:
            res, viol, fval = math.inf, math.inf, math.nan
        best = NlpResult(
            x=x.copy(), lam=lam.copy(), rho=rho.copy(), kkt_residual=res,
            feas_violation=viol, status=status if status != "max_iter" else "failed",
            evals=counters, f=fval,
        )
        return best

    best.status = status if status in ("converged", "failed", "unbounded_suspected") \
        else "max_iter"
    best.evals = counters
    return best
