"""Ground-truth oracles, built-in benchmarks and performance profiles.

The branch oracle treats the switching set as the union of 2^q branches
(for each pair, pin either G_l or H_l to zero), solves every branch as a
smooth NLP and reports the best feasible outcome.  For problems whose
branches are convex this is an exact global reference.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import EnumerationCapExceeded, InfeasiblePoint, SwitchoptError
from .nlp import NlpOptions, NlpResult, solve_nlp
from .problem import Array, MpscProblem, as_vector, evaluate
from .relaxation import NlpEval, NlpProblem

__all__ = [
    "BranchSpec", "OracleResult", "branch_problem", "branch_enumerate_global",
    "make_benchmark", "builtin_names", "semicontinuous_reformulate",
    "make_portfolio", "RunRecord", "ProfileTable", "performance_profile",
    "results_to_csv", "profile_to_csv",
]


# ---------------------------------------------------------------------------
# branch enumeration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BranchSpec:
    """One branch: per pair, which of the two switching maps is pinned to zero."""

    assignment: Tuple[str, ...]  # entries "G" or "H", length q

    def __post_init__(self):
        if any(a not in ("G", "H") for a in self.assignment):
            raise ValueError("assignment entries must be 'G' or 'H'")


def branch_problem(problem: MpscProblem, branch: BranchSpec) -> NlpProblem:
    """The smooth NLP of one branch: original g, h plus pinned equalities."""
    if len(branch.assignment) != problem.q:
        raise ValueError("assignment length must equal the number of pairs")
    g_idx = [l for l, a in enumerate(branch.assignment) if a == "G"]
    h_idx = [l for l, a in enumerate(branch.assignment) if a == "H"]

    def _eval(x) -> NlpEval:
        rec = evaluate(problem, x)
        extra_vals = []
        extra_jacs = []
        if g_idx:
            extra_vals.append(rec.G[g_idx])
            extra_jacs.append(rec.jac_G[g_idx])
        if h_idx:
            extra_vals.append(rec.H[h_idx])
            extra_jacs.append(rec.jac_H[h_idx])
        if extra_vals:
            ce = np.concatenate([rec.h] + extra_vals)
            Je = np.vstack([rec.jac_h] + extra_jacs)
        else:
            ce = rec.h
            Je = rec.jac_h
        return NlpEval(x=rec.x, f=rec.f, grad_f=rec.grad_f, c_ineq=rec.g,
                       jac_ineq=rec.jac_g, c_eq=ce, jac_eq=Je)

    tags = tuple(("g", i, 0) for i in range(problem.m))
    eq_tags = tuple(("h", j, 0) for j in range(problem.p)) + tuple(
        ("branch", l, 0) for l in g_idx + h_idx
    )
    return NlpProblem(
        n=problem.n, evaluate=_eval, m_ineq=problem.m,
        m_eq=problem.p + problem.q, row_tags=tags, eq_tags=eq_tags,
        source=f"{problem.name}/branch",
    )


@dataclass
class OracleResult:
    x: Array
    f: float
    branch: BranchSpec
    n_branches: int
    n_solved: int
    n_feasible: int


def _default_starts(n: int, multistarts: int, box: Tuple[float, float]) -> List[Array]:
    starts = [np.zeros(n)]
    if multistarts > 1:
        rng = np.random.default_rng(20210 + n)
        lo, hi = box
        starts.extend(rng.uniform(lo, hi, size=(multistarts - 1, n)))
    return starts


def branch_enumerate_global(problem: MpscProblem, cap: int = 16,
                            nlp_options: Optional[NlpOptions] = None,
                            multistarts: int = 3,
                            starts: Optional[Sequence] = None,
                            start_box: Tuple[float, float] = (-2.0, 2.0),
                            feas_tol: float = 1e-6,
                            prune: Optional[Callable[[BranchSpec], bool]] = None,
                            order_seed: Optional[int] = None) -> OracleResult:
    """Best objective over every branch NLP; the global-value oracle.

    Visits all 2^q assignments (optionally permuted by ``order_seed``, which
    must not change the answer) and keeps the best feasible solve.  ``prune``
    may skip branches that are provably infeasible.  Raises when q exceeds
    ``cap`` or no branch yields a feasible point.
    """
    if problem.q > cap:
        raise EnumerationCapExceeded(
            f"q = {problem.q} exceeds the branch enumeration cap {cap}"
        )
    opts = nlp_options or NlpOptions()
    if starts is None:
        start_list = _default_starts(problem.n, multistarts, start_box)
    else:
        start_list = [as_vector(s, problem.n, "start") for s in starts]

    assignments = list(product("GH", repeat=problem.q))
    if order_seed is not None:
        rng = np.random.default_rng(order_seed)
        rng.shuffle(assignments)

    best: Optional[Tuple[float, Array, BranchSpec]] = None
    n_solved = 0
    n_feasible = 0
    for assignment in assignments:
        branch = BranchSpec(assignment=tuple(assignment))
        if prune is not None and prune(branch):
            continue
        nlp = branch_problem(problem, branch)
        for x0 in start_list:
            res = solve_nlp(nlp, x0, opts)
            n_solved += 1
            if res.status in ("failed", "unbounded_suspected"):
                continue
            if res.feas_violation > feas_tol:
                continue
            n_feasible += 1
            if best is None or res.f < best[0]:
                best = (res.f, res.x.copy(), branch)
    if best is None:
        raise SwitchoptError("all branches infeasible within tolerance")
    f, x, branch = best
    return OracleResult(x=x, f=f, branch=branch, n_branches=len(assignments),
                        n_solved=n_solved, n_feasible=n_feasible)


# ---------------------------------------------------------------------------
# built-in benchmark problems
# ---------------------------------------------------------------------------

def _quadratic_two_pair() -> MpscProblem:
    """min 0.5 (x1-1)^2 + 0.5 (x2-1)^2 subject to x1 x2 = 0."""

    def f(x):
        return 0.5 * (x[0] - 1.0) ** 2 + 0.5 * (x[1] - 1.0) ** 2

    def grad_f(x):
        return np.array([x[0] - 1.0, x[1] - 1.0])

    return MpscProblem(
        n=2, q=1, f=f, grad_f=grad_f,
        G=lambda x: np.array([x[0]]), jac_G=lambda x: np.array([[1.0, 0.0]]),
        H=lambda x: np.array([x[1]]), jac_H=lambda x: np.array([[0.0, 1.0]]),
        name="example_4_1",
        known_solutions=(((1.0, 0.0), 0.5), ((0.0, 1.0), 0.5)),
    )


def _bilinear_disk() -> MpscProblem:
    """min x1 x2 - x1 - x2 on the unit disk subject to x1 x2 = 0."""

    def f(x):
        return x[0] * x[1] - x[0] - x[1]

    def grad_f(x):
        return np.array([x[1] - 1.0, x[0] - 1.0])

    return MpscProblem(
        n=2, m=1, q=1, f=f, grad_f=grad_f,
        g=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0]),
        jac_g=lambda x: np.array([[2.0 * x[0], 2.0 * x[1]]]),
        G=lambda x: np.array([x[0]]), jac_G=lambda x: np.array([[1.0, 0.0]]),
        H=lambda x: np.array([x[1]]), jac_H=lambda x: np.array([[0.0, 1.0]]),
        name="example_su",
        known_solutions=(((1.0, 0.0), -1.0), ((0.0, 1.0), -1.0)),
    )


def _either_or() -> MpscProblem:
    """Either-or constrained quadratic rewritten with four slack variables.

    Variables are (x1, x2, z1, z2, z3, z4); the two disjunctions become
    switching pairs on slack-shifted residuals with z <= 0.
    """

    def f(x):
        return (x[0] - 8.0) ** 2 + (x[1] + 3.0) ** 2

    def grad_f(x):
        out = np.zeros(6)
        out[0] = 2.0 * (x[0] - 8.0)
        out[1] = 2.0 * (x[1] + 3.0)
        return out

    def g(x):
        return x[2:6].copy()

    def jac_g(x):
        out = np.zeros((4, 6))
        out[0, 2] = out[1, 3] = out[2, 4] = out[3, 5] = 1.0
        return out

    def G(x):
        return np.array([
            x[0] - 2.0 * x[1] + 4.0 - x[2],
            x[0] ** 2 - 4.0 * x[1] - x[4],
        ])

    def jac_G(x):
        out = np.zeros((2, 6))
        out[0, 0] = 1.0
        out[0, 1] = -2.0
        out[0, 2] = -1.0
        out[1, 0] = 2.0 * x[0]
        out[1, 1] = -4.0
        out[1, 4] = -1.0
        return out

    def H(x):
        return np.array([
            x[0] - 2.0 - x[3],
            (x[0] - 3.0) ** 2 + (x[1] - 1.0) ** 2 - 10.0 - x[5],
        ])

    def jac_H(x):
        out = np.zeros((2, 6))
        out[0, 0] = 1.0
        out[0, 3] = -1.0
        out[1, 0] = 2.0 * (x[0] - 3.0)
        out[1, 1] = 2.0 * (x[1] - 1.0)
        out[1, 5] = -1.0
        return out

    return MpscProblem(
        n=6, m=4, q=2, f=f, grad_f=grad_f, g=g, jac_g=jac_g,
        G=G, jac_G=jac_G, H=H, jac_H=jac_H, name="either_or_e2",
        known_solutions=(
            ((2.0, -2.0, 0.0, 0.0, 0.0, 0.0), 37.0),
            ((4.0, 4.0, 0.0, 0.0, 0.0, 0.0), 65.0),
        ),
    )


def semicontinuous_reformulate(n: int, objective: Callable[[Array], float],
                               gradient: Callable[[Array], Array],
                               lower, upper,
                               ineq: Optional[Callable[[Array], Array]] = None,
                               jac_ineq: Optional[Callable[[Array], Array]] = None,
                               n_ineq: int = 0,
                               eq: Optional[Callable[[Array], Array]] = None,
                               jac_eq: Optional[Callable[[Array], Array]] = None,
                               n_eq: int = 0,
                               name: str = "semicontinuous") -> MpscProblem:
    """Lift "x_i = 0 or x_i in [l_i, u_i]" into switching form with one slack.

    Variables become (x, y) with y >= 0; the requirement turns into the pairs
    x_i (x_i - l_i - y_i) = 0 plus the standing inequalities x <= u, y >= 0.
    ``objective``/``ineq``/``eq`` act on the original x block only.
    """
    lo = as_vector(lower, n, "lower")
    up = as_vector(upper, n, "upper")
    if np.any(up < 0):
        raise ValueError("upper bounds must be nonnegative")
    if np.any(lo < 0) or np.any(lo > up):
        raise ValueError("need 0 <= lower <= upper componentwise")
    m_extra = n_ineq
    m_total = 2 * n + m_extra

    def f(z):
        return float(objective(z[:n]))

    def grad_f(z):
        out = np.zeros(2 * n)
        out[:n] = gradient(z[:n])
        return out

    def g(z):
        x, y = z[:n], z[n:]
        rows = [x - up, -y]
        if m_extra:
            rows.append(np.atleast_1d(ineq(x)))
        return np.concatenate(rows)

    def jac_g(z):
        out = np.zeros((m_total, 2 * n))
        out[:n, :n] = np.eye(n)
        out[n:2 * n, n:] = -np.eye(n)
        if m_extra:
            out[2 * n:, :n] = np.asarray(jac_ineq(z[:n]), dtype=float)
        return out

    def h(z):
        if n_eq:
            return np.atleast_1d(eq(z[:n]))
        return np.zeros(0)

    def jac_h(z):
        out = np.zeros((n_eq, 2 * n))
        if n_eq:
            out[:, :n] = np.asarray(jac_eq(z[:n]), dtype=float)
        return out

    def G(z):
        return z[:n].copy()

    def jac_G(z):
        out = np.zeros((n, 2 * n))
        out[:, :n] = np.eye(n)
        return out

    def H(z):
        return z[:n] - lo - z[n:]

    def jac_H(z):
        out = np.zeros((n, 2 * n))
        out[:, :n] = np.eye(n)
        out[:, n:] = -np.eye(n)
        return out

    return MpscProblem(
        n=2 * n, m=m_total, p=n_eq, q=n, f=f, grad_f=grad_f, g=g, jac_g=jac_g,
        h=h, jac_h=jac_h, G=G, jac_G=jac_G, H=H, jac_H=jac_H, name=name,
    )


def make_portfolio(n: int, seed: int) -> MpscProblem:
    """Seeded semi-continuous portfolio instance.

    Minimizes x^T Q x over the budget simplex e^T x = 1 with a return floor
    mu^T x >= rho and semi-continuous holdings x_i in {0} union [l_i, u_i].
    Q is random positive semidefinite.  A feasible point is planted by
    construction: the support is the largest-capacity subset able to absorb
    the budget, and the return floor is set slightly below that point's
    return.  The planted point (with slacks) is stored in known_solutions.
    """
    if n < 2:
        raise ValueError("portfolio instances need n >= 2")
    rng = np.random.default_rng(seed)
    k_fac = max(2, n // 2)
    B = rng.normal(0.0, 1.0, size=(n, k_fac))
    Q = B @ B.T / k_fac + np.diag(rng.uniform(0.05, 0.15, n))
    mu = rng.uniform(0.0, 0.1, n)
    lo = rng.uniform(0.05, 0.15, n)
    up = rng.uniform(0.3, 0.6, n)

    order = np.argsort(-up)
    csum = np.cumsum(up[order])
    k_support = int(np.searchsorted(csum, 1.0) + 1)
    support = np.sort(order[:k_support])
    lo_s, up_s = lo[support], up[support]
    slack = (1.0 - float(np.sum(lo_s))) / max(float(np.sum(up_s - lo_s)), 1e-12)
    x_plant = np.zeros(n)
    x_plant[support] = lo_s + slack * (up_s - lo_s)
    rho = float(mu @ x_plant) - 0.005

    def objective(x):
        return float(x @ Q @ x)

    def gradient(x):
        return 2.0 * (Q @ x)

    def ineq(x):
        return np.array([rho - float(mu @ x)])

    def jac_ineq(x):
        return -mu[None, :]

    def eq(x):
        return np.array([float(np.sum(x)) - 1.0])

    def jac_eq(x):
        return np.ones((1, x.size))

    problem = semicontinuous_reformulate(
        n, objective, gradient, lo, up, ineq=ineq, jac_ineq=jac_ineq, n_ineq=1,
        eq=eq, jac_eq=jac_eq, n_eq=1, name=f"portfolio_n{n}_s{seed}",
    )
    y_plant = np.maximum(x_plant - lo, 0.0)
    z_plant = np.concatenate([x_plant, y_plant])
    return MpscProblem(
        n=problem.n, m=problem.m, p=problem.p, q=problem.q,
        f=problem.f, grad_f=problem.grad_f, g=problem.g, jac_g=problem.jac_g,
        h=problem.h, jac_h=problem.jac_h, G=problem.G, jac_G=problem.jac_G,
        H=problem.H, jac_H=problem.jac_H, name=problem.name,
        known_solutions=((tuple(z_plant), objective(x_plant)),),
    )


def portfolio_branch_prune(problem: MpscProblem) -> Callable[[BranchSpec], bool]:
    """Interval prune for portfolio branches: budget must be reachable.

    A branch pins x_i = 0 ("G") or x_i >= l_i ("H"); the simplex constraint
    e^T x = 1 is unreachable when the selected supports cannot cover it.
    Only branches that are provably infeasible are skipped, so the oracle
    value is unaffected.
    """
    n = problem.q
    z = np.zeros(problem.n)
    lo = -evaluate(problem, z).H[:n]  # H(0) = -l
    rec = evaluate(problem, np.concatenate([np.ones(n), np.zeros(problem.n - n)]))
    up = 1.0 - rec.g[:n]  # g_i = x_i - u_i on the first block

    def prune(branch: BranchSpec) -> bool:
        sel = [l for l, a in enumerate(branch.assignment) if a == "H"]
        lo_sum = float(np.sum(lo[sel]))
        up_sum = float(np.sum(up[sel]))
        return lo_sum > 1.0 + 1e-9 or up_sum < 1.0 - 1e-9

    return prune


_BUILTINS: Dict[str, Callable[..., MpscProblem]] = {
    "example_4_1": _quadratic_two_pair,
    "example_su": _bilinear_disk,
    "either_or_e2": _either_or,
    "portfolio": make_portfolio,
    "semicontinuous": semicontinuous_reformulate,
}


def builtin_names() -> Tuple[str, ...]:
    return tuple(sorted(_BUILTINS))


def make_benchmark(name: str, **params) -> MpscProblem:
    """Instantiate a built-in benchmark by name.

    ``portfolio`` expects n and seed; ``semicontinuous`` expects the
    reformulation arguments; the remaining names take no parameters.
    """
    if name not in _BUILTINS:
        raise ValueError(f"unknown benchmark '{name}'; choose from {builtin_names()}")
    return _BUILTINS[name](**params)


# ---------------------------------------------------------------------------
# performance profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    """One solver run on one (problem, start) cell."""

    solver: str
    problem: str
    start_id: int
    f: float
    feas_violation: float
    status: str
    time_ms: float = 0.0
    evaluations: int = 0


@dataclass
class ProfileTable:
    """Quality metric matrix and ratio-to-best curves."""

    solvers: List[str]
    columns: List[Tuple[str, int]]  # (problem, start_id)
    q_values: Array                 # shape (len(solvers), len(columns))
    ratios: Array                   # same shape; inf when not finite
    delta: float
    f_min: Dict[str, float]
    records: List[RunRecord]

    def curve(self, solver: str) -> Tuple[Array, Array]:
        """Step-curve breakpoints (tau, fraction of columns with ratio <= tau)."""
        i = self.solvers.index(solver)
        finite = np.sort(self.ratios[i][np.isfinite(self.ratios[i])])
        total = len(self.columns)
        if finite.size == 0 or total == 0:
            return np.array([1.0]), np.array([0.0])
        taus = np.unique(finite)
        fracs = np.searchsorted(finite, taus, side="right") / total
        return taus, fracs

    def fraction_within(self, solver: str, tau: float) -> float:
        i = self.solvers.index(solver)
        if not self.columns:
            return 0.0
        return float(np.sum(self.ratios[i] <= tau)) / len(self.columns)


def performance_profile(results: Sequence[RunRecord], f_min: Dict[str, float],
                        delta: float, feas_tol: float) -> ProfileTable:
    """Dolan-More style profile over the quality metric f - f_min + delta.

    Infeasible or failed runs score +inf and never produce a finite ratio.
    Ratios are taken column-wise against the best solver on that
    (problem, start) cell; an exact tie at metric zero counts as ratio 1.
    """
    if not results:
        raise ValueError("empty result set")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    solvers = sorted({r.solver for r in results})
    columns = sorted({(r.problem, r.start_id) for r in results})
    col_index = {c: j for j, c in enumerate(columns)}
    Q = np.full((len(solvers), len(columns)), np.inf)
    for r in results:
        if r.problem not in f_min:
            raise ValueError(f"missing f_min for problem '{r.problem}'")
        i = solvers.index(r.solver)
        j = col_index[(r.problem, r.start_id)]
        feasible = r.feas_violation <= feas_tol and math.isfinite(r.f)
        if feasible:
            Q[i, j] = r.f - f_min[r.problem] + delta

    ratios = np.full_like(Q, np.inf)
    for j in range(len(columns)):
        best = float(np.min(Q[:, j]))
        if not math.isfinite(best):
            continue
        for i in range(len(solvers)):
            if not math.isfinite(Q[i, j]):
                continue
            if Q[i, j] == best:
                ratios[i, j] = 1.0
            elif best > 0:
                ratios[i, j] = Q[i, j] / best
            # best == 0 with Q > 0: leave at +inf (infinitely worse)
    return ProfileTable(
        solvers=solvers, columns=columns, q_values=Q, ratios=ratios,
        delta=delta, f_min=dict(f_min), records=list(results),
    )


def results_to_csv(table: ProfileTable, header_comment: Optional[str] = None) -> str:
    """results.csv text: one row per run with its quality metric."""
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["solver", "problem", "start", "status", "f", "q_delta",
                     "time_ms", "evals"])
    col_index = {c: j for j, c in enumerate(table.columns)}
    for r in sorted(table.records, key=lambda r: (r.solver, r.problem, r.start_id)):
        i = table.solvers.index(r.solver)
        j = col_index[(r.problem, r.start_id)]
        q = table.q_values[i, j]
        writer.writerow([
            r.solver, r.problem, r.start_id, r.status,
            f"{r.f:.12g}", "inf" if not math.isfinite(q) else f"{q:.12g}",
            f"{r.time_ms:.3f}", r.evaluations,
        ])
    return buf.getvalue()


def profile_to_csv(table: ProfileTable, header_comment: Optional[str] = None) -> str:
    """profile.csv text: sampled ratio-to-best step curves per solver."""
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["solver", "tau", "fraction"])
    for solver in table.solvers:
        taus, fracs = table.curve(solver)
        for tau, frac in zip(taus, fracs):
            writer.writerow([solver, f"{tau:.12g}", f"{frac:.12g}"])
    return buf.getvalue()
