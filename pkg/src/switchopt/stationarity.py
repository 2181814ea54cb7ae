"""Stationarity certificates and constraint-qualification probes.

Stationarity of a candidate point is decided by searching for multipliers
with the sign/support pattern of the requested kind:

* W: mu is free on the G-active and biactive pairs, nu on the H-active and
  biactive pairs, and both vanish elsewhere;
* M: additionally, per biactive pair at least one of mu, nu is zero
  (decided by enumerating the zero patterns);
* S: both mu and nu vanish on every biactive pair.

All probes are numeric: bounded least squares for multiplier fits, a rank
decision for linear independence, and a small LP for positive-linear
independence.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog, lsq_linear

from .exceptions import EnumerationCapExceeded, InfeasiblePoint
from .problem import (
    Array, EvalRecord, IndexPartition, Multipliers, MpscProblem,
    classify_indices, evaluate,
)

__all__ = [
    "CqFlags", "StationarityCertificate", "verify_stationarity",
    "classify_stationarity", "check_nnamcq", "check_mpsc_licq",
    "check_mpsc_mfcq", "KIND_RANK",
]

KIND_RANK = {"none": 0, "W": 1, "M": 2, "S": 3}


@dataclass(frozen=True)
class CqFlags:
    """Numeric constraint-qualification probes at one point.

    ``None`` means the probe was skipped (e.g. its enumeration cap fired).
    """

    nnamcq: Optional[bool]
    mpsc_mfcq: Optional[bool]
    mpsc_licq: Optional[bool]
    tol: float


@dataclass(frozen=True)
class StationarityCertificate:
    kind: str  # "W" | "M" | "S" | "none"
    multipliers: Multipliers
    residual: float
    partition: IndexPartition
    cq_flags: CqFlags
    tol: float


# ---------------------------------------------------------------------------
# multiplier fitting
# ---------------------------------------------------------------------------

def _fit_multipliers(cols: Array, nonneg: Array, rhs: Array) -> Tuple[Array, float]:
    """min ||cols z + rhs||_2 over z with z[nonneg] >= 0.

    Solves the unconstrained minimum-norm problem first and falls back to a
    bounded least-squares solve when a sign constraint is active.  The
    bounded solve carries a tiny ridge so that flat directions (nearly
    parallel columns) resolve to the minimum-norm multiplier instead of an
    arbitrary point of the valley; the reported residual is always measured
    on the unregularized system.
    """
    k = cols.shape[1]
    if k == 0:
        return np.zeros(0), float(np.linalg.norm(rhs))
    z, *_ = np.linalg.lstsq(cols, -rhs, rcond=None)
    if not nonneg.any() or float(np.min(z[nonneg])) >= -1e-12:
        z = z.copy()
        if nonneg.any():
            z[nonneg] = np.maximum(z[nonneg], 0.0)
        return z, float(np.linalg.norm(cols @ z + rhs))
    lb = np.where(nonneg, 0.0, -np.inf)
    ub = np.full(k, np.inf)
    eps = 1e-7 * max(1.0, float(np.linalg.norm(cols, 2)))
    A_reg = np.vstack([cols, eps * np.eye(k)])
    b_reg = np.concatenate([-rhs, np.zeros(k)])
    sol = lsq_linear(A_reg, b_reg, bounds=(lb, ub), method="trf",
                     tol=1e-14, lsmr_tol=1e-14)
    z = sol.x
    return z, float(np.linalg.norm(cols @ z + rhs))


def _stationarity_columns(rec: EvalRecord, part: IndexPartition,
                          mu_free: Sequence[int], nu_free: Sequence[int]):
    """Column matrix and sign mask for the stationarity equation."""
    cols: List[Array] = []
    nonneg: List[bool] = []
    layout: List[Tuple[str, int]] = []
    for i in part.i_g:
        cols.append(rec.jac_g[i])
        nonneg.append(True)
        layout.append(("lam", i))
    for j in range(rec.h.size):
        cols.append(rec.jac_h[j])
        nonneg.append(False)
        layout.append(("rho", j))
    for l in mu_free:
        cols.append(rec.jac_G[l])
        nonneg.append(False)
        layout.append(("mu", l))
    for l in nu_free:
        cols.append(rec.jac_H[l])
        nonneg.append(False)
        layout.append(("nu", l))
    if cols:
        A = np.column_stack(cols)
    else:
        A = np.zeros((rec.x.size, 0))
    return A, np.asarray(nonneg, dtype=bool), layout


def _expand_multipliers(problem: MpscProblem, layout, z: Array) -> Multipliers:
    lam = np.zeros(problem.m)
    rho = np.zeros(problem.p)
    mu = np.zeros(problem.q)
    nu = np.zeros(problem.q)
    store = {"lam": lam, "rho": rho, "mu": mu, "nu": nu}
    for (name, idx), value in zip(layout, z):
        store[name][idx] = value
    return Multipliers(lam=lam, rho=rho, mu=mu, nu=nu)


def _feasibility_screen(rec: EvalRecord, tol: float):
    if rec.g.size and float(np.max(rec.g)) > tol:
        raise InfeasiblePoint("inequality constraints violated beyond tol")
    if rec.h.size and float(np.max(np.abs(rec.h))) > tol:
        raise InfeasiblePoint("equality constraints violated beyond tol")


def verify_stationarity(problem: MpscProblem, x, kind: str, tol: float,
                        enum_cap: int = 20,
                        with_cq: bool = True) -> StationarityCertificate:
    """Search for multipliers certifying the requested stationarity kind.

    W and S reduce to a single sign-constrained least-squares fit.  M
    enumerates the 2^|biactive| zero patterns (one of mu_l, nu_l pinned to
    zero per biactive pair) and accepts the first pattern whose residual
    meets ``tol``.  Returns kind="none" with the best residual found when no
    pattern fits.
    """
    kind = kind.upper()
    if kind not in ("W", "M", "S"):
        raise ValueError("kind must be one of 'W', 'M', 'S'")
    rec = evaluate(problem, x)
    _feasibility_screen(rec, tol)
    part = classify_indices(problem, x, tol)

    base_mu = list(part.i_G)
    base_nu = list(part.i_H)
    if kind == "W":
        patterns: Iterable[Tuple[Tuple[int, ...], Tuple[int, ...]]] = [
            (tuple(base_mu) + part.i_GH, tuple(base_nu) + part.i_GH)
        ]
    elif kind == "S":
        patterns = [(tuple(base_mu), tuple(base_nu))]
    else:
        if len(part.i_GH) > enum_cap:
            raise EnumerationCapExceeded(
                f"|biactive| = {len(part.i_GH)} exceeds enumeration cap {enum_cap}"
            )
        def _m_patterns():
            for choice in itertools.product((0, 1), repeat=len(part.i_GH)):
                mu_extra = [l for l, c in zip(part.i_GH, choice) if c == 1]
                nu_extra = [l for l, c in zip(part.i_GH, choice) if c == 0]
                yield tuple(base_mu) + tuple(mu_extra), tuple(base_nu) + tuple(nu_extra)
        patterns = _m_patterns()

    best: Optional[Tuple[float, Multipliers]] = None
    for mu_free, nu_free in patterns:
        A, nonneg, layout = _stationarity_columns(rec, part, mu_free, nu_free)
        z, residual = _fit_multipliers(A, nonneg, rec.grad_f)
        mults = _expand_multipliers(problem, layout, z)
        if best is None or residual < best[0]:
            best = (residual, mults)
        if residual <= tol:
            break

    residual, mults = best
    flags = _compute_cq_flags(problem, x, tol, enum_cap) if with_cq else \
        CqFlags(nnamcq=None, mpsc_mfcq=None, mpsc_licq=None, tol=tol)
    achieved = kind if residual <= tol else "none"
    return StationarityCertificate(
        kind=achieved, multipliers=mults, residual=residual, partition=part,
        cq_flags=flags, tol=float(tol),
    )


def classify_stationarity(problem: MpscProblem, x, tol: float,
                          enum_cap: int = 20) -> StationarityCertificate:
    """Strongest certificate among S, M, W at ``x``; kind="none" if all fail.

    On total failure the returned certificate carries the W-pattern residual,
    the most permissive of the three.
    """
    flags: Optional[CqFlags] = None
    last = None
    for kind in ("S", "M", "W"):
        cert = verify_stationarity(problem, x, kind, tol, enum_cap=enum_cap,
                                   with_cq=flags is None)
        if flags is None:
            flags = cert.cq_flags
        if cert.kind != "none":
            if cert.cq_flags is not flags:
                cert = StationarityCertificate(
                    kind=cert.kind, multipliers=cert.multipliers,
                    residual=cert.residual, partition=cert.partition,
                    cq_flags=flags, tol=cert.tol,
                )
            return cert
        last = cert
    return StationarityCertificate(
        kind="none", multipliers=last.multipliers, residual=last.residual,
        partition=last.partition, cq_flags=flags, tol=last.tol,
    )


# ---------------------------------------------------------------------------
# constraint-qualification probes
# ---------------------------------------------------------------------------

def _linearly_independent(rows: Array, tol: float) -> bool:
    if rows.shape[0] == 0:
        return True
    if rows.shape[0] > rows.shape[1]:
        return False
    s = np.linalg.svd(rows, compute_uv=False)
    return bool(s[-1] > tol * max(1.0, s[0]))


def _positive_linearly_dependent(V: Array, W: Array, tol: float) -> bool:
    """Does a nonzero combination sum to zero (V rows with coefficients >= 0)?

    Decided by a rank test on the free block followed by an LP that minimizes
    the infinity norm of the projected nonnegative combination on the
    1-norm-one simplex.
    """
    n = V.shape[1] if V.size else W.shape[1]
    if W.shape[0]:
        if not _linearly_independent(W, tol):
            return True
    if V.shape[0] == 0:
        return False
    if W.shape[0]:
        P = np.eye(n) - np.linalg.pinv(W) @ W
        A = V @ P
    else:
        A = V
    r = A.shape[0]
    scale = max(1.0, float(np.max(np.abs(V))))
    # variables: a_1..a_r >= 0, tau >= 0; minimize tau s.t. |A^T a|_inf <= tau,
    # sum a = 1
    c = np.zeros(r + 1)
    c[-1] = 1.0
    A_ub = np.zeros((2 * n, r + 1))
    A_ub[:n, :r] = A.T
    A_ub[n:, :r] = -A.T
    A_ub[:, -1] = -1.0
    b_ub = np.zeros(2 * n)
    A_eq = np.zeros((1, r + 1))
    A_eq[0, :r] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
                  bounds=[(0, None)] * (r + 1), method="highs")
    if not res.success:
        raise RuntimeError(f"positive-linear-independence LP failed: {res.message}")
    return bool(res.fun <= tol * scale)


def _tnlp_blocks(problem: MpscProblem, x, tol: float):
    rec = evaluate(problem, x)
    _feasibility_screen(rec, tol)
    part = classify_indices(problem, x, tol)
    V = rec.jac_g[list(part.i_g)] if part.i_g else np.zeros((0, problem.n))
    free_rows = [rec.jac_h] if problem.p else []
    gi = sorted(part.i_G + part.i_GH)
    hi = sorted(part.i_H + part.i_GH)
    if gi:
        free_rows.append(rec.jac_G[gi])
    if hi:
        free_rows.append(rec.jac_H[hi])
    W = np.vstack(free_rows) if free_rows else np.zeros((0, problem.n))
    return rec, part, V, W


def check_mpsc_licq(problem: MpscProblem, x, tol: float) -> bool:
    """Linear independence of the tightened-problem gradient family."""
    _, _, V, W = _tnlp_blocks(problem, x, tol)
    family = np.vstack([V, W]) if V.size or W.size else np.zeros((0, problem.n))
    return _linearly_independent(family, tol)


def check_mpsc_mfcq(problem: MpscProblem, x, tol: float) -> bool:
    """Positive-linear independence of the tightened-problem gradients."""
    _, _, V, W = _tnlp_blocks(problem, x, tol)
    return not _positive_linearly_dependent(V, W, tol)


def check_nnamcq(problem: MpscProblem, x, tol: float, enum_cap: int = 20) -> bool:
    """No-nonzero-abnormal-multiplier probe.

    True iff, for every zero-pattern branch over the biactive pairs, the
    homogeneous multiplier system admits only the zero solution within tol.
    """
    rec = evaluate(problem, x)
    _feasibility_screen(rec, tol)
    part = classify_indices(problem, x, tol)
    if len(part.i_GH) > enum_cap:
        raise EnumerationCapExceeded(
            f"|biactive| = {len(part.i_GH)} exceeds enumeration cap {enum_cap}"
        )
    V = rec.jac_g[list(part.i_g)] if part.i_g else np.zeros((0, problem.n))
    base_rows = [rec.jac_h] if problem.p else []
    if part.i_G:
        base_rows.append(rec.jac_G[list(part.i_G)])
    if part.i_H:
        base_rows.append(rec.jac_H[list(part.i_H)])
    for choice in itertools.product((0, 1), repeat=len(part.i_GH)):
        rows = list(base_rows)
        for l, c in zip(part.i_GH, choice):
            rows.append(rec.jac_G[l][None, :] if c == 1 else rec.jac_H[l][None, :])
        W = np.vstack(rows) if rows else np.zeros((0, problem.n))
        if _positive_linearly_dependent(V, W, tol):
            return False
    return True


def _compute_cq_flags(problem: MpscProblem, x, tol: float, enum_cap: int) -> CqFlags:
    licq = check_mpsc_licq(problem, x, tol)
    mfcq = check_mpsc_mfcq(problem, x, tol)
    try:
        nnamcq: Optional[bool] = check_nnamcq(problem, x, tol, enum_cap=enum_cap)
    except EnumerationCapExceeded:
        nnamcq = None
    return CqFlags(nnamcq=nnamcq, mpsc_mfcq=mfcq, mpsc_licq=licq, tol=float(tol))
