"""Containers and first-order evaluation for switching-constrained programs.

A problem instance bundles a smooth objective f, inequality constraints
g(x) <= 0, equality constraints h(x) = 0 and q switching pairs (G_l, H_l)
subject to G_l(x) * H_l(x) = 0.  All maps come with user-supplied first
derivatives; nothing here differentiates symbolically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DimensionMismatch, EvaluationFailure, InfeasiblePoint

Array = np.ndarray
ScalarFun = Callable[[Array], float]
VectorFun = Callable[[Array], Array]


def as_vector(x, n: int, name: str = "x") -> Array:
    """Coerce to a float vector of length ``n`` or raise DimensionMismatch."""
    v = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if v.size != n:
        raise DimensionMismatch(f"{name} has size {v.size}, expected {n}")
    return v


def _zero_vec_fun(k: int) -> VectorFun:
    def fun(x: Array) -> Array:
        return np.zeros(k)

    return fun


def _zero_jac_fun(k: int, n: int) -> VectorFun:
    def fun(x: Array) -> Array:
        return np.zeros((k, n))

    return fun


@dataclass(frozen=True)
class MpscProblem:
    """A switching-constrained program with first-order evaluators.

    Attributes
    ----------
    n : number of decision variables.
    m, p, q : counts of inequality rows, equality rows and switching pairs.
    f, grad_f : objective value and gradient.
    g, jac_g : inequality map (convention g(x) <= 0) and its (m, n) Jacobian.
    h, jac_h : equality map and its (p, n) Jacobian.
    G, jac_G, H, jac_H : the two switching maps and their (q, n) Jacobians.
    name : label used in traces and CSV output.
    known_solutions : optional reference records ``(point, objective value)``;
        these are bookkeeping hints (feasible references or known optima),
        never consumed by the solvers.
    """

    n: int
    f: ScalarFun
    grad_f: VectorFun
    m: int = 0
    p: int = 0
    q: int = 0
    g: Optional[VectorFun] = None
    jac_g: Optional[VectorFun] = None
    h: Optional[VectorFun] = None
    jac_h: Optional[VectorFun] = None
    G: Optional[VectorFun] = None
    jac_G: Optional[VectorFun] = None
    H: Optional[VectorFun] = None
    jac_H: Optional[VectorFun] = None
    name: str = "mpsc"
    known_solutions: Tuple[Tuple[Tuple[float, ...], float], ...] = ()

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be a positive integer")
        for label, count in (("m", self.m), ("p", self.p), ("q", self.q)):
            if count < 0:
                raise ValueError(f"{label} must be non-negative")
        sub = object.__setattr__
        if self.g is None:
            sub(self, "g", _zero_vec_fun(self.m))
            sub(self, "jac_g", _zero_jac_fun(self.m, self.n))
        if self.h is None:
            sub(self, "h", _zero_vec_fun(self.p))
            sub(self, "jac_h", _zero_jac_fun(self.p, self.n))
        if self.G is None:
            sub(self, "G", _zero_vec_fun(self.q))
            sub(self, "jac_G", _zero_jac_fun(self.q, self.n))
        if self.H is None:
            sub(self, "H", _zero_vec_fun(self.q))
            sub(self, "jac_H", _zero_jac_fun(self.q, self.n))


@dataclass(frozen=True)
class EvalRecord:
    """All function values and first derivatives at one point."""

    x: Array
    f: float
    grad_f: Array
    g: Array
    jac_g: Array
    h: Array
    jac_h: Array
    G: Array
    jac_G: Array
    H: Array
    jac_H: Array

    def switching_violation(self) -> float:
        """max_l |G_l(x) H_l(x)|, zero when q == 0."""
        if self.G.size == 0:
            return 0.0
        return float(np.max(np.abs(self.G * self.H)))

    def feasibility_violation(self) -> float:
        """Largest violation over g <= 0, h = 0 and the switching products."""
        viol = self.switching_violation()
        if self.g.size:
            viol = max(viol, float(np.max(self.g)))
        if self.h.size:
            viol = max(viol, float(np.max(np.abs(self.h))))
        return max(viol, 0.0)


def _check_map(value: Array, rows: int, n: int, jac: Array, label: str):
    if value.shape != (rows,):
        raise DimensionMismatch(f"{label}(x) has shape {value.shape}, expected ({rows},)")
    if jac.shape != (rows, n):
        raise DimensionMismatch(
            f"jac_{label}(x) has shape {jac.shape}, expected ({rows}, {n})"
        )
    if rows and not (np.all(np.isfinite(value)) and np.all(np.isfinite(jac))):
        raise EvaluationFailure(f"non-finite value in {label} evaluation")


def evaluate(problem: MpscProblem, x) -> EvalRecord:
    """Evaluate every map of ``problem`` at ``x`` in one pass.

    Deterministic and cache-free; raises on dimension mismatch or when an
    evaluator returns a non-finite number.
    """
    xv = as_vector(x, problem.n)
    fval = float(problem.f(xv))
    gradf = as_vector(problem.grad_f(xv), problem.n, "grad_f(x)")
    if not (np.isfinite(fval) and np.all(np.isfinite(gradf))):
        raise EvaluationFailure("non-finite value in objective evaluation")

    g = np.atleast_1d(np.asarray(problem.g(xv), dtype=float))
    jg = np.asarray(problem.jac_g(xv), dtype=float).reshape(problem.m, problem.n)
    _check_map(g, problem.m, problem.n, jg, "g")
    h = np.atleast_1d(np.asarray(problem.h(xv), dtype=float))
    jh = np.asarray(problem.jac_h(xv), dtype=float).reshape(problem.p, problem.n)
    _check_map(h, problem.p, problem.n, jh, "h")
    G = np.atleast_1d(np.asarray(problem.G(xv), dtype=float))
    jG = np.asarray(problem.jac_G(xv), dtype=float).reshape(problem.q, problem.n)
    _check_map(G, problem.q, problem.n, jG, "G")
    H = np.atleast_1d(np.asarray(problem.H(xv), dtype=float))
    jH = np.asarray(problem.jac_H(xv), dtype=float).reshape(problem.q, problem.n)
    _check_map(H, problem.q, problem.n, jH, "H")

    return EvalRecord(
        x=xv, f=fval, grad_f=gradf, g=g, jac_g=jg, h=h, jac_h=jh,
        G=G, jac_G=jG, H=H, jac_H=jH,
    )


@dataclass(frozen=True)
class IndexPartition:
    """Active-index bookkeeping at a switching-feasible point.

    ``i_G`` holds pairs where only G vanishes, ``i_H`` where only H vanishes
    and ``i_GH`` the biactive pairs where both do.  ``i_g`` collects active
    inequality rows.  All indices are 0-based.
    """

    i_g: Tuple[int, ...]
    i_G: Tuple[int, ...]
    i_H: Tuple[int, ...]
    i_GH: Tuple[int, ...]
    tol_active: float

    def is_partition(self, q: int) -> bool:
        sets = [set(self.i_G), set(self.i_H), set(self.i_GH)]
        union = set().union(*sets)
        disjoint = sum(len(s) for s in sets) == len(union)
        return disjoint and union == set(range(q))


def classify_indices(problem: MpscProblem, x, tol: float) -> IndexPartition:
    """Split the switching pairs into G-active / H-active / biactive sets.

    The point must be switching-feasible within ``tol``: every product
    |G_l * H_l| passes a screen first, and each pair must have at least one
    member with magnitude <= tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rec = evaluate(problem, x)
    absG = np.abs(rec.G)
    absH = np.abs(rec.H)
    prod = absG * absH
    if problem.q and float(np.max(prod)) > tol:
        worst = int(np.argmax(prod))
        raise InfeasiblePoint(
            f"|G_{worst} * H_{worst}| = {prod[worst]:.3e} exceeds tol {tol:.3e}"
        )
    i_G, i_H, i_GH = [], [], []
    for l in range(problem.q):
        g_small = absG[l] <= tol
        h_small = absH[l] <= tol
        if g_small and h_small:
            i_GH.append(l)
        elif g_small:
            i_G.append(l)
        elif h_small:
            i_H.append(l)
        else:
            raise InfeasiblePoint(
                f"switching pair {l} has |G| = {absG[l]:.3e} and |H| = {absH[l]:.3e},"
                f" both above tol {tol:.3e}"
            )
    i_g = [i for i in range(problem.m) if rec.g[i] >= -tol]
    return IndexPartition(
        i_g=tuple(i_g), i_G=tuple(i_G), i_H=tuple(i_H), i_GH=tuple(i_GH),
        tol_active=float(tol),
    )


@dataclass(frozen=True)
class Multipliers:
    """Multiplier block (lam, rho, mu, nu) attached to g, h, G, H."""

    lam: Array
    rho: Array
    mu: Array
    nu: Array

    @staticmethod
    def zeros(problem: MpscProblem) -> "Multipliers":
        return Multipliers(
            lam=np.zeros(problem.m), rho=np.zeros(problem.p),
            mu=np.zeros(problem.q), nu=np.zeros(problem.q),
        )

    def stationarity_vector(self, rec: EvalRecord) -> Array:
        """grad f + Jg^T lam + Jh^T rho + JG^T mu + JH^T nu at ``rec``."""
        r = rec.grad_f.copy()
        if self.lam.size:
            r += rec.jac_g.T @ self.lam
        if self.rho.size:
            r += rec.jac_h.T @ self.rho
        if self.mu.size:
            r += rec.jac_G.T @ self.mu
        if self.nu.size:
            r += rec.jac_H.T @ self.nu
        return r


def finite_difference_gradient(fun: Callable[[Array], float], x: Array,
                               step: float = 1e-6) -> Array:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (fun(x + e) - fun(x - e)) / (2.0 * step)
    return out


def finite_difference_jacobian(fun: Callable[[Array], Array], x: Array,
                               step: float = 1e-6) -> Array:
    """Central finite-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(fun(x), dtype=float))
    out = np.zeros((f0.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fp = np.atleast_1d(np.asarray(fun(x + e), dtype=float))
        fm = np.atleast_1d(np.asarray(fun(x - e), dtype=float))
        out[:, i] = (fp - fm) / (2.0 * step)
    return out
