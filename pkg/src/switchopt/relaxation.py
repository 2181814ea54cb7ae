"""Smoothing functions and surrogate-problem builders.

Four relaxation families are supported.  Each one maps a switching pair
(G_l, H_l) and a parameter t >= 0 to a block of smooth inequality rows whose
feasible set inflates the switching set and collapses back onto it as t
shrinks to zero:

* ``KS``       four rows built from the piecewise NCP function ``phi``,
* ``SCHOLTES`` the two-sided product band |G_l * H_l| <= t split in two rows,
* ``SU``       four rows built from the C^1 kink smoothing ``phi_su``,
* ``KDB``      shifted-product rows; see ``Scheme.kdb_mode`` below.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import DimensionMismatch, InfeasiblePoint
from .problem import Array, EvalRecord, MpscProblem, as_vector, evaluate

__all__ = [
    "phi", "grad_phi", "theta", "dtheta", "phi_su", "dphi_su",
    "SchemeKind", "Scheme", "ThetaSpec", "RowTag", "NlpEval", "NlpProblem",
    "build_relaxed", "switch_rows_eval", "RelaxedPartition", "relaxed_partition",
]


# ---------------------------------------------------------------------------
# NCP function underlying the KS rows
# ---------------------------------------------------------------------------

def phi(a, b):
    """Piecewise NCP function: a*b where a + b >= 0, else -(a^2 + b^2)/2.

    Vanishes exactly on {a >= 0, b >= 0, a*b = 0}.  Accepts scalars or
    broadcastable arrays.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    pos = a_arr + b_arr >= 0.0
    out = np.where(pos, a_arr * b_arr, -0.5 * (a_arr * a_arr + b_arr * b_arr))
    if np.isscalar(a) and np.isscalar(b):
        return float(out)
    return out


def grad_phi(a, b):
    """Gradient of ``phi``: (b, a) where a + b >= 0, else (-a, -b)."""
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    pos = a_arr + b_arr >= 0.0
    da = np.where(pos, b_arr, -a_arr)
    db = np.where(pos, a_arr, -b_arr)
    if np.isscalar(a) and np.isscalar(b):
        return float(da), float(db)
    return da, db


# ---------------------------------------------------------------------------
# Kink smoothing underlying the SU rows
# ---------------------------------------------------------------------------

_THETA_DOMAIN_SLACK = 1e-12


def theta(z: float) -> float:
    """Sine-based bridge on [-1, 1] with theta(+-1) = 1 and theta'(+-1) = +-1."""
    if abs(z) > 1.0 + _THETA_DOMAIN_SLACK:
        raise ValueError(f"theta is only defined on [-1, 1], got {z}")
    return (2.0 / math.pi) * math.sin(0.5 * math.pi * z + 1.5 * math.pi) + 1.0


def dtheta(z: float) -> float:
    """Derivative of ``theta``; equals sin(pi z / 2) on [-1, 1]."""
    if abs(z) > 1.0 + _THETA_DOMAIN_SLACK:
        raise ValueError(f"dtheta is only defined on [-1, 1], got {z}")
    return math.cos(0.5 * math.pi * z + 1.5 * math.pi)


def phi_su(z: float, t: float) -> float:
    """C^1 smoothing of |z| with smoothing radius t > 0."""
    if t <= 0:
        raise ValueError("phi_su requires t > 0")
    if abs(z) >= t:
        return abs(z)
    return t * theta(z / t)


def dphi_su(z: float, t: float) -> float:
    """Derivative of ``phi_su`` in z; matches sign(z) outside the radius."""
    if t <= 0:
        raise ValueError("dphi_su requires t > 0")
    if abs(z) >= t:
        return math.copysign(1.0, z)
    return dtheta(z / t)


def _phi_su_vec(z: Array, t: float, th, dth) -> Tuple[Array, Array]:
    """Vectorized (phi_su, dphi_su) with a pluggable bridge function."""
    z = np.asarray(z, dtype=float)
    inner = np.abs(z) < t
    val = np.abs(z).astype(float)
    der = np.sign(z)
    if np.any(inner):
        zi = z[inner] / t
        val[inner] = t * np.asarray([th(v) for v in zi])
        der[inner] = np.asarray([dth(v) for v in zi])
    return val, der


# ---------------------------------------------------------------------------
# Scheme description
# ---------------------------------------------------------------------------

class SchemeKind(enum.Enum):
    KS = "ks"
    SCHOLTES = "scholtes"
    SU = "su"
    KDB = "kdb"


@dataclass(frozen=True)
class ThetaSpec:
    """Pluggable bridge for the SU rows: value and derivative on [-1, 1]."""

    theta: Callable[[float], float]
    dtheta: Callable[[float], float]


DEFAULT_THETA = ThetaSpec(theta=theta, dtheta=dtheta)


@dataclass(frozen=True)
class Scheme:
    """A relaxation scheme selection plus its per-scheme options.

    ``kdb_mode`` picks between the four-row conjunction written out literally
    ("literal") and the single equivalent product row
    (G^2 - t^2)(H^2 - t^2) <= 0 ("quartic", the default).  The literal
    conjunction is empty for every t > 0, so the quartic form is the one that
    actually inflates the feasible set; both are kept for experimentation.
    """

    kind: SchemeKind
    theta: ThetaSpec = DEFAULT_THETA
    kdb_mode: str = "quartic"

    def __post_init__(self):
        if self.kdb_mode not in ("quartic", "literal"):
            raise ValueError("kdb_mode must be 'quartic' or 'literal'")

    @property
    def rows_per_pair(self) -> int:
        if self.kind is SchemeKind.SCHOLTES:
            return 2
        if self.kind is SchemeKind.KDB and self.kdb_mode == "quartic":
            return 1
        return 4

    @staticmethod
    def ks() -> "Scheme":
        return Scheme(kind=SchemeKind.KS)

    @staticmethod
    def scholtes() -> "Scheme":
        return Scheme(kind=SchemeKind.SCHOLTES)

    @staticmethod
    def su(theta_spec: Optional[ThetaSpec] = None) -> "Scheme":
        return Scheme(kind=SchemeKind.SU, theta=theta_spec or DEFAULT_THETA)

    @staticmethod
    def kdb(mode: str = "quartic") -> "Scheme":
        return Scheme(kind=SchemeKind.KDB, kdb_mode=mode)

    @staticmethod
    def parse(label: str) -> "Scheme":
        key = label.strip().lower()
        table = {
            "ks": Scheme.ks, "scholtes": Scheme.scholtes, "su": Scheme.su,
            "kdb": Scheme.kdb,
        }
        if key not in table:
            raise ValueError(f"unknown scheme '{label}' (choose ks|scholtes|su|kdb)")
        return table[key]()


def _coerce_scheme(scheme: Union[Scheme, SchemeKind, str]) -> Scheme:
    if isinstance(scheme, Scheme):
        return scheme
    if isinstance(scheme, SchemeKind):
        return Scheme(kind=scheme)
    return Scheme.parse(str(scheme))


# Quadrant sign pattern per KS/SU row index: row s handles shifted arguments
# (sG*G - t, sH*H - t).
_QUADRANT_SIGNS = {1: (1.0, 1.0), 2: (-1.0, 1.0), 3: (-1.0, -1.0), 4: (1.0, -1.0)}


# ---------------------------------------------------------------------------
# Smooth surrogate container
# ---------------------------------------------------------------------------

RowTag = Tuple[str, int, int]  # (kind, index, sub): ("g", i, 0) / ("switch", l, s) / ("h", j, 0)


@dataclass(frozen=True)
class NlpEval:
    """Single-pass evaluation of a smooth NLP at a point."""

    x: Array
    f: float
    grad_f: Array
    c_ineq: Array
    jac_ineq: Array
    c_eq: Array
    jac_eq: Array

    def feasibility_violation(self) -> float:
        viol = 0.0
        if self.c_ineq.size:
            viol = max(viol, float(np.max(self.c_ineq)))
        if self.c_eq.size:
            viol = max(viol, float(np.max(np.abs(self.c_eq))))
        return max(viol, 0.0)


@dataclass(frozen=True)
class NlpProblem:
    """A plain smooth NLP: min f s.t. c_ineq(x) <= 0, c_eq(x) = 0.

    ``row_tags`` gives total provenance for the inequality block: each row is
    either an original inequality ("g", i, 0) or a relaxation row
    ("switch", l, s).  Equality rows are tagged ("h", j, 0).
    """

    n: int
    evaluate: Callable[[Array], NlpEval]
    m_ineq: int
    m_eq: int
    row_tags: Tuple[RowTag, ...]
    eq_tags: Tuple[RowTag, ...]
    source: str = "nlp"
    scheme: Optional[Scheme] = None
    t: Optional[float] = None

    def __post_init__(self):
        if len(self.row_tags) != self.m_ineq:
            raise DimensionMismatch("row_tags must cover every inequality row")
        if len(self.eq_tags) != self.m_eq:
            raise DimensionMismatch("eq_tags must cover every equality row")

    # Convenience accessors; prefer evaluate() in hot paths.
    def objective(self, x) -> float:
        return self.evaluate(x).f

    def gradient(self, x) -> Array:
        return self.evaluate(x).grad_f

    def c_ineq(self, x) -> Array:
        return self.evaluate(x).c_ineq

    def jac_ineq(self, x) -> Array:
        return self.evaluate(x).jac_ineq

    def c_eq(self, x) -> Array:
        return self.evaluate(x).c_eq

    def jac_eq(self, x) -> Array:
        return self.evaluate(x).jac_eq

    def switch_rows(self) -> Dict[Tuple[int, int], int]:
        """Map (pair index, row sub-index) -> inequality row number."""
        return {
            (tag[1], tag[2]): r
            for r, tag in enumerate(self.row_tags)
            if tag[0] == "switch"
        }


# ---------------------------------------------------------------------------
# Row assembly per scheme
# ---------------------------------------------------------------------------

def _ks_rows(rec: EvalRecord, t: float) -> Tuple[Array, Array]:
    """Values and Jacobian of the four NCP rows per pair, pair-major order."""
    q, n = rec.jac_G.shape
    vals = np.empty(4 * q)
    jac = np.empty((4 * q, n))
    for s in (1, 2, 3, 4):
        sG, sH = _QUADRANT_SIGNS[s]
        a = sG * rec.G - t
        b = sH * rec.H - t
        vals[s - 1::4] = phi(a, b)
        da, db = grad_phi(a, b)
        jac[s - 1::4] = (da * sG)[:, None] * rec.jac_G + (db * sH)[:, None] * rec.jac_H
    return vals, jac


def _scholtes_rows(rec: EvalRecord, t: float) -> Tuple[Array, Array]:
    q, n = rec.jac_G.shape
    prod = rec.G * rec.H
    jac_prod = rec.H[:, None] * rec.jac_G + rec.G[:, None] * rec.jac_H
    vals = np.empty(2 * q)
    jac = np.empty((2 * q, n))
    vals[0::2] = prod - t
    vals[1::2] = -prod - t
    jac[0::2] = jac_prod
    jac[1::2] = -jac_prod
    return vals, jac


def _su_rows(rec: EvalRecord, t: float, th: ThetaSpec) -> Tuple[Array, Array]:
    q, n = rec.jac_G.shape
    vals = np.empty(4 * q)
    jac = np.empty((4 * q, n))
    combos = {
        1: (1.0, 1.0, rec.G - rec.H),
        2: (1.0, -1.0, rec.G + rec.H),
        3: (-1.0, 1.0, -rec.G - rec.H),
        4: (-1.0, -1.0, -rec.G + rec.H),
    }
    for s, (cG, cH, arg) in combos.items():
        sval, sder = _phi_su_vec(arg, t, th.theta, th.dtheta)
        vals[s - 1::4] = cG * rec.G + cH * rec.H - sval
        # d(arg)/dx alternates between +-(jac_G -+ jac_H) per row family
        if s == 1:
            darg = rec.jac_G - rec.jac_H
        elif s == 2:
            darg = rec.jac_G + rec.jac_H
        elif s == 3:
            darg = -rec.jac_G - rec.jac_H
        else:
            darg = -rec.jac_G + rec.jac_H
        jac[s - 1::4] = cG * rec.jac_G + cH * rec.jac_H - sder[:, None] * darg
    return vals, jac


def _kdb_literal_rows(rec: EvalRecord, t: float) -> Tuple[Array, Array]:
    q, n = rec.jac_G.shape
    vals = np.empty(4 * q)
    jac = np.empty((4 * q, n))
    G, H = rec.G, rec.H
    JG, JH = rec.jac_G, rec.jac_H
    # (G - t)(H - t), (-G - t)(H - t), (G + t)(H + t), (G - t)(-H - t)
    vals[0::4] = (G - t) * (H - t)
    jac[0::4] = (H - t)[:, None] * JG + (G - t)[:, None] * JH
    vals[1::4] = (-G - t) * (H - t)
    jac[1::4] = -(H - t)[:, None] * JG + (-G - t)[:, None] * JH
    vals[2::4] = (G + t) * (H + t)
    jac[2::4] = (H + t)[:, None] * JG + (G + t)[:, None] * JH
    vals[3::4] = (G - t) * (-H - t)
    jac[3::4] = (-H - t)[:, None] * JG - (G - t)[:, None] * JH
    return vals, jac


def _kdb_quartic_rows(rec: EvalRecord, t: float) -> Tuple[Array, Array]:
    G, H = rec.G, rec.H
    gsq = G * G - t * t
    hsq = H * H - t * t
    vals = gsq * hsq
    jac = (2.0 * G * hsq)[:, None] * rec.jac_G + (2.0 * H * gsq)[:, None] * rec.jac_H
    return vals, jac


def switch_rows_eval(rec: EvalRecord, scheme: Scheme, t: float) -> Tuple[Array, Array]:
    """Values and Jacobian of the relaxation rows at an evaluated point.

    Rows are pair-major: all rows of pair 0 first.  Shared by the surrogate
    builder and by consumers that need row data at points of their choosing.
    """
    if rec.jac_G.shape[0] == 0:
        return np.zeros(0), np.zeros((0, rec.x.size))
    if scheme.kind is SchemeKind.KS:
        return _ks_rows(rec, t)
    if scheme.kind is SchemeKind.SCHOLTES:
        return _scholtes_rows(rec, t)
    if scheme.kind is SchemeKind.SU:
        return _su_rows(rec, t, scheme.theta)
    if scheme.kdb_mode == "literal":
        return _kdb_literal_rows(rec, t)
    return _kdb_quartic_rows(rec, t)


def build_relaxed(problem: MpscProblem, scheme: Union[Scheme, SchemeKind, str],
                  t: float) -> NlpProblem:
    """Assemble the smooth surrogate of ``problem`` at parameter ``t``.

    The inequality block is [g; relaxation rows] with rows in pair-major
    order; the equality block is h unchanged.  Gradients are exact.  ``t = 0``
    is allowed for KS, SCHOLTES and KDB (tightest member of the family) but
    rejected for SU, whose smoothing radius must stay positive.
    """
    sch = _coerce_scheme(scheme)
    if t < 0:
        raise ValueError("relaxation parameter t must be non-negative")
    if sch.kind is SchemeKind.SU and t == 0:
        raise ValueError("the SU scheme requires t > 0")

    rows_per_pair = sch.rows_per_pair
    n_switch_rows = rows_per_pair * problem.q
    tags = [("g", i, 0) for i in range(problem.m)]
    for l in range(problem.q):
        for s in range(1, rows_per_pair + 1):
            tags.append(("switch", l, s))
    eq_tags = tuple(("h", j, 0) for j in range(problem.p))
    t_val = float(t)

    def _eval(x) -> NlpEval:
        rec = evaluate(problem, x)
        if problem.q:
            vals, jac = switch_rows_eval(rec, sch, t_val)
            ci = np.concatenate([rec.g, vals])
            Ji = np.vstack([rec.jac_g, jac])
        else:
            ci = rec.g
            Ji = rec.jac_g
        return NlpEval(
            x=rec.x, f=rec.f, grad_f=rec.grad_f, c_ineq=ci, jac_ineq=Ji,
            c_eq=rec.h, jac_eq=rec.jac_h,
        )

    return NlpProblem(
        n=problem.n, evaluate=_eval, m_ineq=problem.m + n_switch_rows,
        m_eq=problem.p, row_tags=tuple(tags), eq_tags=eq_tags,
        source=problem.name, scheme=sch, t=t_val,
    )


# ---------------------------------------------------------------------------
# Relaxed-active-set diagnostics for the KS family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelaxedPartition:
    """The twelve activity sets of the KS surrogate at a feasible point.

    Naming: ``i00_s`` collects pairs sitting on the corner of quadrant row s
    (both shifted arguments zero), ``i0p_s`` / ``i0m_s`` pins G at +-t with
    |H| > t, and ``ip0_s`` / ``im0_s`` pins H at +-t with |G| > t.  All twelve
    primitive sets are pairwise disjoint whenever tol < t.
    """

    i00_1: Tuple[int, ...]
    i0p_1: Tuple[int, ...]
    ip0_1: Tuple[int, ...]
    i00_2: Tuple[int, ...]
    i0p_2: Tuple[int, ...]
    im0_2: Tuple[int, ...]
    i00_3: Tuple[int, ...]
    i0m_3: Tuple[int, ...]
    im0_3: Tuple[int, ...]
    i00_4: Tuple[int, ...]
    i0m_4: Tuple[int, ...]
    ip0_4: Tuple[int, ...]
    t: float
    tol: float

    def primitive_sets(self) -> Dict[str, Tuple[int, ...]]:
        return {
            "i00_1": self.i00_1, "i0p_1": self.i0p_1, "ip0_1": self.ip0_1,
            "i00_2": self.i00_2, "i0p_2": self.i0p_2, "im0_2": self.im0_2,
            "i00_3": self.i00_3, "i0m_3": self.i0m_3, "im0_3": self.im0_3,
            "i00_4": self.i00_4, "i0m_4": self.i0m_4, "ip0_4": self.ip0_4,
        }

    def active_for_row(self, s: int) -> Tuple[int, ...]:
        """Pairs whose quadrant-s row is active."""
        groups = {
            1: self.i00_1 + self.i0p_1 + self.ip0_1,
            2: self.i00_2 + self.i0p_2 + self.im0_2,
            3: self.i00_3 + self.i0m_3 + self.im0_3,
            4: self.i00_4 + self.i0m_4 + self.ip0_4,
        }
        return tuple(sorted(groups[s]))

    @property
    def corners(self) -> Tuple[int, ...]:
        return tuple(sorted(self.i00_1 + self.i00_2 + self.i00_3 + self.i00_4))

    @property
    def g_pinned(self) -> Tuple[int, ...]:
        """Pairs with G at +-t and |H| > t (supports recovered mu)."""
        return tuple(sorted(self.i0p_1 + self.i0p_2 + self.i0m_3 + self.i0m_4))

    @property
    def h_pinned(self) -> Tuple[int, ...]:
        """Pairs with H at +-t and |G| > t (supports recovered nu)."""
        return tuple(sorted(self.ip0_1 + self.im0_2 + self.im0_3 + self.ip0_4))


def relaxed_partition(problem: MpscProblem, x, t: float, tol: float) -> RelaxedPartition:
    """Classify every pair into the twelve activity sets of the KS surrogate.

    Membership compares G_l(x) and H_l(x) against +-t with absolute tolerance
    ``tol``; a band at +-t counts as "pinned", strictly beyond counts as the
    open side.  Requires 0 < tol < t so the bands cannot overlap.
    """
    if t <= 0:
        raise ValueError("relaxed_partition requires t > 0")
    if not (0 < tol < t):
        raise ValueError("requires 0 < tol < t so activity bands are disjoint")
    nlp = build_relaxed(problem, Scheme.ks(), t)
    ev = nlp.evaluate(x)
    if ev.c_ineq.size and float(np.max(ev.c_ineq[problem.m:])) > tol:
        raise InfeasiblePoint("point is infeasible for the relaxed problem")
    rec = evaluate(problem, x)

    def near(v, target):
        return abs(v - target) <= tol

    sets = {k: [] for k in (
        "i00_1", "i0p_1", "ip0_1", "i00_2", "i0p_2", "im0_2",
        "i00_3", "i0m_3", "im0_3", "i00_4", "i0m_4", "ip0_4",
    )}
    for l in range(problem.q):
        G, H = rec.G[l], rec.H[l]
        if near(G, t) and near(H, t):
            sets["i00_1"].append(l)
        elif near(G, t) and H > t + tol:
            sets["i0p_1"].append(l)
        elif G > t + tol and near(H, t):
            sets["ip0_1"].append(l)
        if near(G, -t) and near(H, t):
            sets["i00_2"].append(l)
        elif near(G, -t) and H > t + tol:
            sets["i0p_2"].append(l)
        elif G < -t - tol and near(H, t):
            sets["im0_2"].append(l)
        if near(G, -t) and near(H, -t):
            sets["i00_3"].append(l)
        elif near(G, -t) and H < -t - tol:
            sets["i0m_3"].append(l)
        elif G < -t - tol and near(H, -t):
            sets["im0_3"].append(l)
        if near(G, t) and near(H, -t):
            sets["i00_4"].append(l)
        elif near(G, t) and H < -t - tol:
            sets["i0m_4"].append(l)
        elif G > t + tol and near(H, -t):
            sets["ip0_4"].append(l)
    return RelaxedPartition(
        **{k: tuple(v) for k, v in sets.items()}, t=float(t), tol=float(tol)
    )
