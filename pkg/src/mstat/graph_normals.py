"""Membership in the limiting normal cone to the graph of z -> N_Z(z).

For polyhedral Z the graph of the normal-cone map is a finite union of
polyhedra, and its limiting normal cone at a point (z, -g) decomposes over
pairs of nested closed faces of the critical cone. Testing whether a pair
(zeta, -eta) lies in that cone, equivalently whether zeta belongs to the
Mordukhovich coderivative D*N_Z(z, -g)(eta), is the primitive every
stationarity system in this package reduces to.

Sign bookkeeping is centralized: all predicates take g, the gradient of the
lower-level objective at z, so the graph point under test is (z, -g) and
lower-level stationarity of z is exactly the graph-point precondition.

Two independent routes are provided. The face-pair oracle sweeps multiplier
supports and nested row subsets, materializes each Minkowski difference cone
and tests memberships with the generic cone machinery. The direct polyhedral
predicate runs the same existential system with inline linear algebra, and
the orthant and simplex specializations reduce it to sign conditions in
closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .cones import (
    ActiveDecomposition,
    CombinatorialLimitError,
    DEFAULT_EPS,
    MAX_ACTIVE_ROWS,
    Polyhedron,
    active_diagnostics,
    active_set,
    face_difference,
    member_h,
    member_v,
    multiplier_within_support,
    polar_cone,
)
from .lp import linear_feasible

__all__ = [
    "NotGraphPointError", "GraphPoint", "NormalPair", "Membership",
    "GraphContext", "make_graph_context",
    "limiting_normal_member_oracle", "coderivative_member_polyhedron",
    "coderivative_member_orthant", "coderivative_member_simplex",
    "orthant_membership", "simplex_membership", "polyhedron_membership",
    "oracle_membership",
]

STRICT_EPS = 1e-12


class NotGraphPointError(ValueError):
    """(z, -g) is not on the graph of the normal-cone map."""


@dataclass(frozen=True)
class GraphPoint:
    """A decision point z together with the lower-objective gradient g."""

    z: np.ndarray
    g: np.ndarray

    def __init__(self, z, g):
        object.__setattr__(self, "z", np.asarray(z, dtype=float))
        object.__setattr__(self, "g", np.asarray(g, dtype=float))
        if self.z.shape != self.g.shape:
            raise ValueError("z and g must share a dimension")


@dataclass(frozen=True)
class NormalPair:
    """Candidate (zeta, eta): zeta in D*N_Z(z,-g)(eta) iff (zeta,-eta) is normal."""

    zeta: np.ndarray
    eta: np.ndarray

    def __init__(self, zeta, eta):
        object.__setattr__(self, "zeta", np.asarray(zeta, dtype=float))
        object.__setattr__(self, "eta", np.asarray(eta, dtype=float))
        if self.zeta.shape != self.eta.shape:
            raise ValueError("zeta and eta must share a dimension")


@dataclass(frozen=True)
class Membership:
    """Rich membership verdict; truthiness follows `member`."""

    member: bool
    verdict: str            # "member" | "not_member" | "empty_coderivative"
    method: str
    witness: dict = field(default_factory=dict)

    def __bool__(self):
        return self.member

    def to_dict(self):
        return {"member": self.member, "verdict": self.verdict,
                "method": self.method, "witness": self.witness}


def _empty(method, reason):
    return Membership(False, "empty_coderivative", method, {"reason": reason})


@dataclass
class GraphContext:
    """Cached combinatorics of one graph point, reusable across many queries.

    Stores the active set and memoizes, per row subset, whether some
    nonnegative multiplier carried by that subset reproduces -g. Query sweeps
    share these answers, which matters for exhaustive agreement tests.
    """

    poly: Polyhedron
    z: np.ndarray
    g: np.ndarray
    active: tuple
    eps: float
    max_rows: int = MAX_ACTIVE_ROWS
    _supports: dict = field(default_factory=dict)
    _zeta_tests: dict = field(default_factory=dict)

    def support_feasible(self, subset):
        key = frozenset(subset)
        hit = self._supports.get(key)
        if hit is None:
            lam = multiplier_within_support(self.poly, self.z, -self.g, key, self.eps)
            hit = lam is not None
            self._supports[key] = hit
        return hit

    def zeta_feasible(self, eq_rows, ineq_rows, zeta):
        key = (frozenset(eq_rows), frozenset(ineq_rows), zeta.tobytes())
        hit = self._zeta_tests.get(key)
        if hit is None:
            hit = _zeta_in_span_plus_cone(self.poly, eq_rows, ineq_rows, zeta, self.eps)
            self._zeta_tests[key] = hit
        return hit


def make_graph_context(poly, z, g, eps=DEFAULT_EPS, max_rows=MAX_ACTIVE_ROWS):
    """Validate the graph point (z, -g) and prepare the query cache.

    Raises NotGraphPointError when z is infeasible or -g fails to decompose
    over the active rows, and CombinatorialLimitError when the active set is
    too large for the exhaustive sweeps.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    try:
        I = active_set(poly, z, eps)
    except ValueError as exc:
        raise NotGraphPointError(str(exc)) from exc
    if len(I) > max_rows:
        raise CombinatorialLimitError("%d active rows exceeds cap %d" % (len(I), max_rows))
    ctx = GraphContext(poly=poly, z=z, g=g, active=I, eps=eps, max_rows=max_rows)
    if not ctx.support_feasible(I):
        raise NotGraphPointError("-g is not in the normal cone at z")
    return ctx


def _zeta_in_span_plus_cone(poly, eq_rows, ineq_rows, zeta, eps):
    """zeta = A_ineq^T mu + A_eq^T nu with mu >= 0, by LP feasibility."""
    eq_rows = sorted(eq_rows)
    ineq_rows = sorted(ineq_rows)
    n_mu, n_nu = len(ineq_rows), len(eq_rows)
    if n_mu + n_nu == 0:
        return bool(np.max(np.abs(zeta), initial=0.0) <= eps)
    cols = np.vstack([poly.A[ineq_rows], poly.A[eq_rows]]).T
    nonneg = np.concatenate([np.ones(n_mu, dtype=bool), np.zeros(n_nu, dtype=bool)])
    return linear_feasible(A_eq=cols, b_eq=zeta, nonneg=nonneg) is not None


def _subsets(pool):
    pool = tuple(pool)
    for size in range(len(pool) + 1):
        yield from combinations(pool, size)


def _try_row_split(context, eq_set, ineq_set, zeta, eta, eps):
    """Evaluate one (equality rows, inequality rows) regime of the system."""
    poly = context.poly
    A = poly.A
    eq = sorted(eq_set)
    ineq = sorted(ineq_set)
    if eq and np.max(np.abs(A[eq] @ eta)) > eps:
        return False
    if ineq and np.min(A[ineq] @ eta) < -eps:
        return False
    if not context.support_feasible(eq_set):
        return False
    return context.zeta_feasible(frozenset(eq_set), tuple(ineq), zeta)


def polyhedron_membership(poly, gp, pair, eps=DEFAULT_EPS, context=None,
                          hint=None):
    """Direct coderivative membership test for Z = {A z <= b}.

    Sweeps the existential system: a multiplier support S for -g plus nested
    zero-multiplier subsets J1 subseteq J2 turn into a disjoint pair of row
    sets (equalities S + J1, inequalities J2 \\ J1); membership holds when
    a_i^T eta vanishes on the first, is nonnegative on the second, and zeta
    decomposes over the corresponding rows. Sweeping disjoint pairs directly
    covers exactly the (S, J1, J2) triples because supports are upper bounds.

    `hint` is an optional (equality_rows, inequality_rows) pair from a
    certificate; it is tried first and reported, but a failing hint never
    overrides the exhaustive answer.
    """
    if context is None:
        try:
            context = make_graph_context(poly, gp.z, gp.g, eps)
        except NotGraphPointError as exc:
            return _empty("polyhedron", str(exc))
    zeta, eta = pair.zeta, pair.eta
    I = context.active
    A = poly.A
    hint_note = {}
    if hint is not None:
        eq_hint = frozenset(int(i) for i in hint[0])
        ineq_hint = frozenset(int(i) for i in hint[1])
        if eq_hint <= set(I) and ineq_hint <= set(I) and not eq_hint & ineq_hint \
                and _try_row_split(context, eq_hint, ineq_hint, zeta, eta, eps):
            return Membership(True, "member", "polyhedron",
                              {"equality_rows": sorted(eq_hint),
                               "inequality_rows": sorted(ineq_hint),
                               "hint_confirmed": True})
        hint_note = {"hint_confirmed": False}
    for eq in _subsets(I):
        eq_set = frozenset(eq)
        rest = [i for i in I if i not in eq_set]
        if eq and np.max(np.abs(A[list(eq)] @ eta)) > eps:
            continue
        if not context.support_feasible(eq_set):
            continue
        for ineq in _subsets(rest):
            if ineq and np.min(A[list(ineq)] @ eta) < -eps:
                continue
            if context.zeta_feasible(eq_set, ineq, zeta):
                witness = {"equality_rows": sorted(eq_set),
                           "inequality_rows": sorted(ineq),
                           "near_threshold_rows": list(active_diagnostics(poly, gp.z, eps)),
                           **hint_note}
                return Membership(True, "member", "polyhedron", witness)
    return Membership(False, "not_member", "polyhedron",
                      {"active_rows": list(I), **hint_note})


def oracle_membership(poly, gp, pair, eps=DEFAULT_EPS, max_rows=MAX_ACTIVE_ROWS):
    """Face-pair enumeration oracle over the critical-cone combinatorics.

    For each multiplier support S and nested subsets J1 subseteq J2 of the
    remaining active rows, builds the face difference cone F_J1 - F_J2 in
    halfspace form, and accepts when -eta lies in it and zeta in its polar.
    Exhaustive and intended as the slow cross-check at desk scale.
    """
    try:
        context = make_graph_context(poly, gp.z, gp.g, eps, max_rows)
    except NotGraphPointError as exc:
        return _empty("oracle", str(exc))
    zeta, eta = pair.zeta, pair.eta
    I = context.active
    seen = set()
    for S in _subsets(I):
        if not context.support_feasible(S):
            continue
        zero_rows = tuple(i for i in I if i not in S)
        split = ActiveDecomposition(I=I, lam=np.zeros(poly.m),
                                    I_plus=tuple(S), I_zero=zero_rows)
        for J2 in _subsets(zero_rows):
            for J1 in _subsets(J2):
                key = (frozenset(set(S) | set(J1)), frozenset(set(J2) - set(J1)))
                if key in seen:
                    continue
                seen.add(key)
                diff = face_difference(poly, gp.z, None, J1, J2,
                                       decomposition=split, eps=eps)
                if member_h(diff, -eta, eps) and member_v(polar_cone(diff), zeta, eps):
                    return Membership(True, "member", "oracle",
                                      {"support": list(S), "J1": list(J1),
                                       "J2": list(J2)})
    return Membership(False, "not_member", "oracle", {"active_rows": list(I)})


def _strict_neg(x, strict_eps):
    return x <= -strict_eps


def _ambiguous(values, strict_eps):
    return [int(i) for i, v in enumerate(values) if 0.0 < abs(v) < strict_eps]


def orthant_membership(z, g, pair, eps=DEFAULT_EPS, strict_eps=STRICT_EPS):
    """Closed-form coderivative membership for Z = R_+^d.

    Coordinates split into L (z_i > 0), I_+ (z_i = 0 < g_i) and I_0 (both
    zero). Membership needs zeta to vanish on L, eta on I_+, and on I_0 each
    coordinate must have zeta_i eta_i = 0 or both strictly negative.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    zeta, eta = pair.zeta, pair.eta
    if np.min(z, initial=0.0) < -eps:
        return _empty("orthant", "z has negative coordinates")
    if np.min(g, initial=0.0) < -eps:
        return _empty("orthant", "g has negative coordinates")
    if np.max(np.abs(z * g), initial=0.0) > eps:
        return _empty("orthant", "z and g are not complementary")
    L = z > eps
    I_plus = (~L) & (g > eps)
    I_zero = (~L) & (~I_plus)
    witness = {"L": np.flatnonzero(L).tolist(),
               "I_plus": np.flatnonzero(I_plus).tolist(),
               "I_zero": np.flatnonzero(I_zero).tolist(),
               "boundary_ambiguous": _ambiguous(zeta, strict_eps)}
    ok = True
    if L.any() and np.max(np.abs(zeta[L])) > eps:
        ok = False
    if ok and I_plus.any() and np.max(np.abs(eta[I_plus])) > eps:
        ok = False
    if ok:
        for i in np.flatnonzero(I_zero):
            zi, ei = zeta[i], eta[i]
            both_neg = _strict_neg(zi, strict_eps) and _strict_neg(ei, strict_eps)
            if not (both_neg or abs(zi) <= eps or abs(ei) <= eps):
                ok = False
                break
    return Membership(ok, "member" if ok else "not_member", "orthant", witness)


def _simplex_beta_conditions(zeta, eta, beta, tau, sum_gap, labels, eps, strict_eps):
    """Check the simplex system for one candidate beta."""
    L, I_plus, I_zero = labels
    if abs(beta) > eps and sum_gap > eps:
        return False
    sum_eta = float(np.sum(eta))
    if abs(tau) > strict_eps and abs(sum_eta) > eps:
        return False
    beta_pos = beta > strict_eps
    if not ((beta_pos and sum_eta > strict_eps)
            or abs(beta) <= eps or abs(sum_eta) <= eps):
        return False
    if L.any() and np.max(np.abs(zeta[L] - beta)) > eps:
        return False
    if I_plus.any() and np.max(np.abs(eta[I_plus])) > eps:
        return False
    for i in np.flatnonzero(I_zero):
        zi, ei = zeta[i] - beta, eta[i]
        both_neg = _strict_neg(zi, strict_eps) and _strict_neg(ei, strict_eps)
        if not (both_neg or abs(zi) <= eps or abs(ei) <= eps):
            return False
    return True


def simplex_membership(z, g, pair, eps=DEFAULT_EPS, strict_eps=STRICT_EPS):
    """Closed-form coderivative membership for Z = {z >= 0, 1^T z <= 1}.

    With the sum constraint slack the test reduces to the orthant form with
    beta = 0. On the sum face the multiplier tau of the budget row is read off
    the coordinates with z_i > 0 (g must be constant there), beta is pinned to
    the common value of zeta on those coordinates, and the remaining
    coordinates obey the shifted sign conditions with zeta_i - beta.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(g, dtype=float)
    zeta, eta = pair.zeta, pair.eta
    if np.min(z, initial=0.0) < -eps:
        return _empty("simplex", "z has negative coordinates")
    sum_gap = 1.0 - float(np.sum(z))
    if sum_gap < -eps:
        return _empty("simplex", "coordinate sum exceeds one")
    L = z > eps
    witness = {"L": np.flatnonzero(L).tolist(), "sum_gap": sum_gap,
               "sum_near_threshold": bool(eps < abs(sum_gap) <= 10.0 * eps),
               "boundary_ambiguous": _ambiguous(zeta, strict_eps)}

    if sum_gap > eps:
        # Budget row inactive: tau = 0 and beta is forced to zero.
        res = orthant_membership(z, g, pair, eps, strict_eps)
        witness.update(res.witness)
        witness.update({"tau": 0.0, "beta": 0.0 if res.member else None})
        return Membership(res.member, res.verdict, "simplex", witness)

    if L.any():
        g_L = g[L]
        if np.max(g_L) - np.min(g_L) > eps:
            return _empty("simplex", "gradient not constant on the support")
        tau = float(-np.mean(g_L))
        if tau < -eps:
            return _empty("simplex", "budget multiplier would be negative")
        lam_zero = g[~L] + tau
        if lam_zero.size and np.min(lam_zero) < -eps:
            return _empty("simplex", "bound multiplier would be negative")
        I_plus = (~L) & (g + tau > eps)
        I_zero = (~L) & ~I_plus
        zeta_L = zeta[L]
        if np.max(zeta_L) - np.min(zeta_L) > eps:
            witness.update({"tau": tau, "beta": None})
            return Membership(False, "not_member", "simplex", witness)
        beta = float(np.mean(zeta_L))
        ok = _simplex_beta_conditions(zeta, eta, beta, tau, abs(sum_gap),
                                      (L, I_plus, I_zero), eps, strict_eps)
        witness.update({"tau": tau, "beta": beta,
                        "I_plus": np.flatnonzero(I_plus).tolist(),
                        "I_zero": np.flatnonzero(I_zero).tolist()})
        return Membership(ok, "member" if ok else "not_member", "simplex", witness)

    # Defensive corner: the budget row is tight but no coordinate clears the
    # activity threshold, so tau and beta are both unresolved. Only finitely
    # many beta regimes matter: zero, each zeta_i, and anything above max zeta.
    if np.min(g, initial=0.0) < -eps or np.max(np.abs(z * g), initial=0.0) > eps:
        return _empty("simplex", "z and g are not complementary")
    I_plus = g > eps
    I_zero = ~I_plus
    labels = (np.zeros(len(z), dtype=bool), I_plus, I_zero)
    candidates = [0.0, float(np.max(zeta, initial=0.0)) + 1.0] + [float(v) for v in zeta]
    for beta in candidates:
        if _simplex_beta_conditions(zeta, eta, beta, 0.0, 0.0, labels, eps, strict_eps):
            witness.update({"tau": None, "beta": beta, "degenerate_support": True})
            return Membership(True, "member", "simplex", witness)
    witness.update({"tau": None, "beta": None, "degenerate_support": True})
    return Membership(False, "not_member", "simplex", witness)


def membership_for_set(feasible, z, g, zeta, eta, eps=DEFAULT_EPS,
                       strict_eps=STRICT_EPS, context=None, hint=None):
    """Dispatch a coderivative membership query to the matching route.

    The closed-form routes ignore hints; the general route tries a hinted
    row split first.
    """
    pair = NormalPair(zeta, eta)
    if feasible.kind == "orthant":
        return orthant_membership(z, g, pair, eps, strict_eps)
    if feasible.kind == "simplex":
        return simplex_membership(z, g, pair, eps, strict_eps)
    return polyhedron_membership(feasible.as_polyhedron(), GraphPoint(z, g),
                                 pair, eps, context=context, hint=hint)


def _require_graph(res):
    if res.verdict == "empty_coderivative":
        raise NotGraphPointError(res.witness.get("reason", "not a graph point"))
    return res.member


def limiting_normal_member_oracle(poly, gp, pair, eps=DEFAULT_EPS):
    """Boolean face-pair oracle; raises on non-graph points."""
    return _require_graph(oracle_membership(poly, gp, pair, eps))


def coderivative_member_polyhedron(poly, gp, pair, eps=DEFAULT_EPS, context=None):
    """Boolean direct predicate for general A z <= b; raises on non-graph points."""
    if context is None:
        context = make_graph_context(poly, gp.z, gp.g, eps)
    return _require_graph(polyhedron_membership(poly, gp, pair, eps, context))


def coderivative_member_orthant(z, g, pair, eps=DEFAULT_EPS, strict_eps=STRICT_EPS):
    """Boolean orthant predicate; raises on non-complementary (z, g)."""
    return _require_graph(orthant_membership(z, g, pair, eps, strict_eps))


def coderivative_member_simplex(z, g, pair, eps=DEFAULT_EPS, strict_eps=STRICT_EPS):
    """Boolean simplex predicate; raises on invalid graph points."""
    return _require_graph(simplex_membership(z, g, pair, eps, strict_eps))
