"""First-order stationarity systems for two-stage problems on finite supports.

A problem couples a smooth lower-level objective over a convex feasible set
with an upper-level loss evaluated across finitely many weighted scenarios.
Certificates carry a parameter vector plus per-scenario solutions and
multipliers; the verifiers here recompute every line of the stationarity
system and report residuals instead of trusting any claimed quantity.

Two systems are supported. The plain (convex lower level) system couples an
upper-level gradient inclusion with per-scenario coderivative conditions. The
penalized system adds a nonnegative per-scenario penalty weight on the
lower-level optimality gap and a Clarke subgradient of the lower optimal-value
function, realized as a convex combination of lower-objective parameter
gradients over the solution set.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .cones import (
    DEFAULT_EPS,
    Polyhedron,
    distance_to_normal_cone,
    normal_cone_multiplier,
    orthant_polyhedron,
    simplex_polyhedron,
)
from .graph_normals import (
    STRICT_EPS,
    make_graph_context,
    membership_for_set,
)
from .lp import linear_feasible

__all__ = [
    "FeasibleSet", "ParameterSet", "Scenario", "Problem",
    "LowerModel", "UpperModel", "QuadraticLowerModel",
    "ScenarioCertificate", "Certificate",
    "ScenarioReport", "ResidualReport",
    "gradient_selftest", "lower_residual", "m_stationarity_check",
    "nnamcq_check", "psi_set", "upper_residual",
    "verify_certificate", "verify_certificate_penalized",
    "value_function", "value_subdifferential", "directional_derivative_value",
    "grid_solver", "projected_gradient_solver", "reports_agree",
]

DEFAULT_TOL = 1e-8
DEFAULT_VALUE_TOL = 1e-6


# ---------------------------------------------------------------------------
# feasible sets and parameter sets

@dataclass(frozen=True)
class FeasibleSet:
    """Lower-level feasible region: orthant, simplex, box or general polyhedron."""

    kind: str
    dim: int
    poly: Polyhedron = None
    lo: np.ndarray = None
    hi: np.ndarray = None

    @staticmethod
    def orthant(dim):
        return FeasibleSet("orthant", dim)

    @staticmethod
    def simplex(dim):
        return FeasibleSet("simplex", dim)

    @staticmethod
    def box(lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if np.any(lo > hi):
            raise ValueError("box bounds crossed")
        return FeasibleSet("box", len(lo), lo=lo, hi=hi)

    @staticmethod
    def polyhedron(poly):
        return FeasibleSet("polyhedron", poly.dim, poly=poly)

    def as_polyhedron(self):
        if self.kind == "orthant":
            return orthant_polyhedron(self.dim)
        if self.kind == "simplex":
            return simplex_polyhedron(self.dim)
        if self.kind == "box":
            A = np.vstack([np.eye(self.dim), -np.eye(self.dim)])
            b = np.concatenate([self.hi, -self.lo])
            return Polyhedron(A, b)
        return self.poly

    def project(self, y):
        """Euclidean projection, available for the structured kinds only."""
        y = np.asarray(y, dtype=float)
        if self.kind == "orthant":
            return np.maximum(y, 0.0)
        if self.kind == "box":
            return np.clip(y, self.lo, self.hi)
        if self.kind == "simplex":
            p = np.maximum(y, 0.0)
            if p.sum() <= 1.0:
                return p
            u = np.sort(y)[::-1]
            css = np.cumsum(u) - 1.0
            rho = np.max(np.flatnonzero(u - css / np.arange(1, len(y) + 1) > 0))
            return np.maximum(y - css[rho] / (rho + 1.0), 0.0)
        raise NotImplementedError("no projection for general polyhedra")

    def contains(self, z, eps=DEFAULT_EPS):
        return self.as_polyhedron().contains(z, eps)

    def to_dict(self):
        if self.kind == "box":
            return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}
        if self.kind == "polyhedron":
            return {"kind": "polyhedron", **self.poly.to_dict()}
        return {"kind": self.kind, "dim": self.dim}


@dataclass(frozen=True)
class ParameterSet:
    """Upper-level parameter region; supplies distances to its normal cones."""

    kind: str
    dim: int
    lo: np.ndarray = None
    hi: np.ndarray = None
    poly: Polyhedron = None

    @staticmethod
    def free(dim):
        return ParameterSet("free", dim)

    @staticmethod
    def box(lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        return ParameterSet("box", len(lo), lo=lo, hi=hi)

    @staticmethod
    def polyhedron(poly):
        return ParameterSet("polyhedron", poly.dim, poly=poly)

    def normal_cone_distance(self, theta, u, eps=DEFAULT_EPS):
        """dist(u, N_Theta(theta)); the full space contributes N = {0}."""
        theta = np.asarray(theta, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.kind == "free":
            return float(np.linalg.norm(u))
        if self.kind == "box":
            res = np.empty_like(u)
            for i in range(len(u)):
                at_lo = theta[i] <= self.lo[i] + eps
                at_hi = theta[i] >= self.hi[i] - eps
                allowed_neg = at_lo
                allowed_pos = at_hi
                v = u[i]
                if v < 0:
                    res[i] = 0.0 if allowed_neg else -v
                elif v > 0:
                    res[i] = 0.0 if allowed_pos else v
                else:
                    res[i] = 0.0
            return float(np.linalg.norm(res))
        return distance_to_normal_cone(self.poly, theta, u, eps)


# ---------------------------------------------------------------------------
# problems, models, certificates

@dataclass(frozen=True)
class Scenario:
    """One atom of the finite support: context x, realized data y, weight."""

    x: np.ndarray
    y: object
    weight: float

    def __init__(self, x, y, weight):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(x, dtype=float)))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weight", float(weight))


class LowerModel:
    """Smooth lower-level objective c(z, theta, x) over a FeasibleSet.

    Applications implement cost, grad_z, hess_zz, hess_ztheta (shape d_z by
    d_theta) and grad_theta, all with theta flattened to one dimension.
    """

    feasible_set: FeasibleSet

    def cost(self, z, theta, x):
        raise NotImplementedError

    def grad_z(self, z, theta, x):
        raise NotImplementedError

    def hess_zz(self, z, theta, x):
        raise NotImplementedError

    def hess_ztheta(self, z, theta, x):
        raise NotImplementedError

    def grad_theta(self, z, theta, x):
        raise NotImplementedError


class UpperModel:
    """Upper-level loss L(z, x, y, theta) with gradients in z and theta."""

    theta_set: ParameterSet

    def loss(self, z, x, y, theta):
        raise NotImplementedError

    def grad_z(self, z, x, y, theta):
        raise NotImplementedError

    def grad_theta(self, z, x, y, theta):
        raise NotImplementedError


class QuadraticLowerModel(LowerModel):
    """c(z, theta, x) = (S theta)^T z + z^T Q z / 2 with a fixed coupling S.

    Context-free quadratic testbed; Q = 0 gives the linear objectives used to
    exercise flat solution sets.
    """

    def __init__(self, Q, coupling, feasible_set):
        self.Q = np.asarray(Q, dtype=float)
        self.coupling = np.asarray(coupling, dtype=float)  # (d_z, d_theta)
        self.feasible_set = feasible_set

    def cost(self, z, theta, x):
        z = np.asarray(z, dtype=float)
        return float((self.coupling @ theta) @ z + 0.5 * z @ self.Q @ z)

    def grad_z(self, z, theta, x):
        return self.coupling @ theta + self.Q @ np.asarray(z, dtype=float)

    def hess_zz(self, z, theta, x):
        return self.Q

    def hess_ztheta(self, z, theta, x):
        return self.coupling

    def grad_theta(self, z, theta, x):
        return self.coupling.T @ np.asarray(z, dtype=float)


@dataclass
class Problem:
    """Finite-support problem bundle; scenario weights must sum to one."""

    lower: LowerModel
    upper: UpperModel
    scenarios: list

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        w = np.array([s.weight for s in self.scenarios], dtype=float)
        if np.min(w) < 0:
            raise ValueError("negative scenario weight")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("scenario weights must sum to 1 (got %.17g)" % w.sum())


@dataclass
class ScenarioCertificate:
    """Claimed per-scenario solution and multipliers.

    lam, J1 and J2 are optional witness data for the coderivative membership
    (a lower-level multiplier and the nested zero-multiplier row subsets);
    when present they are tried first and their confirmation is reported, but
    verification never trusts them blindly.
    """

    z: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray = None
    lam: np.ndarray = None
    J1: tuple = None
    J2: tuple = None
    mu: float = None
    value_weights: np.ndarray = None

    def __post_init__(self):
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if self.zeta is not None:
            self.zeta = np.atleast_1d(np.asarray(self.zeta, dtype=float))
        if self.lam is not None:
            self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if self.J1 is not None:
            self.J1 = tuple(int(i) for i in self.J1)
        if self.J2 is not None:
            self.J2 = tuple(int(i) for i in self.J2)
        if self.value_weights is not None:
            self.value_weights = np.atleast_1d(np.asarray(self.value_weights, dtype=float))

    def membership_hint(self, eps=DEFAULT_EPS):
        """(equality_rows, inequality_rows) from the witness fields, if usable."""
        if self.J1 is None or self.J2 is None:
            return None
        if not set(self.J1) <= set(self.J2):
            return None
        plus = ()
        if self.lam is not None:
            plus = tuple(int(i) for i in np.flatnonzero(self.lam > eps))
        eq = tuple(sorted(set(plus) | set(self.J1)))
        ineq = tuple(sorted(set(self.J2) - set(self.J1)))
        return eq, ineq


@dataclass
class Certificate:
    """Parameter vector plus one ScenarioCertificate per scenario."""

    theta: np.ndarray
    scenarios: list

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))

    @property
    def penalized(self):
        return any(s.mu is not None for s in self.scenarios)


@dataclass
class ScenarioReport:
    index: int
    lower_residual: float
    m_membership: bool
    m_verdict: str
    m_residual: float
    complementarity_gap: float = None
    value_gap: float = None
    witness: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "index": self.index,
            "lower_residual": self.lower_residual,
            "m_membership": self.m_membership,
            "m_verdict": self.m_verdict,
            "m_residual": self.m_residual,
            "complementarity_gap": self.complementarity_gap,
            "value_gap": self.value_gap,
            "witness": self.witness,
        }


@dataclass
class ResidualReport:
    mode: str
    tol: float
    value_tol: float
    upper_residual: float
    scenarios: list
    passed: bool
    caveats: list = field(default_factory=list)

    def to_dict(self):
        return {
            "schema": "mstat/1",
            "mode": self.mode,
            "tol": self.tol,
            "value_tol": self.value_tol,
            "pass": self.passed,
            "upper_residual": self.upper_residual,
            "scenarios": [s.to_dict() for s in self.scenarios],
            "caveats": list(self.caveats),
        }


def reports_agree(a, b, tol=1e-12):
    """Field-by-field agreement of two reports, ignoring the mode label."""
    if a.passed != b.passed or len(a.scenarios) != len(b.scenarios):
        return False
    if abs(a.upper_residual - b.upper_residual) > tol:
        return False
    for sa, sb in zip(a.scenarios, b.scenarios):
        if sa.m_membership != sb.m_membership or sa.m_verdict != sb.m_verdict:
            return False
        if abs(sa.lower_residual - sb.lower_residual) > tol:
            return False
        if abs(sa.m_residual - sb.m_residual) > tol:
            return False
        pair = (sa.value_gap, sb.value_gap)
        if (pair[0] is None) != (pair[1] is None):
            return False
        if pair[0] is not None and abs(pair[0] - pair[1]) > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# gradient self-test

def gradient_selftest(model, theta, x, points, h=1e-6, rtol=1e-5):
    """Compare grad_z of a LowerModel against central differences of cost.

    Returns the worst relative error over the supplied points; raises if it
    exceeds rtol. Keeps model implementations honest before any verification.
    """
    theta = np.asarray(theta, dtype=float)
    worst = 0.0
    for z in points:
        z = np.asarray(z, dtype=float)
        grad = np.asarray(model.grad_z(z, theta, x), dtype=float)
        fd = np.empty_like(grad)
        for i in range(len(z)):
            e = np.zeros_like(z)
            e[i] = h
            fd[i] = (model.cost(z + e, theta, x) - model.cost(z - e, theta, x)) / (2 * h)
        scale = max(1.0, float(np.linalg.norm(grad)))
        worst = max(worst, float(np.linalg.norm(grad - fd)) / scale)
    if worst > rtol:
        raise ValueError("grad_z disagrees with finite differences: %.3g" % worst)
    return worst


# ---------------------------------------------------------------------------
# per-scenario conditions

def lower_residual(model, theta, x, z, eps=DEFAULT_EPS):
    """dist(-grad_z c(z), N_Z(z)): zero exactly at lower-level stationary points."""
    g = np.asarray(model.grad_z(z, theta, x), dtype=float)
    poly = model.feasible_set.as_polyhedron()
    return distance_to_normal_cone(poly, np.asarray(z, dtype=float), -g, eps)


def m_stationarity_check(lower, upper, theta, x, y, z, eta, zeta=None,
                         eps=DEFAULT_EPS, strict_eps=STRICT_EPS):
    """Test the coderivative line of the stationarity system at one scenario.

    Forms r = grad_z E[L | x] + hess_zz^T eta and asks whether the certificate
    zeta (or, when absent, -r itself) belongs to the coderivative of the
    normal-cone map at (z, -grad_z c). Returns membership, the residual
    ||r + zeta||, and the membership witness.
    """
    z = np.asarray(z, dtype=float)
    eta = np.asarray(eta, dtype=float)
    g = np.asarray(lower.grad_z(z, theta, x), dtype=float)
    r = np.asarray(upper.grad_z(z, x, y, theta), dtype=float) \
        + np.asarray(lower.hess_zz(z, theta, x), dtype=float).T @ eta
    probe = np.asarray(zeta, dtype=float) if zeta is not None else -r
    res = membership_for_set(lower.feasible_set, z, g, probe, eta, eps, strict_eps)
    if res.verdict == "empty_coderivative":
        return {"membership": False, "residual": float("inf"),
                "verdict": res.verdict, "witness": res.witness}
    residual = float(np.linalg.norm(r + probe)) if zeta is not None else \
        (0.0 if res.member else float("inf"))
    return {"membership": res.member, "residual": residual,
            "verdict": res.verdict, "witness": res.witness}


def _regime_has_nonzero_eta(A, H, eq_rows, ineq_rows):
    """Nonzero eta with A_eq eta = 0, A_ineq eta >= 0, -H^T eta in the regime cone.

    Normalizes by pinning one coordinate of eta to +-1 inside the unit box;
    every nonzero solution of the homogeneous regime scales into that slab.
    """
    d = A.shape[1]
    eq = sorted(eq_rows)
    ineq = sorted(ineq_rows)
    n_mu, n_nu = len(ineq), len(eq)
    n = d + n_mu + n_nu
    nonneg = np.zeros(n, dtype=bool)
    nonneg[d:d + n_mu] = True

    link = np.zeros((d, n))
    link[:, :d] = H.T
    if n_mu:
        link[:, d:d + n_mu] = A[ineq].T
    if n_nu:
        link[:, d + n_mu:] = A[eq].T
    eq_blocks = [link]
    eq_rhs = [np.zeros(d)]
    if n_nu:
        blk = np.zeros((n_nu, n))
        blk[:, :d] = A[eq]
        eq_blocks.append(blk)
        eq_rhs.append(np.zeros(n_nu))

    ub_blocks = []
    ub_rhs = []
    if n_mu:
        blk = np.zeros((n_mu, n))
        blk[:, :d] = -A[ineq]
        ub_blocks.append(blk)
        ub_rhs.append(np.zeros(n_mu))
    box = np.zeros((2 * d, n))
    box[:d, :d] = np.eye(d)
    box[d:, :d] = -np.eye(d)
    ub_blocks.append(box)
    ub_rhs.append(np.ones(2 * d))

    for k in range(d):
        for s in (1.0, -1.0):
            pin = np.zeros((1, n))
            pin[0, k] = s
            A_eq = np.vstack(eq_blocks + [pin])
            b_eq = np.concatenate(eq_rhs + [np.ones(1)])
            sol = linear_feasible(A_eq=A_eq, b_eq=b_eq,
                                  A_ub=np.vstack(ub_blocks), b_ub=np.concatenate(ub_rhs),
                                  nonneg=nonneg)
            if sol is not None:
                return sol[:d]
    return None


def nnamcq_check(model, theta, x, z, eps=DEFAULT_EPS):
    """No-nonzero-abnormal-multiplier constraint qualification at z.

    True when eta = 0 is the only solution of the homogeneous coderivative
    system 0 in hess_zz^T eta + D*N_Z(z, -grad_z c)(eta), decided by sweeping
    the finitely many linear regimes of the membership formula.
    """
    z = np.asarray(z, dtype=float)
    g = np.asarray(model.grad_z(z, theta, x), dtype=float)
    H = np.asarray(model.hess_zz(z, theta, x), dtype=float)
    poly = model.feasible_set.as_polyhedron()
    ctx = make_graph_context(poly, z, g, eps)
    I = ctx.active
    seen = set()
    for size_e in range(len(I) + 1):
        for eq in combinations(I, size_e):
            if not ctx.support_feasible(eq):
                continue
            rest = [i for i in I if i not in eq]
            for size_g in range(len(rest) + 1):
                for ineq in combinations(rest, size_g):
                    key = (frozenset(eq), frozenset(ineq))
                    if key in seen:
                        continue
                    seen.add(key)
                    if _regime_has_nonzero_eta(poly.A, H, eq, ineq) is not None:
                        return False
    return True


def psi_set(lower, upper, theta, x, y, solutions, multipliers):
    """Upper-level sensitivity generators, one per (solution, multiplier) pair."""
    out = []
    for z, eta in zip(solutions, multipliers):
        z = np.asarray(z, dtype=float)
        eta = np.asarray(eta, dtype=float)
        gen = np.asarray(upper.grad_theta(z, x, y, theta), dtype=float) \
            + np.asarray(lower.hess_ztheta(z, theta, x), dtype=float).T @ eta
        out.append(gen)
    return out


# ---------------------------------------------------------------------------
# aggregate conditions and verification

def _scenario_upper_term(problem, theta, scen, cert, mu_term=None):
    lower, upper = problem.lower, problem.upper
    term = np.asarray(upper.grad_theta(cert.z, scen.x, scen.y, theta), dtype=float) \
        + np.asarray(lower.hess_ztheta(cert.z, theta, scen.x), dtype=float).T @ cert.eta
    if mu_term is not None:
        term = term + mu_term
    return term


def upper_residual(problem, certificate, eps=DEFAULT_EPS):
    """dist(-s, N_Theta(theta)) for the weighted upper-level gradient sum s."""
    theta = certificate.theta
    s = None
    for scen, cert in zip(problem.scenarios, certificate.scenarios):
        term = scen.weight * _scenario_upper_term(problem, theta, scen, cert)
        s = term if s is None else s + term
    return problem.upper.theta_set.normal_cone_distance(theta, -s, eps)


def _check_scenario(problem, theta, scen, cert, eps, strict_eps, mu=None):
    lower, upper = problem.lower, problem.upper
    z, eta = cert.z, cert.eta
    g = np.asarray(lower.grad_z(z, theta, scen.x), dtype=float)
    poly = lower.feasible_set.as_polyhedron()
    try:
        low_res = distance_to_normal_cone(poly, z, -g, eps)
    except ValueError:
        return ScenarioReport(index=-1, lower_residual=float("inf"),
                              m_membership=False, m_verdict="empty_coderivative",
                              m_residual=float("inf"),
                              witness={"reason": "infeasible scenario point"})
    comp_gap = None
    decomp = normal_cone_multiplier(poly, z, g, eps)
    if decomp is not None:
        comp_gap = decomp.complementarity_residual(poly, z)

    r = np.asarray(upper.grad_z(z, scen.x, scen.y, theta), dtype=float) \
        + np.asarray(lower.hess_zz(z, theta, scen.x), dtype=float).T @ eta
    if mu is not None:
        r = r + mu * g
    probe = cert.zeta if cert.zeta is not None else -r
    res = membership_for_set(lower.feasible_set, z, g, probe, eta, eps, strict_eps,
                             hint=cert.membership_hint(eps))
    if res.verdict == "empty_coderivative":
        m_res = float("inf")
    elif cert.zeta is not None:
        m_res = float(np.linalg.norm(r + probe))
    else:
        m_res = 0.0 if res.member else float("inf")
    return ScenarioReport(index=-1, lower_residual=low_res,
                          m_membership=res.member, m_verdict=res.verdict,
                          m_residual=m_res, complementarity_gap=comp_gap,
                          witness=res.witness)


def _run_scenarios(problem, certificate, eps, strict_eps, mus, threads=1):
    jobs = list(zip(problem.scenarios, certificate.scenarios, mus))

    def run(item):
        scen, cert, mu = item
        return _check_scenario(problem, certificate.theta, scen, cert,
                               eps, strict_eps, mu)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            reports = list(ex.map(run, jobs))
    else:
        reports = [run(item) for item in jobs]
    for i, rep in enumerate(reports):
        rep.index = i
    return reports


def _validate_certificate(problem, certificate):
    if len(problem.scenarios) != len(certificate.scenarios):
        raise ValueError("certificate has %d scenarios, problem has %d"
                         % (len(certificate.scenarios), len(problem.scenarios)))
    d = problem.lower.feasible_set.dim
    for i, cert in enumerate(certificate.scenarios):
        if len(cert.z) != d or len(cert.eta) != d:
            raise ValueError("scenario %d has wrong dimensions" % i)
        if cert.zeta is not None and len(cert.zeta) != d:
            raise ValueError("scenario %d zeta has wrong dimension" % i)


def verify_certificate(problem, certificate, tol=DEFAULT_TOL, eps=DEFAULT_EPS,
                       strict_eps=STRICT_EPS, threads=1):
    """Verify the plain stationarity system; all residuals must clear tol."""
    _validate_certificate(problem, certificate)
    if certificate.penalized:
        raise ValueError("certificate carries penalty weights; use the penalized verifier")
    reports = _run_scenarios(problem, certificate, eps, strict_eps,
                             [None] * len(problem.scenarios), threads)
    upper = upper_residual(problem, certificate, eps)
    passed = upper <= tol and all(
        r.lower_residual <= tol and r.m_membership and r.m_residual <= tol
        for r in reports)
    return ResidualReport(mode="convex", tol=tol, value_tol=DEFAULT_VALUE_TOL,
                          upper_residual=upper, scenarios=reports, passed=passed)


def verify_certificate_penalized(problem, certificate, tol=DEFAULT_TOL,
                                 value_tol=DEFAULT_VALUE_TOL, solver=None,
                                 eps=DEFAULT_EPS, strict_eps=STRICT_EPS, threads=1):
    """Verify the penalized stationarity system.

    Penalty weights mu_n >= 0 are certificate data. The upper line gains
    mu_n (grad_theta c(z_n) - w_n) with w_n a convex combination of parameter
    gradients over the lower solution set; the scenario line gains
    mu_n grad_z c. Lower-level value gaps are certified against the optimal
    value whenever a solver is supplied, and a solver is mandatory as soon as
    some mu_n is positive.
    """
    _validate_certificate(problem, certificate)
    mus = []
    for i, cert in enumerate(certificate.scenarios):
        mu = 0.0 if cert.mu is None else float(cert.mu)
        if mu < 0:
            raise ValueError("negative penalty weight in scenario %d" % i)
        mus.append(mu)
    needs_value = solver is not None
    if any(mu > 0 for mu in mus) and solver is None:
        raise ValueError("positive penalty weights need a lower-level solver")

    theta = certificate.theta
    lower = problem.lower
    reports = _run_scenarios(problem, certificate, eps, strict_eps, mus, threads)
    caveats = []

    s = None
    for scen, cert, mu, rep in zip(problem.scenarios, certificate.scenarios,
                                   mus, reports):
        mu_term = None
        if needs_value:
            vf = value_function(lower, theta, scen.x, solver)
            rep.value_gap = float(lower.cost(cert.z, theta, scen.x) - vf.value)
            if len(vf.argmin_points) > 1:
                caveats.append("scenario %d: lower solution sampled at %d points; "
                               "the sample may be incomplete"
                               % (rep.index, len(vf.argmin_points)))
            if mu > 0:
                sub = value_subdifferential(lower, theta, scen.x, vf.argmin_points)
                if cert.value_weights is not None:
                    w_n = sub.combine(cert.value_weights)
                else:
                    w_n = sub.generators[0]
                grad_t = np.asarray(lower.grad_theta(cert.z, theta, scen.x), dtype=float)
                mu_term = mu * (grad_t - w_n)
        term = scen.weight * _scenario_upper_term(problem, theta, scen, cert, mu_term)
        s = term if s is None else s + term
    upper = problem.upper.theta_set.normal_cone_distance(theta, -s, eps)

    passed = upper <= tol and all(
        r.lower_residual <= tol and r.m_membership and r.m_residual <= tol
        and (r.value_gap is None or r.value_gap <= value_tol)
        for r in reports)
    return ResidualReport(mode="penalized", tol=tol, value_tol=value_tol,
                          upper_residual=upper, scenarios=reports,
                          passed=passed, caveats=caveats)


# ---------------------------------------------------------------------------
# lower-level value function calculus

@dataclass
class ValueFunctionResult:
    value: float
    argmin_points: list


@dataclass
class ValueSubdifferential:
    """Clarke subdifferential sample of the lower optimal value in theta.

    Generators are parameter gradients at sampled minimizers; combine() forms
    a convex combination, which by Caratheodory never needs more than
    d_theta + 1 active weights.
    """

    generators: list
    dim_theta: int

    def combine(self, weights):
        w = np.asarray(weights, dtype=float)
        if len(w) != len(self.generators):
            raise ValueError("need one weight per generator")
        if np.min(w) < -1e-12 or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a convex combination")
        if int(np.sum(w > 1e-12)) > self.dim_theta + 1:
            raise ValueError("more than d_theta + 1 active weights")
        return sum(wi * gi for wi, gi in zip(w, self.generators))


def grid_solver(points):
    """Solver returning a fixed candidate list (endpoints included by caller)."""
    pts = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]

    def solve(model, theta, x):
        return pts
    return solve


def projected_gradient_solver(n_starts=16, iters=2000, seed=0, step=None):
    """Multi-start projected gradient for structured feasible sets.

    Deterministic under the seed; start points come from a fixed random grid
    inside the unit box mapped through the set's projection.
    """
    def solve(model, theta, x):
        fs = model.feasible_set
        rng = np.random.default_rng(seed)
        starts = [fs.project(rng.uniform(-1.0, 1.0, fs.dim)) for _ in range(n_starts)]
        out = []
        for z in starts:
            lr = step
            if lr is None:
                H = np.atleast_2d(np.asarray(model.hess_zz(z, theta, x), dtype=float))
                lam_max = float(np.max(np.linalg.eigvalsh(H))) if H.size else 1.0
                lr = 1.0 / max(lam_max, 1e-6)
            for _ in range(iters):
                z_next = fs.project(z - lr * np.asarray(model.grad_z(z, theta, x)))
                if np.max(np.abs(z_next - z)) <= 1e-13:
                    z = z_next
                    break
                z = z_next
            out.append(z)
        return out
    return solve


def value_function(model, theta, x, solver, value_tol=1e-9, point_tol=1e-9):
    """Optimal value and a deduplicated sample of minimizers.

    The solver supplies candidate points; everything within value_tol of the
    best candidate is kept. Strictly convex problems yield a singleton, flat
    directions yield however many distinct candidates the solver produced.
    """
    theta = np.asarray(theta, dtype=float)
    candidates = [np.atleast_1d(np.asarray(z, dtype=float)) for z in solver(model, theta, x)]
    if not candidates:
        raise ValueError("solver returned no candidates")
    values = np.array([model.cost(z, theta, x) for z in candidates])
    best = float(np.min(values))
    keep = []
    for z, v in zip(candidates, values):
        if v > best + value_tol:
            continue
        if any(np.max(np.abs(z - k)) <= point_tol for k in keep):
            continue
        keep.append(z)
    return ValueFunctionResult(value=best, argmin_points=keep)


def value_subdifferential(model, theta, x, argmin_points):
    """Parameter gradients over the sampled solution set."""
    theta = np.asarray(theta, dtype=float)
    gens = [np.atleast_1d(np.asarray(model.grad_theta(z, theta, x), dtype=float))
            for z in argmin_points]
    if not gens:
        raise ValueError("empty solution sample")
    return ValueSubdifferential(generators=gens, dim_theta=len(theta))


def directional_derivative_value(model, theta, x, d, argmin_points):
    """min over sampled minimizers of <grad_theta c(z), d>."""
    if not argmin_points:
        raise ValueError("empty solution sample")
    d = np.atleast_1d(np.asarray(d, dtype=float))
    theta = np.asarray(theta, dtype=float)
    return float(min(
        float(np.dot(np.atleast_1d(np.asarray(model.grad_theta(z, theta, x), dtype=float)), d))
        for z in argmin_points))
