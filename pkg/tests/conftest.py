"""Shared builders and independent oracles for the test suite."""

import numpy as np
import pytest

from mstat.cones import Polyhedron
from mstat.stationarity import FeasibleSet


def random_polyhedral_graph_point(rng, d_max=3, m_max=5, entry=2):
    """Random integer system A z <= b with a valid graph point (z, -g).

    Rows are made active by construction and a nonnegative integer multiplier
    supported on a random subset of them defines g, so -g lies in the normal
    cone at z by design. Degenerate row combinations are allowed on purpose.
    """
    while True:
        d = int(rng.integers(1, d_max + 1))
        m = int(rng.integers(1, m_max + 1))
        A = rng.integers(-entry, entry + 1, (m, d)).astype(float)
        if np.any(np.all(A == 0.0, axis=1)):
            continue
        z = rng.integers(-entry, entry + 1, d).astype(float)
        active = rng.random(m) < 0.6
        b = A @ z + np.where(active, 0.0, rng.integers(1, entry + 1, m)).astype(float)
        lam = np.where(active, rng.integers(0, entry + 1, m), 0).astype(float)
        g = -(A.T @ lam)
        return Polyhedron(A, b), z, g


def random_simplex_graph_point(rng, d):
    """Random (z, g) with -g in the normal cone of {z >= 0, 1^T z <= 1} at z.

    Builds z exactly on a face pattern along with exact multipliers, keeping
    clear margins so tolerance classification is unambiguous.
    """
    kind = int(rng.integers(0, 3))
    if kind == 0:
        z = rng.uniform(0.1, 0.5, d)
        z *= rng.uniform(0.3, 0.9) / z.sum()
        return z, np.zeros(d)
    if kind == 1:
        z = rng.uniform(0.1, 0.4, d)
        n_zero = int(rng.integers(1, d + 1))
        idx = rng.choice(d, n_zero, replace=False)
        z[idx] = 0.0
        if z.sum() > 0.9:
            z *= 0.5 / z.sum()
        g = np.zeros(d)
        g[idx] = rng.choice([0.0, 0.5, 1.5], n_zero)
        return z, g
    z = rng.uniform(0.1, 1.0, d)
    n_zero = int(rng.integers(0, d))
    idx = rng.choice(d, n_zero, replace=False) if n_zero else np.array([], dtype=int)
    z[idx] = 0.0
    z /= z.sum()
    tau = float(rng.choice([0.0, 0.8]))
    lam = np.zeros(d)
    lam[idx] = rng.choice([0.0, 1.2], n_zero)
    return z, lam - tau


def projected_gradient_qp(r, sigma, lam, max_iter=100000, tol=1e-13):
    """Independent projected-gradient solver for the simplex-constrained QP."""
    d = len(r)
    fs = FeasibleSet.simplex(d)
    step = 1.0 / (lam * float(np.max(np.linalg.eigvalsh(sigma))))
    z = fs.project(np.zeros(d))
    for _ in range(max_iter):
        z_new = fs.project(z - step * (-r + lam * (sigma @ z)))
        if np.max(np.abs(z_new - z)) <= tol:
            return z_new
        z = z_new
    return z


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
