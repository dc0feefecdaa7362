"""Exact Wasserstein-1 distance between atomic measures and related estimate checks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import gcd
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from .core_model import EmpiricalMeasure, Kernel

# equal-weight measures of different sizes are replicated up to this many atoms
MAX_REPLICATED = 4096


class LipschitzCertificationError(ValueError):
    """A trial potential is not 1-Lipschitz on the atoms."""


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling: mass[k] moves from atom rows[k] of mu to atom cols[k] of nu."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost: float

    def dense(self, n_rows: int, n_cols: int) -> np.ndarray:
        out = np.zeros((n_rows, n_cols))
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def marginals(self, n_rows: int, n_cols: int):
        r = np.bincount(self.rows, weights=self.mass, minlength=n_rows)
        c = np.bincount(self.cols, weights=self.mass, minlength=n_cols)
        return r, c


def _check_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    if mu.ambient_dim != nu.ambient_dim:
        raise ValueError(f"dimension mismatch: {mu.ambient_dim} vs {nu.ambient_dim}")
    for m in (mu, nu):
        if abs(m.weights.sum() - 1.0) > 1e-12:
            raise ValueError("measure is not normalized")


def w1(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> tuple[float, TransportPlan]:
    """Exact W1 distance and an optimal plan.

    Equal weights on both sides reduce to a linear assignment problem (after
    replicating atoms to a common count when the counts differ). Anything else
    goes to the transportation LP.
    """
    _check_pair(mu, nu)
    n, m = mu.size, nu.size
    if mu.is_uniform and nu.is_uniform:
        lcm = n * m // gcd(n, m)
        if lcm <= MAX_REPLICATED:
            return _assignment(mu.atoms, nu.atoms, lcm)
    return _transport_lp(mu, nu)


def w1_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    return w1(mu, nu)[0]


def _assignment(a: np.ndarray, b: np.ndarray, size: int) -> tuple[float, TransportPlan]:
    ra, rb = size // len(a), size // len(b)
    cost = cdist(a, b)
    if ra > 1 or rb > 1:
        big = np.repeat(np.repeat(cost, ra, axis=0), rb, axis=1)
    else:
        big = cost
    rows, cols = linear_sum_assignment(big)
    total = float(big[rows, cols].sum() / size)
    # fold replicated copies back onto the original atoms
    pr, pc = rows // ra, cols // rb
    key = pr * len(b) + pc
    uniq, inv = np.unique(key, return_inverse=True)
    mass = np.bincount(inv, minlength=len(uniq)) / size
    plan = TransportPlan(uniq // len(b), uniq % len(b), mass, total)
    return total, plan


def _transport_lp(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> tuple[float, TransportPlan]:
    n, m = mu.size, nu.size
    cost = cdist(mu.atoms, nu.atoms)
    idx = np.arange(n * m)
    rows_eq = sparse.csr_matrix((np.ones(n * m), (idx // m, idx)), shape=(n, n * m))
    cols_eq = sparse.csr_matrix((np.ones(n * m), (idx % m, idx)), shape=(m, n * m))
    A = sparse.vstack([rows_eq, cols_eq[:-1]]).tocsr()
    b = np.concatenate([mu.weights, nu.weights[:-1]])
    res = linprog(cost.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    flow = np.clip(res.x, 0.0, None)
    keep = np.flatnonzero(flow > 0)
    plan = TransportPlan(keep // m, keep % m, flow[keep], float(cost.ravel()[keep] @ flow[keep]))
    return plan.cost, plan


def product_coupling_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """W1 <= int int |x - y| dmu dnu <= first moment of mu + first moment of nu."""
    return mu.first_moment() + nu.first_moment()


# ---------------------------------------------------------------------------
# dual side


def linear_potential(direction) -> Callable[[np.ndarray], np.ndarray]:
    u = np.asarray(direction, dtype=float)
    u = u / max(1.0, np.linalg.norm(u))
    return lambda z: z @ u


def cone_potential(centers, offsets=None, sign: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    """sign * min_k (|z - c_k| + b_k); 1-Lipschitz for |sign| <= 1."""
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    b = np.zeros(len(c)) if offsets is None else np.asarray(offsets, dtype=float)
    return lambda z: sign * np.min(cdist(np.atleast_2d(z), c) + b, axis=1)


def certify_lipschitz(phi, points: np.ndarray, tol: float = 1e-12) -> None:
    vals = np.asarray(phi(points), dtype=float)
    dist = cdist(points, points)
    gap = np.abs(vals[:, None] - vals[None, :])
    bad = gap > dist * (1.0 + tol) + tol
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise LipschitzCertificationError(
            f"secant slope {gap[i, j] / max(dist[i, j], 1e-300):.6g} > 1 between atoms {i} and {j}")


def w1_dual_bound(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                  potentials: Iterable[Callable[[np.ndarray], np.ndarray]]) -> float:
    """max over trial potentials of |int phi d(mu - nu)|, each certified 1-Lipschitz."""
    _check_pair(mu, nu)
    pts = np.vstack([mu.atoms, nu.atoms])
    best = 0.0
    for phi in potentials:
        certify_lipschitz(phi, pts)
        best = max(best, abs(mu.integrate(phi) - nu.integrate(phi)))
    return best


# ---------------------------------------------------------------------------
# estimate checks


def pushforward(E, mu: EmpiricalMeasure) -> EmpiricalMeasure:
    return EmpiricalMeasure(np.asarray(E(mu.atoms), dtype=float), mu.weights)


def secant_lipschitz(E, points: np.ndarray) -> float:
    img = np.asarray(E(points), dtype=float)
    dist = cdist(points, points)
    mask = dist > 0
    if not mask.any():
        return 0.0
    return float(np.max(cdist(img, img)[mask] / dist[mask]))


def pushforward_contraction_check(E, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                                  r: float) -> tuple[float, float]:
    """(W1(E#mu, E#nu), L_r W1(mu, nu)) with L_r the secant Lipschitz constant on the atoms."""
    pts = np.vstack([mu.atoms, nu.atoms])
    if np.max(np.linalg.norm(pts, axis=1)) > r:
        raise ValueError(f"supports must lie in B(0, {r})")
    lhs = w1_distance(pushforward(E, mu), pushforward(E, nu))
    rhs = secant_lipschitz(E, pts) * w1_distance(mu, nu)
    return lhs, rhs


def ball_grid(n: int, radius: float, per_axis: int = 9) -> np.ndarray:
    axis = np.linspace(-radius, radius, per_axis)
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return mesh[np.linalg.norm(mesh, axis=1) <= radius]


def kernel_w1_bound_check(H: Kernel, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                          rho: float, R: float, per_axis: int = 9) -> tuple[float, float]:
    """(max over a grid of B(0, rho) of |H*mu - H*nu|, Lip(H, B(0, rho + R)) W1(mu, nu))."""
    pts = ball_grid(mu.ambient_dim, rho, per_axis)
    gap = H.convolve(pts, mu.atoms, mu.weights) - H.convolve(pts, nu.atoms, nu.weights)
    lhs = float(np.max(np.linalg.norm(gap, axis=1)))
    rhs = H.lipschitz(rho + R) * w1_distance(mu, nu)
    return lhs, rhs


# ---------------------------------------------------------------------------
# measure files


def measure_to_dict(mu: EmpiricalMeasure) -> dict:
    return {"dim": mu.ambient_dim, "atoms": mu.atoms.tolist(), "weights": mu.weights.tolist()}


def measure_from_dict(data: dict) -> EmpiricalMeasure:
    atoms = np.asarray(data["atoms"], dtype=float).reshape(-1, int(data["dim"]))
    return EmpiricalMeasure(atoms, data.get("weights"))


def save_measure(mu: EmpiricalMeasure, path) -> None:
    with open(path, "w") as fh:
        json.dump(measure_to_dict(mu), fh)


def load_measure(path) -> EmpiricalMeasure:
    with open(path) as fh:
        return measure_from_dict(json.load(fh))
