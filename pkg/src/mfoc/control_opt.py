"""Cost of a controlled trajectory and the sparse (L1-penalized) optimal control solver."""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dynamics
from .core_model import BoundFunction, ControlField, PhaseEnsemble, Scenario, cell_masses

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    total: float
    tracking: float
    penalty: float
    cell_penalty: np.ndarray
    sparsity: float

    def to_dict(self):
        return {"total": self.total, "tracking": self.tracking, "penalty": self.penalty,
                "cell_penalty": self.cell_penalty.tolist(), "sparsity": self.sparsity}


def zero_cells(f: ControlField) -> np.ndarray:
    return ~(f.a.any(axis=1) | f.B.any(axis=(1, 2)) | f.D.any(axis=(1, 2)))


def sparsity_ratio(f: ControlField) -> float:
    return float(np.mean(zero_cells(f)))


def _per_step_trapezoid(traj: dynamics.Trajectory, integrand) -> np.ndarray:
    """Trapezoid per step of integrand(m, k) evaluated at nodes m, m+1 with the step's cell k."""
    dt = np.diff(traj.times)
    out = np.empty(len(dt))
    for m in range(len(dt)):
        k = int(traj.step_cells[m])
        out[m] = 0.5 * dt[m] * (integrand(m, k) + integrand(m + 1, k))
    return out


def evaluate_cost(traj: dynamics.Trajectory, s: Scenario, f: ControlField) -> CostBreakdown:
    """Trapezoidal int_0^T (1/N) sum_i [L(x_i, v_i, mu_N) + psi(f(t, x_i, v_i))] dt."""
    if traj.control is not f and (traj.control.cells != f.cells
                                  or np.any(traj.control.grid != f.grid)):
        raise ValueError("trajectory and control grids differ")
    cost = s.cost
    tracking_node = np.array([cost.running_cost(traj.x[m], traj.v[m]).mean()
                              for m in range(traj.nodes)])
    dt = np.diff(traj.times)
    tracking = float(np.sum(0.5 * dt * (tracking_node[:-1] + tracking_node[1:])))

    def pen(m, k):
        return cost.penalty(f.evaluate_cell(k, traj.x[m], traj.v[m])).mean()

    steps = _per_step_trapezoid(traj, pen)
    cell_pen = np.bincount(traj.step_cells, weights=steps, minlength=f.cells)
    penalty = float(cell_pen.sum())
    return CostBreakdown(tracking + penalty, tracking, penalty, cell_pen, sparsity_ratio(f))


def sparsity_report(f: ControlField, traj: dynamics.Trajectory) -> tuple[float, np.ndarray]:
    """(fraction of all-zero cells, per-cell int (1/N) sum_i |f(t, x_i, v_i)| dt)."""
    def mass(m, k):
        return np.linalg.norm(f.evaluate_cell(k, traj.x[m], traj.v[m]), axis=1).mean()

    steps = _per_step_trapezoid(traj, mass)
    return sparsity_ratio(f), np.bincount(traj.step_cells, weights=steps, minlength=f.cells)


def cell_bounds(f: ControlField, ell: BoundFunction) -> np.ndarray:
    return np.array([ell.min_on(f.grid[k], f.grid[k + 1]) for k in range(f.cells)])


def project_admissible(f: ControlField, ell: BoundFunction) -> ControlField:
    """Scale each violating cell down so |a_k| + ||B_k|| + ||D_k|| = ell on that cell."""
    bounds = cell_bounds(f, ell)
    masses = f.bound_masses()
    a, B, D = np.array(f.a), np.array(f.B), np.array(f.D)
    for k in np.flatnonzero(masses > bounds):
        scale = bounds[k] / masses[k]
        while True:
            ak, Bk, Dk = scale * f.a[k:k + 1], scale * f.B[k:k + 1], scale * f.D[k:k + 1]
            if cell_masses(ak, Bk, Dk)[0] <= bounds[k]:
                break
            scale = np.nextafter(scale, 0.0)
        a[k], B[k], D[k] = ak, Bk, Dk
    return ControlField(f.kind, f.grid, a, B, D)


def _project_l1_ball(s: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of a nonnegative vector onto {w >= 0, sum w <= radius}."""
    if s.sum() <= radius:
        return s
    u = np.sort(s)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, len(u) + 1)
    rho = np.flatnonzero(u - (css - radius) / j > 0)[-1]
    theta = (css[rho] - radius) / (rho + 1)
    return np.maximum(s - theta, 0.0)


def _prox_spectral(M: np.ndarray, lam: float) -> np.ndarray:
    """prox of lam ||.||_op: shrink the singular values by their projection on the lam-l1 ball."""
    if lam == 0 or not M.any():
        return M
    U, sig, Vt = np.linalg.svd(M)
    return (U * (sig - _project_l1_ball(sig, lam))) @ Vt


def _nearest_cell(a, B, D, bound: float):
    """Closest (a, B, D) in Frobenius distance with |a| + ||B||_op + ||D||_op <= bound.

    The minimizer is the prox of lam (|a| + ||B|| + ||D||) for the multiplier lam
    at which the constraint is active; lam is found by bisection.
    """
    def mass(x):
        return np.linalg.norm(x[0]) + np.linalg.norm(x[1], 2) + np.linalg.norm(x[2], 2)

    def prox(lam):
        return soft_threshold(a, lam), _prox_spectral(B, lam), _prox_spectral(D, lam)

    if mass((a, B, D)) <= bound:
        return a, B, D
    lo, hi = 0.0, mass((a, B, D))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass(prox(mid)) > bound:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return prox(hi)


def nearest_admissible(f: ControlField, ell: BoundFunction) -> ControlField:
    """Euclidean projection of every cell's parameters onto the admissible set.

    Unlike the radial scaling of ``project_admissible`` this is a true
    projection onto a convex set, so projected gradient steps stay descent
    directions along the constraint boundary.
    """
    bounds = cell_bounds(f, ell)
    a, B, D = np.array(f.a), np.array(f.B), np.array(f.D)
    for k in range(f.cells):
        a[k], B[k], D[k] = _nearest_cell(a[k], B[k], D[k], bounds[k])
    return project_admissible(ControlField(f.kind, f.grid, a, B, D), ell)


def soft_threshold(u, tau: float) -> np.ndarray:
    """Block soft-thresholding u * max(1 - tau/|u|, 0): prox of tau |.|."""
    if tau < 0:
        raise ValueError("threshold must be nonnegative")
    u = np.asarray(u, dtype=float)
    norm = np.linalg.norm(u)
    if norm <= tau:
        return np.zeros_like(u)
    return u * (1.0 - tau / norm)


def fd_gradient(fun: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-6,
                order: int = 2, workers: int = 1) -> np.ndarray:
    """Central finite differences; order 2 (two points) or 4 (four points)."""
    theta = np.asarray(theta, dtype=float)
    if order == 2:
        offsets, coefs = (1.0, -1.0), (0.5, -0.5)
    elif order == 4:
        offsets, coefs = (2.0, 1.0, -1.0, -2.0), (-1 / 12, 8 / 12, -8 / 12, 1 / 12)
    else:
        raise ValueError("order must be 2 or 4")
    points = []
    for j in range(theta.size):
        for o in offsets:
            p = theta.copy()
            p[j] += o * h
            points.append(p)
    values = _map(fun, points, workers)
    values = np.asarray(values).reshape(theta.size, len(offsets))
    return values @ np.asarray(coefs) / h


def _map(fun, points, workers):
    if workers <= 1 or len(points) < 2:
        return [fun(p) for p in points]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fun, points))


def thread_count() -> int:
    raw = os.environ.get("MFOC_THREADS", "0").strip() or "0"
    n = int(raw)
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass(frozen=True, eq=False)
class OptimizationReport:
    control: ControlField
    cost: CostBreakdown
    history: list
    termination: str
    evaluations: int
    zero_cost: float
    trajectory: Optional[dynamics.Trajectory] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "best_control": self.control.to_dict(),
            "cost": {"total": self.cost.total, "tracking": self.cost.tracking,
                     "penalty": self.cost.penalty},
            "sparsity": self.cost.sparsity,
            "iterations": list(self.history),
            "evaluations": self.evaluations,
            "termination": self.termination,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class _Objective:
    """Cost of a parameter vector, with an evaluation counter."""

    def __init__(self, s: Scenario, template: ControlField, ensemble: PhaseEnsemble):
        self.s = s
        self.template = template
        self.ensemble = ensemble
        self.count = 0
        self._lock = threading.Lock()

    def run(self, theta):
        f = self.template.with_vector(theta)
        traj = dynamics.integrate(self.s, f, self.ensemble)
        with self._lock:
            self.count += 1
        return f, traj, evaluate_cost(traj, self.s, f)

    def __call__(self, theta) -> float:
        return self.run(theta)[2].total


def _cell_penalty_along(traj, s: Scenario, f: ControlField, k: int) -> float:
    """int over cell k of (1/N) sum psi(f) along a fixed trajectory."""
    def pen(m, kk):
        return s.cost.penalty(f.evaluate_cell(kk, traj.x[m], traj.v[m])).mean()

    total = 0.0
    for m in np.flatnonzero(traj.step_cells == k):
        dt = traj.times[m + 1] - traj.times[m]
        total += 0.5 * dt * (pen(m, k) + pen(m + 1, k))
    return total


def optimize(s: Scenario, *, ensemble: Optional[PhaseEnsemble] = None, budget: int = 2000,
             tol: float = 1e-8, fd_step: float = 1e-6, initial_step: float = 1.0,
             max_iterations: int = 500, workers: Optional[int] = None) -> OptimizationReport:
    """Proximal-gradient descent over the scenario's control parameterization.

    Smooth part: FD gradient of the cost. For psi = gamma |.| each cell's
    penalty is split as lambda_k |theta_k| + remainder, with lambda_k the
    penalty per unit parameter norm along the current trajectory (frozen for
    one step); the remainder stays in the smooth part and the norm term is
    handled by block soft-thresholding. Each trial point is projected onto the
    admissible set (Euclidean projection, then the exact radial guard of
    ``project_admissible``) and accepted only if the true cost decreases;
    otherwise the step is halved.
    """
    ens = s.initial_ensemble() if ensemble is None else ensemble
    workers = thread_count() if workers is None else workers
    template = s.zero_control()
    obj = _Objective(s, template, ens)
    p = template.block_size()
    m_cells = template.cells

    theta = np.zeros(m_cells * p)
    f, traj, cost = obj.run(theta)
    zero_cost = cost.total
    history = [cost.total]
    if p == 0:
        return OptimizationReport(f, cost, history, "no_parameters", obj.count, zero_cost, traj)

    nonsmooth = not s.cost.is_smooth_penalty and s.cost.gamma > 0
    step = initial_step
    termination = "max_iterations"
    accepted_any = False
    for _ in range(max_iterations):
        if obj.count >= budget:
            termination = "budget"
            break
        grad = fd_gradient(obj, theta, fd_step, workers=workers)
        lam = np.zeros(m_cells)
        if nonsmooth:
            for k in range(m_cells):
                blk = slice(k * p, (k + 1) * p)
                nk = np.linalg.norm(theta[blk])
                if nk > 0:
                    lam[k] = _cell_penalty_along(traj, s, f, k) / nk
                    grad[blk] -= lam[k] * theta[blk] / nk
                else:
                    u = -grad[blk]
                    nu = np.linalg.norm(u)
                    if nu > 0:
                        probe = template.with_vector(_embed(u, k, p, m_cells))
                        lam[k] = _cell_penalty_along(traj, s, probe, k) / nu

        accepted = False
        while obj.count < budget:
            trial = theta - step * grad
            if nonsmooth:
                for k in range(m_cells):
                    blk = slice(k * p, (k + 1) * p)
                    trial[blk] = soft_threshold(trial[blk], step * lam[k])
            trial = nearest_admissible(template.with_vector(trial), s.ell).to_vector()
            if np.array_equal(trial, theta):
                break
            f_new, traj_new, cost_new = obj.run(trial)
            if cost_new.total < cost.total:
                accepted = True
                break
            step *= 0.5
            if step < 1e-14:
                break
        if not accepted:
            termination = "budget" if obj.count >= budget else "stationary"
            break
        accepted_any = True
        rel = (cost.total - cost_new.total) / max(abs(cost.total), 1e-300)
        theta, f, traj, cost = trial, f_new, traj_new, cost_new
        history.append(cost.total)
        step = min(step * 2.0, 1e6)
        if rel < tol:
            termination = "converged"
            break
    if not accepted_any and termination == "budget":
        termination = "budget_exhausted_no_step"
        log.warning("optimizer budget exhausted without an accepted step; returning zero control")
    return OptimizationReport(f, cost, history, termination, obj.count, zero_cost, traj)


def _embed(block, k, p, cells):
    out = np.zeros(cells * p)
    out[k * p:(k + 1) * p] = block
    return out
