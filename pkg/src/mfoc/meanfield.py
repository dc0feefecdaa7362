"""Mean-field solutions by push-forward along characteristics, and their checks."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dynamics
from .core_model import ControlField, EmpiricalMeasure, Kernel, Scenario
from .transport import measure_to_dict, w1_distance


@dataclass(frozen=True, eq=False)
class MeasureTrajectory:
    """Equal-weight atomic measures mu(t_m) on the integrator grid."""

    times: np.ndarray
    atoms: np.ndarray  # (nodes, K, 2d)
    level: int
    support_radius: float
    metadata: dict = field(default_factory=dict)

    @property
    def nodes(self) -> int:
        return len(self.times)

    def measure(self, m: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.atoms[m])

    def node_index(self, t: float) -> int:
        m = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[m] - t) > 1e-9 * max(1.0, self.times[-1]):
            raise ValueError(f"t={t} is not a grid node")
        return m

    def export(self, directory) -> str:
        """One measure JSON per node plus ``index.json`` listing times and files."""
        os.makedirs(directory, exist_ok=True)
        files = []
        for m in range(self.nodes):
            name = f"node_{m:05d}.json"
            with open(os.path.join(directory, name), "w") as fh:
                json.dump(measure_to_dict(self.measure(m)), fh)
            files.append(name)
        index = os.path.join(directory, "index.json")
        with open(index, "w") as fh:
            json.dump({"times": self.times.tolist(), "files": files, "level": self.level,
                       "metadata": self.metadata}, fh)
        return index


def solve_meanfield(mu0: EmpiricalMeasure, s: Scenario, f: Optional[ControlField] = None) -> MeasureTrajectory:
    """mu(t) = (T_t)# mu0 with T_t the flow of w = (v, H * mu(t) + f).

    For atomic mu0 the characteristics of the atoms are exactly the particle
    system, so this runs the same integrator on the atoms.
    """
    f = s.zero_control() if f is None else f
    traj = dynamics.integrate(s, f, mu0.to_ensemble())
    return from_trajectory(traj, s)


def from_trajectory(traj: dynamics.Trajectory, s: Scenario) -> MeasureTrajectory:
    meta = {"scenario": s.digest() if _serializable(s) else None, "control": traj.control.digest()}
    atoms = traj.phase
    atoms.setflags(write=False)
    return MeasureTrajectory(traj.times, atoms, traj.count, traj.support_radius, meta)


def _serializable(s: Scenario) -> bool:
    try:
        s.to_dict()
        return True
    except TypeError:
        return False


@dataclass(frozen=True, eq=False)
class VelocityField:
    """w(t, x, v) = (v, (H * mu(t))(x, v) + f(t, x, v)) at the nodes of ``mt``."""

    mt: MeasureTrajectory
    kernel: Kernel
    control: ControlField

    def __call__(self, m: int, points: np.ndarray, cell: Optional[int] = None) -> np.ndarray:
        d = self.kernel.dim
        pts = np.atleast_2d(points)
        src = self.mt.measure(m)
        k = self.control.cell_index(self.mt.times[m]) if cell is None else cell
        force = self.kernel.convolve(pts, src.atoms, src.weights)
        force = force + self.control.evaluate_cell(int(k), pts[:, :d], pts[:, d:])
        return np.hstack([pts[:, d:], force])


# ---------------------------------------------------------------------------
# test functions for the weak formulation


class TestFunction:
    """Smooth zeta on R^{2d} with value(z) -> (K,) and grad(z) -> (K, 2d)."""

    __test__ = False  # not a pytest class

    def value(self, z):
        raise NotImplementedError

    def grad(self, z):
        raise NotImplementedError


class ConstantTest(TestFunction):
    def __init__(self, c: float = 1.0):
        self.c = c

    def value(self, z):
        return np.full(len(z), self.c)

    def grad(self, z):
        return np.zeros_like(z)


class CoordinateTest(TestFunction):
    def __init__(self, index: int):
        self.index = index

    def value(self, z):
        return z[:, self.index].copy()

    def grad(self, z):
        g = np.zeros_like(z)
        g[:, self.index] = 1.0
        return g


class QuadraticTest(TestFunction):
    """|P z|^2 for P selecting positions (``x``), velocities (``v``) or both (``z``)."""

    def __init__(self, part: str = "v"):
        if part not in ("x", "v", "z"):
            raise ValueError(part)
        self.part = part

    def _mask(self, z):
        d = z.shape[1] // 2
        mask = np.ones(z.shape[1])
        if self.part == "x":
            mask[d:] = 0
        elif self.part == "v":
            mask[:d] = 0
        return mask

    def value(self, z):
        return np.sum((z * self._mask(z)) ** 2, axis=1)

    def grad(self, z):
        return 2.0 * z * self._mask(z)


class BumpTest(TestFunction):
    """exp(-1 / (1 - |z - c|^2 / r^2)) inside B(c, r), zero outside."""

    def __init__(self, center, radius: float):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def value(self, z):
        s = np.sum((z - self.center) ** 2, axis=1) / self.radius**2
        out = np.zeros(len(z))
        inside = s < 1
        out[inside] = np.exp(-1.0 / (1.0 - s[inside]))
        return out

    def grad(self, z):
        y = z - self.center
        s = np.sum(y**2, axis=1) / self.radius**2
        out = np.zeros_like(z)
        inside = s < 1
        si = s[inside]
        coef = np.exp(-1.0 / (1.0 - si)) * (-1.0 / (1.0 - si) ** 2) * 2.0 / self.radius**2
        out[inside] = coef[:, None] * y[inside]
        return out


def test_function_library(dim: int, radius: float) -> dict[str, TestFunction]:
    lib: dict[str, TestFunction] = {"constant": ConstantTest(1.0)}
    for i in range(2 * dim):
        lib[f"coord_{i}"] = CoordinateTest(i)
    lib["quad_v"] = QuadraticTest("v")
    lib["quad_z"] = QuadraticTest("z")
    lib["bump"] = BumpTest(np.zeros(2 * dim), 2.0 * radius)
    return lib


def weak_form_residual(mt: MeasureTrajectory, s: Scenario, f: ControlField, zeta: TestFunction,
                       t: float) -> float:
    """<zeta, mu(t)> - <zeta, mu(0)> - int_0^t int grad zeta . w dmu ds.

    Time integral by the trapezoidal rule on the grid, per step, with the
    step's control cell used at both ends.
    """
    m_end = mt.node_index(t)
    cells = dynamics.step_cells(s, f)
    wf = VelocityField(mt, s.kernel, f)
    total = 0.0
    for m in range(m_end):
        k = int(cells[m])
        left = _flux(wf, zeta, m, k)
        right = _flux(wf, zeta, m + 1, k)
        total += 0.5 * (mt.times[m + 1] - mt.times[m]) * (left + right)
    mu_t, mu_0 = mt.measure(m_end), mt.measure(0)
    return float(mu_t.integrate(zeta.value) - mu_0.integrate(zeta.value) - total)


def _flux(wf: VelocityField, zeta: TestFunction, m: int, k: int) -> float:
    mu = wf.mt.measure(m)
    w = wf(m, mu.atoms, cell=k)
    return float(mu.weights @ np.einsum("ij,ij->i", zeta.grad(mu.atoms), w))


# ---------------------------------------------------------------------------
# stability and time regularity


@dataclass(frozen=True, eq=False)
class StabilityResult:
    times: np.ndarray
    measured: np.ndarray
    bound: np.ndarray
    delta: np.ndarray  # per control cell
    radius: float

    @property
    def holds(self) -> bool:
        return bool(np.all(self.measured <= self.bound * (1 + 1e-9) + 1e-12))


def stability_check(mu0: EmpiricalMeasure, nu0: EmpiricalMeasure, s: Scenario,
                    f: Optional[ControlField] = None) -> StabilityResult:
    """Measured W1(mu(t), nu(t)) against exp(int_0^t delta) W1(mu0, nu0).

    delta = L + l with L = Lip(H) (kernel-difference estimate) and
    l = 1 + Lip(H) + ell (Lipschitz constant of a characteristic's field),
    both on the ball B(0, 2 R) where R bounds both computed supports.
    """
    f = s.zero_control() if f is None else f
    a = solve_meanfield(mu0, s, f)
    b = solve_meanfield(nu0, s, f)
    measured = np.array([w1_distance(a.measure(m), b.measure(m)) for m in range(a.nodes)])
    radius = max(float(np.max(np.linalg.norm(a.atoms, axis=2))),
                 float(np.max(np.linalg.norm(b.atoms, axis=2))))
    lip_h = s.kernel.lipschitz(2.0 * radius)
    ell_cells = np.array([s.ell.min_on(f.grid[k], f.grid[k + 1]) for k in range(f.cells)])
    ell_cells = np.maximum(ell_cells, f.lipschitz())
    delta = lip_h + (1.0 + lip_h + ell_cells)
    integral = np.array([dynamics.cell_integral(delta, f, t) for t in a.times])
    bound = np.exp(integral) * measured[0]
    return StabilityResult(a.times, measured, bound, delta, radius)


def time_lipschitz_constant(mt: MeasureTrajectory, s: Scenario, f: ControlField) -> float:
    """A priori bound on |dz/dt| inside B(0, R_T): speed plus force bounds."""
    R = mt.support_radius
    C = s.kernel.growth_constant
    ell_max = float(np.max(s.ell.values))
    force = C * (1.0 + 2.0 * R) + ell_max * (1.0 + R)
    return float(np.hypot(R, force))


def sup_w1(a: MeasureTrajectory, b: MeasureTrajectory, stride: int = 1) -> float:
    """max over shared nodes of W1(a(t), b(t))."""
    if a.nodes != b.nodes or np.any(np.abs(a.times - b.times) > 1e-12):
        raise ValueError("trajectories must share a time grid")
    return max(w1_distance(a.measure(m), b.measure(m)) for m in _node_subset(a.nodes, stride))


def _node_subset(nodes: int, stride: int):
    idx = list(range(0, nodes, max(1, stride)))
    if idx[-1] != nodes - 1:
        idx.append(nodes - 1)
    return idx
