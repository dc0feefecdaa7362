"""Controlled particle system: RK4 integration, kernel convolution, a priori bounds."""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_model import (BoundFunction, ControlField, EmpiricalMeasure, Kernel, PhaseEnsemble,
                         Scenario)


class IntegrationError(RuntimeError):
    """Non-finite state or a state outside the a priori confinement ball."""


def convolve_kernel(H: Kernel, mu: EmpiricalMeasure, z) -> np.ndarray:
    """(H * mu)(z) = sum_k w_k H(z'_k - z).

    The orientation makes the Cucker-Smale kernel produce the alignment term
    a(|x_j - x_i|)(v_j - v_i).
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    pts = np.atleast_2d(z)
    if pts.shape[1] != mu.ambient_dim or mu.ambient_dim != 2 * H.dim:
        raise ValueError(f"dimension mismatch: kernel on R^{2 * H.dim}, atoms in R^{mu.ambient_dim}, "
                         f"query in R^{pts.shape[1]}")
    out = H.convolve(pts, mu.atoms, mu.weights)
    return out[0] if single else out


def support_bound(X0: float, V0: float, C: float, ell: BoundFunction, T: float) -> float:
    """Radius R_T of a ball in phase space holding every agent on [0, T].

    V_T = {V0 + (1 + X0)(2 C T + int ell)} exp((1 + T) int (2C + ell)) bounds
    the speeds; positions add at most T V_T. Independent of N.
    """
    int_ell = ell.integral(T)
    v_T = (V0 + (1.0 + X0) * (2 * C * T + int_ell)) * np.exp((1.0 + T) * (2 * C * T + int_ell))
    return float(X0 + T * v_T + v_T)


def velocity_bound(X0, V0, C, ell: BoundFunction, T) -> float:
    int_ell = ell.integral(T)
    return float((V0 + (1.0 + X0) * (2 * C * T + int_ell)) * np.exp((1.0 + T) * (2 * C * T + int_ell)))


def gronwall_growth_bound(y0_norm: float, m: BoundFunction, t: float) -> float:
    """(|y0| + int_0^t m) exp(int_0^t m) for |g(t, y)| <= m(t)(1 + |y|)."""
    if np.any(m.values < 0):
        raise ValueError("m must be nonnegative")
    im = m.integral(t)
    return float((y0_norm + im) * np.exp(im))


def ensemble_support_bound(ens: PhaseEnsemble, s: Scenario) -> float:
    return support_bound(ens.max_position, ens.max_speed, s.kernel.growth_constant, s.ell, s.horizon)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States at every integrator node plus the control used.

    ``x``, ``v``, ``controls`` have shape (steps + 1, N, d). ``controls[m]`` is
    f evaluated with the cell of step m (the last node reuses the last step's
    cell). ``step_cells[m]`` is the control cell active on [t_m, t_{m+1}).
    """

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    controls: np.ndarray
    control: ControlField
    step_cells: np.ndarray
    support_radius: float

    @property
    def count(self) -> int:
        return self.x.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    @property
    def nodes(self) -> int:
        return len(self.times)

    @property
    def phase(self) -> np.ndarray:
        return np.concatenate([self.x, self.v], axis=2)

    def ensemble(self, m: int) -> PhaseEnsemble:
        return PhaseEnsemble(self.x[m], self.v[m])

    def measure(self, m: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(np.hstack([self.x[m], self.v[m]]))

    def max_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.phase, axis=2)))

    def to_csv(self, path_or_buf=None) -> Optional[str]:
        """Rows ``t,agent,x_1..x_d,v_1..v_d,f_1..f_d`` with 17 significant digits."""
        d = self.dim
        header = ["t", "agent"] + [f"x_{k + 1}" for k in range(d)] + \
                 [f"v_{k + 1}" for k in range(d)] + [f"f_{k + 1}" for k in range(d)]
        buf = io.StringIO()
        buf.write(",".join(header) + "\n")
        for m, t in enumerate(self.times):
            for i in range(self.count):
                vals = [t] + list(self.x[m, i]) + list(self.v[m, i]) + list(self.controls[m, i])
                nums = [f"{val:.17g}" for val in vals]
                buf.write(",".join([nums[0], str(i)] + nums[1:]) + "\n")
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)
        return None


def step_cells(s: Scenario, f: ControlField) -> np.ndarray:
    """Control cell for each integrator step; control breakpoints must be step nodes."""
    times = s.times
    idx = np.searchsorted(times, f.grid)
    idx = np.clip(idx, 0, len(times) - 1)
    near = np.minimum(np.abs(times[idx] - f.grid),
                      np.abs(times[np.maximum(idx - 1, 0)] - f.grid))
    if np.any(near > 1e-9 * max(1.0, s.horizon)):
        raise ValueError("control grid breakpoints must coincide with integrator nodes")
    if abs(f.grid[-1] - s.horizon) > 1e-9 * max(1.0, s.horizon):
        raise ValueError("control grid must end at the horizon")
    mids = 0.5 * (times[:-1] + times[1:])
    return f.cell_index(mids)


def integrate(s: Scenario, f: Optional[ControlField] = None,
              ensemble: Optional[PhaseEnsemble] = None, check_confinement: bool = True) -> Trajectory:
    """Classical RK4 on the 2dN system x' = v, v' = H * mu_N + f.

    f is frozen per step to the cell containing the step, so time
    discontinuities of the control fall on step boundaries.
    """
    f = s.zero_control() if f is None else f
    ens = s.initial_ensemble() if ensemble is None else ensemble
    if ens.dim != s.dim or f.dim != s.dim:
        raise ValueError("ensemble, control and scenario dimensions differ")
    cells = step_cells(s, f)
    kernel = s.kernel
    dt = s.dt
    n_steps = s.steps
    times = s.times

    xs = np.empty((n_steps + 1, ens.count, s.dim))
    vs = np.empty_like(xs)
    fs = np.empty_like(xs)
    x = np.array(ens.x)
    v = np.array(ens.v)
    xs[0], vs[0] = x, v

    a, B, D = f.a, f.B, f.D
    for m in range(n_steps):
        k = cells[m]
        ak, BkT, DkT = a[k], B[k].T, D[k].T
        linear = f.kind in ("affine_v", "affine_phase")
        phase = f.kind == "affine_phase"

        def accel(xx, vv):
            acc = kernel.interaction(xx, vv) + ak
            if linear:
                acc = acc + vv @ BkT
            if phase:
                acc = acc + xx @ DkT
            return acc

        k1x, k1v = v, accel(x, v)
        k2x = v + 0.5 * dt * k1v
        k2v = accel(x + 0.5 * dt * k1x, k2x)
        k3x = v + 0.5 * dt * k2v
        k3v = accel(x + 0.5 * dt * k2x, k3x)
        k4x = v + dt * k3v
        k4v = accel(x + dt * k3x, k4x)
        x = x + (dt / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + (dt / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise IntegrationError(f"non-finite state at t={times[m + 1]:.6g}")
        xs[m + 1], vs[m + 1] = x, v

    for m in range(n_steps + 1):
        k = cells[min(m, n_steps - 1)]
        fs[m] = f.evaluate_cell(k, xs[m], vs[m])

    radius = ensemble_support_bound(ens, s)
    if check_confinement:
        worst = float(np.sqrt(np.max(np.sum(xs**2, axis=2) + np.sum(vs**2, axis=2))))
        if worst > radius:
            raise IntegrationError(f"state at |z|={worst:.6g} leaves confinement ball R_T={radius:.6g}")
    traj = Trajectory(times, xs, vs, fs, f, cells, radius)
    for arr in (xs, vs, fs):
        arr.setflags(write=False)
    return traj


def rhs_lipschitz_bound(kernel: Kernel, f: ControlField, radius: float) -> np.ndarray:
    """Per control cell, a Lipschitz constant of the full 2dN right-hand side on B(0, radius).

    Pairwise differences live in B(0, 2 radius); each agent's force depends on
    its own state and (on average) on all others, giving 1 + 2 Lip(H) + Lip(f).
    """
    lip_h = kernel.lipschitz(2.0 * radius)
    return 1.0 + 2.0 * lip_h + f.lipschitz()


def cell_integral(values: np.ndarray, f: ControlField, t: float) -> float:
    """int_0^t of a per-cell constant function on the control grid."""
    lo = f.grid[:-1]
    hi = np.minimum(f.grid[1:], t)
    return float(np.sum(np.clip(hi - lo, 0.0, None) * values))
