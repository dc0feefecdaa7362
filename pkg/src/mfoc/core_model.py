"""Domain types: phase ensembles, kernels, costs, admissible controls, scenarios."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

PARAMETERIZATIONS = ("zero", "constant", "affine_v", "affine_phase")


class SamplingError(RuntimeError):
    """Rejection sampling could not fill the requested ensemble."""


def _as_matrix(a, rows: int, cols: int, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1 and rows == 1:
        arr = arr[None, :]
    if arr.shape != (rows, cols):
        raise ValueError(f"{name} must have shape ({rows}, {cols}), got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# phase states and measures


@dataclass(frozen=True, eq=False)
class PhaseEnsemble:
    """N agents with positions ``x`` and velocities ``v``, both of shape (N, d)."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=2)
        v = np.array(self.v, dtype=float, ndmin=2)
        if x.ndim != 2 or x.shape != v.shape:
            raise ValueError(f"positions {x.shape} and velocities {v.shape} must both be (N, d)")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("need N >= 1 and d >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("phase ensemble contains non-finite coordinates")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_phase(cls, z) -> "PhaseEnsemble":
        z = np.asarray(z, dtype=float)
        d = z.shape[1] // 2
        if z.ndim != 2 or z.shape[1] != 2 * d:
            raise ValueError("phase atoms must have an even number of columns")
        return cls(z[:, :d], z[:, d:])

    @property
    def count(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def z(self) -> np.ndarray:
        return np.hstack([self.x, self.v])

    @property
    def max_position(self) -> float:
        return float(np.max(np.linalg.norm(self.x, axis=1)))

    @property
    def max_speed(self) -> float:
        return float(np.max(np.linalg.norm(self.v, axis=1)))

    def measure(self) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.z)


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Atomic probability measure sum_k w_k delta_{z_k} on R^n.

    Weights default to 1/K. Normalization is enforced to 1e-12.
    """

    atoms: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float, ndmin=2)
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise ValueError("atoms must be a non-empty (K, n) array")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atoms must be finite")
        k = atoms.shape[0]
        if self.weights is None:
            w = np.full(k, 1.0 / k)
        else:
            w = np.array(self.weights, dtype=float).reshape(-1)
            if w.shape != (k,):
                raise ValueError("one weight per atom required")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        atoms.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def first_moment(self) -> float:
        return float(self.weights @ np.linalg.norm(self.atoms, axis=1))

    def support_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.atoms, axis=1)))

    def shifted(self, c) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.atoms + np.asarray(c, dtype=float), self.weights)

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(self.weights @ np.asarray(fn(self.atoms), dtype=float))

    def to_ensemble(self) -> PhaseEnsemble:
        if not self.is_uniform:
            raise ValueError("interacting systems require equal atom weights")
        return PhaseEnsemble.from_phase(self.atoms)


# ---------------------------------------------------------------------------
# interaction kernels


class Kernel:
    """Interaction map H: R^{2d} -> R^d with |H(z)| <= C (1 + |z|).

    Subclasses implement ``evaluate`` on arrays whose last axis has length 2d.
    ``lipschitz(radius)`` returns an upper bound for Lip(H, B(0, radius)).
    """

    dim: int
    growth_constant: float

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, z):
        return self.evaluate(np.asarray(z, dtype=float))

    def interaction(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(1/N) sum_j H(z_j - z_i) for every agent i."""
        z = np.hstack([x, v])
        diff = z[None, :, :] - z[:, None, :]
        return self.evaluate(diff).mean(axis=1)

    def convolve(self, points: np.ndarray, atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """sum_k w_k H(z'_k - p) for each query point p (rows of ``points``)."""
        diff = atoms[None, :, :] - points[:, None, :]
        return np.einsum("k,qkd->qd", weights, self.evaluate(diff))

    def lipschitz(self, radius: float) -> float:
        return sampled_lipschitz(self.evaluate, 2 * self.dim, radius)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class CuckerSmaleKernel(Kernel):
    """H(x, v) = a(|x|) v with rate a(r) = K / (sigma^2 + r^2)^beta."""

    dim: int
    K: float = 1.0
    sigma: float = 1.0
    beta: float = 0.5

    def rate(self, r):
        return self.K / (self.sigma**2 + np.asarray(r, dtype=float) ** 2) ** self.beta

    @property
    def growth_constant(self) -> float:
        # |a(|x|) v| <= a(0) |v| since a is nonincreasing
        return float(self.rate(0.0))

    def max_rate_slope(self) -> float:
        """sup_r |a'(r)|, attained at r^2 = sigma^2 / (2 beta + 1)."""
        if self.beta == 0 or self.K == 0:
            return 0.0
        r = self.sigma / np.sqrt(2 * self.beta + 1)
        return float(2 * self.beta * abs(self.K) * r * (self.sigma**2 + r**2) ** (-self.beta - 1))

    def evaluate(self, z):
        d = self.dim
        r = np.linalg.norm(z[..., :d], axis=-1)
        return self.rate(r)[..., None] * z[..., d:]

    def interaction(self, x, v):
        dx = x[None, :, :] - x[:, None, :]
        a = self.rate(np.sqrt(np.einsum("ijk,ijk->ij", dx, dx)))
        dv = v[None, :, :] - v[:, None, :]
        return (a[:, :, None] * dv).mean(axis=1)

    def lipschitz(self, radius):
        # DH = [a'(|x|) v xhat^T, a(|x|) I]; |v| <= radius on the ball
        return float(np.hypot(self.max_rate_slope() * radius, self.rate(0.0)))

    def to_dict(self):
        return {"type": "cucker_smale", "K": self.K, "sigma": self.sigma, "beta": self.beta}


@dataclass(frozen=True, eq=False)
class AffineKernel(Kernel):
    """H(z) = A z + b with A of shape (d, 2d). A = 0, b = 0 is the zero kernel."""

    dim: int
    A: np.ndarray = None
    b: np.ndarray = None

    def __post_init__(self):
        d = self.dim
        A = np.zeros((d, 2 * d)) if self.A is None else _as_matrix(self.A, d, 2 * d, "A")
        b = np.zeros(d) if self.b is None else np.asarray(self.b, dtype=float).reshape(d)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def zero(cls, dim: int) -> "AffineKernel":
        return cls(dim)

    @property
    def growth_constant(self):
        return float(max(np.linalg.norm(self.b), np.linalg.norm(self.A, 2)))

    def evaluate(self, z):
        return z @ self.A.T + self.b

    def lipschitz(self, radius):
        return float(np.linalg.norm(self.A, 2))

    def to_dict(self):
        if not self.A.any() and not self.b.any():
            return {"type": "zero"}
        return {"type": "affine", "A": self.A.tolist(), "b": self.b.tolist()}


@dataclass(frozen=True, eq=False)
class CallableKernel(Kernel):
    """User-supplied H with a declared growth constant; not serializable."""

    dim: int
    fn: Callable[[np.ndarray], np.ndarray] = None
    growth: float = 0.0

    @property
    def growth_constant(self):
        return float(self.growth)

    def evaluate(self, z):
        return np.asarray(self.fn(z), dtype=float)

    def to_dict(self):
        raise TypeError("callable kernels cannot be serialized")


def kernel_from_dict(data: dict, dim: int) -> Kernel:
    kind = data.get("type", "cucker_smale")
    if kind == "cucker_smale":
        return CuckerSmaleKernel(dim, float(data.get("K", 1.0)), float(data.get("sigma", 1.0)),
                                 float(data.get("beta", 0.5)))
    if kind == "zero":
        return AffineKernel.zero(dim)
    if kind == "affine":
        return AffineKernel(dim, data.get("A"), data.get("b"))
    raise ValueError(f"unknown kernel type {kind!r}")


def sampled_lipschitz(fn, n: int, radius: float, samples: int = 256, seed: int = 0,
                      h: float = 1e-6) -> float:
    """Largest finite-difference Jacobian operator norm at random points of B(0, radius)."""
    rng = np.random.default_rng(seed)
    pts = _uniform_ball(rng, samples, n, radius)
    best = 0.0
    eye = np.eye(n)
    for p in pts:
        cols = [(fn(p + h * e) - fn(p - h * e)) / (2 * h) for e in eye]
        jac = np.stack(cols, axis=-1)
        best = max(best, float(np.linalg.norm(jac, 2)))
    return best


def estimate_growth_constant(kernel: Kernel, radius: float, samples: int = 2048,
                             seed: int = 0) -> float:
    """max |H(z)| / (1 + |z|) over random points of B(0, radius)."""
    rng = np.random.default_rng(seed)
    z = _uniform_ball(rng, samples, 2 * kernel.dim, radius)
    z = np.vstack([z, np.zeros((1, z.shape[1]))])
    ratio = np.linalg.norm(kernel.evaluate(z), axis=-1) / (1.0 + np.linalg.norm(z, axis=-1))
    return float(ratio.max())


def _uniform_ball(rng, count, n, radius):
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / n)
    return g * r[:, None]


# ---------------------------------------------------------------------------
# control bound and admissible controls


def uniform_grid(horizon: float, cells: int) -> np.ndarray:
    return np.linspace(0.0, horizon, cells + 1)


@dataclass(frozen=True, eq=False)
class BoundFunction:
    """Piecewise-constant control bound ell on ``grid`` with integrability exponent q."""

    grid: np.ndarray
    values: np.ndarray
    q: float = 1.0

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if grid.ndim != 1 or len(grid) != len(values) + 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be increasing with one more node than values")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value: float, horizon: float, q: float = 1.0) -> "BoundFunction":
        return cls(np.array([0.0, horizon]), np.array([float(value)]), q)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def __call__(self, t):
        k = np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, len(self.values) - 1)
        return self.values[k]

    def integral(self, t: Optional[float] = None, power: float = 1.0) -> float:
        """int_0^t ell(s)^power ds (exact for piecewise constants)."""
        t = self.horizon if t is None else t
        lo = self.grid[:-1]
        hi = np.minimum(self.grid[1:], t)
        lengths = np.clip(hi - lo, 0.0, None)
        return float(np.sum(lengths * self.values**power))

    def min_on(self, t0: float, t1: float) -> float:
        """Essential infimum of ell over [t0, t1)."""
        mask = (self.grid[:-1] < t1 - 1e-12 * max(1.0, abs(t1))) & (self.grid[1:] > t0)
        return float(self.values[mask].min())

    def to_dict(self):
        return {"grid": self.grid.tolist(), "values": self.values.tolist(), "q": self.q}

    @classmethod
    def from_dict(cls, data: dict, horizon: float) -> "BoundFunction":
        q = float(data.get("q", 1.0))
        if "constant" in data:
            return cls.constant(float(data["constant"]), horizon, q)
        values = np.asarray(data["values"], dtype=float)
        grid = np.asarray(data["grid"], dtype=float) if "grid" in data else uniform_grid(horizon, len(values))
        return cls(grid, values, q)


def cell_masses(a: np.ndarray, B: np.ndarray, D: np.ndarray) -> np.ndarray:
    """|a_k| + ||B_k||_op + ||D_k||_op for stacked cell parameters."""
    return (np.linalg.norm(a, axis=1) + np.linalg.norm(B, 2, axis=(1, 2))
            + np.linalg.norm(D, 2, axis=(1, 2)))


@dataclass(frozen=True, eq=False)
class ControlField:
    """Piecewise-in-time parameterized feedback f(t, x, v) = a_k + B_k v + D_k x.

    ``kind`` decides which blocks are free: ``zero`` (none), ``constant`` (a),
    ``affine_v`` (a, B) and ``affine_phase`` (a, B, D). Blocks that are not free
    are stored as zeros so evaluation is uniform.
    """

    kind: str
    grid: np.ndarray
    a: np.ndarray
    B: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        if self.kind not in PARAMETERIZATIONS:
            raise ValueError(f"unknown parameterization {self.kind!r}")
        grid = np.asarray(self.grid, dtype=float)
        a = np.asarray(self.a, dtype=float)
        B = np.asarray(self.B, dtype=float)
        D = np.asarray(self.D, dtype=float)
        m, d = a.shape
        if len(grid) != m + 1 or B.shape != (m, d, d) or D.shape != (m, d, d):
            raise ValueError("inconsistent control shapes")
        if self.kind == "zero" and (a.any() or B.any() or D.any()):
            raise ValueError("zero parameterization carries no parameters")
        if self.kind in ("zero", "constant") and (B.any() or D.any()):
            raise ValueError(f"{self.kind} control cannot have linear parts")
        if self.kind == "affine_v" and D.any():
            raise ValueError("affine_v control cannot depend on position")
        for arr in (grid, a, B, D):
            arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "D", D)

    @classmethod
    def zeros(cls, kind: str, grid, dim: int) -> "ControlField":
        m = len(grid) - 1
        return cls(kind, grid, np.zeros((m, dim)), np.zeros((m, dim, dim)), np.zeros((m, dim, dim)))

    @property
    def cells(self) -> int:
        return self.a.shape[0]

    @property
    def dim(self) -> int:
        return self.a.shape[1]

    def cell_index(self, t) -> np.ndarray:
        return np.clip(np.searchsorted(self.grid, t, side="right") - 1, 0, self.cells - 1)

    def evaluate_cell(self, k: int, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.a[k] + v @ self.B[k].T + x @ self.D[k].T

    def __call__(self, t: float, x, v) -> np.ndarray:
        return self.evaluate_cell(int(self.cell_index(t)), np.asarray(x, float), np.asarray(v, float))

    def bound_masses(self) -> np.ndarray:
        """|a_k| + ||B_k||_op + ||D_k||_op per cell: |f(t,0)| + Lip(f(t,.))."""
        return cell_masses(self.a, self.B, self.D)

    def lipschitz(self) -> np.ndarray:
        return np.linalg.norm(self.B, 2, axis=(1, 2)) + np.linalg.norm(self.D, 2, axis=(1, 2))

    def admissibility_violations(self, ell: BoundFunction) -> list[int]:
        masses = self.bound_masses()
        return [k for k in range(self.cells)
                if masses[k] > ell.min_on(self.grid[k], self.grid[k + 1])]

    def is_admissible(self, ell: BoundFunction) -> bool:
        return not self.admissibility_violations(ell)

    # parameter vector <-> field
    def block_size(self) -> int:
        d = self.dim
        return {"zero": 0, "constant": d, "affine_v": d + d * d, "affine_phase": d + 2 * d * d}[self.kind]

    def to_vector(self) -> np.ndarray:
        blocks = []
        for k in range(self.cells):
            parts = []
            if self.kind != "zero":
                parts.append(self.a[k])
            if self.kind in ("affine_v", "affine_phase"):
                parts.append(self.B[k].ravel())
            if self.kind == "affine_phase":
                parts.append(self.D[k].ravel())
            blocks.append(np.concatenate(parts) if parts else np.zeros(0))
        return np.concatenate(blocks)

    def with_vector(self, theta) -> "ControlField":
        theta = np.asarray(theta, dtype=float)
        d, m, p = self.dim, self.cells, self.block_size()
        if theta.shape != (m * p,):
            raise ValueError(f"expected {m * p} parameters, got {theta.shape}")
        a = np.zeros((m, d))
        B = np.zeros((m, d, d))
        D = np.zeros((m, d, d))
        for k in range(m):
            blk = theta[k * p:(k + 1) * p]
            if self.kind != "zero":
                a[k] = blk[:d]
            if self.kind in ("affine_v", "affine_phase"):
                B[k] = blk[d:d + d * d].reshape(d, d)
            if self.kind == "affine_phase":
                D[k] = blk[d + d * d:].reshape(d, d)
        return ControlField(self.kind, self.grid, a, B, D)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "parameterization": self.kind,
            "cells": [{"a": self.a[k].tolist(), "B": self.B[k].tolist(), "D": self.D[k].tolist()}
                      for k in range(self.cells)],
        }

    @classmethod
    def from_dict(cls, data: dict, dim: int, horizon: Optional[float] = None) -> "ControlField":
        kind = data.get("parameterization", "zero")
        cells = data.get("cells", 1)
        if isinstance(cells, int):
            grid = data.get("grid") or uniform_grid(horizon, cells)
            return cls.zeros(kind, grid, dim)
        m = len(cells)
        grid = np.asarray(data["grid"], float) if data.get("grid") is not None else uniform_grid(horizon, m)
        a = np.zeros((m, dim))
        B = np.zeros((m, dim, dim))
        D = np.zeros((m, dim, dim))
        for k, cell in enumerate(cells):
            if "a" in cell:
                a[k] = np.asarray(cell["a"], float).reshape(dim)
            if "B" in cell:
                B[k] = np.asarray(cell["B"], float).reshape(dim, dim)
            if "D" in cell:
                D[k] = np.asarray(cell["D"], float).reshape(dim, dim)
        return cls(kind, grid, a, B, D)

    def digest(self) -> str:
        return _digest(self.to_dict())


# ---------------------------------------------------------------------------
# running cost and penalty


@dataclass(frozen=True)
class CostSpec:
    """Running cost L plus control penalty psi.

    ``running='velocity_variance'`` gives L(x, v, mu) = |v - mean velocity|^2.
    ``psi='l1'`` is gamma |u|; ``psi='lq_power'`` is gamma |u|^q. A callable
    ``custom_running(x, v) -> (N,)`` overrides the built-in L.
    """

    running: str = "velocity_variance"
    psi: str = "l1"
    gamma: float = 0.1
    q: float = 1.0
    custom_running: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(
        default=None, compare=False)

    def __post_init__(self):
        if self.running not in ("velocity_variance", "custom"):
            raise ValueError(f"unknown running cost {self.running!r}")
        if self.psi not in ("l1", "lq_power"):
            raise ValueError(f"unknown penalty {self.psi!r}")
        if self.running == "custom" and self.custom_running is None:
            raise ValueError("custom running cost needs a callable")

    @property
    def exponent(self) -> float:
        return 1.0 if self.psi == "l1" else float(self.q)

    @property
    def is_smooth_penalty(self) -> bool:
        return self.psi == "lq_power" and self.q > 1

    def penalty(self, u: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(u, axis=-1)
        return self.gamma * r ** self.exponent

    def running_cost(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.custom_running is not None:
            return np.asarray(self.custom_running(x, v), dtype=float)
        dv = v - v.mean(axis=0)
        return np.einsum("ij,ij->i", dv, dv)

    def lipschitz_constant(self) -> float:
        """C in Lip(psi, B(0, R)) <= C R^(q-1)."""
        return abs(self.gamma) * self.exponent

    def to_dict(self):
        if self.custom_running is not None:
            raise TypeError("custom running costs cannot be serialized")
        return {"running": self.running, "psi": self.psi, "gamma": self.gamma, "q": self.q}

    @classmethod
    def from_dict(cls, data: dict) -> "CostSpec":
        return cls(data.get("running", "velocity_variance"), data.get("psi", "l1"),
                   float(data.get("gamma", 0.1)), float(data.get("q", 1.0)))


def check_penalty(cost: CostSpec, dim: int, samples: int = 200, seed: int = 0) -> list[str]:
    """Sampled nonnegativity, midpoint convexity and growth checks for psi."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(samples, dim)) * 3.0
    w = rng.normal(size=(samples, dim)) * 3.0
    pu, pw = cost.penalty(u), cost.penalty(w)
    if np.any(pu < 0) or np.any(pw < 0):
        # the remaining checks presuppose psi >= 0
        return ["ψ nonnegativity"]
    out = []
    mid = cost.penalty(0.5 * (u + w))
    if np.any(mid > 0.5 * (pu + pw) + 1e-12 * (1 + pu + pw)):
        out.append("ψ convexity")
    c = cost.lipschitz_constant()
    for radius in (1.0, 2.0, 4.0):
        a = _uniform_ball(rng, samples, dim, radius)
        b = _uniform_ball(rng, samples, dim, radius)
        sep = np.linalg.norm(a - b, axis=1)
        ok = sep > 1e-9
        slope = np.abs(cost.penalty(a) - cost.penalty(b))[ok] / sep[ok]
        if slope.size and slope.max() > c * radius ** (cost.exponent - 1) * (1 + 1e-9):
            out.append(f"ψ growth R={radius:g}")
    return out


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class InitialSpec:
    """Initial datum: explicit atoms, or a distribution truncated to B(0, R_0).

    kind: ``explicit`` | ``uniform_box`` | ``gaussian``.
    """

    kind: str = "uniform_box"
    atoms: Optional[np.ndarray] = None
    low: float = -1.0
    high: float = 1.0
    mean: object = 0.0
    std: object = 1.0
    seed: int = 0

    def to_dict(self):
        if self.kind == "explicit":
            return {"type": "explicit", "atoms": np.asarray(self.atoms).tolist()}
        if self.kind == "uniform_box":
            return {"type": "uniform_box", "low": self.low, "high": self.high, "seed": self.seed}
        return {"type": "gaussian", "mean": np.asarray(self.mean).tolist(),
                "std": np.asarray(self.std).tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "InitialSpec":
        kind = data.get("type", "uniform_box")
        if kind == "explicit":
            return cls("explicit", atoms=np.asarray(data["atoms"], dtype=float))
        if kind == "uniform_box":
            return cls("uniform_box", low=float(data.get("low", -1.0)), high=float(data.get("high", 1.0)),
                       seed=int(data.get("seed", 0)))
        if kind == "gaussian":
            return cls("gaussian", mean=data.get("mean", 0.0), std=data.get("std", 1.0),
                       seed=int(data.get("seed", 0)))
        raise ValueError(f"unknown initial type {kind!r}")


def sample_initial(spec: InitialSpec, dim: int, count: int, radius: float,
                   seed: Optional[int] = None, max_batches: int = 1000) -> PhaseEnsemble:
    """Draw ``count`` agents from ``spec`` restricted to B(0, radius).

    Sampled distributions are truncated to the ball by rejection; a run of
    ``max_batches`` batches without filling the ensemble raises SamplingError.
    """
    if radius <= 0:
        raise ValueError("support radius must be positive")
    n = 2 * dim
    if spec.kind == "explicit":
        atoms = np.asarray(spec.atoms, dtype=float).reshape(-1, n)
        return PhaseEnsemble.from_phase(atoms)
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    if spec.kind == "uniform_box":
        draw = lambda m: rng.uniform(spec.low, spec.high, size=(m, n))
    elif spec.kind == "gaussian":
        mean = np.broadcast_to(np.asarray(spec.mean, dtype=float), (n,))
        std = np.broadcast_to(np.asarray(spec.std, dtype=float), (n,))
        draw = lambda m: mean + std * rng.standard_normal((m, n))
    else:
        raise ValueError(f"cannot sample from {spec.kind!r}")
    accepted = []
    have = 0
    batch = max(count, 64)
    for _ in range(max_batches):
        z = draw(batch)
        z = z[np.linalg.norm(z, axis=1) < radius]
        accepted.append(z)
        have += len(z)
        if have >= count:
            return PhaseEnsemble.from_phase(np.vstack(accepted)[:count])
    raise SamplingError(f"only {have} of {count} samples fell inside B(0, {radius})")


@dataclass(frozen=True, eq=False)
class Scenario:
    dim: int
    agents: int
    horizon: float
    steps: int
    kernel: Kernel
    cost: CostSpec
    ell: BoundFunction
    initial: InitialSpec
    control: ControlField
    confinement_radius: float

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    def initial_ensemble(self, count: Optional[int] = None, seed: Optional[int] = None) -> PhaseEnsemble:
        return sample_initial(self.initial, self.dim, self.agents if count is None else count,
                              self.confinement_radius, seed)

    def zero_control(self) -> ControlField:
        return ControlField.zeros(self.control.kind, self.control.grid, self.dim)

    def replace(self, **changes) -> "Scenario":
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self) -> dict:
        ctrl = self.control.to_dict()
        return {
            "dim": self.dim,
            "agents": self.agents,
            "horizon": self.horizon,
            "steps": self.steps,
            "kernel": self.kernel.to_dict(),
            "cost": self.cost.to_dict(),
            "ell": self.ell.to_dict(),
            "initial": self.initial.to_dict(),
            "control": ctrl,
            "confinement_radius": self.confinement_radius,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        dim = int(data["dim"])
        horizon = float(data["horizon"])
        return cls(
            dim=dim,
            agents=int(data["agents"]),
            horizon=horizon,
            steps=int(data["steps"]),
            kernel=kernel_from_dict(data.get("kernel", {}), dim),
            cost=CostSpec.from_dict(data.get("cost", {})),
            ell=BoundFunction.from_dict(data.get("ell", {"constant": 1.0}), horizon),
            initial=InitialSpec.from_dict(data.get("initial", {})),
            control=ControlField.from_dict(data.get("control", {}), dim, horizon),
            confinement_radius=float(data["confinement_radius"]),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def digest(self) -> str:
        return _digest(self.to_dict())


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _aligned(grid: np.ndarray, times: np.ndarray) -> bool:
    scale = max(1.0, float(times[-1]))
    return all(np.min(np.abs(times - g)) <= 1e-9 * scale for g in grid)


def validate_scenario(s: Scenario) -> list[str]:
    """Every violated invariant of ``s``, in a fixed order. Empty means valid."""
    out: list[str] = []
    if s.dim < 1:
        out.append("dim >= 1")
    if s.agents < 1:
        out.append("agents >= 1")
    if not s.horizon > 0:
        out.append("horizon > 0")
    if s.steps < 1:
        out.append("steps >= 1")
    if not s.confinement_radius > 0:
        out.append("confinement radius > 0")
    if out:
        return out
    cs_bad = []
    if isinstance(s.kernel, CuckerSmaleKernel):
        k = s.kernel
        if not k.K > 0:
            cs_bad.append("kernel K > 0")
        if not k.sigma > 0:
            cs_bad.append("kernel sigma > 0")
        if not k.beta >= 0:
            cs_bad.append("kernel beta >= 0")
    if s.kernel.dim != s.dim:
        out.append("kernel dimension")
    elif cs_bad:
        out.extend(cs_bad)
    else:
        probe = max(1.0, 2 * s.confinement_radius)
        if estimate_growth_constant(s.kernel, probe) > s.kernel.growth_constant * (1 + 1e-9) + 1e-12:
            out.append("kernel growth")
    out.extend(check_penalty(s.cost, s.dim))
    for k, val in enumerate(s.ell.values):
        if val < 0:
            out.append(f"ℓ nonnegativity cell {k}")
    if abs(s.ell.horizon - s.horizon) > 1e-9 * s.horizon:
        out.append("ℓ horizon")
    if s.initial.kind == "explicit":
        atoms = np.asarray(s.initial.atoms, dtype=float).reshape(-1, 2 * s.dim)
        if len(atoms) != s.agents:
            out.append("initial atom count")
        for i in np.flatnonzero(np.linalg.norm(atoms, axis=1) >= s.confinement_radius):
            out.append(f"initial atom {i} outside confinement ball")
    ctrl = s.control
    if ctrl.dim != s.dim:
        out.append("control dimension")
        return out
    if abs(ctrl.grid[0]) > 1e-12 or abs(ctrl.grid[-1] - s.horizon) > 1e-9 * s.horizon:
        out.append("control grid spans [0, T]")
    elif not _aligned(ctrl.grid, s.times):
        out.append("control grid not aligned with time steps")
    if np.all(s.ell.values >= 0):
        for k in ctrl.admissibility_violations(s.ell):
            out.append(f"admissibility cell {k}")
    return out
