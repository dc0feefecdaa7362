"""Mean-field limit and Gamma-convergence studies over particle discretizations."""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import control_opt, dynamics, meanfield
from .core_model import ControlField, PhaseEnsemble, Scenario

Sampler = Callable[[int, int], PhaseEnsemble]


def derived_seed(base: int, level: int, index: int) -> int:
    """Independent seed for the (level, index) cell of a study."""
    return int(np.random.SeedSequence([base, level, index]).generate_state(1)[0])


REF_INDEX = 2**31 - 1


def default_sampler(s: Scenario) -> Sampler:
    def sample(n: int, seed: int) -> PhaseEnsemble:
        return s.initial_ensemble(count=n, seed=seed)
    return sample


def _pmap(fun, items):
    workers = control_opt.thread_count()
    if workers <= 1 or len(items) < 2:
        return [fun(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fun, items))


@dataclass(frozen=True, eq=False)
class LimitStudyResult:
    levels: list
    n_ref: int
    seeds: list
    sup_w1: np.ndarray   # (levels, seeds)
    init_w1: np.ndarray  # (levels, seeds)
    cost: np.ndarray     # (levels, seeds)
    ref_cost: float
    ref_seed: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly increasing")
        if self.n_ref <= max(self.levels):
            raise ValueError("reference level must exceed every study level")

    @property
    def median_sup_w1(self) -> np.ndarray:
        return np.median(self.sup_w1, axis=1)

    @property
    def median_init_w1(self) -> np.ndarray:
        return np.median(self.init_w1, axis=1)

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels), "n_ref": self.n_ref, "seeds": list(self.seeds),
            "ref_seed": self.ref_seed, "ref_cost": self.ref_cost,
            "sup_w1": self.sup_w1.tolist(), "init_w1": self.init_w1.tolist(),
            "cost": self.cost.tolist(),
            "median_sup_w1": self.median_sup_w1.tolist(),
            "median_init_w1": self.median_init_w1.tolist(),
        }

    def curves_csv(self) -> str:
        buf = io.StringIO()
        buf.write("N,seed,sup_w1,init_w1,cost\n")
        for i, n in enumerate(self.levels):
            for j, seed in enumerate(self.seeds):
                buf.write(f"{n},{seed},{self.sup_w1[i, j]:.17g},{self.init_w1[i, j]:.17g},"
                          f"{self.cost[i, j]:.17g}\n")
        return buf.getvalue()


def limit_study(s: Scenario, levels: Sequence[int], f: ControlField, seeds: Sequence[int],
                n_ref: int, *, node_stride: int = 1, sampler: Optional[Sampler] = None,
                base_seed: Optional[int] = None) -> LimitStudyResult:
    """sup_t W1(mu_N(t), mu_ref(t)) for each level N and seed, under a fixed control.

    Each (level, seed) initial datum is drawn i.i.d. from the scenario's
    initial distribution; the reference is one level-n_ref discretization.
    """
    levels = [int(n) for n in levels]
    if not f.is_admissible(s.ell):
        raise ValueError("study control is not admissible")
    sampler = sampler or default_sampler(s)
    base = s.initial.seed if base_seed is None else base_seed
    ref_seed = derived_seed(base, n_ref, REF_INDEX)
    ref_traj = dynamics.integrate(s, f, sampler(n_ref, ref_seed))
    ref = meanfield.from_trajectory(ref_traj, s)
    ref_cost = control_opt.evaluate_cost(ref_traj, s, f).total

    def cell(item):
        n, k = item
        ens = sampler(n, derived_seed(base, n, k))
        traj = dynamics.integrate(s, f, ens)
        mt = meanfield.from_trajectory(traj, s)
        sup = meanfield.sup_w1(mt, ref, node_stride)
        init = meanfield.w1_distance(mt.measure(0), ref.measure(0))
        return sup, init, control_opt.evaluate_cost(traj, s, f).total

    items = [(n, k) for n in levels for k in seeds]
    out = np.array(_pmap(cell, items)).reshape(len(levels), len(seeds), 3)
    return LimitStudyResult(levels, int(n_ref), list(seeds), out[..., 0], out[..., 1], out[..., 2],
                            float(ref_cost), ref_seed)


@dataclass(frozen=True, eq=False)
class GammaStudyResult:
    levels: list
    n_ref: int
    seeds: list
    controls: list        # f*_N per level
    optimal_cost: np.ndarray   # J*_N
    ref_cost_of_opt: np.ndarray  # J_ref(f*_N)
    cross: np.ndarray     # cross[i, j] = J_{levels[j]}(f*_{levels[i]})
    fixed_control: ControlField
    fixed_cost: np.ndarray  # (levels, seeds) J_N(g)
    fixed_ref_cost: float   # J_ref(g)
    terminations: list

    def cross_minimality_gaps(self) -> np.ndarray:
        """cross[i, j] - J*_{levels[j]}; should be >= -tolerance."""
        return self.cross - self.optimal_cost[None, :]

    def limsup_adjacent_differences(self) -> np.ndarray:
        """Median over seeds of |J_{N_{i+1}}(g) - J_{N_i}(g)|."""
        return np.median(np.abs(np.diff(self.fixed_cost, axis=0)), axis=1)

    def limsup_ref_gaps(self) -> np.ndarray:
        return np.median(np.abs(self.fixed_cost - self.fixed_ref_cost), axis=1)

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels), "n_ref": self.n_ref, "seeds": list(self.seeds),
            "optimal_controls": [c.to_dict() for c in self.controls],
            "optimal_cost": self.optimal_cost.tolist(),
            "ref_cost_of_optimal": self.ref_cost_of_opt.tolist(),
            "cross_cost": self.cross.tolist(),
            "fixed_control": self.fixed_control.to_dict(),
            "fixed_cost": self.fixed_cost.tolist(),
            "fixed_ref_cost": self.fixed_ref_cost,
            "limsup_adjacent_differences": self.limsup_adjacent_differences().tolist(),
            "terminations": list(self.terminations),
        }

    def curves_csv(self) -> str:
        buf = io.StringIO()
        buf.write("N,seed,fixed_cost,optimal_cost,ref_cost_of_optimal\n")
        for i, n in enumerate(self.levels):
            for j, seed in enumerate(self.seeds):
                opt = f"{self.optimal_cost[i]:.17g}" if j == 0 else ""
                ref = f"{self.ref_cost_of_opt[i]:.17g}" if j == 0 else ""
                buf.write(f"{n},{seed},{self.fixed_cost[i, j]:.17g},{opt},{ref}\n")
        return buf.getvalue()


def gamma_study(s: Scenario, levels: Sequence[int], n_ref: int, seeds: Sequence[int], *,
                fixed_control: Optional[ControlField] = None, sampler: Optional[Sampler] = None,
                base_seed: Optional[int] = None, **opt_kwargs) -> GammaStudyResult:
    """Optimal costs per level and their cross-evaluations.

    Optimization runs on the first seed's discretization of each level. The
    liminf side evaluates each f*_N on the reference discretization and on
    every other level; the limsup side evaluates a fixed control g on all
    (level, seed) discretizations. Without an explicit g, the optimum of the
    largest level is used.
    """
    levels = [int(n) for n in levels]
    seeds = list(seeds)
    if n_ref <= max(levels):
        raise ValueError("reference level must exceed every study level")
    sampler = sampler or default_sampler(s)
    base = s.initial.seed if base_seed is None else base_seed
    opt_ens = {n: sampler(n, derived_seed(base, n, seeds[0])) for n in levels}
    ref_ens = sampler(n_ref, derived_seed(base, n_ref, REF_INDEX))

    reports = _pmap(lambda n: control_opt.optimize(s, ensemble=opt_ens[n], **opt_kwargs), levels)
    controls = [r.control for r in reports]
    optimal = np.array([r.cost.total for r in reports])

    def cost_on(f, ens):
        return control_opt.evaluate_cost(dynamics.integrate(s, f, ens), s, f).total

    ref_of_opt = np.array(_pmap(lambda f: cost_on(f, ref_ens), controls))
    pairs = [(i, j) for i in range(len(levels)) for j in range(len(levels))]
    cross = np.array(_pmap(lambda ij: cost_on(controls[ij[0]], opt_ens[levels[ij[1]]]), pairs))
    cross = cross.reshape(len(levels), len(levels))

    g = controls[-1] if fixed_control is None else fixed_control
    if not g.is_admissible(s.ell):
        raise ValueError("fixed control is not admissible")
    items = [(n, k) for n in levels for k in seeds]
    fixed = np.array(_pmap(lambda it: cost_on(g, sampler(it[0], derived_seed(base, it[0], it[1]))),
                           items)).reshape(len(levels), len(seeds))
    return GammaStudyResult(levels, int(n_ref), seeds, controls, optimal, ref_of_opt, cross, g,
                            fixed, float(cost_on(g, ref_ens)), [r.termination for r in reports])
