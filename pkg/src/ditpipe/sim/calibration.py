"""Fitting simulator costs to measured end-to-end latencies."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from .engine import simulate
from .model import CostModel, Partition, ScheduleMode, WorkloadSpec


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class LinearFit:
    per_step: float
    fixed: float

    def predict(self, timesteps: float) -> float:
        return self.fixed + self.per_step * timesteps


def calibrate_linear(lat_a: Tuple[float, float], lat_b: Tuple[float, float]) -> LinearFit:
    """Line ``latency = fixed + per_step * timesteps`` through two observations."""
    (ta, la), (tb, lb) = lat_a, lat_b
    if ta == tb:
        raise CalibrationError("the two observations need distinct timestep counts")
    if la <= 0 or lb <= 0:
        raise CalibrationError("latencies must be positive")
    per_step = (lb - la) / (tb - ta)
    return LinearFit(per_step, la - per_step * ta)


@dataclass(frozen=True)
class CostFit:
    cost: CostModel
    step_scale: float
    fixed_scale: float
    residual: float  # max relative miss at the two anchors


def _makespan(w, c, mode, part, timesteps):
    report, _ = simulate(replace(w, timesteps=timesteps), c, None, mode, part)
    return report.makespan


def fit_cost_model(template: CostModel, w: WorkloadSpec, mode: ScheduleMode,
                   part: Partition, obs_a: Tuple[float, float], obs_b: Tuple[float, float],
                   max_iter: int = 60, tol: float = 1e-10) -> CostFit:
    """Scale ``template`` so the simulated makespan hits both observations.

    Per-step terms are multiplied by one factor and per-prompt terms by
    another; the two factors are found with a damped Newton iteration on the
    simulated makespans (finite-difference Jacobian).  The template fixes the
    proportions within each group of terms.
    """
    (ta, la), (tb, lb) = obs_a, obs_b
    calibrate_linear(obs_a, obs_b)
    target = np.array([la, lb], dtype=float)

    def residual(x):
        c = template.scaled(step=float(x[0]), fixed=float(x[1]))
        got = np.array([_makespan(w, c, mode, part, ta), _makespan(w, c, mode, part, tb)])
        return got - target

    # Makespan is close to linear in the two factors; solve that system first.
    both = residual(np.array([1.0, 1.0])) + target
    steps_only = residual(np.array([1.0, 0.0])) + target
    basis = np.column_stack([steps_only, both - steps_only])
    try:
        x = np.maximum(np.linalg.solve(basis, target), 0.0)
    except np.linalg.LinAlgError:
        x = np.array([1.0, 1.0])

    r = residual(x)
    for _ in range(max_iter):
        if np.max(np.abs(r) / target) < tol:
            break
        jac = np.empty((2, 2))
        for j in range(2):
            h = 1e-6 * max(1.0, abs(x[j]))
            xp = x.copy()
            xp[j] += h
            jac[:, j] = (residual(xp) - r) / h
        try:
            delta = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(jac, -r, rcond=None)[0]
        step = 1.0
        improved = False
        while step >= 1e-4:
            cand = np.maximum(x + step * delta, 0.0)
            rc = residual(cand)
            if np.linalg.norm(rc) < np.linalg.norm(r):
                improved = True
                break
            step *= 0.5
        if not improved:
            # Makespan is piecewise linear (Aco switches on and off); no
            # descent direction left means we sit on a kink.
            break
        x, r = cand, rc
    return CostFit(template.scaled(step=float(x[0]), fixed=float(x[1])), float(x[0]), float(x[1]),
                   float(np.max(np.abs(r) / target)))
