"""Choosing the denoise/decode GPU split."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from .sim.engine import simulate
from .sim.model import CostModel, MemoryModel, Partition, ScheduleMode, Variant, WorkloadSpec


def closed_form_partition(t_denoise: float, t_decode: float, n: int) -> Partition:
    """Balance split: ``N_decode = ceil(T_decode / (T_decode + T_denoise) * N)``.

    ``t_denoise`` is the single-GPU denoise time of one prompt, ``t_decode``
    the single-GPU decode time of one latent.  The result is clamped so both
    groups keep at least one GPU.
    """
    if t_denoise <= 0 or t_decode <= 0:
        raise ValueError("stage times must be positive")
    if n < 2:
        raise ValueError("need at least two GPUs to split")
    # Exact rational arithmetic so ratios like 10/80 * 8 land on integers.
    share = Fraction(t_decode) / (Fraction(t_decode) + Fraction(t_denoise)) * n
    n_decode = min(max(math.ceil(share), 1), n - 1)
    return Partition(n - n_decode, n_decode)


def brute_force_partition(w: WorkloadSpec, c: CostModel, m: Optional[MemoryModel],
                          mode: ScheduleMode, n_gpus: int):
    """Simulate every split and keep the fastest.

    Returns ``(best, makespans)`` where ``makespans`` maps ``n_decode`` to
    the simulated makespan.  Ties go to the larger denoise group.
    """
    if not mode.decoupled:
        raise ValueError("partition search applies to DeDiVAE modes only")
    if n_gpus < 2:
        raise ValueError("need at least two GPUs to split")
    if w.prompts < 2 * n_gpus:
        raise ValueError(f"need >= {2 * n_gpus} prompts to reach steady state")
    table = {}
    for n_decode in range(1, n_gpus):
        report, _ = simulate(w, c, m, mode, Partition(n_gpus - n_decode, n_decode))
        table[n_decode] = report.makespan
    best = min(table, key=lambda k: (table[k], k))
    best_time = table[best]
    # Treat rounding-level differences as ties.
    for k in sorted(table):
        if table[k] <= best_time * (1 + 1e-12):
            best = k
            break
    return Partition(n_gpus - best, best), table


def stage_time_scenario(t_denoise: float, t_decode: float, n_gpus: int, prompts: int,
                        heads: Optional[int] = None):
    """Workload and costs whose single-GPU stage times are exactly the inputs.

    The head count defaults to ``lcm(1..n_gpus-1)`` so that no denoise group
    size pays for head padding.
    """
    if heads is None:
        heads = math.lcm(*range(1, n_gpus))
    w = WorkloadSpec(timesteps=1, prompts=prompts, heads=heads)
    c = CostModel(t_linear=0.25 * t_denoise, t_attention=0.75 * t_denoise,
                  t_decode=t_decode, n_ref=1)
    return w, c


@dataclass(frozen=True)
class GridPoint:
    t_denoise: float
    t_decode: float
    closed_form: int
    brute_force: int

    @property
    def gap(self) -> int:
        return abs(self.closed_form - self.brute_force)


def agreement_grid(n_gpus: int = 8, size: int = 20, lo: float = 1.0, hi: float = 1000.0,
                   prompts: int = 16, mode: Optional[ScheduleMode] = None) -> list:
    """Closed form vs brute force on a log-spaced ``size x size`` stage-time grid."""
    mode = mode or ScheduleMode(Variant.DEDIVAE)
    points = []
    for t_den in np.geomspace(lo, hi, size):
        for t_dec in np.geomspace(lo, hi, size):
            w, c = stage_time_scenario(float(t_den), float(t_dec), n_gpus, prompts)
            best, _ = brute_force_partition(w, c, None, mode, n_gpus)
            cf = closed_form_partition(float(t_den), float(t_dec), n_gpus)
            points.append(GridPoint(float(t_den), float(t_dec), cf.n_decode, best.n_decode))
    return points


def with_timesteps(w: WorkloadSpec, timesteps: int) -> WorkloadSpec:
    return replace(w, timesteps=timesteps)
