"""Discrete-event simulation of multi-prompt video generation.

All prompts arrive at time 0.  The denoise group serves them one after
another: text encoding, ``timesteps`` denoise steps, then the latent goes
into a shared FIFO queue.  In DeDiVAE modes a pool of decode GPUs drains
that queue, one whole latent per GPU.  In colocated modes the same GPUs
decode, after an optional weight swap.

Simultaneous events are handled in ``(time, prompt, kind, gpu)`` order.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional

from .memory import is_oom, peak_memory, per_gpu_peaks
from .model import (
    CostModel,
    MemoryModel,
    Partition,
    ScheduleMode,
    TextPlacement,
    Variant,
    WorkloadSpec,
)
from .trace import SimTrace

# Trace kinds, in tie-break order.
TEXT = "text_encode"
DENOISE = "denoise_step"
LATENT = "latent_handoff"
OFFLOAD = "offload"
DECODE = "decode"
ACO = "aco_attention"
KIND_ORDER = {TEXT: 0, DENOISE: 1, LATENT: 2, OFFLOAD: 3, DECODE: 4, ACO: 5}


class SimulationError(ValueError):
    """Invalid simulator inputs."""


class StepCost(NamedTuple):
    linear: float
    attention: float
    comm: float

    @property
    def total(self) -> float:
        return self.linear + self.attention + self.comm


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def step_cost(c: CostModel, w: WorkloadSpec, mode: ScheduleMode, part: Partition,
              co_processing: bool) -> StepCost:
    """Duration split of one denoise step on the denoise group.

    Linear work scales as ``n_ref / n_denoise``.  Attention time follows
    the padded per-GPU head count: ``ceil(H / n_denoise)`` heads normally,
    ``ceil(H / N)`` when the decode group co-processes.
    """
    nd = part.n_denoise
    heads = w.heads
    per_head = c.t_attention * c.n_ref / heads
    linear = c.t_linear * c.n_ref / nd
    workers = part.n if co_processing else nd
    attention = per_head * _ceil_div(heads, workers)
    hidden = c.overlap_fraction if mode.pipesp else 0.0
    comm = _ceil_div(heads, nd) * c.t_a2a_head * (1.0 - hidden)
    if co_processing:
        comm += c.t_xfer
    return StepCost(linear, attention, comm)


@dataclass
class SimReport:
    latencies: List[float]
    makespan: float
    busy_fraction: List[float]
    peak_memory: List[float]
    oom: bool
    busy_time: List[float] = field(default_factory=list)
    aco_steps: int = 0
    mode: str = ""
    partition: tuple = (0, 0)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "partition": {"n_denoise": self.partition[0], "n_decode": self.partition[1]},
            "makespan_s": self.makespan,
            "latencies_s": list(self.latencies),
            "mean_latency_s": (sum(self.latencies) / len(self.latencies)
                               if self.latencies else 0.0),
            "busy_time_s": list(self.busy_time),
            "busy_fraction": list(self.busy_fraction),
            "peak_memory_gb": list(self.peak_memory),
            "oom": self.oom,
            "aco_steps": self.aco_steps,
        }


def validate_inputs(w: WorkloadSpec, c: CostModel, mode: ScheduleMode, part: Partition):
    if part.n_denoise < 1:
        raise SimulationError("the denoise group needs at least one GPU")
    if mode.decoupled:
        if part.n_decode < 1:
            raise SimulationError("DeDiVAE needs at least one decode GPU")
    elif part.n_decode != 0:
        raise SimulationError(f"{mode.variant.value} runs without a decode group")
    if mode.aco and part.n_decode == 0:
        raise SimulationError("aco needs a decode group")


class _Run:
    def __init__(self, w, c, mode, part):
        self.w, self.c, self.mode, self.part = w, c, mode, part
        self.trace = SimTrace()
        self.assigned: Dict[int, float] = {g: 0.0 for g in range(part.n)}
        self.latency: Dict[int, float] = {}
        self.aco_steps = 0
        self.den_gpus = list(range(part.n_denoise))
        self.dec_gpus = list(range(part.n_denoise, part.n))
        for g in self.den_gpus:
            self.trace.groups[g] = "denoise" if mode.decoupled else "colocated"
        for g in self.dec_gpus:
            self.trace.groups[g] = "decode"
        self._heap = []
        self._seq = itertools.count()

    def record(self, gpus, kind, start, end, prompt):
        for g in gpus:
            self.trace.add(g, kind, start, end, prompt)
            self.assigned[g] += end - start

    def push(self, time, prompt, kind, gpu, action, *args):
        heapq.heappush(self._heap, (time, prompt, KIND_ORDER[kind], gpu, next(self._seq),
                                    action, args))

    def drain(self):
        while self._heap:
            time, _, _, _, _, action, args = heapq.heappop(self._heap)
            action(time, *args)

    # Colocated: one group does everything, strictly in sequence.
    def run_colocated(self):
        w, c = self.w, self.c
        gpus = self.den_gpus
        cost = step_cost(c, w, self.mode, self.part, False).total
        t = 0.0
        for p in range(w.prompts):
            self.record(gpus, TEXT, t, t + c.t_text, p)
            t += c.t_text
            for _ in range(w.timesteps):
                self.record(gpus, DENOISE, t, t + cost, p)
                t += cost
            if self.mode.variant is Variant.COLOCATED_OFFLOAD:
                self.record(gpus, OFFLOAD, t, t + c.t_offload, p)
                t += c.t_offload
            self.record(gpus, DECODE, t, t + c.t_decode, p)
            t += c.t_decode
            self.latency[p] = t

    # DeDiVAE: serial denoise group, data-parallel decode pool.
    def run_decoupled(self):
        w, c = self.w, self.c
        self.queue = deque()
        self.free_at = {g: 0.0 for g in self.dec_gpus}
        self.text_ready = {}
        self.waiting_for_text = None
        self.text_on_decode = self.mode.text_encoder_placement is TextPlacement.WITH_DECODE
        self.cost_plain = step_cost(c, w, self.mode, self.part, False)
        self.cost_aco = step_cost(c, w, self.mode, self.part, True)
        if w.prompts == 0:
            return
        if self.text_on_decode:
            for p in range(w.prompts):
                self.queue.append((TEXT, p, c.t_text))
            self.dispatch(0.0)
        self.push(0.0, 0, TEXT, -1, self.begin_prompt, 0)
        self.drain()

    def decode_idle(self, t: float) -> bool:
        return not self.queue and all(self.free_at[g] <= t for g in self.dec_gpus)

    def dispatch(self, t: float):
        for g in self.dec_gpus:
            if not self.queue:
                return
            if self.free_at[g] > t:
                continue
            kind, p, dur = self.queue.popleft()
            self.record([g], kind, t, t + dur, p)
            self.free_at[g] = t + dur
            self.push(t + dur, p, kind, g, self.decode_done, g, kind, p)

    def decode_done(self, t, g, kind, p):
        if kind == DECODE:
            self.latency[p] = t
        elif kind == TEXT:
            self.text_ready[p] = t + self.c.t_xfer
            if self.waiting_for_text == p:
                self.waiting_for_text = None
                self.push(self.text_ready[p], p, DENOISE, -1, self.step, p, 0)
        self.dispatch(t)

    def begin_prompt(self, t, p):
        if self.text_on_decode:
            ready = self.text_ready.get(p)
            if ready is None:
                self.waiting_for_text = p
                return
            self.push(max(t, ready), p, DENOISE, -1, self.step, p, 0)
            return
        self.record(self.den_gpus, TEXT, t, t + self.c.t_text, p)
        self.push(t + self.c.t_text, p, DENOISE, -1, self.step, p, 0)

    def step(self, t, p, k):
        co = self.mode.aco and self.decode_idle(t)
        cost = self.cost_aco if co else self.cost_plain
        end = t + cost.total
        self.record(self.den_gpus, DENOISE, t, end, p)
        if co:
            self.aco_steps += 1
            # Decode GPUs do the shipped heads once Q/K/V arrive, and stay
            # reserved until the step completes.
            # Clamp so rounding never pushes the span past the step end.
            a0 = min(t + cost.linear + self.c.t_xfer, end)
            self.record(self.dec_gpus, ACO, a0, min(a0 + cost.attention, end), p)
            for g in self.dec_gpus:
                self.free_at[g] = end
                self.push(end, p, ACO, g, self.decode_done, g, ACO, p)
        if k + 1 < self.w.timesteps:
            self.push(end, p, DENOISE, -1, self.step, p, k + 1)
        else:
            self.push(end + self.c.t_xfer, p, LATENT, -1, self.enqueue, p)
            if p + 1 < self.w.prompts:
                self.push(end, p + 1, TEXT, -1, self.begin_prompt, p + 1)

    def enqueue(self, t, p):
        self.queue.append((DECODE, p, self.c.t_decode))
        self.dispatch(t)


def simulate(w: WorkloadSpec, c: CostModel, m: Optional[MemoryModel], mode: ScheduleMode,
             part: Partition, validate: bool = True):
    """Run one scenario; return ``(SimReport, SimTrace)``.

    With ``validate`` (the default) the trace is checked for overlapping
    intervals and against the per-GPU work ledger before returning.
    """
    validate_inputs(w, c, mode, part)
    run = _Run(w, c, mode, part)
    if mode.decoupled:
        run.run_decoupled()
    else:
        run.run_colocated()
    if validate:
        run.trace.validate(run.assigned)

    latencies = [run.latency[p] for p in range(w.prompts)]
    makespan = max((ev.end for ev in run.trace.events), default=0.0)
    busy = [run.assigned[g] for g in range(part.n)]
    frac = [min(1.0, b / makespan) if makespan > 0 else 0.0 for b in busy]
    if m is None:
        peaks, oom = [0.0] * part.n, False
    else:
        roles = peak_memory(m, w, mode, part)
        peaks, oom = per_gpu_peaks(roles, part), is_oom(roles, m)
    report = SimReport(latencies, makespan, frac, peaks, oom, busy, run.aco_steps,
                       mode.label, (part.n_denoise, part.n_decode))
    return report, run.trace


def default_partition(mode: ScheduleMode, n_gpus: int) -> Partition:
    """Whole machine for colocated modes; one decode GPU for DeDiVAE."""
    if mode.decoupled:
        return Partition(n_gpus - 1, 1)
    return Partition(n_gpus, 0)


def serial_time(w: WorkloadSpec, c: CostModel, mode: ScheduleMode, part: Partition) -> float:
    """Per-prompt denoise + decode time with no pipelining at all."""
    step = step_cost(c, w, mode, part, False).total
    return c.t_text + w.timesteps * step + c.t_xfer + c.t_decode


def colocated_makespan(w: WorkloadSpec, c: CostModel, offload: bool, n_gpus: int) -> float:
    """Closed form of the colocated timeline, used as a cross-check."""
    mode = ScheduleMode(Variant.COLOCATED_OFFLOAD if offload else Variant.COLOCATED)
    step = step_cost(c, w, mode, Partition(n_gpus, 0), False).total
    per_prompt = c.t_text + w.timesteps * step + c.t_decode + (c.t_offload if offload else 0.0)
    return w.prompts * per_prompt

