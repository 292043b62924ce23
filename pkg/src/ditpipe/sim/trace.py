"""Simulation traces and their Chrome trace-event export."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional


class TraceError(AssertionError):
    """A trace breaks a structural invariant."""


class SimEvent(NamedTuple):
    gpu: int
    kind: str
    start: float
    end: float
    prompt: int

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class SimTrace:
    events: List[SimEvent] = field(default_factory=list)
    # GPU id -> group name, used as the Chrome "process".
    groups: Dict[int, str] = field(default_factory=dict)

    def add(self, gpu: int, kind: str, start: float, end: float, prompt: int):
        self.events.append(SimEvent(gpu, kind, start, end, prompt))

    def by_gpu(self) -> Dict[int, List[SimEvent]]:
        lanes = defaultdict(list)
        for ev in self.events:
            lanes[ev.gpu].append(ev)
        for lane in lanes.values():
            lane.sort(key=lambda e: (e.start, e.end))
        return dict(lanes)

    def busy_time(self) -> Dict[int, float]:
        busy = defaultdict(float)
        for ev in self.events:
            busy[ev.gpu] += ev.duration
        return dict(busy)

    def check_times(self):
        for ev in self.events:
            if not (math.isfinite(ev.start) and math.isfinite(ev.end)):
                raise TraceError(f"non-finite time in {ev}")
            if ev.start < 0 or ev.end < ev.start:
                raise TraceError(f"bad interval {ev}")

    def check_no_overlap(self, tol: float = 1e-9):
        for gpu, lane in self.by_gpu().items():
            for prev, cur in zip(lane, lane[1:]):
                if cur.start < prev.end - tol * max(1.0, abs(prev.end)):
                    raise TraceError(f"GPU {gpu}: {prev} overlaps {cur}")

    def check_work_conservation(self, assigned: Dict[int, float], rel: float = 1e-9):
        busy = self.busy_time()
        for gpu in set(busy) | set(assigned):
            a, b = assigned.get(gpu, 0.0), busy.get(gpu, 0.0)
            if abs(a - b) > rel * max(1.0, abs(a)):
                raise TraceError(f"GPU {gpu}: trace busy {b} != assigned work {a}")

    def validate(self, assigned: Optional[Dict[int, float]] = None):
        self.check_times()
        self.check_no_overlap()
        if assigned is not None:
            self.check_work_conservation(assigned)


US_PER_S = 1e6


def to_chrome_events(trace: SimTrace) -> list:
    """Begin/end event list: one process per GPU group, one thread per GPU."""
    group_names = sorted(set(trace.groups.values())) or ["gpus"]
    pid_of = {name: i for i, name in enumerate(group_names)}
    out = []
    for name, pid in pid_of.items():
        out.append({"name": "process_name", "ph": "M", "pid": pid, "tid": 0,
                    "args": {"name": name}})
    lanes = trace.by_gpu()
    for gpu in sorted(set(lanes) | set(trace.groups)):
        pid = pid_of[trace.groups.get(gpu, group_names[0])]
        out.append({"name": "thread_name", "ph": "M", "pid": pid, "tid": gpu,
                    "args": {"name": f"gpu{gpu}"}})
        for ev in lanes.get(gpu, []):
            common = {"name": ev.kind, "cat": ev.kind, "pid": pid, "tid": gpu}
            out.append({**common, "ph": "B", "ts": ev.start * US_PER_S,
                        "args": {"prompt": ev.prompt}})
            out.append({**common, "ph": "E", "ts": ev.end * US_PER_S})
    return out


def write_chrome_trace(trace: SimTrace, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_chrome_events(trace), fh)


def validate_chrome_events(events: Iterable[dict]) -> int:
    """Check pairing and per-lane clock monotonicity; return the span count."""
    stacks = defaultdict(list)
    last_ts = {}
    spans = 0
    for ev in events:
        ph = ev.get("ph")
        if ph == "M":
            continue
        lane = (ev["pid"], ev["tid"])
        ts = ev["ts"]
        if not isinstance(ts, (int, float)) or not math.isfinite(ts) or ts < 0:
            raise TraceError(f"bad timestamp in {ev}")
        if lane in last_ts and ts < last_ts[lane]:
            raise TraceError(f"clock goes backwards on lane {lane}")
        last_ts[lane] = ts
        if ph == "B":
            stacks[lane].append(ev["name"])
        elif ph == "E":
            if not stacks[lane]:
                raise TraceError(f"unmatched end on lane {lane}")
            if stacks[lane].pop() != ev["name"]:
                raise TraceError(f"mismatched end on lane {lane}")
            spans += 1
        elif ph == "X":
            if ev.get("dur", -1) < 0:
                raise TraceError(f"complete event without duration: {ev}")
            spans += 1
        else:
            raise TraceError(f"unsupported phase {ph!r}")
    open_lanes = [lane for lane, st in stacks.items() if st]
    if open_lanes:
        raise TraceError(f"unclosed spans on lanes {open_lanes}")
    return spans
