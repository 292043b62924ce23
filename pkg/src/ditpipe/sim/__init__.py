"""Discrete-event simulator of the decoupled video-generation pipeline."""

from .calibration import CalibrationError, CostFit, LinearFit, calibrate_linear, fit_cost_model
from .engine import (
    SimReport,
    SimulationError,
    StepCost,
    default_partition,
    serial_time,
    simulate,
    step_cost,
)
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
from .trace import (
    SimEvent,
    SimTrace,
    TraceError,
    to_chrome_events,
    validate_chrome_events,
    write_chrome_trace,
)

__all__ = [
    "CalibrationError", "CostFit", "LinearFit", "calibrate_linear", "fit_cost_model",
    "SimReport", "SimulationError", "StepCost", "default_partition", "serial_time",
    "simulate", "step_cost", "is_oom", "peak_memory", "per_gpu_peaks", "CostModel",
    "MemoryModel", "Partition", "ScheduleMode", "TextPlacement", "Variant", "WorkloadSpec",
    "SimEvent", "SimTrace", "TraceError", "to_chrome_events", "validate_chrome_events",
    "write_chrome_trace",
]
