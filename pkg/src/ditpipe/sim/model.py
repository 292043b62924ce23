"""Inputs of the pipeline simulator."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields


class Variant(str, enum.Enum):
    COLOCATED_OFFLOAD = "ColocatedOffload"
    COLOCATED = "Colocated"
    DEDIVAE = "DeDiVAE"


class TextPlacement(str, enum.Enum):
    WITH_DENOISE = "with-denoise"
    WITH_DECODE = "with-decode"


def _check_nonnegative(obj):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{type(obj).__name__}.{f.name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class WorkloadSpec:
    """One batch of prompts to turn into videos."""

    width: int = 480
    height: int = 352
    frames: int = 97
    timesteps: int = 30
    prompts: int = 10
    heads: int = 24

    def __post_init__(self):
        for name in ("width", "height", "frames", "timesteps", "heads"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"WorkloadSpec.{name} must be >= 1")
        if self.prompts < 0:
            raise ValueError("WorkloadSpec.prompts must be >= 0")

    @property
    def latent_size(self) -> int:
        return self.width * self.height * self.frames

    @property
    def resolution(self) -> str:
        return f"{self.width}x{self.height}x{self.frames}"


@dataclass(frozen=True)
class CostModel:
    """Timing parameters, in seconds.

    ``t_linear`` and ``t_attention`` are per-timestep costs measured on a
    denoise group of ``n_ref`` GPUs; the simulator rescales them to the group
    size it actually runs.  ``t_a2a_head`` is the exchange cost of one local
    head per step; PipeSP hides ``overlap_fraction`` of it.
    """

    t_linear: float = 0.0
    t_attention: float = 0.0
    t_a2a_head: float = 0.0
    overlap_fraction: float = 0.0
    t_decode: float = 0.0
    t_offload: float = 0.0
    t_text: float = 0.0
    t_xfer: float = 0.0
    n_ref: int = 8

    def __post_init__(self):
        _check_nonnegative(self)
        if self.overlap_fraction > 1:
            raise ValueError("CostModel.overlap_fraction must be <= 1")
        if self.n_ref < 1:
            raise ValueError("CostModel.n_ref must be >= 1")

    def scaled(self, step: float = 1.0, fixed: float = 1.0) -> "CostModel":
        """Copy with per-step terms times ``step`` and per-prompt terms times ``fixed``."""
        return CostModel(
            t_linear=self.t_linear * step,
            t_attention=self.t_attention * step,
            t_a2a_head=self.t_a2a_head * step,
            overlap_fraction=self.overlap_fraction,
            t_decode=self.t_decode * fixed,
            t_offload=self.t_offload * fixed,
            t_text=self.t_text * fixed,
            t_xfer=self.t_xfer * fixed,
            n_ref=self.n_ref,
        )


@dataclass(frozen=True)
class MemoryModel:
    """Resident weights (GB) and activation cost (GB per latent unit)."""

    w_dit: float = 0.0
    w_vae: float = 0.0
    w_text: float = 0.0
    act_denoise_coeff: float = 0.0
    act_decode_coeff: float = 0.0
    gpu_budget: float = 48.0

    def __post_init__(self):
        _check_nonnegative(self)


@dataclass(frozen=True)
class ScheduleMode:
    variant: Variant = Variant.DEDIVAE
    pipesp: bool = False
    aco: bool = False
    text_encoder_placement: TextPlacement = TextPlacement.WITH_DENOISE

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "text_encoder_placement",
                           TextPlacement(self.text_encoder_placement))
        if self.aco and self.variant is not Variant.DEDIVAE:
            raise ValueError("aco requires the DeDiVAE variant")
        if (self.text_encoder_placement is TextPlacement.WITH_DECODE
                and self.variant is not Variant.DEDIVAE):
            raise ValueError("a separate decode group exists only in DeDiVAE")

    @property
    def decoupled(self) -> bool:
        return self.variant is Variant.DEDIVAE

    @property
    def label(self) -> str:
        parts = [self.variant.value]
        if self.pipesp:
            parts.append("PipeSP")
        if self.aco:
            parts.append("Aco")
        return "+".join(parts)


@dataclass(frozen=True)
class Partition:
    """GPU split into a denoise group and a decode group."""

    n_denoise: int
    n_decode: int

    def __post_init__(self):
        if self.n_denoise < 0 or self.n_decode < 0:
            raise ValueError("partition sizes must be >= 0")

    @property
    def n(self) -> int:
        return self.n_denoise + self.n_decode
