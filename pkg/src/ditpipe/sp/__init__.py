"""Simulated sequence-parallel attention engine."""

from .attention import (
    DecodeGroupBusy,
    aco_attention,
    head_carriers,
    local_heads_attention,
    pipesp_attention,
    reference_attention,
    sequence_parallel_attention,
    ulysses_attention,
)
from .collectives import (
    HEAD,
    HEAD_AXIS,
    SEQ_AXIS,
    SEQUENCE,
    DivisibilityError,
    ShardedTensor,
    all_to_all,
    even_sizes,
)
from .fabric import Deadlock, Fabric, FabricClosed, RankGroup, make_group, make_split_groups
from .layout import HeadLayout, layout_fix, pad_head_axis, pad_heads

__all__ = [
    "DecodeGroupBusy", "aco_attention", "head_carriers", "local_heads_attention",
    "pipesp_attention", "reference_attention", "sequence_parallel_attention",
    "ulysses_attention", "HEAD", "HEAD_AXIS", "SEQ_AXIS", "SEQUENCE",
    "DivisibilityError", "ShardedTensor", "all_to_all", "even_sizes", "Deadlock",
    "Fabric", "FabricClosed", "RankGroup", "make_group", "make_split_groups",
    "HeadLayout", "layout_fix", "pad_head_axis", "pad_heads",
]
