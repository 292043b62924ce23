"""Sharded tensors and the all-to-all collective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from ..tensor import ShapeError, Tensor, concat, split
from .fabric import Barrier, RankGroup, Recv, Send

SEQUENCE = "sequence"
HEAD = "head"

# Axis positions in the [B, S, H, D] carrier layout.
SEQ_AXIS = 1
HEAD_AXIS = 2


class DivisibilityError(ShapeError):
    """An extent does not split evenly across ranks."""


def even_sizes(extent: int, parts: int) -> list:
    """Near-equal split of ``extent``; the first ``extent % parts`` pieces get one extra."""
    if parts < 1:
        raise ValueError("parts must be >= 1")
    base, extra = divmod(extent, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


@dataclass(frozen=True)
class ShardedTensor:
    """Per-rank pieces of one logical tensor, cut along ``axis``.

    ``kind`` records what the cut axis means (``"sequence"`` or ``"head"``).
    """

    shards: tuple
    axis: int
    kind: str = SEQUENCE

    def __post_init__(self):
        shards = tuple(self.shards)
        object.__setattr__(self, "shards", shards)
        if not shards:
            raise ShapeError("a sharded tensor needs at least one shard")
        ndim = shards[0].ndim
        if not 0 <= self.axis < ndim:
            raise ShapeError(f"partition axis {self.axis} out of range")
        for s in shards:
            if s.ndim != ndim or any(
                a != b
                for i, (a, b) in enumerate(zip(s.shape, shards[0].shape))
                if i != self.axis
            ):
                raise ShapeError("shards disagree outside the partition axis")
        extents = [s.shape[self.axis] for s in shards]
        if max(extents) - min(extents) > 1:
            raise ShapeError(f"unbalanced shard extents {extents}")

    @property
    def n(self) -> int:
        return len(self.shards)

    @property
    def extents(self) -> list:
        return [s.shape[self.axis] for s in self.shards]

    @property
    def logical_shape(self) -> tuple:
        shape = list(self.shards[0].shape)
        shape[self.axis] = sum(self.extents)
        return tuple(shape)

    def gather(self) -> Tensor:
        return concat(self.shards, self.axis)

    @classmethod
    def shard(cls, t: Tensor, n: int, axis: int, kind: str = SEQUENCE) -> "ShardedTensor":
        return cls(tuple(split(t, axis, even_sizes(t.shape[axis], n))), axis, kind)


def exchange(group: RankGroup, me: int, chunks: Sequence):
    """Rank-side all-to-all of arbitrary payloads.

    ``chunks[d]`` goes to the ``d``-th member of ``group``.  Returns the list
    of payloads received, in source-member order.  Ends with a group barrier.
    """
    if len(chunks) != group.n:
        raise ValueError(f"need {group.n} chunks, got {len(chunks)}")
    for dst, chunk in zip(group.ranks, chunks):
        yield Send(dst, chunk)
    received = []
    for src in group.ranks:
        received.append((yield Recv(src)))
    yield Barrier(group.ranks)
    return received


def _split_sizes(extent: int, n: int, sizes: Optional[Sequence[int]]) -> list:
    if sizes is not None:
        sizes = list(sizes)
        if len(sizes) != n or sum(sizes) != extent:
            raise ShapeError(f"split sizes {sizes} do not cover {extent} over {n} ranks")
        return sizes
    if extent % n:
        raise DivisibilityError(f"extent {extent} is not divisible by {n} ranks")
    return [extent // n] * n


def all_to_all_local(group: RankGroup, me: int, local: Tensor, split_axis: int,
                     concat_axis: int, split_sizes: Optional[Sequence[int]] = None):
    """Rank-side all-to-all of one tensor.

    Splits ``local`` into ``group.n`` pieces along ``split_axis``, sends piece
    ``d`` to member ``d``, and concatenates what arrives along ``concat_axis``
    in source order.
    """
    sizes = _split_sizes(local.shape[split_axis], group.n, split_sizes)
    received = yield from exchange(group, me, split(local, split_axis, sizes))
    return concat(received, concat_axis)


def all_to_all(group: RankGroup, x: ShardedTensor, split_axis: int, concat_axis: int,
               split_sizes: Optional[Sequence[int]] = None,
               kind: Optional[str] = None) -> ShardedTensor:
    """Collective all-to-all over ``group``.

    Rank ``r`` ends with the concatenation, in source-rank order, of every
    rank's ``r``-th chunk along ``concat_axis``.  ``split_sizes`` allows an
    uneven cut; without it the split axis must divide evenly.
    """
    if x.n != group.n:
        raise ShapeError(f"{x.n} shards for a group of {group.n}")
    for shard in x.shards:
        _split_sizes(shard.shape[split_axis], group.n, split_sizes)
    if kind is None:
        if split_axis == concat_axis:
            kind = x.kind
        else:
            kind = HEAD if x.kind == SEQUENCE else SEQUENCE
    outs = group.run(
        lambda i, r: all_to_all_local(group, i, x.shards[i], split_axis, concat_axis,
                                      split_sizes)
    )
    return ShardedTensor(tuple(outs), split_axis, kind)
