"""In-process message fabric for simulated ranks.

A rank program is a generator.  It talks to the fabric by yielding
:class:`Send`, :class:`Recv` and :class:`Barrier` requests; the value sent
back into the generator for a ``Recv`` is the received payload.  The
fabric steps runnable ranks one request at a time.  With a seed, the next
rank is drawn at random from the runnable set, which lets tests explore
many legal interleavings.  Without a seed, the lowest runnable rank goes
first.

Channels are FIFO per ordered ``(src, dst)`` pair.  Sends never block.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, Generator, Optional


class FabricClosed(RuntimeError):
    """A rank waits on a channel that can never deliver."""


class Deadlock(RuntimeError):
    """No rank can make progress but some have not finished."""


@dataclass(frozen=True)
class Send:
    dst: int
    payload: Any


@dataclass(frozen=True)
class Recv:
    src: int


@dataclass(frozen=True)
class Barrier:
    ranks: tuple


RankProgram = Generator[Any, Any, Any]


class Fabric:
    def __init__(self, world_size: int, seed: Optional[int] = None):
        if world_size < 0:
            raise ValueError("world_size must be >= 0")
        self.world_size = world_size
        self.seed = seed
        self._channels: Dict[tuple, deque] = {}
        self._closed = False
        self.delivered = 0

    def close(self):
        self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed

    def _channel(self, src: int, dst: int) -> deque:
        return self._channels.setdefault((src, dst), deque())

    def _check_rank(self, r: int):
        if not 0 <= r < self.world_size:
            raise ValueError(f"rank {r} outside world of size {self.world_size}")

    def run(self, programs: Dict[int, RankProgram]) -> Dict[int, Any]:
        """Drive the given rank programs to completion; return their results."""
        if self._closed:
            raise FabricClosed("fabric is closed")
        for r in programs:
            self._check_rank(r)
        rng = random.Random(self.seed) if self.seed is not None else None

        pending: Dict[int, Any] = {}
        results: Dict[int, Any] = {}
        live = dict(programs)

        def advance(rank: int, value: Any = None):
            try:
                pending[rank] = live[rank].send(value)
            except StopIteration as stop:
                results[rank] = stop.value
                del live[rank]
                pending.pop(rank, None)

        for rank in sorted(live):
            advance(rank)

        while live:
            runnable = self._runnable(pending, live)
            if not runnable:
                self._raise_stuck(pending, live)
            if rng is None:
                rank = runnable[0]
            else:
                rank = rng.choice(runnable)
            req = pending[rank]
            if isinstance(req, Send):
                self._check_rank(req.dst)
                if self._closed:
                    raise FabricClosed("send on a closed fabric")
                self._channel(rank, req.dst).append(req.payload)
                advance(rank)
            elif isinstance(req, Recv):
                payload = self._channel(req.src, rank).popleft()
                self.delivered += 1
                advance(rank, payload)
            else:
                # Release every member of the barrier in rank order.
                for member in req.ranks:
                    advance(member)
        return results

    def _runnable(self, pending, live) -> list:
        runnable = []
        for rank in sorted(live):
            req = pending[rank]
            if isinstance(req, Send):
                runnable.append(rank)
            elif isinstance(req, Recv):
                self._check_rank(req.src)
                if self._channel(req.src, rank):
                    runnable.append(rank)
            elif isinstance(req, Barrier):
                if rank == min(req.ranks) and all(
                    m in live and pending.get(m) == req for m in req.ranks
                ):
                    runnable.append(rank)
            else:
                raise TypeError(f"rank {rank} yielded unsupported request {req!r}")
        return runnable

    def _raise_stuck(self, pending, live):
        for rank in sorted(live):
            req = pending[rank]
            if isinstance(req, Recv) and req.src not in live:
                raise FabricClosed(
                    f"rank {rank} waits on rank {req.src}, which has finished"
                )
        raise Deadlock(f"ranks {sorted(live)} are blocked: {pending}")


@dataclass
class RankGroup:
    """A named, ordered subset of fabric ranks.

    ``busy`` marks a group that is occupied by other work; the attention
    co-processor refuses to borrow a busy group.
    """

    fabric: Fabric
    ranks: tuple
    name: str = "group"
    busy: bool = False

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        if len(set(self.ranks)) != len(self.ranks):
            raise ValueError("duplicate ranks in group")
        for r in self.ranks:
            self.fabric._check_rank(r)

    @property
    def n(self) -> int:
        return len(self.ranks)

    def index(self, rank: int) -> int:
        return self.ranks.index(rank)

    def run(self, make_program) -> list:
        """Run ``make_program(local_index, global_rank)`` on every member."""
        results = self.fabric.run(
            {r: make_program(i, r) for i, r in enumerate(self.ranks)}
        )
        return [results[r] for r in self.ranks]


def make_group(n: int, seed: Optional[int] = None, name: str = "group") -> RankGroup:
    return RankGroup(Fabric(n, seed), tuple(range(n)), name)


def make_split_groups(n_first: int, n_second: int, seed: Optional[int] = None):
    """Two disjoint groups sharing one fabric: ranks ``0..n_first-1`` and the rest."""
    fabric = Fabric(n_first + n_second, seed)
    first = RankGroup(fabric, tuple(range(n_first)), "denoise")
    second = RankGroup(fabric, tuple(range(n_first, n_first + n_second)), "decode")
    return first, second
