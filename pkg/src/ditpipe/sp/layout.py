"""Head-order bookkeeping for per-head pipelined exchanges."""

from __future__ import annotations

from dataclasses import dataclass

from ..tensor import ShapeError, Tensor, concat, permute, view, zeros


@dataclass(frozen=True)
class HeadLayout:
    """Global head numbering for ``n`` ranks holding ``h`` heads each.

    Rank ``i`` owns global heads ``i*h .. i*h + h - 1``.  After a per-head
    pipelined exchange, the gathered head axis is ordered round-major: the
    slot ``j*n + i`` holds rank ``i``'s local head ``j``.
    """

    n: int
    h: int

    def __post_init__(self):
        if self.n < 1 or self.h < 1:
            raise ValueError("n and h must be >= 1")

    @property
    def heads(self) -> int:
        return self.n * self.h

    def k_orig(self, i: int, j: int) -> int:
        return i * self.h + j

    def k_mod(self, i: int, j: int) -> int:
        return j * self.n + i

    def interleaved_order(self) -> list:
        """Global head held at each slot of the interleaved layout."""
        order = [0] * self.heads
        for i in range(self.n):
            for j in range(self.h):
                order[self.k_mod(i, j)] = self.k_orig(i, j)
        return order


def layout_fix(t: Tensor, n: int, h: int) -> Tensor:
    """Restore head-contiguous order on a ``[..., n*h, D]`` tensor.

    Reads the head axis as ``[h, n]`` (round, source rank), swaps those two
    axes and merges them back, so slot ``i*h + j`` ends up holding global
    head ``i*h + j``.
    """
    if t.ndim < 2 or t.shape[-2] != n * h:
        raise ShapeError(f"head extent {t.shape[-2:-1]} does not equal n*h = {n * h}")
    lead = t.shape[:-2]
    d = t.shape[-1]
    x = view(t, (-1, h, n, d))
    x = permute(x, (0, 2, 1, 3))
    return view(x, lead + (n * h, d))


def pad_heads(heads: int, n_ranks: int) -> tuple:
    """Smallest multiple of ``n_ranks`` that is >= ``heads``, and the pad count."""
    if heads < 1 or n_ranks < 1:
        raise ValueError("heads and n_ranks must be >= 1")
    padded = -(-heads // n_ranks) * n_ranks
    return padded, padded - heads


def pad_head_axis(t: Tensor, padded: int, axis: int = 2) -> Tensor:
    """Append zero heads along ``axis`` up to ``padded`` heads."""
    extra = padded - t.shape[axis]
    if extra < 0:
        raise ShapeError("cannot pad to fewer heads")
    if extra == 0:
        return t
    shape = list(t.shape)
    shape[axis] = extra
    return concat([t, zeros(shape)], axis)
