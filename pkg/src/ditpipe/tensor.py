"""Small dense float64 tensor library with a fixed arithmetic order.

Every routine here materializes its result as a fresh contiguous row-major
buffer, and every reduction accumulates from the lowest index upward using
plain elementwise adds.  Two calls with equal inputs and equal shapes
therefore produce bit-identical outputs, no matter which code path produced
the inputs.  The sequence-parallel engine leans on this to compare its
attention paths with exact equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "MaskError",
    "Tensor",
    "tensor",
    "zeros",
    "arange",
    "view",
    "permute",
    "inverse_permutation",
    "concat",
    "split",
    "take",
    "select",
    "matmul",
    "softmax",
    "sdp_attention",
    "multi_head_attention",
    "head_mask",
]


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


class MaskError(ValueError):
    """Raised for masks that cannot broadcast or that block a whole row."""


def _numel(shape: Sequence[int]) -> int:
    return math.prod(shape)


@dataclass(frozen=True, eq=False)
class Tensor:
    """Row-major float64 array.

    ``data`` is always a flat, contiguous, read-only buffer whose length is
    ``prod(shape)``.
    """

    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if any(s < 0 for s in shape):
            raise ShapeError(f"negative extent in shape {shape}")
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != _numel(shape):
            raise ShapeError(
                f"data length {data.size} does not match shape {shape}"
            )
        data.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", data)

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        """Read-only ndarray view with this tensor's shape."""
        return self.data.reshape(self.shape)

    def tolist(self):
        return self.numpy().tolist()

    def equal(self, other: "Tensor") -> bool:
        """Exact equality of shape and every element (NaNs never equal)."""
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def tensor(values) -> Tensor:
    arr = np.asarray(values, dtype=np.float64)
    return Tensor(arr.shape, arr.reshape(-1).copy())


def _wrap(arr: np.ndarray) -> Tensor:
    # Copy so the result owns a fresh contiguous buffer.
    return Tensor(arr.shape, np.array(arr, dtype=np.float64, order="C").reshape(-1))


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(tuple(shape), np.zeros(_numel(shape)))


def arange(shape: Sequence[int]) -> Tensor:
    """Tensor whose elements are their own flat indices; handy as labels."""
    return Tensor(tuple(shape), np.arange(_numel(shape), dtype=np.float64))


def view(t: Tensor, new_shape: Sequence[int]) -> Tensor:
    """Reinterpret the flat data with a new shape.  One extent may be -1."""
    new_shape = [int(s) for s in new_shape]
    if new_shape.count(-1) > 1:
        raise ShapeError("only one extent may be inferred")
    if -1 in new_shape:
        known = _numel([s for s in new_shape if s != -1])
        if known == 0 or t.size % known:
            raise ShapeError(f"cannot view {t.shape} as {tuple(new_shape)}")
        new_shape[new_shape.index(-1)] = t.size // known
    if _numel(new_shape) != t.size:
        raise ShapeError(f"cannot view {t.shape} as {tuple(new_shape)}")
    return Tensor(tuple(new_shape), t.data)


def inverse_permutation(axes: Sequence[int]) -> tuple:
    inv = [0] * len(axes)
    for pos, ax in enumerate(axes):
        inv[ax] = pos
    return tuple(inv)


def permute(t: Tensor, axes: Sequence[int]) -> Tensor:
    """``out[idx] == t[idx permuted by axes]``, materialized contiguously."""
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ShapeError(f"{axes} is not a permutation of 0..{t.ndim - 1}")
    return _wrap(np.transpose(t.numpy(), axes))


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def concat(ts: Sequence[Tensor], axis: int) -> Tensor:
    ts = list(ts)
    if not ts:
        raise ShapeError("concat needs at least one tensor")
    ndim = ts[0].ndim
    axis = _norm_axis(axis, ndim)
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != ndim or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis
        ):
            raise ShapeError(f"ragged concat: {t.shape} vs {ref} on axis {axis}")
    return _wrap(np.concatenate([t.numpy() for t in ts], axis=axis))


def split(t: Tensor, axis: int, sizes: Sequence[int]) -> list:
    """Cut ``t`` along ``axis`` into consecutive pieces of the given extents."""
    axis = _norm_axis(axis, t.ndim)
    sizes = [int(s) for s in sizes]
    if any(s < 0 for s in sizes) or sum(sizes) != t.shape[axis]:
        raise ShapeError(
            f"split sizes {sizes} do not cover extent {t.shape[axis]} on axis {axis}"
        )
    arr = t.numpy()
    out, start = [], 0
    for s in sizes:
        index = [slice(None)] * t.ndim
        index[axis] = slice(start, start + s)
        out.append(_wrap(arr[tuple(index)]))
        start += s
    return out


def take(t: Tensor, axis: int, indices: Iterable[int]) -> Tensor:
    """Gather the listed positions along ``axis`` (keeps the axis)."""
    axis = _norm_axis(axis, t.ndim)
    idx = [int(i) for i in indices]
    for i in idx:
        if not 0 <= i < t.shape[axis]:
            raise ShapeError(f"index {i} out of range on axis {axis}")
    return _wrap(np.take(t.numpy(), idx, axis=axis))


def select(t: Tensor, axis: int, index: int) -> Tensor:
    """Pick one position along ``axis`` and drop that axis."""
    axis = _norm_axis(axis, t.ndim)
    picked = take(t, axis, [index])
    return view(picked, t.shape[:axis] + t.shape[axis + 1:])


def _broadcast_batch(a: tuple, b: tuple) -> tuple:
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError as exc:
        raise ShapeError(f"batch dims {a} and {b} do not broadcast") from exc


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b`` over the last two axes.

    Each output element is accumulated as ``((p0 + p1) + p2) + ...`` over the
    contraction index, so the rounding sequence depends only on the shapes.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    m, k = a.shape[-2:]
    k2, n = b.shape[-2:]
    if k != k2:
        raise ShapeError(f"contraction mismatch {a.shape} @ {b.shape}")
    batch = _broadcast_batch(a.shape[:-2], b.shape[:-2])
    x = a.numpy()
    y = b.numpy()
    acc = np.zeros(batch + (m, n))
    for j in range(k):
        acc = acc + x[..., :, j:j + 1] * y[..., j:j + 1, :]
    return _wrap(acc)


def softmax(t: Tensor) -> Tensor:
    """Softmax along the last axis.

    Entries equal to -inf get weight 0.  A row that is entirely -inf raises
    :class:`MaskError` instead of producing NaNs.
    """
    x = t.numpy()
    if x.shape[-1] == 0:
        raise ShapeError("softmax over an empty axis")
    row_max = x[..., 0:1]
    for j in range(1, x.shape[-1]):
        row_max = np.maximum(row_max, x[..., j:j + 1])
    if np.any(np.isneginf(row_max)):
        raise MaskError("a softmax row is blocked entirely")
    e = np.exp(x - row_max)
    total = e[..., 0:1]
    for j in range(1, x.shape[-1]):
        total = total + e[..., j:j + 1]
    return _wrap(e / total)


def _attention_bias(mask: Tensor, batch: int, seq: int) -> np.ndarray:
    m = mask.numpy()
    try:
        return np.broadcast_to(m, (batch, seq, seq))
    except ValueError as exc:
        raise MaskError(
            f"mask of shape {mask.shape} does not broadcast to {(batch, seq, seq)}"
        ) from exc


def sdp_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[Tensor] = None) -> Tensor:
    """Single-head scaled dot-product attention on ``[B, S, D]`` operands.

    Computes ``softmax(q k^T / sqrt(D) + mask) v``.  ``mask`` is an additive
    bias broadcastable to ``[B, S, S]`` holding 0 or -inf.
    """
    if q.ndim != 3 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(
            f"q, k, v must share one [B, S, D] shape; got {q.shape}, {k.shape}, {v.shape}"
        )
    b, s, d = q.shape
    scores = matmul(q, permute(k, (0, 2, 1)))
    scaled = scores.numpy() / math.sqrt(d)
    if mask is not None:
        scaled = scaled + _attention_bias(mask, b, s)
    weights = softmax(_wrap(scaled))
    return matmul(weights, v)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[Tensor] = None) -> Tensor:
    """Reference attention on ``[B, S, H, D]`` operands, one head at a time.

    ``mask`` broadcasts to ``[B, H, S, S]``; its head extent may be 1 or H.
    Returns ``[B, S, H, D]``.
    """
    if q.ndim != 4 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError("q, k, v must share one [B, S, H, D] shape")
    heads = q.shape[2]
    outs = []
    for j in range(heads):
        o = sdp_attention(select(q, 2, j), select(k, 2, j), select(v, 2, j),
                          head_mask(mask, j, heads))
        outs.append(view(o, (o.shape[0], o.shape[1], 1, o.shape[2])))
    return concat(outs, axis=2)


def head_mask(mask: Optional[Tensor], head: int, heads: int) -> Optional[Tensor]:
    """Slice the per-head bias out of a ``[B|1, H|1, S, S]`` mask.

    Heads at or beyond ``heads`` are padding and get no mask.
    """
    if mask is None or head >= heads:
        return None
    if mask.ndim != 4:
        raise MaskError(f"mask must be [B, H, S, S]; got {mask.shape}")
    mh = mask.shape[1]
    if mh == 1:
        return select(mask, 1, 0)
    if mh != heads:
        raise MaskError(f"mask head extent {mh} is neither 1 nor {heads}")
    return select(mask, 1, head)
