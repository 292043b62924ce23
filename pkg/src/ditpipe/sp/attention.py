"""Sequence-parallel attention over a simulated rank group.

Three paths compute the same thing:

* :func:`ulysses_attention`: three head-scatter all-to-alls, local attention
  on every local head, one trailing all-to-all.
* :func:`pipesp_attention`: one all-to-all per local head as soon as that
  head is done, then :func:`~ditpipe.sp.layout.layout_fix` to undo the
  round-major head order.
* :func:`aco_attention`: the head work is shared with a second, idle group
  reached over point-to-point sends.

Operands use the ``[B, S, H, D]`` layout.  Masks are logical (not sharded)
additive biases of shape ``[B|1, H|1, S, S]`` and are indexed by global head.
"""

from __future__ import annotations

from typing import Optional, Sequence

from ..tensor import (
    ShapeError,
    Tensor,
    concat,
    head_mask,
    multi_head_attention,
    sdp_attention,
    select,
    split,
    take,
    view,
)
from .collectives import (
    HEAD,
    HEAD_AXIS,
    SEQ_AXIS,
    SEQUENCE,
    DivisibilityError,
    ShardedTensor,
    all_to_all_local,
    even_sizes,
    exchange,
)
from .fabric import RankGroup, Recv, Send
from .layout import layout_fix, pad_head_axis, pad_heads


class DecodeGroupBusy(RuntimeError):
    """The co-processing group is occupied; fall back to :func:`pipesp_attention`."""


def _check_operands(q: ShardedTensor, k: ShardedTensor, v: ShardedTensor, kind: str,
                    group: RankGroup):
    for name, x in (("q", q), ("k", k), ("v", v)):
        if x.kind != kind:
            raise ShapeError(f"{name} must be {kind}-partitioned, got {x.kind}")
        if len(x.shards[0].shape) != 4:
            raise ShapeError(f"{name} shards must be [B, S, H, D]")
        if x.n != group.n:
            raise ShapeError(f"{name} has {x.n} shards for a group of {group.n}")
    if not (q.logical_shape == k.logical_shape == v.logical_shape):
        raise ShapeError("q, k, v logical shapes differ")
    for a, b, c in zip(q.shards, k.shards, v.shards):
        if not (a.shape == b.shape == c.shape):
            raise ShapeError("q, k, v shard shapes differ")


def local_heads_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[Tensor],
                          head_ids: Sequence[int], heads: int) -> Tensor:
    """Per-head attention over full-sequence ``[B, S, h, D]`` operands.

    ``head_ids[j]`` is the global head held at local slot ``j``; ids at or
    beyond ``heads`` are padding and run unmasked.
    """
    outs = []
    for j, gid in enumerate(head_ids):
        o = sdp_attention(select(q, HEAD_AXIS, j), select(k, HEAD_AXIS, j),
                          select(v, HEAD_AXIS, j), head_mask(mask, gid, heads))
        outs.append(view(o, (o.shape[0], o.shape[1], 1, o.shape[2])))
    return concat(outs, HEAD_AXIS)


def scatter_heads(group: RankGroup, me: int, local: Tensor):
    """Sequence-sharded ``[B, S_r, H, D]`` -> head-sharded ``[B, S, H/n, D]``."""
    return (yield from all_to_all_local(group, me, local, HEAD_AXIS, SEQ_AXIS))


def gather_heads(group: RankGroup, me: int, local: Tensor, seq_sizes: Sequence[int]):
    """Head-sharded ``[B, S, h, D]`` -> sequence-sharded ``[B, S_r, n*h, D]``."""
    return (yield from all_to_all_local(group, me, local, SEQ_AXIS, HEAD_AXIS, seq_sizes))


def _pipelined_heads(group, me, qh, kh, vh, mask, heads, seq_sizes, fix_layout):
    n = group.n
    h = qh.shape[HEAD_AXIS]
    chunks = []
    for j in range(h):
        result = local_heads_attention(
            take(qh, HEAD_AXIS, [j]), take(kh, HEAD_AXIS, [j]), take(vh, HEAD_AXIS, [j]),
            mask, [me * h + j], heads,
        )
        # Exchange this head now; the next head's compute follows it.
        hidden = yield from all_to_all_local(group, me, result, SEQ_AXIS, HEAD_AXIS,
                                             seq_sizes)
        chunks.append(hidden)
    hidden = concat(chunks, HEAD_AXIS)
    if fix_layout:
        hidden = layout_fix(hidden, n, h)
    return hidden


def _sp_rank(group, me, q, k, v, mask, heads, seq_sizes, pipelined):
    qh = yield from scatter_heads(group, me, q)
    kh = yield from scatter_heads(group, me, k)
    vh = yield from scatter_heads(group, me, v)
    if pipelined:
        return (yield from _pipelined_heads(group, me, qh, kh, vh, mask, heads,
                                            seq_sizes, True))
    h = qh.shape[HEAD_AXIS]
    out = local_heads_attention(qh, kh, vh, mask, range(me * h, me * h + h), heads)
    return (yield from gather_heads(group, me, out, seq_sizes))


def sequence_parallel_attention(group: RankGroup, q: ShardedTensor, k: ShardedTensor,
                                v: ShardedTensor, mask: Optional[Tensor] = None,
                                pipelined: bool = False,
                                real_heads: Optional[int] = None) -> ShardedTensor:
    """Full layer from sequence-sharded inputs, baseline or pipelined tail."""
    _check_operands(q, k, v, SEQUENCE, group)
    heads = q.logical_shape[HEAD_AXIS]
    if heads % group.n:
        raise DivisibilityError(
            f"{heads} heads do not divide over {group.n} ranks; pad the heads first"
        )
    real = heads if real_heads is None else real_heads
    seq_sizes = q.extents
    outs = group.run(lambda i, r: _sp_rank(group, i, q.shards[i], k.shards[i], v.shards[i],
                                           mask, real, seq_sizes, pipelined))
    return ShardedTensor(tuple(outs), SEQ_AXIS, SEQUENCE)


def ulysses_attention(group: RankGroup, q: ShardedTensor, k: ShardedTensor,
                      v: ShardedTensor, mask: Optional[Tensor] = None) -> ShardedTensor:
    """Baseline sequence-parallel attention; the reference for the other paths."""
    return sequence_parallel_attention(group, q, k, v, mask, pipelined=False)


def pipesp_attention(group: RankGroup, q: ShardedTensor, k: ShardedTensor,
                     v: ShardedTensor, mask: Optional[Tensor] = None,
                     seq_sizes: Optional[Sequence[int]] = None,
                     fix_layout: bool = True,
                     real_heads: Optional[int] = None) -> ShardedTensor:
    """Per-head pipelined attention tail on head-sharded, full-sequence inputs.

    ``seq_sizes`` gives the output sequence cut (even by default).  With
    ``fix_layout=False`` the round-major interleaved head order is returned
    as is.
    """
    _check_operands(q, k, v, HEAD, group)
    h_set = {s.shape[HEAD_AXIS] for s in q.shards}
    if len(h_set) != 1:
        raise DivisibilityError(f"ranks hold unequal head counts {sorted(h_set)}")
    seq = q.shards[0].shape[SEQ_AXIS]
    if seq_sizes is None:
        seq_sizes = even_sizes(seq, group.n)
    heads = q.logical_shape[HEAD_AXIS] if real_heads is None else real_heads
    outs = group.run(lambda i, r: _pipelined_heads(
        group, i, q.shards[i], k.shards[i], v.shards[i], mask, heads, seq_sizes,
        fix_layout))
    return ShardedTensor(tuple(outs), SEQ_AXIS, SEQUENCE)


def pad_sharded_heads(x: ShardedTensor, padded: int) -> ShardedTensor:
    return ShardedTensor(tuple(pad_head_axis(s, padded, HEAD_AXIS) for s in x.shards),
                         x.axis, x.kind)


def strip_sharded_heads(x: ShardedTensor, heads: int) -> ShardedTensor:
    return ShardedTensor(tuple(take(s, HEAD_AXIS, range(heads)) for s in x.shards),
                         x.axis, x.kind)


def head_carriers(n_denoise: int, n_decode: int) -> list:
    """Head blocks each denoise rank gathers after the intra-group exchange.

    Block ``w`` belongs to worker ``w``: denoise ranks are workers
    ``0..n_denoise-1``, decode rank ``e`` is worker ``n_denoise + e`` and is
    fed by denoise rank ``e % n_denoise``.
    """
    carried = [[r] for r in range(n_denoise)]
    for e in range(n_decode):
        carried[e % n_denoise].append(n_denoise + e)
    return carried


def _aco_denoise_rank(denoise, decode, me, q, k, v, mask, heads, block, carried, seq_sizes):
    n_den = denoise.n

    def block_heads(blocks):
        return [b * block + t for b in blocks for t in range(block)]

    full = []
    for x in (q, k, v):
        pieces = [take(x, HEAD_AXIS, block_heads(carried[t])) for t in range(n_den)]
        received = yield from exchange(denoise, me, pieces)
        full.append(concat(received, SEQ_AXIS))
    qf, kf, vf = full

    relayed_blocks = carried[me][1:]
    for idx, b in enumerate(relayed_blocks, start=1):
        sl = range(idx * block, (idx + 1) * block)
        yield Send(decode.ranks[b - n_den],
                   (take(qf, HEAD_AXIS, sl), take(kf, HEAD_AXIS, sl), take(vf, HEAD_AXIS, sl)))

    own = range(block)
    out = [local_heads_attention(take(qf, HEAD_AXIS, own), take(kf, HEAD_AXIS, own),
                                 take(vf, HEAD_AXIS, own), mask,
                                 range(me * block, (me + 1) * block), heads)]
    for b in relayed_blocks:
        out.append((yield Recv(decode.ranks[b - n_den])))
    gathered = concat(out, HEAD_AXIS)

    received = yield from exchange(denoise, me, split(gathered, SEQ_AXIS, seq_sizes))
    by_block = {}
    for src, piece in enumerate(received):
        parts = split(piece, HEAD_AXIS, [block] * len(carried[src]))
        for b, part in zip(carried[src], parts):
            by_block[b] = part
    merged = concat([by_block[b] for b in sorted(by_block)], HEAD_AXIS)
    return take(merged, HEAD_AXIS, range(heads))


def _aco_decode_rank(relay: int, mask, heads: int, block: int, worker: int):
    qb, kb, vb = yield Recv(relay)
    out = local_heads_attention(qb, kb, vb, mask,
                                range(worker * block, (worker + 1) * block), heads)
    yield Send(relay, out)


def aco_attention(denoise: RankGroup, decode: RankGroup, q: ShardedTensor,
                  k: ShardedTensor, v: ShardedTensor,
                  mask: Optional[Tensor] = None) -> ShardedTensor:
    """Attention with the head work spread over both rank groups.

    Inputs are sequence-sharded over ``denoise``.  Heads are zero-padded to
    a multiple of the total rank count, the padding is dropped again before
    returning.  An empty ``decode`` group degrades to the pipelined path.
    Raises :class:`DecodeGroupBusy` when ``decode.busy`` is set.
    """
    _check_operands(q, k, v, SEQUENCE, denoise)
    if decode.n and decode.busy:
        raise DecodeGroupBusy(f"group {decode.name!r} is busy")
    if decode.n and decode.fabric is not denoise.fabric:
        raise ValueError("both groups must live on one fabric")
    if set(decode.ranks) & set(denoise.ranks):
        raise ValueError("groups overlap")
    heads = q.logical_shape[HEAD_AXIS]

    if decode.n == 0:
        padded, pad = pad_heads(heads, denoise.n)
        qp, kp, vp = (pad_sharded_heads(x, padded) for x in (q, k, v))
        out = sequence_parallel_attention(denoise, qp, kp, vp, mask, pipelined=True,
                                          real_heads=heads)
        return strip_sharded_heads(out, heads) if pad else out

    workers = denoise.n + decode.n
    padded, _ = pad_heads(heads, workers)
    block = padded // workers
    qp, kp, vp = (pad_sharded_heads(x, padded) for x in (q, k, v))
    carried = head_carriers(denoise.n, decode.n)
    seq_sizes = q.extents

    programs = {}
    for i, r in enumerate(denoise.ranks):
        programs[r] = _aco_denoise_rank(denoise, decode, i, qp.shards[i], kp.shards[i],
                                        vp.shards[i], mask, heads, block, carried,
                                        seq_sizes)
    for e, r in enumerate(decode.ranks):
        relay = denoise.ranks[e % denoise.n]
        programs[r] = _aco_decode_rank(relay, mask, heads, block, denoise.n + e)
    results = denoise.fabric.run(programs)
    return ShardedTensor(tuple(results[r] for r in denoise.ranks), SEQ_AXIS, SEQUENCE)


def reference_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[Tensor] = None) -> Tensor:
    """Unsharded oracle: the tensor-core per-head loop."""
    return multi_head_attention(q, k, v, mask)
