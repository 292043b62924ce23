import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ditpipe.tensor import (
    MaskError,
    ShapeError,
    arange,
    concat,
    head_mask,
    inverse_permutation,
    matmul,
    multi_head_attention,
    permute,
    sdp_attention,
    select,
    softmax,
    split,
    take,
    tensor,
    view,
    zeros,
)


def numpy_attention(q, k, v, mask=None):
    """Independent oracle: plain numpy, no shared kernel code."""
    d = q.shape[-1]
    scores = np.einsum("bsd,btd->bst", q, k) / math.sqrt(d)
    if mask is not None:
        scores = scores + mask
    scores = scores - scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w = w / w.sum(axis=-1, keepdims=True)
    return np.einsum("bst,btd->bsd", w, v)


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4)


# view

def test_view_keeps_flat_order():
    t = arange((4, 6))
    v = view(t, (2, 12))
    assert v.shape == (2, 12)
    assert v.tolist() == [list(range(12)), list(range(12, 24))]


def test_view_same_shape_is_identity():
    t = arange((3, 5))
    assert view(t, (3, 5)).equal(t)


def test_view_element_position():
    v = view(arange((1, 4, 3)), (2, 6)).numpy()
    for r in range(2):
        for c in range(6):
            assert v[r, c] == 6 * r + c


def test_view_infers_one_extent():
    assert view(arange((2, 3, 4)), (-1, 4)).shape == (6, 4)


@pytest.mark.parametrize("shape", [(5,), (2, 5), (-1, -1), (7, -1)])
def test_view_rejects_bad_shapes(shape):
    with pytest.raises(ShapeError):
        view(arange((2, 6)), shape)


@given(shapes, st.data())
def test_view_round_trip(shape, data):
    t = tensor(np.random.default_rng(0).standard_normal(shape))
    flat = view(t, (-1,))
    other = data.draw(st.permutations(list(shape)))
    assert view(view(t, other), t.shape).equal(t)
    assert view(flat, t.shape).equal(t)


# permute

def test_permute_transpose():
    t = tensor([[1, 2, 3], [4, 5, 6]])
    assert permute(t, (1, 0)).tolist() == [[1, 4], [2, 5], [3, 6]]


def test_permute_identity():
    t = arange((2, 3, 4))
    assert permute(t, (0, 1, 2)).equal(t)


def test_permute_moves_every_element():
    t = arange((1, 2, 2, 1))
    p = permute(t, (0, 2, 1, 3)).numpy()
    src = t.numpy()
    for i in range(2):
        for j in range(2):
            assert p[0, j, i, 0] == src[0, i, j, 0]


def test_permute_rejects_non_permutation():
    with pytest.raises(ShapeError):
        permute(arange((2, 2)), (0, 0))


@given(shapes, st.data())
def test_permute_inverse_restores(shape, data):
    t = tensor(np.random.default_rng(1).standard_normal(shape))
    axes = data.draw(st.permutations(list(range(len(shape)))))
    assert permute(permute(t, axes), inverse_permutation(axes)).equal(t)


# concat / split / take

def test_concat_rows():
    out = concat([tensor([[1, 2]]), tensor([[3, 4]])], 0)
    assert out.tolist() == [[1, 2], [3, 4]]


def test_concat_single_is_identity():
    t = arange((2, 3))
    assert concat([t], 1).equal(t)


def test_concat_three_chunks_round_order():
    chunks = [tensor(np.full((1, 1, 2, 1), float(r))) for r in range(3)]
    out = concat(chunks, 1)
    assert out.shape == (1, 3, 2, 1)
    assert out.numpy()[0, :, :, 0].tolist() == [[0, 0], [1, 1], [2, 2]]


def test_concat_ragged_raises():
    with pytest.raises(ShapeError):
        concat([zeros((1, 2)), zeros((1, 3))], 0)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=5))
def test_split_then_concat(sizes):
    total = sum(sizes)
    t = arange((2, total, 3))
    parts = split(t, 1, sizes)
    assert [p.shape[1] for p in parts] == sizes
    assert concat(parts, 1).equal(t)


def test_split_bad_sizes():
    with pytest.raises(ShapeError):
        split(arange((4,)), 0, [1, 2])


def test_take_and_select():
    t = arange((2, 3))
    assert take(t, 1, [2, 0]).tolist() == [[2, 0], [5, 3]]
    assert select(t, 0, 1).tolist() == [3, 4, 5]
    with pytest.raises(ShapeError):
        take(t, 1, [3])


def test_tensor_buffer_is_read_only():
    t = arange((2, 2))
    with pytest.raises(ValueError):
        t.data[0] = 5.0


# matmul / softmax

def test_matmul_matches_numpy():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((3, 4, 5)), rng.standard_normal((3, 5, 2))
    np.testing.assert_allclose(matmul(tensor(a), tensor(b)).numpy(), a @ b, rtol=1e-12)


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(zeros((2, 3)), zeros((2, 3)))
    with pytest.raises(ShapeError):
        matmul(zeros((3,)), zeros((3, 1)))


def test_softmax_two_entries():
    out = softmax(tensor([1.0, 0.0])).tolist()
    e = math.e
    assert out[0] == pytest.approx(e / (e + 1), rel=1e-15)
    assert out[1] == pytest.approx(1 / (e + 1), rel=1e-15)


def test_softmax_masked_entries_get_zero_weight():
    out = softmax(tensor([[0.0, -math.inf, 0.0]])).tolist()
    assert out == [[0.5, 0.0, 0.5]]


def test_softmax_fully_masked_row_raises():
    with pytest.raises(MaskError):
        softmax(tensor([[0.0, 1.0], [-math.inf, -math.inf]]))


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_rows_sum_to_one(row):
    out = softmax(tensor([row])).numpy()
    assert abs(out.sum() - 1.0) <= 1e-12
    assert np.all(out >= 0) and np.all(out <= 1)


# attention

def test_attention_hand_example():
    q = tensor([[[1.0], [0.0]]])
    k = tensor([[[1.0], [0.0]]])
    v = tensor([[[2.0], [4.0]]])
    out = sdp_attention(q, k, v).numpy()
    e = math.e
    # Row 0 scores [1, 0]; row 1 scores [0, 0] (uniform).
    want0 = 2 * e / (e + 1) + 4 / (e + 1)
    want1 = 3.0
    assert out[0, 0, 0] == pytest.approx(want0, rel=1e-15)
    assert out[0, 1, 0] == pytest.approx(want1, rel=1e-15)


def test_attention_equal_keys_gives_column_mean():
    rng = np.random.default_rng(3)
    q = rng.standard_normal((2, 5, 3))
    k = np.broadcast_to(rng.standard_normal((2, 1, 3)), (2, 5, 3)).copy()
    v = rng.standard_normal((2, 5, 3))
    out = sdp_attention(tensor(q), tensor(k), tensor(v)).numpy()
    want = np.broadcast_to(v.mean(axis=1, keepdims=True), v.shape)
    np.testing.assert_allclose(out, want, rtol=1e-13, atol=1e-15)


def test_attention_single_position_returns_v():
    rng = np.random.default_rng(4)
    q, k, v = (rng.standard_normal((3, 1, 4)) for _ in range(3))
    assert sdp_attention(tensor(q), tensor(k), tensor(v)).equal(tensor(v))


def test_attention_matches_numpy_oracle_with_mask():
    rng = np.random.default_rng(5)
    q, k, v = (rng.standard_normal((2, 6, 4)) for _ in range(3))
    mask = np.triu(np.full((6, 6), -np.inf), k=1)
    got = sdp_attention(tensor(q), tensor(k), tensor(v), tensor(mask)).numpy()
    np.testing.assert_allclose(got, numpy_attention(q, k, v, mask), rtol=1e-12, atol=1e-14)


def test_attention_shape_and_mask_errors():
    with pytest.raises(ShapeError):
        sdp_attention(zeros((1, 2, 3)), zeros((1, 2, 3)), zeros((1, 3, 3)))
    with pytest.raises(MaskError):
        sdp_attention(zeros((1, 2, 3)), zeros((1, 2, 3)), zeros((1, 2, 3)), zeros((3, 3)))


@settings(max_examples=40)
@given(st.integers(1, 2), st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**31))
def test_attention_rows_are_convex_combinations(b, s, d, seed):
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((b, s, d)) * 3 for _ in range(3))
    out = sdp_attention(tensor(q), tensor(k), tensor(v)).numpy()
    lo = v.min(axis=1, keepdims=True) - 1e-12
    hi = v.max(axis=1, keepdims=True) + 1e-12
    assert np.all(out >= lo) and np.all(out <= hi)


@settings(max_examples=25)
@given(st.integers(0, 2**31))
def test_attention_is_bit_deterministic(seed):
    rng = np.random.default_rng(seed)
    q, k, v = (tensor(rng.standard_normal((2, 5, 3, 4))) for _ in range(3))
    assert multi_head_attention(q, k, v).equal(multi_head_attention(q, k, v))


def test_multi_head_matches_per_head_oracle():
    rng = np.random.default_rng(6)
    b, s, h, d = 2, 5, 3, 4
    q, k, v = (rng.standard_normal((b, s, h, d)) for _ in range(3))
    mask = rng.standard_normal((b, h, s, s))
    got = multi_head_attention(tensor(q), tensor(k), tensor(v), tensor(mask)).numpy()
    for j in range(h):
        want = numpy_attention(q[:, :, j], k[:, :, j], v[:, :, j], mask[:, j])
        np.testing.assert_allclose(got[:, :, j], want, rtol=1e-12, atol=1e-14)


def test_head_mask_slicing():
    mask = arange((1, 3, 2, 2))
    assert head_mask(mask, 1, 3).tolist() == [[[4, 5], [6, 7]]]
    assert head_mask(mask, 3, 3) is None
    shared = arange((1, 1, 2, 2))
    assert head_mask(shared, 2, 3).tolist() == [[[0, 1], [2, 3]]]
    with pytest.raises(MaskError):
        head_mask(arange((1, 2, 2, 2)), 0, 3)
