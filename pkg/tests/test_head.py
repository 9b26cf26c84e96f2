import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctrn import head
from ctrn.errors import EmptySequenceError, LabelError, ShapeError

from conftest import FD_TOL, numeric_grad, rel_error

finite = st.floats(-50, 50, allow_nan=False)


# --- mean pooling --------------------------------------------------------------

def test_mean_pool_examples():
    v, _ = head.mean_pool([[1.0, 2.0], [3.0, 4.0]], [True, True])
    assert v.tolist() == [2.0, 3.0]
    v, _ = head.mean_pool([[1.0, 2.0], [9.0, 9.0]], [True, False])
    assert v.tolist() == [1.0, 2.0]
    v, _ = head.mean_pool([[5.0, -1.0]])
    assert v.tolist() == [5.0, -1.0]


def test_mean_pool_all_masked():
    with pytest.raises(EmptySequenceError):
        head.mean_pool(np.ones((3, 2)), [False, False, False])


def test_mean_pool_mask_shape():
    with pytest.raises(ShapeError):
        head.mean_pool(np.ones((3, 2)), [True, True])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 9), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31))
def test_padding_is_bit_exact(L, d, pad, seed):
    rng = np.random.default_rng(seed)
    trace = rng.normal(size=(L, d))
    alone, _ = head.mean_pool(trace, np.ones(L, bool))
    padded = np.vstack([trace, rng.normal(size=(pad, d))])
    mask = np.r_[np.ones(L, bool), np.zeros(pad, bool)]
    together, _ = head.mean_pool(padded, mask)
    assert alone.tobytes() == together.tobytes()


def test_mean_pool_backward():
    rng = np.random.default_rng(0)
    trace = rng.normal(size=(2, 4, 3))
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1]], bool)
    R = rng.normal(size=(2, 3))
    _, rec = head.mean_pool(trace, mask)
    g = head.mean_pool_backward(rec, R)
    num = numeric_grad(lambda: float(np.sum(head.mean_pool(trace, mask)[0] * R)), trace)
    assert rel_error(g, num) < FD_TOL


# --- softmax / scoring ----------------------------------------------------------

def test_zero_head_scores_half():
    s, _ = head.mlp_forward(np.ones((2, 6)), [(np.zeros((6, 4)), np.zeros(4))], (np.zeros((4, 2)), np.zeros(2)))
    np.testing.assert_array_equal(s, 0.5)


def test_positive_logit_closed_form():
    # positive class sits at index POSITIVE; put the larger logit there
    logits = np.zeros(2)
    logits[head.POSITIVE] = 1.0
    p = head.softmax(logits)
    assert p[head.POSITIVE] == pytest.approx(math.e / (math.e + 1), abs=1e-15)
    assert p[head.POSITIVE] == pytest.approx(0.7311, abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (5, 2), elements=finite), finite)
def test_softmax_normalized_and_shift_invariant(logits, c):
    p = head.softmax(logits)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(head.softmax(logits + c), p, rtol=0, atol=1e-12)


@given(finite)
def test_equal_logits_half(z):
    assert head.softmax(np.array([z, z]))[head.POSITIVE] == 0.5


def test_width_mismatch():
    with pytest.raises(ShapeError):
        head.mlp_forward(np.ones((2, 5)), [(np.zeros((6, 4)), np.zeros(4))], (np.zeros((4, 2)), np.zeros(2)))


@pytest.mark.parametrize("n", [0, 4])
def test_layer_count_bounds(n):
    layers = [(np.zeros((3, 3)), np.zeros(3))] * n
    with pytest.raises(ValueError):
        head.mlp_forward(np.ones((1, 3)), layers, (np.zeros((3, 2)), np.zeros(2)))


# --- loss ------------------------------------------------------------------------

def test_loss_examples():
    assert head.loss([1.0], [1]).data_loss == pytest.approx(0.0, abs=1e-11)
    assert head.loss([0.5], [1]).data_loss == pytest.approx(math.log(2), abs=1e-15)
    r = head.loss([0.9, 0.2], [1, 0])
    assert r.data_loss == pytest.approx(-(math.log(0.9) + math.log(0.8)), abs=1e-15)
    assert r.data_loss == pytest.approx(0.3285, abs=1e-4)


def test_loss_clipping_finite():
    r = head.loss([0.0, 1.0], [1, 0])
    assert math.isfinite(r.data_loss)
    # 1 - 1e-12 is not exact in binary, so the second term is only close
    assert r.data_loss == pytest.approx(-2 * math.log(head.CLIP_EPS), rel=1e-5)


def test_loss_rejects_labels():
    with pytest.raises(LabelError):
        head.loss([0.5], [2])
    with pytest.raises(LabelError):
        head.loss_grad_logits([0.5], [-1])


def test_regularizer_decomposition():
    params = [np.array([1.0, 2.0]), np.array([[3.0]])]
    r = head.loss([0.3], [0], params, lam=0.1)
    assert r.reg_loss == pytest.approx(0.1 * 14.0, abs=1e-15)
    assert r.total == r.data_loss + r.reg_loss


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=8))
def test_loss_nonnegative(pairs):
    s, y = zip(*pairs)
    r = head.loss(s, y)
    assert r.data_loss >= 0
    if all((si >= 1 - head.CLIP_EPS and yi == 1) or (si <= head.CLIP_EPS and yi == 0) for si, yi in pairs):
        assert r.data_loss < 1e-9
    else:
        assert r.data_loss > 0


# --- overlap features ---------------------------------------------------------------

def test_identical_overlap():
    f = head.overlap_features(["a", "b", "c"], ["c", "b", "a"])
    assert f[0] == 0.5 and f[2] == 0.5


def test_disjoint_overlap():
    f = head.overlap_features(["a", "b"], ["c"], {"a": 1.0, "c": 2.0}, n_docs=3)
    assert f.tolist() == [0.0, 0.0, 0.0, 0.0]


def test_stopword_only_overlap():
    f = head.overlap_features(["the", "of"], ["of", "the"], {"the": 0.1, "of": 0.2}, {"the", "of"})
    assert f.tolist() == [0.5, 0.5, 0.0, 0.0]


def test_empty_overlap():
    assert head.overlap_features([], []).tolist() == [0.0] * 4
    assert head.overlap_features(["x"], []).tolist() == [0.0] * 4


def test_idf_weighting():
    idf = {"a": 2.0, "b": 1.0}
    f = head.overlap_features(["a", "b"], ["a"], idf)
    assert f[0] == pytest.approx(1 / 3)
    assert f[1] == pytest.approx(2.0 / (3.0 + 2.0))


def test_missing_token_default_idf():
    f = head.overlap_features(["x", "y"], ["x"], {"y": 1.0}, n_docs=math.e ** 2 // 1)
    w = math.log(7)
    assert f[1] == pytest.approx(w / (w + 1.0 + w))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcdefg"), max_size=8), st.lists(st.sampled_from("abcdefg"), max_size=8))
def test_overlap_in_unit_range(q, a):
    idf, n = head.build_idf([q, a, ["a", "b"]])
    f = head.overlap_features(q, a, idf, {"a"}, n)
    assert np.all((f >= 0) & (f <= 1))


def test_build_idf():
    idf, n = head.build_idf([["a", "b"], ["a"], ["a", "c", "c"]])
    assert n == 3
    assert idf["a"] == 0.0
    assert idf["c"] == pytest.approx(math.log(3))


def test_load_stopwords(tmp_path):
    p = tmp_path / "stop.txt"
    p.write_text("The\nof\n\n", encoding="utf-8")
    assert head.load_stopwords(p) == frozenset({"the", "of"})


# --- dropout -------------------------------------------------------------------------

def test_dropout_identity_cases():
    x = np.arange(4.0)
    out, mask = head.dropout(x, 0.5, np.random.default_rng(0), active=False)
    assert out is x or np.array_equal(out, x)
    assert mask is None
    out, _ = head.dropout(x, 0.0, np.random.default_rng(0), active=True)
    np.testing.assert_array_equal(out, x)


def test_dropout_seeded_replay():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    out, _ = head.dropout(x, 0.5, np.random.default_rng(11))
    keep = np.random.default_rng(11).random(4) >= 0.5
    np.testing.assert_array_equal(out, np.where(keep, 2 * x, 0.0))
    again, _ = head.dropout(x, 0.5, np.random.default_rng(11))
    np.testing.assert_array_equal(out, again)


def test_dropout_expectation():
    x = np.ones(200_000)
    out, _ = head.dropout(x, 0.5, np.random.default_rng(0))
    assert abs(out.mean() - 1.0) < 0.01


def test_dropout_rate_bounds():
    with pytest.raises(ValueError):
        head.dropout(np.ones(2), 1.0, np.random.default_rng(0))


# --- head gradient --------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_head_gradient(seed):
    rng = np.random.default_rng(seed)
    n_layers = 1 + seed % 3
    trace_q, trace_a = rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 4, 2))
    mq = np.arange(5) < rng.integers(1, 6, 3)[:, None]
    ma = np.arange(4) < rng.integers(1, 5, 3)[:, None]
    width = 4
    layers = []
    for _ in range(n_layers):
        layers.append((rng.normal(size=(width, 3)), rng.normal(size=3)))
        width = 3
    out = (rng.normal(size=(3, 2)), rng.normal(size=2))
    y = rng.integers(0, 2, 3)
    drop_seed = seed + 100

    def forward():
        vq, rq = head.mean_pool(trace_q, mq)
        va, ra = head.mean_pool(trace_a, ma)
        s, rec = head.mlp_forward(np.concatenate([vq, va], axis=1), layers, out, 0.5,
                                  np.random.default_rng(drop_seed), active=True)
        return s, rq, ra, rec

    def f():
        return head.loss(forward()[0], y).data_loss

    s, rq, ra, rec = forward()
    gx, lg, (gWs, gbs) = head.mlp_backward(rec, head.loss_grad_logits(s, y))
    gq = head.mean_pool_backward(rq, gx[:, :2])
    ga = head.mean_pool_backward(ra, gx[:, 2:])
    assert rel_error(gq, numeric_grad(f, trace_q)) < FD_TOL
    assert rel_error(ga, numeric_grad(f, trace_a)) < FD_TOL
    assert rel_error(gWs, numeric_grad(f, out[0])) < FD_TOL
    assert rel_error(gbs, numeric_grad(f, out[1])) < FD_TOL
    for (W, b), (gW, gb) in zip(layers, lg):
        assert rel_error(gW, numeric_grad(f, W)) < FD_TOL
        assert rel_error(gb, numeric_grad(f, b)) < FD_TOL
