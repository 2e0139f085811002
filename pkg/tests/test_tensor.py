"""Tensor core: forward oracles and gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridmind import tensor as T
from gridmind.errors import ConfigError, ContractError, DimensionError


def naive_matmul(a, b):
    """Triple-loop reference product, no numpy dispatch."""
    a = np.atleast_2d(a)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def numeric_grad(f, x, eps=1e-6):
    """Test-local central differences; independent of the library checker."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        keep = x[idx]
        x[idx] = keep + eps
        fp = f()
        x[idx] = keep - eps
        fm = f()
        x[idx] = keep
        g[idx] = (fp - fm) / (2 * eps)
        it.iternext()
    return g


def tape_grad(build, param):
    param.grad = None
    with T.Tape() as tape:
        loss = build()
        tape.backward(loss)
    return np.zeros_like(param.data) if param.grad is None else param.grad.copy()


RNG = np.random.default_rng(7)


# ---------------------------------------------------------------------------
# forward oracles


def test_affine_matches_naive_matmul():
    x = T.Tensor(RNG.normal(size=(4, 5)))
    w = T.Tensor(RNG.normal(size=(5, 3)))
    b = T.Tensor(RNG.normal(size=3))
    out = T.affine(x, w, b)
    expect = naive_matmul(x.data, w.data) + b.data
    np.testing.assert_allclose(out.data, expect, rtol=0, atol=1e-12)


def test_affine_vector_input():
    x = T.Tensor(RNG.normal(size=5))
    w = T.Tensor(RNG.normal(size=(5, 3)))
    out = T.matmul(x, w)
    assert out.shape == (3,)
    np.testing.assert_allclose(out.data, naive_matmul(x.data, w.data)[0], atol=1e-12)


@settings(deadline=None, max_examples=40)
@given(m=st.integers(1, 6), k=st.integers(1, 6), n=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_affine_matches_naive_matmul_property(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, k))
    b = rng.normal(size=(k, n))
    out = T.matmul(T.Tensor(a), T.Tensor(b))
    np.testing.assert_allclose(out.data, naive_matmul(a, b), atol=1e-10)


def test_affine_shape_error_reports_both_shapes():
    with pytest.raises(DimensionError) as err:
        T.affine(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)


@settings(deadline=None, max_examples=40)
@given(n=st.integers(2, 9), seed=st.integers(0, 10_000))
def test_softmax_rows_normalized(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, n)) * 10
    s = T.softmax_rows(T.Tensor(x))
    np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(3), atol=1e-12)
    assert (s.data > 0).all()
    ls = T.log_softmax_rows(T.Tensor(x))
    np.testing.assert_allclose(ls.data, np.log(s.data), atol=1e-10)


def test_softmax_extreme_logits_stay_finite():
    x = T.Tensor(np.array([1000.0, -1000.0, 0.0]))
    s = T.softmax_rows(x)
    assert np.isfinite(s.data).all()
    ls = T.log_softmax_rows(x)
    assert np.isfinite(ls.data).all()


def test_layer_norm_statistics():
    x = T.Tensor(RNG.normal(size=16) * 5 + 3)
    gain = T.Tensor(np.ones(16))
    bias = T.Tensor(np.zeros(16))
    out = T.layer_norm(x, gain, bias)
    assert abs(out.data.mean()) < 1e-9
    assert abs(out.data.std() - 1.0) < 1e-3


def test_layer_norm_rejects_scalar_input():
    one = T.Tensor(np.ones(1))
    with pytest.raises(ContractError):
        T.layer_norm(one, one, one)


def test_temporal_conv_kernel_one_is_per_row_affine():
    x = RNG.normal(size=(6, 4))
    w = RNG.normal(size=(1, 4))
    b = np.array([0.3])
    out = T.temporal_conv(T.Tensor(x), T.Tensor(w), T.Tensor(b))
    np.testing.assert_allclose(out.data, x @ w[0] + b[0], atol=1e-12)


def test_temporal_conv_zero_pads_ends():
    x = np.ones((3, 1))
    w = np.ones((3, 1))
    b = np.zeros(1)
    out = T.temporal_conv(T.Tensor(x), T.Tensor(w), T.Tensor(b))
    np.testing.assert_allclose(out.data, [2.0, 3.0, 2.0])


def test_temporal_conv_rejects_even_kernel():
    with pytest.raises(ConfigError):
        T.temporal_conv(T.Tensor(np.ones((4, 2))), T.Tensor(np.ones((2, 2))), T.Tensor(np.zeros(1)))


def test_pointwise_conv_mixes_channels_only():
    x = RNG.normal(size=(3, 2, 2))
    w = RNG.normal(size=(5, 3))
    b = RNG.normal(size=5)
    out = T.pointwise_conv(T.Tensor(x), T.Tensor(w), T.Tensor(b))
    for i in range(2):
        for j in range(2):
            np.testing.assert_allclose(out.data[:, i, j], w @ x[:, i, j] + b, atol=1e-12)


def test_reduce_and_concat_and_slice():
    x = T.Tensor(np.arange(12, dtype=float).reshape(3, 4))
    np.testing.assert_allclose(T.reduce(x, "mean", axis=0).data, x.data.mean(axis=0))
    np.testing.assert_allclose(T.reduce(x, "sum", axis=1).data, x.data.sum(axis=1))
    assert T.sum_all(x).item() == x.data.sum()
    v = T.concat([T.Tensor(np.ones(2)), T.Tensor(np.zeros(3))])
    assert v.shape == (5,)
    s = T.slice_rows(v, 1, 4)
    np.testing.assert_allclose(s.data, [1.0, 0.0, 0.0])
    assert T.pick(v, 0).item() == 1.0


# ---------------------------------------------------------------------------
# gradients against test-local finite differences


def test_affine_gradients_match_numeric():
    x = T.Tensor(RNG.normal(size=(3, 4)), requires_grad=True)
    w = T.Tensor(RNG.normal(size=(4, 2)), requires_grad=True)
    b = T.Tensor(RNG.normal(size=2), requires_grad=True)
    coef = RNG.normal(size=(3, 2))

    def build():
        return T.sum_all(T.mul(T.affine(x, w, b), T.Tensor(coef)))

    def value():
        return float((x.data @ w.data + b.data).__mul__(coef).sum())

    for p in (x, w, b):
        np.testing.assert_allclose(tape_grad(build, p), numeric_grad(value, p.data), atol=1e-6)


@pytest.mark.parametrize("op", ["relu", "sigmoid", "tanh", "square"])
def test_unary_gradients_match_numeric(op):
    fn = getattr(T, op)
    x = T.Tensor(RNG.normal(size=7) + 0.1, requires_grad=True)

    def build():
        return T.sum_all(fn(x))

    analytic = tape_grad(build, x)

    def value():
        with T.Tape():
            return float(fn(T.Tensor(x.data)).data.sum())

    np.testing.assert_allclose(analytic, numeric_grad(value, x.data), atol=1e-6)


def test_relu_gradient_zero_on_negative_side():
    x = T.Tensor(np.array([-1.0]), requires_grad=True)
    assert T.finite_diff_check(lambda: T.sum_all(T.relu(x)), x, eps=1e-5) == 0.0


@pytest.mark.parametrize(
    "build_case",
    [
        "softmax", "log_softmax", "layer_norm", "temporal_conv", "pointwise_conv",
        "mul_rows", "concat_slice_pick", "diamond",
    ],
)
def test_composite_gradients_via_library_checker(build_case):
    rng = np.random.default_rng(hash(build_case) % 2**32)
    if build_case == "softmax":
        x = T.Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        coef = T.Tensor(rng.normal(size=(2, 5)))
        f = lambda: T.sum_all(T.mul(T.softmax_rows(x), coef))
        theta = x
    elif build_case == "log_softmax":
        x = T.Tensor(rng.normal(size=6), requires_grad=True)
        coef = T.Tensor(rng.normal(size=6))
        f = lambda: T.sum_all(T.mul(T.log_softmax_rows(x), coef))
        theta = x
    elif build_case == "layer_norm":
        x = T.Tensor(rng.normal(size=8), requires_grad=True)
        gain = T.Tensor(rng.normal(size=8), requires_grad=True)
        bias = T.Tensor(rng.normal(size=8), requires_grad=True)
        coef = T.Tensor(rng.normal(size=8))
        f = lambda: T.sum_all(T.mul(T.layer_norm(x, gain, bias), coef))
        theta = x
    elif build_case == "temporal_conv":
        x = T.Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        w = T.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        b = T.Tensor(rng.normal(size=1), requires_grad=True)
        coef = T.Tensor(rng.normal(size=6))
        f = lambda: T.sum_all(T.mul(T.temporal_conv(x, w, b), coef))
        theta = w
    elif build_case == "pointwise_conv":
        x = T.Tensor(rng.normal(size=(3, 4, 4)), requires_grad=True)
        w = T.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = T.Tensor(rng.normal(size=2), requires_grad=True)
        f = lambda: T.sum_all(T.square(T.pointwise_conv(x, w, b)))
        theta = x
    elif build_case == "mul_rows":
        x = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        v = T.Tensor(rng.normal(size=3), requires_grad=True)
        f = lambda: T.sum_all(T.square(T.mul(x, v)))
        theta = v
    elif build_case == "concat_slice_pick":
        x = T.Tensor(rng.normal(size=5), requires_grad=True)
        y = T.Tensor(rng.normal(size=4), requires_grad=True)

        def f():
            joined = T.concat([T.tanh(x), y])
            return T.add(T.pick(joined, 2), T.sum_all(T.slice_rows(joined, 4, 8)))

        theta = x
    else:  # diamond: one tensor feeding two consumers
        x = T.Tensor(rng.normal(size=5), requires_grad=True)

        def f():
            h = T.tanh(x)
            return T.add(T.sum_all(T.mul(h, h)), T.sum_all(T.sigmoid(h)))

        theta = x
    assert T.finite_diff_check(f, theta, eps=1e-5) < 1e-6


def test_gradient_accumulates_across_backward_calls():
    x = T.Tensor(np.array([2.0, -1.0]), requires_grad=True)
    with T.Tape() as tape:
        loss = T.sum_all(T.square(x))
        tape.backward(loss)
        once = x.grad.copy()
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * once)


def test_backward_skips_unreachable_subgraph():
    x = T.Tensor(np.ones(3), requires_grad=True)
    y = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        lx = T.sum_all(T.square(x))
        T.sum_all(T.square(y))  # recorded but not reachable from lx
        tape.backward(lx)
    assert x.grad is not None
    assert y.grad is None


def test_backward_rejects_foreign_and_nonscalar_roots():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        vec = T.relu(x)
        with pytest.raises(ContractError):
            tape.backward(vec)
        with pytest.raises(ContractError):
            tape.backward(T.Tensor(np.zeros(())))
    with pytest.raises(ContractError):
        T.backward(T.Tensor(np.zeros(())))


def test_constants_are_not_recorded():
    with T.Tape() as tape:
        a = T.Tensor(np.ones(4))
        b = T.relu(a)
        assert len(tape) == 0
        assert not b.requires_grad


def test_dropout_eval_is_identity_and_train_masks():
    rng = np.random.default_rng(3)
    x = T.Tensor(np.ones(1000), requires_grad=True)
    assert T.dropout(x, 0.3, rng, train=False) is x
    with T.Tape() as tape:
        out = T.dropout(x, 0.3, rng, train=True)
        kept = out.data != 0
        assert abs(out.data.mean() - 1.0) < 0.1
        np.testing.assert_allclose(out.data[kept], 1.0 / 0.7)
        tape.backward(T.sum_all(out))
    np.testing.assert_allclose(x.grad[~kept], 0.0)
    with pytest.raises(ConfigError):
        T.dropout(x, 1.0, rng, train=True)


def test_debug_checks_catch_nonfinite():
    T.set_debug_checks(True)
    try:
        with np.errstate(invalid="ignore"), pytest.raises(ContractError):
            T.mul(T.Tensor(np.array([np.inf])), T.Tensor(np.array([0.0])))
    finally:
        T.set_debug_checks(False)


def test_library_checker_agrees_with_local_oracle():
    rng = np.random.default_rng(11)
    w = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = T.Tensor(rng.normal(size=4))
    coef = T.Tensor(rng.normal(size=3))

    def build():
        return T.sum_all(T.mul(T.tanh(T.matmul(x, w)), coef))

    analytic = tape_grad(build, w)

    def value():
        return float((np.tanh(x.data @ w.data) * coef.data).sum())

    np.testing.assert_allclose(analytic, numeric_grad(value, w.data), atol=1e-7)
    assert T.finite_diff_check(build, w, eps=1e-5) < 1e-7


def test_detach_cuts_graph():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        h = T.square(x)
        d = h.detach()
        assert not d.requires_grad
        loss = T.sum_all(T.square(d))
        with pytest.raises(ContractError):
            tape.backward(loss)  # loss depends only on the detached constant
