import numpy as np
import pytest
from hypothesis import given, strategies as st

from mue.autodiff import Tensor, backward, build_tape, grad_check, no_grad, ops, precision, set_debug
from mue.autodiff.gradcheck import GradCheckError

TRIALS = 100
TOL = 1e-5


def naive_conv2d(x, w, b, stride, pad):
    """Direct sliding-window loops; x (C, H, W), w (O, C, k, k)."""
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    oh, ow = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((o, oh, ow))
    for f in range(o):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * stride:i * stride + k, j * stride:j * stride + k]
                out[f, i, j] = (patch * w[f]).sum() + (b[f] if b is not None else 0.0)
    return out


# forward examples -------------------------------------------------------------

def test_global_avg_pool_of_ones():
    out = ops.global_avg_pool(Tensor(np.ones((2, 2, 2))))
    np.testing.assert_array_equal(out.data, [1.0, 1.0])


def test_tile_constant_channels():
    out = ops.tile(Tensor(np.array([1.0, 2.0, 3.0])), 2, 2)
    assert out.shape == (3, 2, 2)
    for ch, v in enumerate([1.0, 2.0, 3.0]):
        assert np.all(out.data[ch] == v)


def test_conv2d_matches_sliding_window(rng):
    with precision(np.float64):
        x = rng.normal(size=(1, 5, 5))
        w = rng.normal(size=(1, 1, 3, 3))
        got = ops.conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(got, naive_conv2d(x, w, None, 1, 0), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_conv2d_batched_stride_padding(rng, stride, pad):
    with precision(np.float64):
        x = rng.normal(size=(2, 3, 7, 6))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    for n in range(2):
        np.testing.assert_allclose(got[n], naive_conv2d(x[n], w, b, stride, pad), atol=1e-12)


def test_softmax_sums_to_one_for_large_logits(rng):
    z = rng.uniform(-1e3, 1e3, size=(16, 9))
    p = ops.softmax(Tensor(z), axis=1).data
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12))
def test_softmax_normalised_property(vals):
    p = ops.softmax(Tensor(np.array(vals)), axis=0).data
    assert abs(float(p.sum()) - 1.0) < 1e-6


def test_upsample_then_downsample_constant_is_constant():
    x = Tensor(np.full((2, 4, 6), 3.5))
    np.testing.assert_allclose(ops.downsample2x(ops.upsample2x(x)).data, 3.5, rtol=1e-6)


def test_bilinear_rows_are_convex_weights():
    for n_in, n_out in [(4, 8), (8, 4), (7, 3), (28, 14), (3, 7)]:
        m = ops.bilinear_matrix(n_in, n_out)
        assert np.all(m >= 0)
        np.testing.assert_allclose(m.sum(axis=1), 1.0)


def test_downsample2x_is_pair_average():
    # scale 2 with half-pixel centres samples exactly between each pair
    x = np.arange(16, dtype=float).reshape(4, 4)
    with precision(np.float64):
        out = ops.downsample2x(Tensor(x[None])).data[0]
    expect = x.reshape(2, 2, 2, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(out, expect)


@pytest.mark.parametrize("fn,args", [
    (ops.add, (np.ones((2, 3)), np.ones((4, 3)))),
    (ops.matmul, (np.ones((2, 3)), np.ones((2, 3)))),
    (ops.concat, ([np.ones((2, 3)), np.ones((3, 3))],)),
    (ops.conv2d, (np.ones((1, 5, 5)), np.ones((1, 2, 3, 3)))),
    (ops.global_avg_pool, (np.ones(3),)),
])
def test_shape_mismatch_names_op(fn, args):
    with pytest.raises(ValueError) as exc:
        if fn is ops.concat:
            fn([Tensor(a) for a in args[0]], axis=1)
        else:
            fn(*[Tensor(a) for a in args])
    assert fn.__name__ in str(exc.value)


# backward examples ------------------------------------------------------------

def test_square_gradient_at_three():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert np.asarray(x.grad).item() == 6.0


def test_softmax_cross_entropy_gradient(rng):
    with precision(np.float64):
        z = Tensor(rng.normal(size=(1, 6)), requires_grad=True)
        backward(ops.cross_entropy(z, [2]))
        expect = ops.softmax(Tensor(z.data), axis=1).data - np.eye(6)[2]
    np.testing.assert_allclose(z.grad, expect, atol=1e-12)
    err = grad_check(lambda t: ops.cross_entropy(t, [2]), [z.data])
    assert err < TOL


def test_conv2d_weight_gradient_matches_finite_differences(rng):
    x = rng.normal(size=(1, 4, 4))
    w = rng.normal(size=(2, 1, 3, 3))
    err = grad_check(lambda t: ops.sum(ops.square(ops.conv2d(Tensor(x), t, padding=1))), [w], h=1e-4)
    assert err < TOL


def test_gradient_accumulates_over_reuse(rng):
    a = rng.normal(size=5)
    x = Tensor(a, requires_grad=True)
    backward(ops.sum(x * x + x * 3.0))
    np.testing.assert_allclose(x.grad, 2 * a + 3.0, rtol=1e-6)


def test_backward_rejects_nonscalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_tape_is_topological_and_unique():
    x = Tensor(np.ones(3), requires_grad=True)
    y = x * 2.0
    z = ops.sum(y + y * x)
    tape = build_tape(z)
    pos = {id(n): i for i, n in enumerate(tape)}
    assert len(pos) == len(tape)
    for n in tape:
        for p in n._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(n)]


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = ops.relu(x)
    assert not y.requires_grad and y._parents == ()


def test_relu_subgradient_zero_at_zero():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    backward(ops.sum(ops.relu(x)))
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_forward_is_deterministic(rng):
    x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))
    a = ops.conv2d(Tensor(x), Tensor(w), padding=1, stride=2).data
    b = ops.conv2d(Tensor(x), Tensor(w), padding=1, stride=2).data
    assert a.tobytes() == b.tobytes()


def test_debug_mode_flags_nonfinite():
    with pytest.raises(FloatingPointError), np.errstate(divide="ignore"):
        ops.div(Tensor(np.ones(2)), Tensor(np.zeros(2)))


# grad_check -------------------------------------------------------------------

def test_grad_check_linear_map_exact(rng):
    a = rng.normal(size=7)
    assert grad_check(lambda x: ops.sum(x * a), [rng.normal(size=7)]) < 1e-10


def test_grad_check_two_layer_relu_mlp():
    rng = np.random.default_rng(3)
    w1, w2 = rng.normal(size=(6, 4)), rng.normal(size=(1, 6))
    while True:
        x = rng.normal(size=(3, 4))
        if np.abs(x @ w1.T).min() > 1e-3:
            break
    f = lambda a, b, c: ops.sum(ops.linear(ops.relu(ops.linear(a, b)), c))  # noqa: E731
    assert grad_check(f, [x, w1, w2]) < 1e-6


def test_grad_check_reports_nan_coordinate():
    set_debug(False)
    with pytest.raises(GradCheckError, match="coordinate"):
        grad_check(lambda x: ops.sum(x * np.array([1.0, np.nan])), [np.ones(2)])


# 100 random trials per differentiable op ---------------------------------------

def _nonzero(rng, shape, margin=1e-2):
    a = rng.normal(size=shape)
    return np.where(np.abs(a) < margin, np.sign(a + 1e-12) * margin * 2, a)


OP_CASES = {
    "add": (lambda a, b: ops.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: ops.sub(a, b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: ops.mul(a, b), [(3, 4), (1, 4)]),
    "div": (lambda a, b: ops.div(a, b), [(3, 4), (3, 4)]),
    "neg": (lambda a: ops.neg(a), [(5,)]),
    "square": (lambda a: ops.square(a), [(5,)]),
    "relu": (lambda a: ops.relu(a), [(6,)]),
    "sigmoid": (lambda a: ops.sigmoid(a), [(6,)]),
    "sum": (lambda a: ops.sum(a, axis=1), [(3, 4)]),
    "mean": (lambda a: ops.mean(a, axis=0), [(3, 4)]),
    "reshape": (lambda a: ops.reshape(a, (2, 6)), [(3, 4)]),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "tile": (lambda a: ops.tile(a, 2, 3), [(2, 3)]),
    "global_avg_pool": (lambda a: ops.global_avg_pool(a), [(2, 3, 3)]),
    "matmul": (lambda a, b: ops.matmul(a, b), [(3, 4), (4, 2)]),
    "linear": (lambda x, w, b: ops.linear(x, w, b), [(3, 4), (2, 4), (2,)]),
    "conv2d_s1": (lambda x, w, b: ops.conv2d(x, w, b, padding=1), [(1, 2, 4, 4), (2, 2, 3, 3), (2,)]),
    "conv2d_s2": (lambda x, w: ops.conv2d(x, w, stride=2, padding=1), [(1, 1, 5, 5), (2, 1, 3, 3)]),
    "downsample2x": (lambda a: ops.downsample2x(a), [(2, 4, 6)]),
    "upsample2x": (lambda a: ops.upsample2x(a), [(2, 3, 2)]),
    "softmax": (lambda a: ops.softmax(a, axis=1), [(2, 5)]),
    "log_softmax": (lambda a: ops.log_softmax(a, axis=1), [(2, 5)]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_random_trials(name):
    fn, shapes = OP_CASES[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    worst = 0.0
    for _ in range(TRIALS):
        arrays = [_nonzero(rng, s, 0.05 if name in ("relu", "div") else 1e-2) for s in shapes]
        if name == "div":
            arrays[1] = np.sign(arrays[1]) * (np.abs(arrays[1]) + 0.5)
        r = rng.normal(size=np.shape(fn(*[Tensor(a) for a in arrays]).data))
        worst = max(worst, grad_check(lambda *t: ops.sum(fn(*t) * r), arrays))
    assert worst < TOL, f"{name}: max relative error {worst:.2e}"


@pytest.mark.parametrize("name", ["cross_entropy", "bce_with_logits"])
def test_loss_gradients_random_trials(name):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(TRIALS):
        z = rng.normal(scale=3, size=(4, 5))
        if name == "cross_entropy":
            t = rng.integers(0, 5, size=4)
            f = lambda a: ops.cross_entropy(a, t)  # noqa: E731
        else:
            t = rng.uniform(size=(4, 5))
            f = lambda a: ops.bce_with_logits(a, t)  # noqa: E731
        worst = max(worst, grad_check(f, [z]))
    assert worst < TOL


def test_bce_matches_naive_formula(rng):
    z, t = rng.normal(size=10), rng.uniform(size=10)
    with precision(np.float64):
        got = float(ops.bce_with_logits(Tensor(z), t).data)
    p = 1 / (1 + np.exp(-z))
    assert got == pytest.approx(float(np.mean(-(t * np.log(p) + (1 - t) * np.log(1 - p)))), rel=1e-12)


def test_sigmoid_extreme_logits_finite():
    out = ops.sigmoid(Tensor(np.array([-1e4, 0.0, 1e4]))).data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
