import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdnn_isp import autodiff as ad
from pdnn_isp.errors import NumericalError
from oracles import central_difference


def _grad(f, *arrays):
    """Autodiff gradients of scalar f(*tensors) w.r.t. every array."""
    ts = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.Tape() as tape:
        out = f(*ts)
    tape.backward(out)
    return out.data, [t.grad for t in ts]


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def _naive_conv(x, w, b):
    C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((w.shape[0], H, W))
    for o in range(w.shape[0]):
        for i in range(H):
            for j in range(W):
                out[o, i, j] = np.sum(w[o] * xp[:, i:i + 3, j:j + 3]) + b[o]
    return out


def test_square_derivative():
    val, (g,) = _grad(lambda x: ad.square(x).sum(), np.array(3.0))
    assert val == 9.0 and g == 6.0


def test_identity_kernel_conv():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 5, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    xt = ad.Tensor(x, requires_grad=True)
    with ad.Tape() as tape:
        y = ad.conv2d(xt, ad.Tensor(w))
    assert np.array_equal(y.data, x)
    seed = rng.normal(size=x.shape)
    tape.backward(y, seed)
    assert np.array_equal(xt.grad, seed)


def test_conv_matches_naive_loop():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(3, 6, 5)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    y = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b))
    assert np.allclose(y.data, _naive_conv(x, w, b), rtol=1e-13, atol=1e-13)


def test_diamond_accumulates():
    # y = x*x + 3x uses x along two paths; dy/dx = 2x + 3
    _, (g,) = _grad(lambda x: (ad.mul(x, x) + ad.mul(x, 3.0)).sum(), np.array([2.0, -1.0]))
    assert np.array_equal(g, [7.0, 1.0])


def test_shape_error_names_op():
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


def test_abs_smooth_derivative():
    x = np.array([-2.0, 0.0, 1e-3])
    eps = 1e-2
    val, (g,) = _grad(lambda t: ad.abs_smooth(t, eps).sum(), x)
    assert val == pytest.approx(np.sum(np.sqrt(x ** 2 + eps ** 2)))
    assert np.allclose(g, x / np.sqrt(x ** 2 + eps ** 2))


def test_five_layer_composition_fd():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 6, 6))
    w1 = rng.normal(size=(3, 2, 3, 3)) * 0.4
    w2 = rng.normal(size=(3, 3, 3, 3)) * 0.4
    fc = rng.normal(size=(5, 12)) * 0.3

    def f(x, w1, w2, fc):
        h = ad.relu(ad.conv2d(x, w1))
        h = ad.leaky_relu(ad.conv2d(h, w2) + h, 0.01)
        h = ad.avg_pool2d(h, 3).reshape(-1)
        z = ad.leaky_relu(fc @ h, 0.01)
        return ad.abs_smooth(z, 1e-3).sum()

    _, grads = _grad(f, x, w1, w2, fc)
    arrays = [x, w1, w2, fc]
    for k, g in enumerate(grads):
        def scalar(a, k=k):
            args = [ad.Tensor(v) for v in arrays]
            args[k] = ad.Tensor(a)
            return float(f(*args).data)
        assert _rel(g, central_difference(scalar, arrays[k], 1e-5)) <= 1e-6


LAYERS = {
    "add": (lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
    "mul": (lambda a, b: ad.mul(a, b), [(3, 4), (3, 1)]),
    "matmul": (lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
    "matvec": (lambda a, b: ad.matmul(a, b), [(3, 4), (4,)]),
    "square": (lambda a: ad.square(a), [(5,)]),
    "relu": (lambda a: ad.relu(a), [(6,)]),
    "leaky": (lambda a: ad.leaky_relu(a, 0.01), [(6,)]),
    "abs_smooth": (lambda a: ad.abs_smooth(a, 1e-2), [(6,)]),
    "reshape": (lambda a: ad.reshape(a, (2, 6)), [(3, 4)]),
    "transpose": (lambda a: ad.transpose(a, (1, 0)), [(3, 4)]),
    "sum_axis": (lambda a: ad.tsum(a, 1), [(3, 4)]),
    "gather": (lambda a: ad.gather(a, np.array([2, 0, 2]), 1), [(3, 4)]),
    "conv2d": (lambda x, w, b: ad.conv2d(x, w, b), [(2, 4, 5), (3, 2, 3, 3), (3,)]),
    "avg_pool": (lambda a: ad.avg_pool2d(a, 2), [(2, 4, 4)]),
}


@pytest.mark.parametrize("layer", sorted(LAYERS))
@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_layer_gradient_check(layer, seed):
    op, shapes = LAYERS[layer]
    rng = np.random.default_rng(seed)
    arrays = [rng.normal(size=s) for s in shapes]
    # keep kinks of relu-type ops away from the finite-difference stencil
    arrays = [np.where(np.abs(a) < 1e-3, 0.5, a) for a in arrays]
    weights = rng.normal(size=np.shape(op(*[ad.Tensor(a) for a in arrays]).data))

    def f(*ts):
        return ad.mul(op(*ts), weights).sum()

    _, grads = _grad(f, *arrays)
    for k, g in enumerate(grads):
        def scalar(a, k=k):
            args = [ad.Tensor(v) for v in arrays]
            args[k] = ad.Tensor(a)
            return float(f(*args).data)
        assert _rel(g, central_difference(scalar, arrays[k], 1e-5)) <= 1e-6


def test_no_tape_records_nothing():
    t = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        pass
    y = ad.square(t)
    assert tape.nodes == [] and y.data.sum() == 3


# ---------------------------------------------------------------------- Adam

def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    st_ = ad.AdamState()
    ad.adam_step(st_, p, {"w": np.zeros(2)})
    assert np.array_equal(p["w"], [1.0, -2.0]) and st_.step == 1


def test_adam_constant_gradient_step_size():
    p = {"w": np.zeros(3)}
    st_ = ad.AdamState(learning_rate=1e-3)
    g = np.array([0.5, -3.0, 1e-2])
    for _ in range(200):
        before = p["w"].copy()
        ad.adam_step(st_, p, {"w": g})
    step = p["w"] - before
    assert np.allclose(step, -1e-3 * np.sign(g), rtol=1e-5)


def test_adam_scalar_quadratic():
    p = {"w": np.array(0.0)}
    st_ = ad.AdamState(learning_rate=0.1)
    for k in range(500):
        ad.adam_step(st_, p, {"w": 2 * (p["w"] - 5)})
        if abs(p["w"] - 5) < 1e-3:
            break
    assert abs(p["w"] - 5) < 1e-3


def test_adam_non_finite_names_block():
    with pytest.raises(NumericalError, match="'b'.*step 1"):
        ad.adam_step(ad.AdamState(), {"a": np.zeros(1), "b": np.zeros(1)},
                     {"a": np.zeros(1), "b": np.array([np.nan])})


def test_checkpoint_round_trip(tmp_path):
    blocks = {"conv0.w": np.arange(12.0).reshape(3, 4), "fc.b": np.array([1.5])}
    ad.save_checkpoint(tmp_path / "w.npz", blocks)
    back = ad.load_checkpoint(tmp_path / "w.npz")
    assert set(back) == set(blocks)
    assert all(np.array_equal(back[k], blocks[k]) for k in blocks)
