import math

import numpy as np
import pytest

from segqc.errors import ConfigurationError, ShapeMismatchError
from segqc.nn import (
    AdamState,
    LayerSpec,
    adam_step,
    check_function_gradient,
    generalized_dice_loss,
    gradient_check,
    he_normal_init,
    make_layer,
    mse_loss,
)
from segqc.nn import functional as F


def naive_conv2d(x, w, b, s, p):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    ho, wo = (h + 2 * p - k) // s + 1, (wd + 2 * p - k) // s + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    out[ni, oi, i, j] = np.sum(xp[ni, :, i * s:i * s + k, j * s:j * s + k] * w[oi]) + b[oi]
    return out


def naive_conv_transpose2d(x, w, b, s, p):
    n, ci, h, wd = x.shape
    _, co, k, _ = w.shape
    ho, wo = (h - 1) * s - 2 * p + k, (wd - 1) * s - 2 * p + k
    full = np.zeros((n, co, ho + 2 * p, wo + 2 * p))
    for ni in range(n):
        for a in range(ci):
            for i in range(h):
                for j in range(wd):
                    full[ni, :, i * s:i * s + k, j * s:j * s + k] += x[ni, a, i, j] * w[a]
    return full[:, :, p:p + ho, p:p + wo] + b[None, :, None, None]


@pytest.mark.parametrize("k,s,p", [(4, 2, 1), (3, 1, 1), (1, 1, 0), (2, 2, 0)])
def test_conv_matches_direct_loops(k, s, p):
    rng = np.random.default_rng(k * 10 + s)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    if (8 + 2 * p - k) % s:
        pytest.skip("shape not tiled by stride")
    out, _ = F.conv2d_forward(x, w, b, s, p)
    np.testing.assert_allclose(out, naive_conv2d(x, w, b, s, p), rtol=1e-12, atol=1e-12)
    wt = rng.standard_normal((3, 4, k, k))
    y = rng.standard_normal((2, 3, 4, 4))
    outt, _ = F.conv_transpose2d_forward(y, wt, b, s, p)
    np.testing.assert_allclose(outt, naive_conv_transpose2d(y, wt, b, s, p), rtol=1e-12, atol=1e-12)


def test_conv_block1_shape():
    layer = make_layer(LayerSpec("conv", 4, 32, 4, 2, 1))
    out, _ = layer.forward(np.zeros((1, 4, 256, 256), np.float32))
    assert out.shape == (1, 32, 128, 128)


def test_conv_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 3, 5, 5))
    w = np.eye(3).reshape(3, 3, 1, 1)
    out, _ = F.conv2d_forward(x, w, np.zeros(3), 1, 0)
    assert np.array_equal(out, x)


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatchError):
        F.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 3, 3, 3)), None, 1, 1)
    with pytest.raises(ConfigurationError):
        F.conv2d_forward(np.zeros((1, 3, 5, 5)), np.zeros((3, 3, 4, 4)), None, 2, 1)
    with pytest.raises(ConfigurationError):
        LayerSpec("conv", 1, 1, 3, stride=0)
    with pytest.raises(ConfigurationError):
        LayerSpec("pool")


def test_conv_transpose_shape_and_zero_input():
    layer = make_layer(LayerSpec("conv_transpose", 100, 32, 4, 2, 1), np.float64)
    layer.params["bias"] = np.arange(32.0)
    out, _ = layer.forward(np.zeros((1, 100, 4, 4)))
    assert out.shape == (1, 32, 8, 8)
    assert np.array_equal(out, np.broadcast_to(np.arange(32.0)[None, :, None, None], out.shape))


@pytest.mark.parametrize("k,s,p,size", [(4, 2, 1, 16), (3, 1, 1, 8), (4, 2, 1, 8)])
def test_conv_transpose_is_adjoint(k, s, p, size):
    rng = np.random.default_rng(size + k)
    w = rng.standard_normal((5, 3, k, k))
    x = rng.standard_normal((2, 3, size, size))
    cx, _ = F.conv2d_forward(x, w, None, s, p)
    y = rng.standard_normal(cx.shape)
    ty, _ = F.conv_transpose2d_forward(y, w, None, s, p)
    lhs, rhs = np.sum(cx * y), np.sum(x * ty)
    assert abs(lhs - rhs) <= 1e-8 * max(1.0, abs(lhs))


def test_against_torch_if_available():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 4, 16, 16))
    w = rng.standard_normal((6, 4, 4, 4))
    b = rng.standard_normal(6)
    ours, _ = F.conv2d_forward(x, w, b, 2, 1)
    ref = torch.nn.functional.conv2d(torch.tensor(x), torch.tensor(w), torch.tensor(b), 2, 1).numpy()
    np.testing.assert_allclose(ours, ref, rtol=1e-10, atol=1e-10)
    ours_t, _ = F.conv_transpose2d_forward(ours, w, None, 2, 1)
    ref_t = torch.nn.functional.conv_transpose2d(torch.tensor(ours), torch.tensor(w), None, 2, 1).numpy()
    np.testing.assert_allclose(ours_t, ref_t, rtol=1e-10, atol=1e-10)


def _layer(spec, rng):
    layer = make_layer(spec, np.float64)
    he_normal_init([layer], rng)
    for k in layer.params:
        layer.params[k] = layer.params[k] + 0.5 * rng.standard_normal(layer.params[k].shape)
    return layer


LAYER_SPECS = [
    LayerSpec("conv", 2, 3, 3, 1, 1),
    LayerSpec("conv", 2, 3, 4, 2, 1),
    LayerSpec("conv_transpose", 2, 3, 3, 1, 1),
    LayerSpec("conv_transpose", 2, 3, 4, 2, 1),
    LayerSpec("batchnorm", 2, 2),
    LayerSpec("leaky_relu"),
    LayerSpec("dropout", drop_prob=0.3),
    LayerSpec("softmax_channel"),
]


@pytest.mark.parametrize("spec", LAYER_SPECS, ids=lambda s: f"{s.kind}-k{s.kernel}s{s.stride}")
def test_layer_gradients(spec):
    rng = np.random.default_rng(11)
    report = gradient_check(_layer(spec, rng), rng.standard_normal((1, 2, 6, 6)), 1e-4)
    assert report.passed, str(report)


def test_batchnorm_eval_mode_gradient():
    rng = np.random.default_rng(2)
    layer = _layer(LayerSpec("batchnorm", 3, 3), rng)
    layer.buffers["running_mean"] = rng.standard_normal(3)
    layer.buffers["running_var"] = rng.random(3) + 0.5
    report = gradient_check(layer, rng.standard_normal((2, 3, 4, 4)), 1e-4, train=False)
    assert report.passed, str(report)


def test_linear_layer_gradient_is_exact():
    rng = np.random.default_rng(5)
    layer = _layer(LayerSpec("conv", 2, 2, 1, 1, 0), rng)
    report = gradient_check(layer, rng.standard_normal((1, 2, 3, 3)), 1e-9)
    assert report.passed, str(report)


def test_gradient_check_steps_around_kinks():
    x = np.array([[[[3e-6, -2e-6, 0.5, -0.7]]]])
    layer = make_layer(LayerSpec("leaky_relu"), np.float64)
    guarded = gradient_check(layer, x, 1e-6)
    assert guarded.passed and guarded.kink_retries == 2
    naive = gradient_check(layer, x, 1e-6, kink_retries=0)
    assert not naive.passed


def test_gradient_check_reports_failure_instead_of_raising():
    x = np.random.default_rng(5).standard_normal(6)
    report = check_function_gradient(lambda v: (float(np.sum(v ** 3)), 2 * v ** 2), x, 1e-4)
    assert not report.passed
    assert "FAIL" in str(report)


def test_batchnorm_train_normalizes():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3, 5, 5)) * 10 + 3
    gamma, beta = np.ones(3), np.zeros(3)
    rm, rv = np.zeros(3), np.ones(3)
    out, _ = F.batchnorm_forward(x, gamma, beta, rm, rv, True)
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)
    n = 4 * 25
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))


def test_batchnorm_constant_channel_and_eval_determinism():
    x = np.full((2, 1, 3, 3), 7.0)
    out, _ = F.batchnorm_forward(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), True)
    assert np.all(out == 0)
    layer = make_layer(LayerSpec("batchnorm", 2, 2))
    layer.buffers["running_mean"][:] = [0.3, -1]
    z = np.random.default_rng(0).standard_normal((2, 2, 4, 4)).astype(np.float32)
    a, _ = layer.forward(z, train=False)
    b, _ = layer.forward(z, train=False)
    assert a.tobytes() == b.tobytes()


def test_activation_examples():
    y, _ = F.leaky_relu_forward(np.array([-1.0, 0.0, 2.0]), 0.2)
    assert np.allclose(y, [-0.2, 0.0, 2.0])
    x = np.random.default_rng(0).standard_normal((2, 4, 3, 3)) * 20
    s, _ = F.softmax_channel_forward(x)
    assert np.all(np.abs(s.sum(axis=1) - 1) <= 1e-6)
    assert np.all((s > 0) & (s < 1)) or np.all(s.max(axis=1) <= 1)
    d, _ = F.dropout_forward(x, 0.1, train=False)
    assert d is x


def test_dropout_train_statistics_and_reproducibility():
    x = np.ones((1, 1, 200, 200))
    a, _ = F.dropout_forward(x, 0.25, True, np.random.default_rng(9))
    b, _ = F.dropout_forward(x, 0.25, True, np.random.default_rng(9))
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 1 / 0.75}
    assert abs((a == 0).mean() - 0.25) < 0.01
    with pytest.raises(ConfigurationError):
        F.dropout_forward(x, 1.0, True, np.random.default_rng(0))


def test_mse_examples():
    t = np.random.default_rng(0).random((2, 4, 3, 3))
    assert mse_loss(t, t)[0] == 0
    assert mse_loss(t + 0.5, t)[0] == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ShapeMismatchError):
        mse_loss(t, t[:1])


def _one_hot(rng, shape=(2, 5, 5), c=4):
    return np.eye(c)[rng.integers(0, c, shape)].transpose(0, 3, 1, 2)


def _soft(rng, shape=(2, 4, 5, 5)):
    p = rng.random(shape) + 0.05
    return p / p.sum(axis=1, keepdims=True)


def test_gdl_examples():
    rng = np.random.default_rng(4)
    tiny = np.eye(4).reshape(1, 4, 2, 2)
    assert generalized_dice_loss(tiny, tiny)[0] == pytest.approx(0.0, abs=1e-6)
    assert generalized_dice_loss(np.roll(tiny, 1, axis=1), tiny)[0] == pytest.approx(1.0, abs=1e-6)
    t = _one_hot(rng)
    assert generalized_dice_loss(np.roll(t, 1, axis=1), t)[0] == pytest.approx(1.0, abs=1e-6)
    for bg in (True, False):
        loss = generalized_dice_loss(_soft(rng), t, bg)[0]
        assert 0.0 <= loss <= 1.0


def test_gdl_perfect_prediction_residual():
    # the global epsilon leaves eps / (2N + eps) with N = sum of inverse class volumes
    rng = np.random.default_rng(4)
    t = _one_hot(rng, shape=(2, 16, 16))
    vols = t.sum(axis=(0, 2, 3))
    n = np.sum(vols / (vols ** 2 + 1e-6))
    assert generalized_dice_loss(t, t)[0] == pytest.approx(1e-6 / (2 * n + 1e-6), rel=1e-9)


def test_gdl_matches_direct_formula():
    rng = np.random.default_rng(8)
    t, p = _one_hot(rng), _soft(rng)
    for first in (0, 1):
        r, q = t[:, first:], p[:, first:]
        w = [1 / (r[:, l].sum() ** 2 + 1e-6) for l in range(r.shape[1])]
        num = sum(w[l] * (r[:, l] * q[:, l]).sum() for l in range(r.shape[1]))
        den = sum(w[l] * (r[:, l] + q[:, l]).sum() for l in range(r.shape[1])) + 1e-6
        assert generalized_dice_loss(p, t, first == 0)[0] == pytest.approx(1 - 2 * num / den, rel=1e-12)


def test_gdl_background_exclusion_ignores_channel_zero():
    rng = np.random.default_rng(1)
    t, p = _one_hot(rng), _soft(rng)
    _, g = generalized_dice_loss(p, t, include_background=False)
    assert np.all(g[:, 0] == 0)


@pytest.mark.parametrize("fn", ["mse", "gdl_bg", "gdl_nobg"])
def test_loss_gradients(fn):
    rng = np.random.default_rng(12)
    t, p = _one_hot(rng), _soft(rng)
    f = {
        "mse": lambda q: mse_loss(q, t),
        "gdl_bg": lambda q: generalized_dice_loss(q, t, True),
        "gdl_nobg": lambda q: generalized_dice_loss(q, t, False),
    }[fn]
    report = check_function_gradient(f, p, 1e-4)
    assert report.passed, str(report)


def test_gdl_gradient_with_absent_class():
    rng = np.random.default_rng(3)
    t = _one_hot(rng, c=3)
    t = np.concatenate([t, np.zeros((2, 1, 5, 5))], axis=1)  # class 3 absent
    p = _soft(rng)
    assert np.isfinite(generalized_dice_loss(p, t)[0])
    # the 1e6 weight of the absent class magnifies round-off; a wider step is cleaner
    assert check_function_gradient(lambda q: generalized_dice_loss(q, t), p, 1e-4, rel_step=1e-4).passed


def test_he_normal_statistics_and_determinism():
    layer = make_layer(LayerSpec("conv", 32, 348, 3, 1, 1))
    he_normal_init([layer], np.random.default_rng(0))
    w = layer.params["weight"]
    assert w.size >= 100_000
    fan_in = 32 * 9
    assert abs(w.astype(np.float64).var() / (2 / fan_in) - 1) < 0.05
    assert np.all(layer.params["bias"] == 0)
    bn = make_layer(LayerSpec("batchnorm", 4, 4))
    bn.params["weight"][:] = 3
    he_normal_init([bn], np.random.default_rng(0))
    assert np.all(bn.params["weight"] == 1) and np.all(bn.params["bias"] == 0)
    other = make_layer(LayerSpec("conv", 32, 348, 3, 1, 1))
    he_normal_init([other], np.random.default_rng(0))
    assert np.array_equal(other.params["weight"], w)


def _adam_oracle(theta, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        g = g + wd * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        trace.append(theta)
    return trace


def test_adam_first_step_closed_form():
    for g in (0.37, -2.5):
        params = {"w": np.array([1.0])}
        state = AdamState(lr=2e-4, weight_decay=0.0)
        adam_step(params, {"w": np.array([g])}, state)
        step = params["w"][0] - 1.0
        assert step == pytest.approx(-2e-4 * g / (abs(g) + 1e-8), rel=1e-12)
        assert step == pytest.approx(-2e-4 * math.copysign(1, g), rel=1e-6)


def test_adam_zero_gradient_is_noop():
    params = {"w": np.array([0.3, -1.2])}
    state = AdamState(weight_decay=0.0)
    for _ in range(3):
        adam_step(params, {"w": np.zeros(2)}, state)
    assert np.array_equal(params["w"], [0.3, -1.2])


def test_adam_three_step_trace():
    grads = [0.5, -0.2, 0.9]
    params = {"w": np.array([0.7])}
    state = AdamState(lr=0.01, weight_decay=0.05)
    got = []
    for g in grads:
        adam_step(params, {"w": np.array([g])}, state)
        got.append(params["w"][0])
    for a, b in zip(got, _adam_oracle(0.7, grads, 0.01, 0.05)):
        assert abs(a - b) <= 1e-12
    assert state.step == 3


def test_adam_matches_torch_if_available():
    torch = pytest.importorskip("torch")
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(5)
    grads = [rng.standard_normal(5) for _ in range(4)]
    t = torch.tensor(theta.copy(), requires_grad=True)
    opt = torch.optim.Adam([t], lr=2e-4, weight_decay=1e-5)
    params, state = {"w": theta.copy()}, AdamState(lr=2e-4, weight_decay=1e-5)
    for g in grads:
        t.grad = torch.tensor(g)
        opt.step()
        adam_step(params, {"w": g}, state)
    np.testing.assert_allclose(params["w"], t.detach().numpy(), rtol=0, atol=1e-14)
