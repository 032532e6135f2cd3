import numpy as np
import pytest

from abel_sched import (
    AdamState,
    Layer,
    Model,
    ModelArch,
    MomentumState,
    ParamSet,
    clip_global_norm,
    growth_threshold_lr,
    inner_gw,
    predicted_delta_wsq,
    predicted_delta_wsq_truncated,
    step_adam,
    step_sgd,
    weight_norm_sq,
)

from helpers import measured_delta_wsq

ARCH = ModelArch(input_dim=10, hidden=(16, 8), classes=4)


def setup_batch(seed=0, batch=32):
    model = Model(ARCH)
    params = model.init_params(seed)
    rng = np.random.default_rng(seed + 100)
    x = rng.normal(size=(batch, 10))
    y = rng.integers(0, 4, batch)
    return model, params, x, y


def test_plain_sgd_is_exactly_w_minus_lr_g():
    model, params, x, y = setup_batch()
    _, grads = model.loss_and_grad(params, x, y)
    opt = MomentumState.init(params, mu=0.0)
    new, _ = step_sgd(params, opt, grads, lr=0.3, weight_decay=0.0)
    for layer in params:
        np.testing.assert_array_equal(new[layer.name].value,
                                      layer.value - 0.3 * grads[layer.name])


@pytest.mark.parametrize("lr", [0.1, 1.0])
@pytest.mark.parametrize("weight_decay", [0.0, 5e-4, 5e-3])
def test_exact_norm_identity_per_layer(lr, weight_decay):
    """Measured squared-norm change equals the exact update identity."""
    model, params, x, y = setup_batch(seed=1)
    opt = MomentumState.init(params, mu=0.0)
    for _ in range(100):
        _, grads = model.loss_and_grad(params, x, y)
        _, wsq = weight_norm_sq(params)
        _, gw = inner_gw(params, grads)
        new, opt = step_sgd(params, opt, grads, lr, weight_decay)
        measured = measured_delta_wsq(params, new)
        for layer in params:
            name = layer.name
            g = grads[name].ravel()
            gsq = float(np.dot(g, g))
            lam = weight_decay if layer.l2_enabled else 0.0
            predicted = predicted_delta_wsq(wsq[name], gsq, gw[name], lr, lam)
            rel = abs(measured[name] - predicted) / max(
                abs(measured[name]), abs(predicted), 1e-30)
            assert rel < 1e-10, (name, lr, weight_decay, rel)
        params = new


def test_truncation_differs_by_second_order_terms_exactly():
    rng = np.random.default_rng(3)
    for _ in range(200):
        wsq, gsq = rng.uniform(0.1, 100, size=2)
        gw = rng.normal(0, 10)
        lr = rng.uniform(0.01, 2)
        lam = rng.uniform(0, 0.01)
        exact = predicted_delta_wsq(wsq, gsq, gw, lr, lam)
        trunc = predicted_delta_wsq_truncated(wsq, gsq, gw, lr, lam)
        # exact - truncated = (lr*lam)^2 * wsq + 2*lr^2*lam*gw, an O(lr^2*lam) remainder
        remainder = (lr * lam) ** 2 * wsq + 2 * lr * lr * lam * gw
        assert exact - trunc == pytest.approx(remainder, rel=1e-9, abs=1e-15)


def test_lambda_zero_identity_reduces_to_two_terms():
    assert predicted_delta_wsq(5.0, 2.0, 0.7, 0.3, 0.0) == pytest.approx(
        0.3 ** 2 * 2.0 - 2 * 0.3 * 0.7, rel=1e-15)


def test_momentum_buffer_accumulates_l2_gradient():
    model, params, x, y = setup_batch(seed=2)
    _, grads = model.loss_and_grad(params, x, y)
    opt = MomentumState.init(params, mu=0.9)
    lam = 0.01
    p1, opt1 = step_sgd(params, opt, grads, lr=0.1, weight_decay=lam)
    for layer in params:
        expected_v = grads[layer.name] + (lam * layer.value if layer.l2_enabled else 0.0)
        np.testing.assert_allclose(opt1.velocity[layer.name], expected_v, rtol=1e-15)
        np.testing.assert_allclose(p1[layer.name].value,
                                   layer.value - 0.1 * expected_v, rtol=1e-15)
    # second step mixes the buffer
    _, grads2 = model.loss_and_grad(p1, x, y)
    p2, opt2 = step_sgd(p1, opt1, grads2, lr=0.1, weight_decay=lam)
    name = "fc1.w"
    expected_v2 = (0.9 * opt1.velocity[name] + grads2[name]
                   + lam * p1[name].value)
    np.testing.assert_allclose(opt2.velocity[name], expected_v2, rtol=1e-15)


def test_l2_filter_layers_without_flag_unaffected_by_lambda():
    """With frozen gradients, varying lambda must not move non-L2 layers."""
    model, params, x, y = setup_batch(seed=4)
    _, grads = model.loss_and_grad(params, x, y)
    opt = MomentumState.init(params, mu=0.0)
    deltas = {}
    for lam in (0.0, 0.05):
        new, _ = step_sgd(params, opt, grads, lr=0.2, weight_decay=lam)
        _, wsq_new = weight_norm_sq(new)
        _, wsq_old = weight_norm_sq(params)
        deltas[lam] = {n: wsq_new[n] - wsq_old[n] for n in wsq_new}
    for layer in params:
        if layer.l2_enabled:
            continue
        assert deltas[0.0][layer.name] == deltas[0.05][layer.name]
    assert deltas[0.0]["fc1.w"] != deltas[0.05]["fc1.w"]


def test_adam_first_step_magnitude_is_about_lr():
    params = ParamSet([Layer("w", np.array([1.0, -2.0, 3.0]))])
    grads = {"w": np.array([0.5, 0.5, 0.5])}
    opt = AdamState.init(params)
    new, opt = step_adam(params, opt, grads, lr=0.01)
    step = new["w"].value - params["w"].value
    np.testing.assert_allclose(np.abs(step), 0.01, rtol=1e-6)
    assert opt.t == 1


def test_adam_zero_gradient_zero_decay_is_fixed_point():
    params = ParamSet([Layer("w", np.array([1.0, -2.0]))])
    grads = {"w": np.zeros(2)}
    opt = AdamState.init(params)
    new, _ = step_adam(params, opt, grads, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(new["w"].value, params["w"].value)


def test_adam_applies_l2_only_to_flagged_layers():
    params = ParamSet([Layer("w", np.ones(3)), Layer("b", np.ones(3), l2_enabled=False)])
    grads = {"w": np.zeros(3), "b": np.zeros(3)}
    new, _ = step_adam(params, AdamState.init(params), grads, lr=0.1, weight_decay=0.1)
    assert np.all(new["w"].value != 1.0)
    np.testing.assert_array_equal(new["b"].value, np.ones(3))


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}  # norm 5
    clipped = clip_global_norm(grads, 2.5)
    np.testing.assert_allclose(clipped["a"], [1.5, 0.0])
    np.testing.assert_allclose(clipped["b"], [0.0, 2.0])
    same = clip_global_norm(grads, 10.0)
    np.testing.assert_array_equal(same["a"], grads["a"])
    rng = np.random.default_rng(5)
    for _ in range(50):
        g = {str(i): rng.normal(size=rng.integers(1, 6)) for i in range(3)}
        c = clip_global_norm(g, 1.0)
        total = np.sqrt(sum(np.dot(v, v) for v in c.values()))
        assert total <= 1.0 + 1e-12
    with pytest.raises(ValueError):
        clip_global_norm(grads, 0.0)


def test_growth_threshold_matches_identity_sign():
    rng = np.random.default_rng(6)
    for _ in range(300):
        gsq = rng.uniform(0.01, 10)
        gw = rng.normal(0, 3)
        thr = growth_threshold_lr(gsq, gw)
        if gw <= 0:
            assert thr is None
            # any lr grows the norm when g.w <= 0 and lambda = 0
            lr = rng.uniform(0.01, 5)
            assert predicted_delta_wsq(1.0, gsq, gw, lr, 0.0) >= 0
        else:
            for factor in (0.5, 2.0):
                lr = thr * factor
                delta = predicted_delta_wsq(1.0, gsq, gw, lr, 0.0)
                assert (delta > 0) == (factor > 1.0)


def test_per_step_growth_heuristic_on_the_toy_net():
    """lambda = 0 steps with lr above the per-step threshold grow the norm."""
    model, params, x, y = setup_batch(seed=7)
    opt = MomentumState.init(params, mu=0.0)
    checked = 0
    for _ in range(30):
        _, grads = model.loss_and_grad(params, x, y)
        gsq = sum(float(np.dot(g.ravel(), g.ravel())) for g in grads.values())
        gw, _ = inner_gw(params, grads)
        thr = growth_threshold_lr(gsq, gw)
        if thr is not None and thr < 10.0:
            lr = 2.0 * thr
            stepped, _ = step_sgd(params, opt, grads, lr, 0.0)
            w0, _ = weight_norm_sq(params)
            w1, _ = weight_norm_sq(stepped)
            assert w1 - w0 > 0
            checked += 1
        _, grads = model.loss_and_grad(params, x, y)
        params, opt = step_sgd(params, opt, grads, 0.05, 0.0)
    assert checked > 0


def test_shape_mismatch_rejected():
    params = ParamSet([Layer("w", np.zeros((2, 2)))])
    opt = MomentumState.init(params, mu=0.0)
    with pytest.raises(ValueError):
        step_sgd(params, opt, {"w": np.zeros(3)}, lr=0.1)
    with pytest.raises(ValueError):
        step_sgd(params, opt, {"v": np.zeros((2, 2))}, lr=0.1)
