import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pitchaccent import nn

from .reference import conv2d_naive, dense_naive, depthwise_naive, maxpool_naive


def test_conv_full_extent_kernel_sums_input(rng):
    x = rng.normal(size=(1, 1, 6, 6))
    out, _ = nn.conv2d_forward(x, np.ones((1, 1, 6, 6)), np.zeros(1))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == pytest.approx(x.sum(), rel=1e-12)


def test_conv_output_length():
    assert nn.conv_output_length(50, 6, 4) == 12
    out, _ = nn.conv2d_forward(np.zeros((1, 1, 50, 7)), np.zeros((3, 1, 6, 7)), np.zeros(3), (4, 1))
    assert out.shape == (1, 3, 12, 1)


def test_conv_kernel_too_large():
    with pytest.raises(ValueError):
        nn.conv2d_forward(np.zeros((1, 1, 4, 7)), np.zeros((1, 1, 6, 7)), np.zeros(1))


def test_conv_matches_naive_2x9x5(rng):
    x = rng.normal(size=(1, 2, 9, 5))
    k, b = rng.normal(size=(3, 2, 3, 2)), rng.normal(size=3)
    out, _ = nn.conv2d_forward(x, k, b, (2, 1))
    assert np.max(np.abs(out - conv2d_naive(x, k, b, (2, 1)))) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_conv_random_shapes(seed):
    r = np.random.default_rng(seed)
    c, o = r.integers(1, 4, size=2)
    kh, kw = r.integers(1, 5, size=2)
    sh, sw = r.integers(1, 4, size=2)
    h, w = kh + r.integers(0, 8), kw + r.integers(0, 4)
    x = r.normal(size=(2, c, h, w))
    k, b = r.normal(size=(o, c, kh, kw)), r.normal(size=o)
    out, _ = nn.conv2d_forward(x, k, b, (sh, sw))
    assert np.max(np.abs(out - conv2d_naive(x, k, b, (sh, sw)))) < 1e-10


def test_depthwise_matches_naive(rng):
    x = rng.normal(size=(2, 4, 11, 1))
    k, b = rng.normal(size=(4, 1, 4, 1)), rng.normal(size=4)
    out, _ = nn.conv2d_forward(x, k, b, (2, 1), depthwise=True)
    assert np.max(np.abs(out - depthwise_naive(x, k, b, (2, 1)))) < 1e-10


def test_maxpool():
    x = np.array([1.0, 3.0, 2.0]).reshape(1, 1, 3, 1)
    out, cache = nn.maxpool_over_time_forward(x)
    assert out.tolist() == [[3.0]]


def test_maxpool_tie_routes_to_first():
    x = np.full((1, 1, 4, 1), 2.0)
    out, cache = nn.maxpool_over_time_forward(x)
    dx = nn.maxpool_over_time_backward(np.ones((1, 1)), cache)
    assert out[0, 0] == 2.0
    assert dx.ravel().tolist() == [1.0, 0.0, 0.0, 0.0]


def test_maxpool_random(rng):
    x = rng.normal(size=(3, 100, 12, 1))
    out, _ = nn.maxpool_over_time_forward(x)
    assert out.shape == (3, 100)
    assert np.array_equal(out, maxpool_naive(x))


def test_dense_identity_and_relu(rng):
    x = rng.normal(size=(2, 5))
    out, _ = nn.dense_forward(x, np.eye(5), np.zeros(5))
    assert np.array_equal(out, x)
    out, _ = nn.dense_forward(np.array([[-1.0, 2.0]]), np.eye(2), np.zeros(2), "relu")
    assert out.tolist() == [[0.0, 2.0]]


def test_dense_random(rng):
    x, w, b = rng.normal(size=(4, 7)), rng.normal(size=(3, 7)), rng.normal(size=3)
    out, _ = nn.dense_forward(x, w, b, "relu")
    assert np.max(np.abs(out - dense_naive(x, w, b, relu=True))) < 1e-12


def test_dense_dimension_mismatch():
    with pytest.raises(ValueError):
        nn.dense_forward(np.zeros((1, 3)), np.zeros((2, 4)), np.zeros(2))


class TestDropout:
    def test_p_zero_identity(self, rng):
        x = rng.normal(size=(5, 5))
        assert nn.dropout_forward(x, 0.0, True, rng)[0] is x
        assert nn.dropout_forward(x, 0.0, False, rng)[0] is x

    def test_eval_identity(self, rng):
        x = rng.normal(size=(5, 5))
        assert np.array_equal(nn.dropout_forward(x, 0.8, False)[0], x)

    def test_rates(self):
        out, _ = nn.dropout_forward(np.ones(100_000), 0.5, True, np.random.default_rng(99))
        zero_rate = np.mean(out == 0)
        assert zero_rate == pytest.approx(0.5, abs=0.01)
        assert out[out != 0].mean() == pytest.approx(2.0, abs=0.05)

    def test_seeded_masks_identical(self):
        a, _ = nn.dropout_forward(np.ones(1000), 0.2, True, np.random.default_rng(5))
        b, _ = nn.dropout_forward(np.ones(1000), 0.2, True, np.random.default_rng(5))
        assert a.tobytes() == b.tobytes()

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            nn.dropout_forward(np.ones(3), 1.0, True, np.random.default_rng())


class TestSoftmaxLoss:
    def test_uniform(self):
        for gold in (0, 1):
            loss, _ = nn.softmax_xent(np.zeros((1, 2)), [gold])
            assert loss == pytest.approx(np.log(2), abs=1e-12)

    def test_lambda_zero(self, rng):
        logits = rng.normal(size=(3, 2))
        w = {"W": rng.normal(size=(2, 3))}
        assert nn.softmax_xent_l2(logits, [0, 1, 1], w, 0.0)[0] == nn.softmax_xent(logits, [0, 1, 1])[0]

    def test_softmax_sums_and_shift_invariance(self, rng):
        z = rng.normal(size=(50, 2)) * 30
        p = nn.softmax(z)
        assert np.max(np.abs(p.sum(axis=1) - 1)) < 1e-12
        assert np.max(np.abs(nn.softmax(z + 123.0) - p)) < 1e-12

    def test_stable_for_large_logits(self):
        loss, _ = nn.softmax_xent(np.array([[1000.0, -1000.0]]), [0])
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_gradient_finite_differences(self, rng):
        logits = rng.normal(size=(4, 2))
        gold = np.array([0, 1, 1, 0])
        weights = {"W": rng.normal(size=(3, 5))}
        lam = 0.01

        def fn(params):
            loss, dlogits, dw = nn.softmax_xent_l2(params["logits"], gold, {"W": params["W"]}, lam)
            return loss, {"logits": dlogits, "W": dw["W"]}

        params = {"logits": logits, "W": weights["W"]}
        assert nn.grad_check(fn, params) < 1e-4


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.5, -2.0])}
        nn.adam_step(p, {"w": np.zeros(2)}, nn.AdamState())
        assert p["w"].tolist() == [1.5, -2.0]

    def test_first_step_closed_form(self):
        p = {"w": np.array([0.0])}
        nn.adam_step(p, {"w": np.array([1.0])}, nn.AdamState(lr=0.001))
        # bias correction gives m_hat = v_hat = 1
        assert p["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-15)
        assert p["w"][0] == pytest.approx(-0.000999995, abs=1e-8)

    def test_constant_gradient_steps_do_not_grow(self):
        p = {"w": np.array([0.0])}
        state = nn.AdamState()
        nn.adam_step(p, {"w": np.array([0.7])}, state)
        d1 = -p["w"][0]
        before = p["w"][0]
        nn.adam_step(p, {"w": np.array([0.7])}, state)
        d2 = before - p["w"][0]
        assert abs(d2) <= abs(d1) + 1e-9

    def test_matches_scalar_recurrence(self, rng):
        g = rng.normal(size=10)
        p = {"w": np.array([0.3])}
        state = nn.AdamState(lr=0.01)
        w, m, v = 0.3, 0.0, 0.0
        for t, gt in enumerate(g, start=1):
            nn.adam_step(p, {"w": np.array([gt])}, state)
            m = 0.9 * m + 0.1 * gt
            v = 0.999 * v + 0.001 * gt * gt
            w -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert p["w"][0] == pytest.approx(w, abs=1e-14)
        assert state.step_count == 10


class TestLayerGradients:
    def test_conv_backward(self, rng):
        x = rng.normal(size=(2, 3, 10, 4))
        params = {"x": x, "k": rng.normal(size=(4, 3, 3, 2)), "b": rng.normal(size=4)}
        proj = rng.normal(size=(2, 4, 4, 3))

        def fn(p):
            out, cache = nn.conv2d_forward(p["x"], p["k"], p["b"], (2, 1))
            dx, dk, db = nn.conv2d_backward(proj, cache)
            return float(np.sum(out * proj)), {"x": dx, "k": dk, "b": db}

        assert nn.grad_check(fn, params, n_samples=300) < 1e-6

    def test_depthwise_backward(self, rng):
        params = {"x": rng.normal(size=(2, 3, 9, 1)), "k": rng.normal(size=(3, 1, 4, 1)), "b": rng.normal(size=3)}
        proj = rng.normal(size=(2, 3, 3, 1))

        def fn(p):
            out, cache = nn.conv2d_forward(p["x"], p["k"], p["b"], (2, 1), depthwise=True)
            dx, dk, db = nn.conv2d_backward(proj, cache)
            return float(np.sum(out * proj)), {"x": dx, "k": dk, "b": db}

        assert nn.grad_check(fn, params) < 1e-6

    def test_dense_and_pool_backward(self, rng):
        params = {"x": rng.normal(size=(3, 4, 7, 1)), "W": rng.normal(size=(5, 4)), "b": rng.normal(size=5)}
        proj = rng.normal(size=(3, 5))

        def fn(p):
            pooled, pc = nn.maxpool_over_time_forward(p["x"])
            out, dc = nn.dense_forward(pooled, p["W"], p["b"], "relu")
            dpool, dW, db = nn.dense_backward(proj, dc)
            return float(np.sum(out * proj)), {"x": nn.maxpool_over_time_backward(dpool, pc), "W": dW, "b": db}

        assert nn.grad_check(fn, params) < 1e-6


class TestGradCheck:
    def test_linear_model_exact(self, rng):
        a = rng.normal(size=(6, 5))
        params = {"w": rng.normal(size=(6, 5))}
        assert nn.grad_check(lambda p: (float(np.sum(a * p["w"])), {"w": a}), params) < 1e-9

    def test_corrupted_gradient_detected(self, rng):
        params = {"w": rng.normal(size=(10,))}
        fn = lambda p: (float(np.sum(p["w"] ** 2)), {"w": 2 * p["w"] + 0.5})
        assert nn.grad_check(fn, params) > 1e-2

    def test_samples_at_least_200(self, rng):
        calls = []
        params = {"w": rng.normal(size=(30, 30))}

        def fn(p):
            calls.append(1)
            return float(np.sum(p["w"])), {"w": np.ones_like(p["w"])}

        nn.grad_check(fn, params)
        assert len(calls) == 1 + 2 * 200


def test_checkpoint_roundtrip(tmp_path, rng):
    params = {"conv1_W": rng.normal(size=(2, 1, 6, 7)), "out_b": rng.normal(size=2)}
    nn.save_checkpoint(tmp_path / "ck.npz", params, seed=7, config_hash="abc")
    back, meta = nn.load_checkpoint(tmp_path / "ck.npz")
    assert meta["seed"] == 7 and meta["config_hash"] == "abc" and meta["version"] == 1
    assert meta["tensors"]["conv1_W"] == [2, 1, 6, 7]
    for k in params:
        assert np.array_equal(back[k], params[k])
