"""Optimizer steps against scalar-loop oracles and the schedule formula."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itlsim import optim
from itlsim.errors import AlignmentError, NumericalError


def adam_oracle(theta, grad_fn, steps, lr=0.001, b1=0.9, b2=0.999, eps=1e-8):
    # independent scalar re-implementation: bias-corrected moments
    m = 0.0
    v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        theta = theta - lr * mhat / (vhat ** 0.5 + eps)
    return theta


class TestSgd:
    def test_schedule_at_epoch_zero(self):
        assert optim.SgdState().effective_lr == pytest.approx(0.1, abs=1e-15)

    def test_schedule_at_epoch_five(self):
        state = optim.sgd_advance_epoch(optim.SgdState(), 5)
        assert state.effective_lr == pytest.approx(0.08, abs=1e-15)

    def test_unit_gradient_moves_params_by_rate(self):
        params = {"w": np.array([1.0, 2.0]), "b": np.array([0.5])}
        grad = {"w": np.ones(2), "b": np.ones(1)}
        _, out = optim.sgd_step(optim.SgdState(), params, grad)
        np.testing.assert_allclose(out["w"], [0.9, 1.9], rtol=0, atol=1e-15)
        np.testing.assert_allclose(out["b"], [0.4], rtol=0, atol=1e-15)

    @given(e1=st.integers(0, 200), e2=st.integers(0, 200))
    @settings(max_examples=50, deadline=None)
    def test_schedule_nonincreasing_in_epoch(self, e1, e2):
        lo, hi = sorted((e1, e2))
        r_lo = optim.SgdState(epoch=lo).effective_lr
        r_hi = optim.SgdState(epoch=hi).effective_lr
        assert r_hi <= r_lo
        assert r_hi > 0.0

    def test_halving_scales_rate(self):
        state = optim.halve_learning_rate(optim.SgdState())
        assert state.effective_lr == pytest.approx(0.05, abs=1e-15)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": np.array([1.0, -2.0])}
        grad = {"w": np.zeros(2)}
        state, out = optim.adam_step(optim.AdamState(), params, grad)
        np.testing.assert_array_equal(out["w"], params["w"])
        np.testing.assert_array_equal(state.m["w"], np.zeros(2))
        np.testing.assert_array_equal(state.v["w"], np.zeros(2))
        assert state.t == 1

    def test_first_step_is_signed_learning_rate(self):
        # bias correction gives mhat=c, vhat=c^2, so the step is ~ -lr*sign(c)
        for c in (3.0, -0.25):
            params = {"w": np.array([0.0])}
            _, out = optim.adam_step(optim.AdamState(), params, {"w": np.array([c])})
            np.testing.assert_allclose(out["w"], [-0.001 * np.sign(c)], rtol=1e-6)

    def test_ten_steps_on_quadratic_match_scalar_oracle(self):
        a = 3.0
        theta = 2.0
        want = adam_oracle(theta, lambda th: a * th, 10)
        state = optim.AdamState()
        params = {"w": np.array([theta])}
        for _ in range(10):
            state, params = optim.adam_step(state, params, {"w": a * params["w"]})
        np.testing.assert_allclose(params["w"], [want], rtol=0, atol=1e-12)

    def test_injection_then_step_matches_monolithic_oracle(self):
        # quadratic task loss plus an importance pull toward theta_prev
        a, lam, omega, theta_prev = 2.0, 1.0, 1.5, 0.3

        def g_prime(th):
            return a * th + 2 * lam * omega * (th - theta_prev)

        want = adam_oracle(1.0, g_prime, 5)
        state = optim.AdamState()
        params = {"w": np.array([1.0])}
        for _ in range(5):
            task = {"w": a * params["w"]}
            reg = {"w": 2 * lam * omega * (params["w"] - theta_prev)}
            state, params = optim.adam_step(state, params,
                                            optim.inject_regularized_gradient(task, reg))
        np.testing.assert_allclose(params["w"], [want], rtol=0, atol=1e-12)

    def test_nonfinite_gradient_aborts_with_parameter_name(self):
        params = {"w": np.array([1.0]), "b": np.array([1.0])}
        grad = {"w": np.array([np.nan]), "b": np.array([0.0])}
        with pytest.raises(NumericalError, match="w"):
            optim.adam_step(optim.AdamState(), params, grad)

    @given(seed=st.integers(0, 2**31 - 1), steps=st.integers(1, 30))
    @settings(max_examples=30, deadline=None)
    def test_moment_bounds(self, seed, steps):
        # v >= 0 always; |mhat| never exceeds the largest gradient seen
        rng = np.random.default_rng(seed)
        state = optim.AdamState()
        params = {"w": rng.normal(size=3)}
        gmax = np.zeros(3)
        for _ in range(steps):
            g = rng.normal(size=3) * 10
            gmax = np.maximum(gmax, np.abs(g))
            state, params = optim.adam_step(state, params, {"w": g})
            assert np.all(state.v["w"] >= 0.0)
            mhat = state.m["w"] / (1 - state.beta1 ** state.t)
            assert np.all(np.abs(mhat) <= gmax + 1e-12)


class TestInjectionAndHalving:
    def test_zero_regularizer_returns_gradient_bit_exact(self):
        grad = {"w": np.array([0.25, -1.5])}
        out = optim.inject_regularized_gradient(grad, {"w": np.zeros(2)})
        np.testing.assert_array_equal(out["w"], grad["w"])

    def test_appendix_sign_convention_scalar(self):
        # lam=1, omega=1, theta_prev - theta = 0.5 contributes +1.0
        reg = {"w": np.array([2 * 1.0 * 1.0 * 0.5])}
        out = optim.inject_regularized_gradient({"w": np.array([0.0])}, reg)
        np.testing.assert_allclose(out["w"], [1.0], rtol=0, atol=1e-15)

    def test_misalignment_raises(self):
        with pytest.raises(AlignmentError):
            optim.inject_regularized_gradient({"w": np.zeros(2)}, {"b": np.zeros(2)})

    def test_halve_adam_rate(self):
        state = optim.halve_learning_rate(optim.AdamState())
        assert state.effective_lr == pytest.approx(0.0005, abs=1e-18)

    def test_two_halvings_compose(self):
        state = optim.halve_learning_rate(optim.halve_learning_rate(optim.AdamState()))
        assert state.effective_lr == pytest.approx(0.00025, abs=1e-18)

    def test_halving_leaves_moments_untouched(self):
        state = optim.AdamState()
        state, _ = optim.adam_step(state, {"w": np.array([1.0])}, {"w": np.array([2.0])})
        halved = optim.halve_learning_rate(state)
        np.testing.assert_array_equal(halved.m["w"], state.m["w"])
        np.testing.assert_array_equal(halved.v["w"], state.v["w"])
        assert halved.t == state.t

    def test_fresh_like_resets_state(self):
        state = optim.AdamState()
        state, _ = optim.adam_step(state, {"w": np.array([1.0])}, {"w": np.array([2.0])})
        state = optim.halve_learning_rate(state)
        fresh = optim.fresh_like(state)
        assert fresh.t == 0 and not fresh.m and not fresh.v and fresh.halving == 1.0
        assert fresh.lr == state.lr
