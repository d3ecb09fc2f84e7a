import math

import numpy as np
import pytest

from debatelm.errors import ConfigError, NumericError
from debatelm.optim import LrSchedule, OptimizerState, adam_step, clip_global_norm, lr_at


def full_scale_schedule():
    return LrSchedule(peak_lr=1e-4, warmup_steps=10_000, total_steps=150_000)


class TestLrSchedule:
    def test_endpoints(self):
        sched = full_scale_schedule()
        assert lr_at(0, sched) == 0.0
        assert lr_at(10_000, sched) == 1e-4
        assert lr_at(150_000, sched) == 0.0
        assert lr_at(150_001, sched) == 0.0

    def test_half_warmup_is_half_peak(self):
        sched = full_scale_schedule()
        assert lr_at(5_000, sched) == pytest.approx(5e-5, rel=0, abs=0)

    def test_closed_form_everywhere(self):
        sched = LrSchedule(peak_lr=3e-3, warmup_steps=13, total_steps=97)
        for step in range(0, 98):
            if step <= 13:
                expected = 3e-3 * (step / 13)
            else:
                expected = 3e-3 * ((97 - step) / (97 - 13))
            assert lr_at(step, sched) == expected

    def test_validation(self):
        with pytest.raises(ConfigError):
            LrSchedule(peak_lr=1e-4, warmup_steps=10, total_steps=10).validate()


class TestAdamStep:
    def test_zero_gradient_no_decay_is_identity(self):
        sched = LrSchedule(peak_lr=0.1, warmup_steps=1, total_steps=10)
        params = {"w": np.array([1.0, -2.0]), "b": np.array([0.5])}
        state = OptimizerState.create(params, sched, weight_decay=0.0)
        before = {k: v.copy() for k, v in params.items()}
        adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, state)
        for k in params:
            assert np.array_equal(params[k], before[k])

    def test_pure_decay_multiplies_by_0999(self):
        # lr 0.1, wd 0.01, zero gradient: p <- p - lr*wd*p = 0.999 p on
        # decayed (2-D) tensors; 1-D tensors are exempt.
        sched = LrSchedule(peak_lr=0.1, warmup_steps=1, total_steps=10)
        params = {"w": np.array([[2.0, -4.0]]), "bias": np.array([3.0])}
        state = OptimizerState.create(params, sched, weight_decay=0.01)
        adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, state)
        assert np.allclose(params["w"], [[2.0 * 0.999, -4.0 * 0.999]], rtol=0, atol=1e-15)
        assert np.array_equal(params["bias"], np.array([3.0]))

    def test_two_step_recurrence_matches_hand_computation(self):
        # Scalar oracle: explicit Adam recurrence with g = 1 at both steps.
        beta1, beta2, eps = 0.9, 0.98, 1e-6
        peak = 0.01
        sched = LrSchedule(peak_lr=peak, warmup_steps=2, total_steps=10)
        params = {"w": np.array([[0.5]])}
        state = OptimizerState.create(params, sched, beta1=beta1, beta2=beta2,
                                      eps=eps, weight_decay=0.0)
        g = {"w": np.array([[1.0]])}
        adam_step(params, g, state)
        adam_step(params, g, state)

        p = 0.5
        m = v = 0.0
        for t in (1, 2):
            lr = peak * t / 2
            m = beta1 * m + (1 - beta1) * 1.0
            v = beta2 * v + (1 - beta2) * 1.0
            m_hat = m / (1 - beta1 ** t)
            v_hat = v / (1 - beta2 ** t)
            p = p - lr * (m_hat / (math.sqrt(v_hat) + eps))
        assert np.isclose(params["w"][0, 0], p, rtol=1e-15)

    def test_decay_uses_pre_update_value(self):
        # With a nonzero gradient the decay term must reference the
        # parameter before the Adam move (simultaneous update rule).
        beta1, beta2, eps, wd = 0.9, 0.98, 1e-6, 0.5
        sched = LrSchedule(peak_lr=0.1, warmup_steps=1, total_steps=10)
        params = {"w": np.array([[2.0]])}
        state = OptimizerState.create(params, sched, beta1=beta1, beta2=beta2,
                                      eps=eps, weight_decay=wd)
        adam_step(params, {"w": np.array([[1.0]])}, state)
        m_hat = 1.0  # bias-corrected first moment of g=1 at t=1
        v_hat = 1.0
        expected = 2.0 - 0.1 * (m_hat / (math.sqrt(v_hat) + eps)) - 0.1 * wd * 2.0
        assert np.isclose(params["w"][0, 0], expected, rtol=1e-15)

    def test_non_finite_gradient_rejected(self):
        sched = LrSchedule(peak_lr=0.1, warmup_steps=1, total_steps=10)
        params = {"w": np.array([1.0])}
        state = OptimizerState.create(params, sched)
        with pytest.raises(NumericError):
            adam_step(params, {"w": np.array([np.nan])}, state)

    def test_step_counter_drives_schedule(self):
        sched = LrSchedule(peak_lr=1.0, warmup_steps=5, total_steps=10)
        params = {"w": np.array([0.0])}
        state = OptimizerState.create(params, sched, weight_decay=0.0)
        for expected_t in (1, 2, 3):
            adam_step(params, {"w": np.array([1.0])}, state)
            assert state.t == expected_t


class TestClip:
    def test_norm_above_max_scaled(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        norm = clip_global_norm(grads, 1.0)
        assert norm == 5.0
        new_norm = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
        assert np.isclose(new_norm, 1.0, rtol=1e-12)

    def test_norm_below_max_untouched(self):
        grads = {"a": np.array([0.3])}
        clip_global_norm(grads, 1.0)
        assert grads["a"][0] == 0.3
