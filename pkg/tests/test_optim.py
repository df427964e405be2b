import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lwtextcnn.errors import ContractError
from lwtextcnn.optim import (OptimizerState, adam_step, applied_lr, decayed_lr, optimizer_step,
                             sgd_momentum_step, swats_step)
from lwtextcnn.tensor import Tensor

# fixed quadratic: f(x) = 0.5 * sum(a * (x - c)^2), grad = a * (x - c)
A = np.array([1.0, 3.0, 0.5, 2.0])
CENTER = np.array([0.5, -1.0, 2.0, 0.0])
X0 = np.array([3.0, 2.0, -1.0, 4.0])


def quad_grad(x):
    return A * (x - CENTER)


def run(state, n, x0=X0):
    params = {"x": Tensor(x0.copy())}
    traj = []
    for _ in range(n):
        optimizer_step(params, {"x": quad_grad(params["x"].data)}, state)
        traj.append(params["x"].data.copy())
    return traj


def adam_oracle(x, n, lr, b1=0.9, b2=0.999, eps=1e-8, t0=0):
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    out = []
    for i in range(n):
        g = quad_grad(x)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        t = t0 + i + 1
        x = x - lr * (m / (1.0 - b1 ** t)) / (np.sqrt(v / (1.0 - b2 ** t)) + eps)
        out.append(x.copy())
    return out


def sgd_oracle(x, n, lr, mu):
    vel = np.zeros_like(x)
    out = []
    for _ in range(n):
        vel = mu * vel + quad_grad(x)
        x = x - lr * vel
        out.append(x.copy())
    return out


class TestSGD:
    def test_plain_sgd_when_momentum_zero(self):
        st_ = OptimizerState("sgd", lr=0.1, momentum=0.0)
        p = {"w": Tensor([1.0, -2.0])}
        sgd_momentum_step(p, {"w": np.array([0.5, 1.0])}, st_)
        np.testing.assert_array_equal(p["w"].data, [1.0 - 0.1 * 0.5, -2.0 - 0.1 * 1.0])
        assert st_.step == 1

    def test_two_step_unroll(self):
        g = 0.7
        st_ = OptimizerState("sgd", lr=1.0, momentum=0.9)
        p = {"w": Tensor([0.0])}
        for _ in range(2):
            sgd_momentum_step(p, {"w": np.array([g])}, st_)
        assert p["w"].data[0] == pytest.approx(-(g + 1.9 * g), abs=1e-15)

    def test_zero_grad_decays_velocity(self):
        st_ = OptimizerState("sgd", lr=0.1, momentum=0.9)
        p = {"w": Tensor([1.0])}
        sgd_momentum_step(p, {"w": np.array([2.0])}, st_)
        before = p["w"].data.copy()
        p_zero = {"w": Tensor([1.0])}
        sgd_momentum_step(p_zero, {"w": np.array([0.0])}, OptimizerState("sgd", lr=0.1, momentum=0.9))
        assert p_zero["w"].data[0] == 1.0
        sgd_momentum_step(p, {"w": np.array([0.0])}, st_)
        assert st_.velocity["w"][0] == pytest.approx(0.9 * 2.0)
        assert p["w"].data[0] == pytest.approx(before[0] - 0.1 * 1.8)

    def test_missing_grad(self):
        with pytest.raises(ContractError, match="w"):
            sgd_momentum_step({"w": Tensor([1.0])}, {}, OptimizerState("sgd"))


class TestAdam:
    def test_first_step_is_signed_lr(self):
        g = np.array([3.0, -0.2, 50.0])
        st_ = OptimizerState("adam", lr=0.01)
        p = {"w": Tensor(np.zeros(3))}
        adam_step(p, {"w": g}, st_)
        # m_hat = g, v_hat = g^2, so the update is -lr * g / (|g| + eps)
        np.testing.assert_allclose(p["w"].data, -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)
        np.testing.assert_allclose(p["w"].data, -0.01 * np.sign(g), rtol=1e-6)

    def test_zero_grad_first_step(self):
        p = {"w": Tensor([1.0, 2.0])}
        adam_step(p, {"w": np.zeros(2)}, OptimizerState("adam", lr=0.1))
        assert p["w"].data.tolist() == [1.0, 2.0]

    def test_scalar_quadratic(self):
        p = {"x": Tensor([5.0])}
        st_ = OptimizerState("adam", lr=0.1)
        xs = []
        for _ in range(100):
            adam_step(p, {"x": 2.0 * p["x"].data}, st_)
            xs.append(abs(p["x"].data[0]))
        burn = 10
        assert all(b < a for a, b in zip(xs[burn:], xs[burn + 1:50]))
        assert xs[-1] < 0.5

    def test_matches_oracle(self):
        traj = run(OptimizerState("adam", lr=0.05), 6)
        for a, b in zip(traj, adam_oracle(X0.copy(), 6, 0.05)):
            np.testing.assert_array_equal(a, b)


class TestDecay:
    def test_constant_when_one(self):
        st_ = OptimizerState("sgd", lr=0.3, decay=1.0, decay_interval=5)
        for t in range(0, 50, 7):
            st_.step = t
            assert decayed_lr(st_) == 0.3

    def test_staircase_value(self):
        st_ = OptimizerState("sgd", lr=0.1, decay=0.5, decay_interval=100, step=250)
        assert decayed_lr(st_) == pytest.approx(0.025, abs=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(d=st.floats(0.01, 1.0), interval=st.integers(1, 20))
    def test_non_increasing(self, d, interval):
        st_ = OptimizerState("adam", lr=0.2, decay=d, decay_interval=interval)
        prev = math.inf
        for t in range(200):
            st_.step = t
            cur = decayed_lr(st_)
            assert cur <= prev
            prev = cur

    @pytest.mark.parametrize("d", [0.0, 1.5, -0.1])
    def test_bad_decay(self, d):
        with pytest.raises(ContractError):
            OptimizerState("sgd", decay=d)

    def test_doubling_lr_doubles_displacement(self):
        for lr in (0.01, 0.3):
            moves = []
            for scale in (1.0, 2.0):
                p = {"x": Tensor(X0.copy())}
                sgd_momentum_step(p, {"x": quad_grad(X0)}, OptimizerState("sgd", lr=lr * scale, momentum=0.0))
                moves.append(p["x"].data - X0)
            np.testing.assert_allclose(moves[1], 2 * moves[0], rtol=1e-14)

    def test_applied_lr_reports_previous_step(self):
        st_ = OptimizerState("sgd", lr=1.0, decay=0.5, decay_interval=2, momentum=0.0)
        p = {"x": Tensor([0.0])}
        seen = []
        for _ in range(5):
            before = decayed_lr(st_)
            sgd_momentum_step(p, {"x": np.array([1.0])}, st_)
            seen.append((before, applied_lr(st_)))
        assert all(a == b for a, b in seen)


class TestSwats:
    def test_switch_zero_is_sgd(self):
        sw = run(OptimizerState("swats", lr=0.05, sgd_lr=0.02, momentum=0.9, switch_step=0), 8)
        sg = run(OptimizerState("sgd", lr=0.02, momentum=0.9), 8)
        for a, b in zip(sw, sg):
            np.testing.assert_array_equal(a, b)

    def test_never_switching_is_adam(self):
        sw = run(OptimizerState("swats", lr=0.05, switch_step=None), 8)
        ad = run(OptimizerState("adam", lr=0.05), 8)
        for a, b in zip(sw, ad):
            np.testing.assert_array_equal(a, b)

    def test_dual_oracle_trajectory(self):
        st_ = OptimizerState("swats", lr=0.05, sgd_lr=0.02, momentum=0.9, switch_step=3)
        traj = run(st_, 9)
        adam_part = adam_oracle(X0.copy(), 3, 0.05)
        sgd_part = sgd_oracle(adam_part[-1].copy(), 6, 0.02, 0.9)
        for a, b in zip(traj, adam_part + sgd_part):
            np.testing.assert_array_equal(a, b)
        assert st_.phase == "sgd"

    def test_phase_flips_once(self):
        st_ = OptimizerState("swats", lr=0.05, switch_step=4)
        p = {"x": Tensor(X0.copy())}
        phases = []
        for _ in range(8):
            swats_step(p, {"x": quad_grad(p["x"].data)}, st_)
            phases.append(st_.phase)
        assert phases == ["adam"] * 4 + ["sgd"] * 4

    def test_velocity_reset_at_switch(self):
        st_ = OptimizerState("swats", lr=0.05, switch_step=2)
        st_.velocity["x"] = np.array([99.0, 99.0, 99.0, 99.0])
        run(st_, 3)
        # first sgd step starts from zero velocity, so velocity equals that step's gradient
        assert np.all(np.abs(st_.velocity["x"]) < 10)


def test_deterministic():
    a = run(OptimizerState("swats", lr=0.05, switch_step=3), 7)
    b = run(OptimizerState("swats", lr=0.05, switch_step=3), 7)
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


@pytest.mark.parametrize("kind", ["adam", "sgd", "swats"])
def test_zero_grads_identity(kind):
    st_ = OptimizerState(kind, momentum=0.0, switch_step=2)
    p = {"w": Tensor([1.5, -3.0])}
    for _ in range(4):
        optimizer_step(p, {"w": np.zeros(2)}, st_)
    assert p["w"].data.tolist() == [1.5, -3.0]


def test_state_text_round_trip():
    st_ = OptimizerState("swats", lr=0.1 / 3, sgd_lr=0.02, decay=0.95, decay_interval=7,
                         switch_step=5, step=9, phase="sgd")
    back = OptimizerState.from_text(st_.to_text())
    for key in OptimizerState.HYPER:
        assert getattr(back, key) == getattr(st_, key)
    never = OptimizerState.from_text(OptimizerState("adam").to_text())
    assert never.switch_step is None
