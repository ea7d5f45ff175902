import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqflib.core import strapdown
from vqflib.metrics import quat_error_angle, signed_heading_error
from vqflib.offline import heading_double_pass, merge_bias, offline_vqf, reverse_run_transform
from vqflib.quatmath import quat_angle_between, quat_from_angle_axis, quat_multiply
from vqflib.synth import Profile, Segment, TrajectorySpec, bundled_spec_path, generate, load_spec
from vqflib.vqf import VQF

DEG = math.pi / 180
Ts = 0.01


class TestReverse:
    def test_involution(self, rng):
        g, a, m = rng.normal(size=(3, 50, 3))
        g2, a2, m2 = reverse_run_transform(*reverse_run_transform(g, a, m))
        np.testing.assert_array_equal(g2, g)
        np.testing.assert_array_equal(a2, a)
        np.testing.assert_array_equal(m2, m)

    def test_single_sample(self):
        g, a, m = reverse_run_transform(np.array([[1.0, -2.0, 3.0]]), np.array([[0, 0, 9.81]]))
        np.testing.assert_array_equal(g, [[-1.0, 2.0, -3.0]])
        assert m is None

    def test_strapdown_time_reversal(self, rng):
        gyr = rng.normal(0, 1.0, (400, 3))
        q0 = np.array([1.0, 0, 0, 0])
        Q = strapdown(gyr, Ts, q0)
        P = strapdown(reverse_run_transform(gyr, gyr)[0], Ts, q0)
        for m in range(1, len(gyr)):
            back = quat_multiply(Q[-1], P[m - 1])
            ref = Q[len(gyr) - 1 - m]
            assert min(np.abs(back - ref).max(), np.abs(back + ref).max()) < 1e-9


class TestMerge:
    def test_equal_covariance_averages(self):
        b, P = merge_bias(np.array([1.0, 2.0, 3.0]), np.eye(3), np.array([-3.0, -2.0, -1.0]), np.eye(3))
        np.testing.assert_allclose(b, [2.0, 2.0, 2.0])
        np.testing.assert_allclose(P, 0.5 * np.eye(3))

    def test_uninformative_backward(self, rng):
        b1 = rng.normal(size=3) * 0.01
        A = rng.normal(size=(3, 3))
        P1 = 1e-5 * (A @ A.T + np.eye(3))
        b, _ = merge_bias(b1, P1, rng.normal(size=3), 1e12 * np.eye(3))
        np.testing.assert_allclose(b, b1, atol=1e-9)

    def test_stacked(self, rng):
        b1, b2 = rng.normal(size=(2, 10, 3))
        P = np.tile(np.eye(3), (10, 1, 1))
        b, _ = merge_bias(b1, P, b2, P)
        np.testing.assert_allclose(b, (b1 - b2) / 2)


@pytest.mark.parametrize("rate", [0.5, -2.0])
def test_constant_rate_matches_closed_form(rate):
    # vertical axis keeps both runs tilt-free from their first sample
    w = np.array([0.0, 0.0, rate])
    spec = TrajectorySpec(segments=[Segment(20.0, gyr=Profile(offset=w))])
    imu, truth = generate(spec, Ts)
    res = offline_vqf(imu.gyr, imu.acc, imu.mag, Ts)
    for k in range(0, len(truth.t), 7):
        closed = quat_from_angle_axis(truth.t[k] * np.linalg.norm(w), w)
        assert quat_angle_between(res.q6[k], closed) < 1e-6


@pytest.fixture(scope="module")
def rest_motion():
    spec, _ = load_spec(bundled_spec_path("rest_motion_rest"))
    imu, truth = generate(spec, Ts)
    return imu, truth, offline_vqf(imu.gyr, imu.acc, imu.mag, Ts)


def test_result_shapes_and_norms(rest_motion):
    imu, _, res = rest_motion
    n = len(imu.t)
    for name in ("q6", "q9"):
        assert getattr(res, name).shape == (n, 4)
        np.testing.assert_allclose(np.linalg.norm(getattr(res, name), axis=1), 1.0, atol=1e-9)
    assert res.delta.shape == (n,) and res.bias.shape == (n, 3) and res.mag_disturbed.shape == (n,)


def test_merged_bias_residual(rest_motion):
    # the fused estimate lies between the single-pass estimates sample by sample
    # and beats both on aggregate
    _, truth, res = rest_motion
    e = np.linalg.norm(res.bias - truth.bias, axis=1)
    e1 = np.linalg.norm(res.bias_forward - truth.bias, axis=1)
    e2 = np.linalg.norm(res.bias_backward - truth.bias, axis=1)
    assert np.all(e <= np.maximum(e1, e2) + 1e-6 * DEG)
    rms = lambda x: np.sqrt(np.mean(x**2))
    assert rms(e) <= min(rms(e1), rms(e2))


def test_flag_conjunction():
    spec, _ = load_spec(bundled_spec_path("mag_disturbance"))
    imu, truth = generate(spec, Ts)
    res = offline_vqf(imu.gyr, imu.acc, imu.mag, Ts)
    fwd = VQF(Ts).update_batch(imu.gyr, imu.acc, imu.mag)["mag_disturbed"]
    bwd = VQF(Ts).update_batch(*reverse_run_transform(imu.gyr, imu.acc, imu.mag))["mag_disturbed"][::-1]
    np.testing.assert_array_equal(res.mag_disturbed, fwd & bwd)
    assert res.mag_disturbed[truth.mag_disturbed].mean() > 0.9


def test_offline_beats_online_on_rest_motion(rest_motion):
    imu, truth, res = rest_motion
    online = VQF(Ts).update_batch(imu.gyr, imu.acc, imu.mag)
    m = ~truth.rest
    rmse = lambda q: np.sqrt(np.mean(quat_error_angle(q, truth.quat)[m] ** 2))
    assert rmse(res.q9) <= rmse(online["q9"])


def test_heading_double_pass_zero_phase():
    t = np.arange(30000) * Ts
    true = 0.3 * np.sin(2 * np.pi * t / 20.0)
    smooth = heading_double_pass(true, np.zeros(len(t), bool), Ts, 2.0)
    lags = np.arange(-300, 301)
    core = slice(5000, 25000)
    xc = [np.dot(true[core], np.roll(smooth, -lag)[core]) for lag in lags]
    assert lags[int(np.argmax(xc))] == 0


def test_heading_pass_gating_freezes():
    measured = np.concatenate([np.zeros(100), np.full(100, 1.0)])
    dist = np.concatenate([np.zeros(100, bool), np.ones(100, bool)])
    out = heading_double_pass(measured, dist, Ts, 9.0)
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


@pytest.mark.parametrize("n", [0, 1])
def test_too_short(n):
    with pytest.raises(ValueError):
        offline_vqf(np.zeros((n, 3)), np.zeros((n, 3)))


def test_length_mismatch():
    with pytest.raises(ValueError):
        offline_vqf(np.zeros((10, 3)), np.zeros((9, 3)))
