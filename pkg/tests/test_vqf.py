import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqflib.core import BasicVQF
from vqflib.quatmath import quat_multiply
from vqflib.vqf import VQF, VqfParams

DEG = math.pi / 180
OFF = dict(motion_bias_est=False, rest_bias_est=False, mag_dist_rejection=False)


def random_data(seed, n=1000, scale=1.0):
    rng = np.random.default_rng(seed)
    gyr = rng.normal(0, scale, (n, 3))
    acc = np.array([0.0, 0.0, 9.81]) + rng.normal(0, 1.0, (n, 3))
    mag = np.array([0.0, 20.0, -45.0]) + rng.normal(0, 2.0, (n, 3))
    return gyr, acc, mag


def z_only(q9, q6):
    rel = quat_multiply(q9, np.array([q6[0], -q6[1], -q6[2], -q6[3]]))
    return abs(rel[1]) < 1e-9 and abs(rel[2]) < 1e-9


class TestParams:
    def test_defaults(self):
        p = VqfParams()
        assert (p.tau_acc, p.tau_mag) == (3.0, 9.0)
        assert p.bias_sigma_rest == 0.03 and p.mag_rejection_factor == 2.0
        assert p.motion_bias_est and p.rest_bias_est and p.mag_dist_rejection

    def test_text_round_trip(self):
        p = VqfParams()
        assert VqfParams.from_text(p.to_text()) == p
        q = p.replace(tau_acc=1.25, rest_bias_est=False)
        assert VqfParams.from_text(q.to_text()) == q

    def test_from_text_comments_and_errors(self):
        p = VqfParams.from_text("# tuned\ntau_acc = 2.0  # faster\n\nmag_dist_rejection = off\n")
        assert p.tau_acc == 2.0 and not p.mag_dist_rejection
        with pytest.raises(ValueError, match="unknown"):
            VqfParams.from_text("tau_gyr = 1\n")
        with pytest.raises(ValueError, match="line 1"):
            VqfParams.from_text("tau_acc\n")

    @pytest.mark.parametrize("field, value", [
        ("tau_acc", 0.0), ("tau_mag", -1.0), ("rest_th_acc", float("nan")), ("mag_dip_th", 0.0),
        ("motion_bias_est", 1.0),
    ])
    def test_invalid_field_named(self, field, value):
        with pytest.raises(ValueError, match=field):
            VqfParams(**{field: value})

    @pytest.mark.parametrize("Ts", [0.0, -0.01, float("nan")])
    def test_invalid_ts(self, Ts):
        with pytest.raises(ValueError):
            VQF(Ts)


class TestFilter:
    def test_fresh_identity(self):
        f = VQF(0.01)
        np.testing.assert_array_equal(f.quat6, [1, 0, 0, 0])
        np.testing.assert_array_equal(f.quat9, [1, 0, 0, 0])
        bias, sigma = f.get_bias()
        np.testing.assert_array_equal(bias, 0.0)
        assert sigma == pytest.approx(0.5 * DEG * math.sqrt(1.0))

    @pytest.mark.parametrize("seed", range(3))
    def test_reduces_to_basic(self, seed):
        gyr, acc, mag = random_data(seed)
        full = VQF(0.01, **OFF).update_batch(gyr, acc, mag)
        basic = BasicVQF(0.01).update_batch(gyr, acc, mag)
        np.testing.assert_array_equal(full["q6"], basic["quat6"])
        np.testing.assert_array_equal(full["q9"], basic["quat9"])
        np.testing.assert_array_equal(full["delta"], basic["delta"])

    def test_static_bias_estimated_at_rest(self):
        n = 700
        bias = np.array([1.0, 0.0, 0.0]) * DEG
        rng = np.random.default_rng(1)
        gyr = bias + rng.normal(0, 0.001, (n, 3))
        acc = np.array([0.0, 0.0, 9.81]) + rng.normal(0, 0.01, (n, 3))
        out = VQF(0.01).update_batch(gyr, acc)
        t = np.arange(1, n + 1) * 0.01
        onset = t[np.argmax(out["rest"])]
        assert onset <= 1.5 + 0.02
        after = t >= onset + 5.0
        residual = np.linalg.norm(out["bias"][after] - bias, axis=1)
        assert residual.max() < 0.05 * DEG

    def test_zero_scale_keeps_delta(self):
        f = VQF(0.01)
        f.set_mag_reference(50.0, 68 * DEG)
        field = np.array([0.0, 50 * math.cos(68 * DEG), -50 * math.sin(68 * DEG)])
        for _ in range(100):
            f.update([0, 0, 0], [0, 0, 9.81], field)
        frozen = 0
        for _ in range(100):
            delta = f.delta
            rec = f.update([0, 0, 0], [0, 0, 9.81], 2.0 * np.array([0.4, 0.8, -0.4]) * 50)
            if rec.mag_disturbed:
                assert rec.delta == delta
                frozen += 1
        assert frozen > 80

    def test_batch_equals_loop(self):
        gyr, acc, mag = random_data(7)
        out = VQF(0.01).update_batch(gyr, acc, mag)
        f = VQF(0.01)
        for i, (g, a, m) in enumerate(zip(gyr, acc, mag)):
            rec = f.update(g, a, m)
            np.testing.assert_array_equal(rec.q9, out["q9"][i])
            np.testing.assert_array_equal(rec.bias, out["bias"][i])
            assert rec.bias_sigma == out["bias_sigma"][i]
            assert (rec.rest, rec.mag_disturbed) == (out["rest"][i], out["mag_disturbed"][i])

    def test_empty_batch(self):
        assert VQF(0.01).update_batch(np.zeros((0, 3)), np.zeros((0, 3))).shape == (0,)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            VQF(0.01).update_batch(np.zeros((5, 3)), np.zeros((4, 3)))
        with pytest.raises(ValueError):
            VQF(0.01).update_batch(np.zeros((5, 3)), np.zeros((5, 3)), np.zeros((3, 3)))

    def test_without_mag_q9_is_q6(self):
        gyr, acc, _ = random_data(3, 200)
        out = VQF(0.01).update_batch(gyr, acc)
        np.testing.assert_array_equal(out["q9"], out["q6"])
        assert not out["mag_disturbed"].any()

    def test_non_finite_skipped(self):
        f = VQF(0.01)
        prev = f.update([0.1, 0, 0], [0, 0, 9.81])
        rec = f.update([0.1, np.nan, 0], [0, 0, 9.81])
        assert rec.skipped and not prev.skipped
        np.testing.assert_array_equal(rec.q9, prev.q9)
        assert rec.bias_sigma == prev.bias_sigma

    def test_covariance_output(self):
        gyr, acc, _ = random_data(4, 50)
        out, P = VQF(0.01).update_batch(gyr, acc, return_covariance=True)
        assert P.shape == (50, 3, 3)
        np.testing.assert_allclose(out["bias_sigma"], [math.sqrt(np.abs(p).sum(1).max()) for p in P])


class TestBiasAccess:
    def test_round_trip(self):
        f = VQF(0.01)
        f.set_bias(np.array([0.01, -0.02, 0.005]), 0.03 * DEG)
        bias, sigma = f.get_bias()
        np.testing.assert_array_equal(bias, [0.01, -0.02, 0.005])
        assert sigma == pytest.approx(0.03 * DEG)

    def test_out_of_clip(self):
        with pytest.raises(ValueError):
            VQF(0.01).set_bias(np.array([3.0, 0, 0]) * DEG)

    def test_converged_start_adopts_slower(self):
        # same motion data, different starting covariance
        rng = np.random.default_rng(0)
        n = 3000
        t = np.arange(n) * 0.01
        true_bias = np.array([0.5, 0.0, 0.0]) * DEG
        w = np.column_stack([0.8 * np.sin(0.5 * t), 0.6 * np.cos(0.7 * t), 0.3 * np.sin(0.3 * t)])
        from vqflib.core import strapdown
        from vqflib.quatmath import rotate_vector
        q = strapdown(w, 0.01, np.array([1.0, 0, 0, 0]))
        acc = np.array([rotate_vector(np.array([x[0], -x[1], -x[2], -x[3]]), np.array([0, 0, 9.81])) for x in q])
        gyr = w + true_bias + rng.normal(0, 0.001, (n, 3))

        def final_estimate(sigma):
            f = VQF(0.01, rest_bias_est=False)
            f.set_bias(np.zeros(3), sigma)
            return f.update_batch(gyr, acc)["bias"][:, 0]

        fast = final_estimate(0.5 * DEG)
        slow = final_estimate(0.03 * DEG)
        assert abs(fast[-1] - true_bias[0]) < abs(slow[-1] - true_bias[0])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_magnetometer_independence_and_structure(seed):
    gyr, acc, mag = random_data(seed, 600, scale=0.3)
    a = VQF(0.01).update_batch(gyr, acc)
    b = VQF(0.01).update_batch(gyr, acc, mag)
    np.testing.assert_array_equal(a["q6"], b["q6"])
    np.testing.assert_array_equal(a["bias"], b["bias"])
    np.testing.assert_allclose(np.linalg.norm(b["q6"], axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(b["q9"], axis=1), 1.0, atol=1e-9)
    assert all(z_only(q9, q6) for q9, q6 in zip(b["q9"], b["q6"]))


def test_sigma_non_increasing_during_rest():
    n = 3000
    gyr = np.tile([0.002, -0.001, 0.0], (n, 1))
    acc = np.tile([0.0, 0.0, 9.81], (n, 1))
    out = VQF(0.01).update_batch(gyr, acc)
    s = out["bias_sigma"][out["rest"]]
    assert len(s) > 1000
    assert np.all(np.diff(s) <= 0)
