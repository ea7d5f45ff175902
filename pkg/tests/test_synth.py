import json
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vqflib.core import BasicVQF
from vqflib.metrics import heading_inclination_split
from vqflib.synth import (
    Disturbance,
    Profile,
    Segment,
    TrajectorySpec,
    benchmark_suite,
    bundled_spec_path,
    bundled_specs,
    generate,
    load_spec,
    static_pose_oracle,
    write_imu_csv,
    write_truth_csv,
)

from conftest import to_scipy, to_wxyz

DEG = math.pi / 180
Ts = 0.01


def test_zero_motion_is_static():
    imu, truth = generate(TrajectorySpec(segments=[Segment(2.0)]), Ts)
    assert len(imu.t) == 201
    np.testing.assert_array_equal(imu.gyr, 0.0)
    np.testing.assert_allclose(imu.acc, np.tile([0, 0, 9.81], (201, 1)))
    np.testing.assert_allclose(truth.quat, np.tile([1.0, 0, 0, 0], (201, 1)))
    assert truth.rest.all() and not truth.mag_disturbed.any()


def test_constant_rate_quarter_turn():
    spec = TrajectorySpec(segments=[Segment(3.0, gyr=[0, 0, 30 * DEG])])
    imu, truth = generate(spec, Ts)
    np.testing.assert_allclose(truth.quat[-1], [math.sqrt(0.5), 0, 0, math.sqrt(0.5)], atol=1e-6)
    np.testing.assert_allclose(imu.gyr[1:], np.tile([0, 0, 30 * DEG], (300, 1)), atol=1e-9)


@pytest.mark.parametrize("norm,dip", [(50.0, 68.0), (1.0, 10.0), (48.0, -60.0)])
def test_field_geometry(norm, dip):
    spec = TrajectorySpec(segments=[Segment(0.5)], mag_norm=norm, mag_dip=dip)
    imu, _ = generate(spec, Ts)
    m = imu.mag[0]
    np.testing.assert_allclose(np.linalg.norm(m), norm)
    np.testing.assert_allclose(math.degrees(math.asin(-m[2] / norm)), dip, atol=1e-9)
    assert abs(m[0]) < 1e-12 and m[1] > 0


def test_sensor_frame_rotation():
    # sensor rotated 90 deg about x: world up appears along sensor +y
    q0 = (math.sqrt(0.5), math.sqrt(0.5), 0.0, 0.0)
    imu, _ = generate(TrajectorySpec(segments=[Segment(0.1)], q0=q0), Ts)
    np.testing.assert_allclose(imu.acc[0], [0, 9.81, 0], atol=1e-12)


def test_disturbance_mask_and_field():
    d = Disturbance(1.0, 0.5, (10.0, 0.0, 0.0))
    imu, truth = generate(TrajectorySpec(segments=[Segment(3.0)], disturbances=[d]), Ts)
    inside = (truth.t >= 1.0) & (truth.t < 1.5)
    np.testing.assert_array_equal(truth.mag_disturbed, inside)
    np.testing.assert_allclose(imu.mag[inside, 0], 10.0)
    np.testing.assert_allclose(imu.mag[~inside, 0], 0.0, atol=1e-12)


class TestStaticPoseOracle:
    def test_identity(self):
        q = static_pose_oracle([0, 0, 9.81], [0, 20, -40])
        np.testing.assert_allclose(q, [1, 0, 0, 0], atol=1e-12)

    def test_heading_90(self):
        # sensor x axis points north: sensor rotated +90 deg about up
        q = static_pose_oracle([0, 0, 9.81], [20, 0, -40])
        np.testing.assert_allclose(q, [math.sqrt(0.5), 0, 0, math.sqrt(0.5)], atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip(self, seed):
        spec = TrajectorySpec(segments=[Segment(0.1)],
                              q0=tuple(to_wxyz(Rotation.random(random_state=seed))))
        imu, truth = generate(spec, Ts)
        q = static_pose_oracle(imu.acc[0], imu.mag[0])
        assert abs(abs(np.dot(q, truth.quat[0])) - 1.0) < 1e-12

    def test_collinear(self):
        with pytest.raises(ValueError, match="collinear"):
            static_pose_oracle([0, 0, 9.81], [0, 0, -40])

    def test_zero(self):
        with pytest.raises(ValueError):
            static_pose_oracle([0, 0, 0], [0, 1, 0])


def test_deterministic():
    spec = benchmark_suite(1)[0]
    a, ta = generate(spec, Ts)
    b, tb = generate(spec, Ts)
    for x, y in ((a.gyr, b.gyr), (a.acc, b.acc), (a.mag, b.mag), (ta.quat, tb.quat)):
        np.testing.assert_array_equal(x, y)


def test_seed_changes_noise():
    spec = benchmark_suite(1)[0]
    other = TrajectorySpec.from_dict({**spec.to_dict(), "seed": spec.seed + 1})
    np.testing.assert_array_equal(generate(spec, Ts)[1].quat, generate(other, Ts)[1].quat)
    assert not np.array_equal(generate(spec, Ts)[0].gyr, generate(other, Ts)[0].gyr)


def test_quaternion_continuity():
    _, truth = generate(benchmark_suite(1)[0], Ts)
    np.testing.assert_allclose(np.linalg.norm(truth.quat, axis=1), 1.0, atol=1e-12)
    assert np.all(np.sum(truth.quat[1:] * truth.quat[:-1], axis=1) > 0)


def test_gyr_matches_truth_increments():
    imu, truth = generate(TrajectorySpec(**{**benchmark_suite(1)[0].to_dict(), "sigma_gyr": 0.0,
                                            "gyro_bias": [0, 0, 0]}), Ts)
    r = to_scipy(truth.quat)
    np.testing.assert_allclose((r[:-1].inv() * r[1:]).as_rotvec() / Ts, imu.gyr[1:], atol=1e-12)


def test_energy_consistency():
    # a filter fed the generated signals tracks the truth inclination
    spec = TrajectorySpec.from_dict({**benchmark_suite(1)[0].to_dict(), "gyro_bias": [0, 0, 0]})
    imu, truth = generate(spec, Ts)
    out = BasicVQF(Ts).update_batch(imu.gyr, imu.acc, imu.mag)
    _, incl = heading_inclination_split(out["quat6"], truth.quat)
    m = ~truth.rest
    assert np.sqrt(np.mean(incl[m] ** 2)) < 0.2


def test_bundled_specs_load():
    names = bundled_specs()
    assert {"rest_motion_rest", "continuous_motion", "mag_disturbance"} <= set(names)
    for name in names:
        spec, rate = load_spec(bundled_spec_path(name))
        assert spec.duration > 0
        assert TrajectorySpec.from_dict(spec.to_dict()) == spec
    assert bundled_spec_path("nope") is None


@pytest.mark.parametrize("bad", [
    {"segments": []},
    {"segments": [{"duration": -1}]},
    {"segments": [{"duration": 1, "gyr": [1, 2]}]},
    {"segments": [{"duration": 1, "gyr": {"offset": [0, 0, 0], "speed": 1}}]},
    {"segments": [{"duration": 1}], "sigma_gyr": -0.1},
    {"segments": [{"duration": 1}], "mag_norm": 0},
    {"segments": [{"duration": 1}], "q0": [1, 1, 0, 0]},
    {"segments": [{"duration": 1}], "colour": "red"},
    {"segments": [{"duration": 1}], "disturbances": [{"start": 0, "duration": 0, "field": [0, 0, 1]}]},
    {"gyro_bias": [0, 0, 0]},
])
def test_invalid_spec(bad):
    with pytest.raises(ValueError):
        TrajectorySpec.from_dict(bad)


@pytest.mark.parametrize("Ts_bad", [0.0, -0.01, float("nan")])
def test_invalid_rate(Ts_bad):
    with pytest.raises(ValueError):
        generate(TrajectorySpec(segments=[Segment(1.0)]), Ts_bad)


def test_too_many_samples():
    with pytest.raises(ValueError):
        generate(TrajectorySpec(segments=[Segment(1.0)]), Ts, N=500)


def test_load_spec_not_object(tmp_path):
    p = tmp_path / "x.json"
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ValueError):
        load_spec(p)


def test_csv_writers(tmp_path):
    imu, truth = generate(TrajectorySpec(segments=[Segment(0.5)]), Ts)
    write_imu_csv(tmp_path / "imu.csv", imu)
    write_truth_csv(tmp_path / "truth.csv", truth)
    data = np.genfromtxt(tmp_path / "imu.csv", delimiter=",", names=True)
    np.testing.assert_array_equal(data["acc_z"], imu.acc[:, 2])
    tr = np.genfromtxt(tmp_path / "truth.csv", delimiter=",", names=True)
    np.testing.assert_array_equal(tr["q_w"], truth.quat[:, 0])
    assert set(tr.dtype.names) >= {"rest", "mag_dist", "bias_x"}
