"""Synthetic IMU data with ground truth, and an independent static-pose oracle.

The world frame is East-North-Up. A trajectory is a list of segments, each
with an angular velocity profile in the sensor frame and a linear
acceleration profile in the world frame. The true orientation is integrated
on a grid 16 times finer than the output rate; the quaternion arithmetic used
here is deliberately separate from the filter's own helpers.

Samples are taken at ``t_k = k * Ts``. The gyroscope sample ``k`` is the mean
angular rate over ``(t_{k-1}, t_k]`` (the rotation vector of the true
incremental rotation divided by ``Ts``), so integrating noise-free samples
reproduces the true orientation exactly.
"""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit
from scipy.spatial.transform import Rotation

GRAVITY = 9.81
SUBSTEPS = 16


def _vec(v, name):
    a = np.asarray(v, dtype=float)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be a finite 3-vector, got {v!r}")
    return a


@dataclass
class Profile:
    """``offset + amplitude * sin(2 pi frequency t + phase)`` per axis, ``t`` local to the segment."""

    offset: tuple = (0.0, 0.0, 0.0)
    amplitude: tuple = (0.0, 0.0, 0.0)
    frequency: tuple = (0.0, 0.0, 0.0)
    phase: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("offset", "amplitude", "frequency", "phase"):
            setattr(self, name, tuple(_vec(getattr(self, name), name)))

    @property
    def is_zero(self):
        return not any(self.offset) and not any(self.amplitude)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        return np.asarray(self.offset) + np.asarray(self.amplitude) * np.sin(
            2 * np.pi * np.asarray(self.frequency) * t + np.asarray(self.phase))

    @classmethod
    def from_obj(cls, obj):
        if obj is None:
            return cls()
        if isinstance(obj, Profile):
            return obj
        if isinstance(obj, dict):
            unknown = set(obj) - {f.name for f in dataclasses.fields(cls)}
            if unknown:
                raise ValueError(f"unknown profile keys {sorted(unknown)}")
            return cls(**obj)
        return cls(offset=obj)

    def to_dict(self):
        return {k: list(v) for k, v in dataclasses.asdict(self).items()}


@dataclass
class Segment:
    duration: float
    gyr: Profile = field(default_factory=Profile)
    acc: Profile = field(default_factory=Profile)

    def __post_init__(self):
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"segment duration must be positive, got {self.duration!r}")
        self.gyr = Profile.from_obj(self.gyr)
        self.acc = Profile.from_obj(self.acc)

    @property
    def is_rest(self):
        return self.gyr.is_zero and self.acc.is_zero


@dataclass
class Disturbance:
    start: float
    duration: float
    field: tuple

    def __post_init__(self):
        if not (self.start >= 0 and self.duration > 0):
            raise ValueError("disturbance needs start >= 0 and duration > 0")
        self.field = tuple(_vec(self.field, "disturbance field"))


@dataclass
class TrajectorySpec:
    """Motion, sensor error and magnetic field description.

    ``gyro_bias`` and ``sigma_gyr`` are in rad/s, ``mag_dip`` and
    ``field_yaw_amplitude`` in degrees. A non-zero yaw amplitude slowly
    swings the horizontal field direction about the vertical axis with
    period ``field_yaw_period``.
    """

    segments: list
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    sigma_gyr: float = 0.0
    sigma_acc: float = 0.0
    sigma_mag: float = 0.0
    mag_norm: float = 50.0
    mag_dip: float = 68.0
    disturbances: list = field(default_factory=list)
    seed: int = 0
    q0: tuple = (1.0, 0.0, 0.0, 0.0)
    field_yaw_amplitude: float = 0.0
    field_yaw_period: float = 60.0

    def __post_init__(self):
        self.segments = [s if isinstance(s, Segment) else Segment(**s) for s in self.segments]
        if not self.segments:
            raise ValueError("a trajectory needs at least one segment")
        self.disturbances = [d if isinstance(d, Disturbance) else Disturbance(**d) for d in self.disturbances]
        self.gyro_bias = tuple(_vec(self.gyro_bias, "gyro_bias"))
        for name in ("sigma_gyr", "sigma_acc", "sigma_mag"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.mag_norm > 0:
            raise ValueError("mag_norm must be positive")
        if not self.field_yaw_period > 0:
            raise ValueError("field_yaw_period must be positive")
        q0 = np.asarray(self.q0, dtype=float)
        if q0.shape != (4,) or not np.isclose(np.linalg.norm(q0), 1.0, atol=1e-6):
            raise ValueError("q0 must be a unit quaternion [w, x, y, z]")
        self.q0 = tuple(q0 / np.linalg.norm(q0))

    @property
    def duration(self):
        return float(sum(s.duration for s in self.segments))

    def field_world(self, t):
        """Undisturbed world-frame magnetic field at times ``t``, shape ``(len(t), 3)``."""
        t = np.asarray(t, dtype=float)
        dip = math.radians(self.mag_dip)
        yaw = np.radians(self.field_yaw_amplitude) * np.sin(2 * np.pi * t / self.field_yaw_period)
        h = self.mag_norm * math.cos(dip)
        return np.stack([-h * np.sin(yaw), h * np.cos(yaw), np.full_like(t, -self.mag_norm * math.sin(dip))], -1)

    def field_yaw(self, t):
        return np.radians(self.field_yaw_amplitude) * np.sin(2 * np.pi * np.asarray(t, float) / self.field_yaw_period)

    def to_dict(self):
        d = {
            "segments": [{"duration": s.duration, "gyr": s.gyr.to_dict(), "acc": s.acc.to_dict()}
                         for s in self.segments],
            "disturbances": [{"start": x.start, "duration": x.duration, "field": list(x.field)}
                             for x in self.disturbances],
        }
        for f in dataclasses.fields(self):
            if f.name not in d:
                v = getattr(self, f.name)
                d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown trajectory keys {sorted(unknown)}")
        if "segments" not in d:
            raise ValueError("trajectory spec needs 'segments'")
        try:
            return cls(**d)
        except TypeError as e:
            raise ValueError(str(e)) from None


def load_spec(path):
    """Read a JSON trajectory file; an optional ``Ts`` key is returned alongside."""
    d = json.loads(Path(path).read_text())
    if not isinstance(d, dict):
        raise ValueError("trajectory spec must be a JSON object")
    Ts = d.pop("Ts", None)
    return TrajectorySpec.from_dict(d), Ts


@dataclass
class ImuData:
    Ts: float
    t: np.ndarray
    gyr: np.ndarray
    acc: np.ndarray
    mag: np.ndarray


@dataclass
class GroundTruth:
    t: np.ndarray
    quat: np.ndarray
    rest: np.ndarray
    mag_disturbed: np.ndarray
    bias: np.ndarray
    field_yaw: np.ndarray


@njit(cache=True)
def _qmul(a, b):
    return np.array([
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ])


@njit(cache=True)
def _integrate(q0, omega, h, substeps):
    # omega holds the rate at every substep midpoint
    n = omega.shape[0] // substeps + 1
    out = np.empty((n, 4))
    q = q0.copy()
    out[0] = q
    for k in range(1, n):
        for j in range(substeps):
            w = omega[(k - 1) * substeps + j]
            angle = h * math.sqrt(w[0] ** 2 + w[1] ** 2 + w[2] ** 2)
            if angle > 0.0:
                s = math.sin(0.5 * angle) / (angle / h)
                dq = np.array([math.cos(0.5 * angle), s * w[0], s * w[1], s * w[2]])
                q = _qmul(q, dq)
                q /= math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
        out[k] = q
    return out


def _segment_eval(spec, t, attr):
    """Evaluate the per-segment profile ``attr`` at absolute times ``t``."""
    out = np.zeros((len(t), 3))
    start = 0.0
    for i, seg in enumerate(spec.segments):
        end = start + seg.duration
        last = i == len(spec.segments) - 1
        m = (t >= start) & ((t < end) | last)
        if np.any(m):
            out[m] = getattr(seg, attr)(t[m] - start)
        start = end
    return out


def _segment_rest(spec, t):
    out = np.zeros(len(t), dtype=bool)
    start = 0.0
    for i, seg in enumerate(spec.segments):
        end = start + seg.duration
        last = i == len(spec.segments) - 1
        m = (t >= start) & ((t < end) | last)
        out[m] = seg.is_rest
        start = end
    return out


def _to_scipy(q):
    q = np.atleast_2d(q)
    return Rotation.from_quat(q[:, [1, 2, 3, 0]])


def _from_scipy(r):
    q = np.atleast_2d(r.as_quat())
    return q[:, [3, 0, 1, 2]]


def generate(spec, Ts, N=None):
    """Simulate ``N`` samples at sampling time ``Ts``; returns ``(ImuData, GroundTruth)``.

    ``N`` defaults to the number of samples that fit into the trajectory.
    """
    if not (Ts is not None and math.isfinite(Ts) and Ts > 0):
        raise ValueError(f"Ts must be positive, got {Ts!r}")
    total = spec.duration
    if N is None:
        N = int(math.floor(total / Ts + 1e-9)) + 1
    if N < 1:
        raise ValueError("N must be at least 1")
    if (N - 1) * Ts > total + 1e-9:
        raise ValueError(f"{N} samples at Ts={Ts} exceed the trajectory duration of {total} s")

    t = np.arange(N) * Ts
    h = Ts / SUBSTEPS
    t_mid = ((np.arange((N - 1) * SUBSTEPS) + 0.5) * h)
    omega = _segment_eval(spec, t_mid, "gyr")
    quat = _integrate(np.asarray(spec.q0, float), omega, h, SUBSTEPS)

    rot = _to_scipy(quat)
    # sample k carries the mean rate over (t[k-1], t[k]]; nothing precedes t[0]
    gyr_true = np.zeros((N, 3))
    if N > 1:
        gyr_true[1:] = (rot[:-1].inv() * rot[1:]).as_rotvec() / Ts

    acc_world = _segment_eval(spec, t, "acc") + [0.0, 0.0, GRAVITY]
    field = spec.field_world(t)
    dist_mask = np.zeros(N, dtype=bool)
    for d in spec.disturbances:
        m = (t >= d.start) & (t < d.start + d.duration)
        field[m] += d.field
        dist_mask |= m

    rng = np.random.default_rng(spec.seed)
    bias = np.tile(np.asarray(spec.gyro_bias), (N, 1))
    gyr = gyr_true + bias + rng.normal(0.0, 1.0, (N, 3)) * spec.sigma_gyr
    acc = rot.inv().apply(acc_world) + rng.normal(0.0, 1.0, (N, 3)) * spec.sigma_acc
    mag = rot.inv().apply(field) + rng.normal(0.0, 1.0, (N, 3)) * spec.sigma_mag

    rest = _segment_rest(spec, np.maximum(t - 0.5 * Ts, 0.0))
    imu = ImuData(Ts=Ts, t=t, gyr=gyr, acc=acc, mag=mag)
    truth = GroundTruth(t=t, quat=quat, rest=rest, mag_disturbed=dist_mask, bias=bias,
                        field_yaw=spec.field_yaw(t))
    return imu, truth


def static_pose_oracle(acc, mag):
    """Orientation (sensor to ENU) from one gravity and one magnetic field vector.

    The measured specific force defines up and the horizontal part of the
    field defines north.
    """
    acc = _vec(acc, "acc")
    mag = _vec(mag, "mag")
    if np.linalg.norm(acc) == 0 or np.linalg.norm(mag) == 0:
        raise ValueError("acc and mag must be non-zero")
    up = acc / np.linalg.norm(acc)
    east = np.cross(mag, up)
    ne = np.linalg.norm(east)
    if ne < 1e-9 * np.linalg.norm(mag):
        raise ValueError("acc and mag are collinear; heading is undefined")
    east /= ne
    north = np.cross(up, east)
    R = np.vstack([east, north, up])
    q = _from_scipy(Rotation.from_matrix(R))[0]
    return q if q[0] >= 0 else -q


def random_motion_spec(rng, duration=120.0, rest_start=10.0, rest_end=10.0, bias=None,
                       noise=True, mag_norm=50.0, mag_dip=68.0, seed=0, max_rate=100.0):
    """A rest - random rotation - rest trajectory with realistic sensor errors.

    ``max_rate`` bounds each axis amplitude in deg/s.
    """
    segs = []
    if rest_start > 0:
        segs.append(Segment(rest_start))
    motion = duration - rest_start - rest_end
    n_parts = 4
    for _ in range(n_parts):
        segs.append(Segment(
            motion / n_parts,
            gyr=Profile(
                amplitude=np.radians(rng.uniform(0.2, 1.0, 3) * max_rate),
                frequency=rng.uniform(0.05, 0.4, 3),
                phase=np.zeros(3),
            ),
            acc=Profile(
                amplitude=rng.uniform(0.0, 1.5, 3),
                frequency=rng.uniform(0.2, 1.5, 3),
                phase=np.zeros(3),
            ),
        ))
    if rest_end > 0:
        segs.append(Segment(rest_end))
    if bias is None:
        bias = np.radians(rng.uniform(-1.0, 1.0, 3))
    return TrajectorySpec(
        segments=segs,
        gyro_bias=tuple(bias),
        sigma_gyr=REALISTIC_NOISE["sigma_gyr"] if noise else 0.0,
        sigma_acc=REALISTIC_NOISE["sigma_acc"] if noise else 0.0,
        sigma_mag=REALISTIC_NOISE["sigma_mag_rel"] * mag_norm if noise else 0.0,
        mag_norm=mag_norm,
        mag_dip=mag_dip,
        seed=seed,
        q0=tuple(_from_scipy(Rotation.random(random_state=seed))[0]),
    )


# white noise standard deviations of a consumer-grade IMU at 100 Hz
REALISTIC_NOISE = {"sigma_gyr": 0.0017, "sigma_acc": 0.02, "sigma_mag_rel": 0.005}


def benchmark_suite(n=10, duration=120.0, seed=0):
    """``n`` reproducible trials with rest phases, motion, bias and noise."""
    rng = np.random.default_rng(seed)
    return [random_motion_spec(rng, duration=duration, seed=seed * 1000 + i) for i in range(n)]


def write_imu_csv(path, imu, include_mag=True):
    cols = ["t", "gyr_x", "gyr_y", "gyr_z", "acc_x", "acc_y", "acc_z"]
    data = [imu.t[:, None], imu.gyr, imu.acc]
    if include_mag:
        cols += ["mag_x", "mag_y", "mag_z"]
        data.append(imu.mag)
    np.savetxt(path, np.hstack(data), delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def write_truth_csv(path, truth):
    cols = ["t", "q_w", "q_x", "q_y", "q_z", "rest", "mag_dist", "bias_x", "bias_y", "bias_z"]
    data = np.hstack([truth.t[:, None], truth.quat, truth.rest[:, None], truth.mag_disturbed[:, None],
                      truth.bias])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def bundled_specs():
    """Names of the example trajectories shipped with the package."""
    return sorted(p.stem for p in (Path(__file__).parent / "specs").glob("*.json"))


def bundled_spec_path(name):
    p = Path(__file__).parent / "specs" / f"{name}.json"
    return p if p.is_file() else None
