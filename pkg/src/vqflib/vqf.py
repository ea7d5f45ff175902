"""Full real-time filter: basic fusion plus rest detection, bias estimation and
magnetic disturbance rejection, each of which can be switched off.

Per sample the filter

1. feeds the raw sample to the rest detector,
2. integrates the gyroscope with the bias estimate from the previous step,
3. applies the accelerometer correction,
4. runs the bias Kalman filter on the corrected 6D orientation and the
   filtered acceleration seen before the correction,
5. runs disturbance detection and the scaled heading correction.

Magnetometer data never feeds back into steps 1-4.
"""

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bias import (
    BIAS_COEFFS_DTYPE,
    BIAS_STATE_DTYPE,
    REST_COEFFS_DTYPE,
    REST_STATE_DTYPE,
    bias_coeffs,
    bias_kf_step,
    bias_sigma,
    bias_state,
    rest_coeffs,
    rest_detect_step,
    rest_state,
)
from .core import (
    BASIC_COEFFS_DTYPE,
    BASIC_STATE_DTYPE,
    all_finite,
    basic_coeffs,
    basic_state,
    quat_6d,
    quat_9d,
    update_acc,
    update_gyr,
    update_mag,
)
from .magdist import (
    MAGDIST_COEFFS_DTYPE,
    MAGDIST_STATE_DTYPE,
    mag_dist_step,
    magdist_coeffs,
    magdist_state,
    set_mag_reference,
)

DEG = math.pi / 180.0


@dataclass
class VqfParams:
    """Tuning parameters. Angular quantities are in degrees and deg/s."""

    tau_acc: float = 3.0
    tau_mag: float = 9.0
    motion_bias_est: bool = True
    rest_bias_est: bool = True
    mag_dist_rejection: bool = True
    bias_sigma_init: float = 0.5
    bias_forgetting_time: float = 100.0
    bias_clip: float = 2.0
    bias_sigma_motion: float = 0.1
    bias_vertical_forgetting_factor: float = 0.0001
    bias_sigma_rest: float = 0.03
    rest_min_time: float = 1.5
    rest_filter_tau: float = 0.5
    rest_th_gyr: float = 2.0
    rest_th_acc: float = 0.5
    mag_current_tau: float = 0.05
    mag_ref_tau: float = 20.0
    mag_norm_th: float = 0.1
    mag_dip_th: float = 10.0
    mag_new_time: float = 20.0
    mag_new_min_gyr: float = 20.0
    mag_min_undisturbed_time: float = 0.5
    mag_max_rejection_time: float = 60.0
    mag_rejection_factor: float = 2.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        bad = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.type in (bool, "bool"):
                if not isinstance(value, (bool, np.bool_)):
                    bad.append(f"{f.name}={value!r} (expected a boolean)")
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                bad.append(f"{f.name}={value!r} (expected a number)")
            elif not (math.isfinite(value) and value > 0):
                bad.append(f"{f.name}={value!r} (must be positive)")
        if bad:
            raise ValueError("invalid VqfParams: " + ", ".join(bad))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        """Flat ``key = value`` text, one field per line."""
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (bool, np.bool_)):
                lines.append(f"{f.name} = {'true' if value else 'false'}")
            else:
                lines.append(f"{f.name} = {float(value)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (p.strip() for p in line.split("=", 1))
            if key not in kinds:
                raise ValueError(f"line {lineno}: unknown parameter {key!r}")
            values[key] = parse_value(kinds[key], value, f"line {lineno}: {key}")
        return cls(**values)

    @classmethod
    def field_types(cls):
        return {f.name: (bool if f.type in (bool, "bool") else float) for f in dataclasses.fields(cls)}


def parse_value(kind, text, where="value"):
    if kind in (bool, "bool"):
        low = text.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{where}: expected true/false, got {text!r}")
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"{where}: expected a number, got {text!r}") from None


VQF_COEFFS_DTYPE = np.dtype([
    ("basic", BASIC_COEFFS_DTYPE),
    ("rest", REST_COEFFS_DTYPE),
    ("bias", BIAS_COEFFS_DTYPE),
    ("magdist", MAGDIST_COEFFS_DTYPE),
    ("run_rest", "?"),
    ("bias_enabled", "?"),
    ("mag_dist_enabled", "?"),
])

VQF_STATE_DTYPE = np.dtype([
    ("basic", BASIC_STATE_DTYPE),
    ("rest", REST_STATE_DTYPE),
    ("bias", BIAS_STATE_DTYPE),
    ("magdist", MAGDIST_STATE_DTYPE),
    ("acc_earth", "f8", 3),
])

RECORD_DTYPE = np.dtype([
    ("q6", "f8", 4),
    ("q9", "f8", 4),
    ("delta", "f8"),
    ("bias", "f8", 3),
    ("bias_sigma", "f8"),
    ("rest", "?"),
    ("mag_disturbed", "?"),
    ("skipped", "?"),
])


def vqf_coeffs(Ts, params):
    """Compile ``params`` into the SI-unit coefficient record used by the kernels."""
    if not (isinstance(Ts, (int, float, np.floating)) and math.isfinite(Ts) and Ts > 0):
        raise ValueError(f"Ts must be a positive number, got {Ts!r}")
    p = params
    c = np.zeros(1, VQF_COEFFS_DTYPE)
    c["basic"] = basic_coeffs(Ts, p.tau_acc, p.tau_mag)
    c["rest"] = rest_coeffs(Ts, p.rest_filter_tau, p.rest_th_gyr * DEG, p.rest_th_acc, p.rest_min_time,
                            p.bias_clip * DEG)
    c["bias"] = bias_coeffs(
        Ts, p.tau_acc, p.bias_sigma_init * DEG, p.bias_forgetting_time, p.bias_clip * DEG,
        p.bias_sigma_motion * DEG, p.bias_vertical_forgetting_factor, p.bias_sigma_rest * DEG,
        p.rest_bias_est, p.motion_bias_est,
    )
    c["magdist"] = magdist_coeffs(
        Ts, p.mag_current_tau, p.mag_ref_tau, p.mag_norm_th, p.mag_dip_th * DEG, p.mag_new_time,
        p.mag_new_min_gyr * DEG, p.mag_min_undisturbed_time, p.mag_max_rejection_time,
        p.mag_rejection_factor,
    )
    c["run_rest"] = p.rest_bias_est or p.motion_bias_est or p.mag_dist_rejection
    c["bias_enabled"] = p.rest_bias_est or p.motion_bias_est
    c["mag_dist_enabled"] = p.mag_dist_rejection
    return c


def vqf_state(coeffs):
    s = np.zeros(1, VQF_STATE_DTYPE)
    s["basic"] = basic_state()
    s["rest"] = rest_state()
    s["bias"] = bias_state(coeffs["bias"])
    s["magdist"] = magdist_state()
    return s


@njit(cache=True)
def vqf_step(s, c, gyr, acc, mag, has_mag):
    """One filter step. Returns False (state untouched) for non-finite input."""
    if not all_finite(gyr) or not all_finite(acc) or (has_mag and not all_finite(mag)):
        return False
    at_rest = False
    if c.run_rest:
        at_rest = rest_detect_step(s.rest, c.rest, gyr, acc)

    b = s.bias.bias
    g = np.empty(3)
    for i in range(3):
        g[i] = gyr[i] - b[i]
    update_gyr(s.basic, c.basic, g)

    acc_ok = update_acc(s.basic, c.basic, acc, s.acc_earth)
    if c.bias_enabled and acc_ok:
        bias_kf_step(s.bias, c.bias, quat_6d(s.basic), s.acc_earth, s.rest.gyr_lp_out, at_rest)

    if has_mag:
        scale = 1.0
        if c.mag_dist_enabled and not (mag[0] == 0.0 and mag[1] == 0.0 and mag[2] == 0.0):
            g_lp = s.rest.gyr_lp_out
            gyr_norm = math.sqrt(g_lp[0] * g_lp[0] + g_lp[1] * g_lp[1] + g_lp[2] * g_lp[2])
            scale = mag_dist_step(s.magdist, c.magdist, mag, quat_6d(s.basic), gyr_norm)
        update_mag(s.basic, c.basic, mag, scale)
    return True


@njit(cache=True)
def fill_record(s, c, rec, skipped):
    rec.q6[:] = quat_6d(s.basic)
    rec.q9[:] = quat_9d(s.basic)
    rec.delta = s.basic.delta
    rec.bias[:] = s.bias.bias
    rec.bias_sigma = bias_sigma(s.bias.P)
    rec.rest = s.rest.rest
    rec.mag_disturbed = c.mag_dist_enabled and s.magdist.disturbed
    rec.skipped = skipped


@njit(cache=True, nogil=True)
def vqf_batch(s, c, gyr, acc, mag, has_mag, out, P_out, store_P):
    for i in range(gyr.shape[0]):
        ok = vqf_step(s, c, gyr[i], acc[i], mag[i], has_mag)
        fill_record(s, c, out[i], not ok)
        if store_P:
            P_out[i] = s.bias.P


@dataclass
class EstimateRecord:
    q6: np.ndarray
    q9: np.ndarray
    delta: float
    bias: np.ndarray
    bias_sigma: float
    rest: bool
    mag_disturbed: bool
    skipped: bool = False

    @classmethod
    def from_row(cls, row):
        return cls(
            q6=np.array(row["q6"]),
            q9=np.array(row["q9"]),
            delta=float(row["delta"]),
            bias=np.array(row["bias"]),
            bias_sigma=float(row["bias_sigma"]),
            rest=bool(row["rest"]),
            mag_disturbed=bool(row["mag_disturbed"]),
            skipped=bool(row["skipped"]),
        )


def _as_series(x, n, name):
    a = np.ascontiguousarray(x, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3 or a.shape[0] != n:
        raise ValueError(f"{name} must have shape ({n}, 3), got {a.shape}")
    return a


class VQF:
    """Real-time orientation filter with bias estimation and disturbance rejection.

    ``params`` is a :class:`VqfParams`; keyword overrides are applied on top.

    >>> f = VQF(0.01)
    >>> rec = f.update([0.0, 0.0, 0.0], [0.0, 0.0, 9.81])
    >>> rec.q6.round(6).tolist()
    [1.0, 0.0, 0.0, 0.0]
    """

    def __init__(self, Ts, params=None, **overrides):
        params = VqfParams() if params is None else params
        if overrides:
            params = params.replace(**overrides)
        self.params = params
        self.Ts = float(Ts) if isinstance(Ts, (int, float)) else Ts
        self.coeffs = vqf_coeffs(Ts, params)
        self.state = vqf_state(self.coeffs)
        self._rec = np.zeros(1, RECORD_DTYPE)
        self._no_mag = np.zeros(3)

    def reset(self):
        self.state = vqf_state(self.coeffs)

    def update(self, gyr, acc, mag=None):
        """Process one sample and return its :class:`EstimateRecord`.

        A sample with non-finite values leaves the state untouched and returns
        the current estimate with ``skipped`` set.
        """
        gyr = np.ascontiguousarray(gyr, dtype=float).reshape(3)
        acc = np.ascontiguousarray(acc, dtype=float).reshape(3)
        has_mag = mag is not None
        m = np.ascontiguousarray(mag, dtype=float).reshape(3) if has_mag else self._no_mag
        s, c = self.state[0], self.coeffs[0]
        ok = vqf_step(s, c, gyr, acc, m, has_mag)
        fill_record(s, c, self._rec[0], not ok)
        return EstimateRecord.from_row(self._rec[0])

    def update_batch(self, gyr, acc, mag=None, return_covariance=False):
        """Process ``(N, 3)`` arrays; returns a structured array of records.

        With ``return_covariance`` the per-sample bias covariance ``(N, 3, 3)``
        is returned as a second value.
        """
        gyr = np.asarray(gyr, dtype=float)
        n = gyr.shape[0] if gyr.ndim == 2 else -1
        gyr = _as_series(gyr, n, "gyr")
        acc = _as_series(acc, n, "acc")
        has_mag = mag is not None
        mag = _as_series(mag, n, "mag") if has_mag else np.zeros((n, 3))
        out = np.zeros(n, RECORD_DTYPE)
        P_out = np.zeros((n if return_covariance else 0, 3, 3))
        vqf_batch(self.state[0], self.coeffs[0], gyr, acc, mag, has_mag, out, P_out, return_covariance)
        if return_covariance:
            return out, P_out
        return out

    @property
    def quat6(self):
        return quat_6d(self.state[0]["basic"])

    @property
    def quat9(self):
        return quat_9d(self.state[0]["basic"])

    @property
    def delta(self):
        return float(self.state["basic"]["delta"][0])

    @property
    def covariance(self):
        return self.state["bias"]["P"][0].copy()

    @property
    def rest(self):
        return bool(self.state["rest"]["rest"][0])

    @property
    def mag_disturbed(self):
        return bool(self.params.mag_dist_rejection and self.state["magdist"]["disturbed"][0])

    def get_bias(self):
        """Current bias estimate (rad/s) and its worst-direction standard deviation."""
        return self.state["bias"]["bias"][0].copy(), float(bias_sigma(self.state["bias"]["P"][0]))

    def set_bias(self, bias, sigma=None):
        """Seed the bias estimate; ``sigma`` (rad/s) resets the covariance to ``sigma**2 * I``."""
        bias = np.asarray(bias, dtype=float).reshape(3)
        clip = self.params.bias_clip * DEG
        if not np.all(np.isfinite(bias)) or np.any(np.abs(bias) > clip):
            raise ValueError(f"bias {bias} exceeds the clipping limit of {clip:.6g} rad/s")
        self.state["bias"]["bias"][0] = bias
        if sigma is not None:
            if not (math.isfinite(sigma) and sigma >= 0):
                raise ValueError(f"sigma must be non-negative, got {sigma!r}")
            self.state["bias"]["P"][0] = sigma ** 2 * np.eye(3)

    def set_mag_reference(self, norm, dip):
        """Set the undisturbed field norm and dip angle (radians)."""
        set_mag_reference(self.state["magdist"], norm, dip)

    @property
    def mag_reference(self):
        m = self.state["magdist"]
        if not m["ref_initialized"][0]:
            return None
        return float(m["n_ref"][0]), float(m["theta_ref"][0])
