"""Basic orientation filter: strapdown integration, inclination and heading correction.

The orientation is kept in three pieces::

    q9 = heading(delta) * q_ie * q_si

``q_si`` integrates the gyroscope from the sensor frame into an almost
inertial frame that slowly drifts, ``q_ie`` rotates that frame so its z-axis
is vertical again (the 6D estimate is ``q_ie * q_si``), and the scalar
``delta`` rotates about the vertical axis to align with magnetic north.
Magnetometer data only ever touches ``delta``, so the 6D estimate is exactly
the same with and without a magnetometer.

State and coefficients live in numpy structured records so the per-sample
kernels can be compiled and nested into the full filter.
"""

import logging
import math

import numpy as np
from numba import njit

from .lowpass import butter2_coeffs, exp_gain, init_window, lpf_step
from .quatmath import (
    quat_from_angle_axis,
    quat_from_heading,
    quat_multiply,
    quat_normalize,
    rotate_vector,
    wrap_to_pi,
)

log = logging.getLogger(__name__)

# clamp for the upside-down singularity of the correction quaternion
CORR_EPS = 1e-12

BASIC_STATE_DTYPE = np.dtype([
    ("q_si", "f8", 4),
    ("q_ie", "f8", 4),
    ("delta", "f8"),
    ("acc_lp", "f8", (4, 3)),
    ("last_acc_lp", "f8", 3),
    ("mag_updates", "i8"),
    ("last_mag_heading", "f8"),
])

BASIC_COEFFS_DTYPE = np.dtype([
    ("Ts", "f8"),
    ("acc_b", "f8", 3),
    ("acc_a", "f8", 2),
    ("acc_init_len", "i8"),
    ("k_mag", "f8"),
])


def basic_coeffs(Ts, tau_acc=3.0, tau_mag=9.0):
    """Coefficient record for sampling time ``Ts`` and the two fusion time constants."""
    if not Ts > 0:
        raise ValueError(f"Ts must be positive, got {Ts!r}")
    c = np.zeros(1, BASIC_COEFFS_DTYPE)
    acc = butter2_coeffs(tau_acc, Ts)
    c["Ts"] = Ts
    c["acc_b"] = acc.b
    c["acc_a"] = acc.a
    c["acc_init_len"] = init_window(tau_acc, Ts)
    c["k_mag"] = exp_gain(tau_mag, Ts)
    return c


def basic_state():
    s = np.zeros(1, BASIC_STATE_DTYPE)
    s["q_si"][0, 0] = 1.0
    s["q_ie"][0, 0] = 1.0
    return s


@njit(cache=True)
def all_finite(v):
    for i in range(v.shape[0]):
        if not math.isfinite(v[i]):
            return False
    return True


@njit(cache=True)
def update_gyr(s, c, gyr):
    """Strapdown step ``q_si <- q_si * exp(Ts * gyr)``. Returns False if skipped."""
    if not all_finite(gyr):
        return False
    n = math.sqrt(gyr[0] * gyr[0] + gyr[1] * gyr[1] + gyr[2] * gyr[2])
    if n > 0.0:
        q = quat_multiply(s.q_si, quat_from_angle_axis(c.Ts * n, gyr))
        quat_normalize(q)
        s.q_si[:] = q
    return True


@njit(cache=True)
def correction_quat(a):
    """Shortest rotation taking the unit vector ``a`` onto +z.

    Near ``a = -z`` the scalar part is clamped; exactly upside down with no
    horizontal component the correction is a half turn about x.
    """
    q = np.zeros(4)
    qw = math.sqrt(max(a[2] + 1.0, 0.0) / 2.0)
    if qw < math.sqrt(CORR_EPS):
        if a[0] * a[0] + a[1] * a[1] < CORR_EPS * CORR_EPS:
            q[1] = 1.0
            return q
        qw = math.sqrt(CORR_EPS)
    q[0] = qw
    q[1] = 0.5 * a[1] / qw
    q[2] = -0.5 * a[0] / qw
    quat_normalize(q)
    return q


@njit(cache=True)
def inclination_correct(q_ie, acc_lp_i, acc_earth):
    """Rotate ``q_ie`` so that ``acc_lp_i`` points up; writes the pre-correction
    normalized vertical reference into ``acc_earth``. Returns False if ``acc_lp_i``
    has no direction."""
    ae = rotate_vector(q_ie, acc_lp_i)
    n = math.sqrt(ae[0] * ae[0] + ae[1] * ae[1] + ae[2] * ae[2])
    if not n > 0.0:
        return False
    ae /= n
    acc_earth[:] = ae
    q = quat_multiply(correction_quat(ae), q_ie)
    quat_normalize(q)
    q_ie[:] = q
    return True


@njit(cache=True)
def update_acc(s, c, acc, acc_earth):
    """Accelerometer correction; the normalized filtered acceleration in the
    vertical-aligned frame (before correcting) is written to ``acc_earth``."""
    if not all_finite(acc) or (acc[0] == 0.0 and acc[1] == 0.0 and acc[2] == 0.0):
        return False
    acc_i = rotate_vector(s.q_si, acc)
    lpf_step(acc_i, c.acc_b, c.acc_a, s.acc_lp, c.acc_init_len, s.last_acc_lp)
    return inclination_correct(s.q_ie, s.last_acc_lp, acc_earth)


@njit(cache=True)
def quat_6d(s):
    return quat_multiply(s.q_ie, s.q_si)


@njit(cache=True)
def quat_9d(s):
    return quat_multiply(quat_from_heading(s.delta), quat_multiply(s.q_ie, s.q_si))


@njit(cache=True)
def heading_filter_step(delta, measured, k_mag, count, scale):
    """One heading update; ``count`` is the 1-based number of this update.

    The first updates average the measurements (gain 1, 1/2, 1/3, ...) until
    ``1/count`` drops below ``k_mag``.
    """
    k = max(k_mag, 1.0 / count) * scale
    return wrap_to_pi(delta + k * wrap_to_pi(measured - delta))


@njit(cache=True)
def mag_heading(q6, mag):
    """Heading of the horizontal field projection in the 6D frame, NaN if undefined."""
    m = rotate_vector(q6, mag)
    if math.hypot(m[0], m[1]) < 1e-12:
        return math.nan
    return math.atan2(m[0], m[1])


@njit(cache=True)
def update_mag(s, c, mag, scale):
    """Heading correction with gain ``scale * k_mag``. Returns False if skipped."""
    if not all_finite(mag) or (mag[0] == 0.0 and mag[1] == 0.0 and mag[2] == 0.0):
        return False
    heading = mag_heading(quat_6d(s), mag)
    if math.isnan(heading):
        return False
    s.last_mag_heading = heading
    if scale <= 0.0:
        return True
    s.mag_updates += 1
    s.delta = heading_filter_step(s.delta, heading, c.k_mag, s.mag_updates, scale)
    return True


@njit(cache=True)
def basic_step(s, c, gyr, acc, mag, has_mag):
    """Full basic update. Returns False (state untouched) for non-finite input."""
    if not all_finite(gyr) or not all_finite(acc) or (has_mag and not all_finite(mag)):
        return False
    acc_earth = np.empty(3)
    update_gyr(s, c, gyr)
    update_acc(s, c, acc, acc_earth)
    if has_mag:
        update_mag(s, c, mag, 1.0)
    return True


@njit(cache=True, nogil=True)
def basic_batch(s, c, gyr, acc, mag, has_mag, out6, out9, out_delta, skipped):
    for i in range(gyr.shape[0]):
        skipped[i] = not basic_step(s, c, gyr[i], acc[i], mag[i], has_mag)
        out6[i] = quat_6d(s)
        out9[i] = quat_9d(s)
        out_delta[i] = s.delta


@njit(cache=True)
def strapdown(gyr, Ts, q0):
    """Integrate a gyroscope series; row ``k`` is the orientation after sample ``k``."""
    n = gyr.shape[0]
    out = np.empty((n, 4))
    q = q0.copy()
    for i in range(n):
        w = gyr[i]
        norm = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
        if norm > 0.0:
            q = quat_multiply(q, quat_from_angle_axis(Ts * norm, w))
            quat_normalize(q)
        out[i] = q
    return out


def _vec3(v, name):
    a = np.ascontiguousarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {a.shape}")
    return a


class BasicVQF:
    """Gyroscope/accelerometer/magnetometer fusion without bias estimation or
    disturbance rejection.

    ``update`` returns the 6D and 9D quaternions after the sample.
    """

    def __init__(self, Ts, tau_acc=3.0, tau_mag=9.0):
        self.Ts = Ts
        self.coeffs = basic_coeffs(Ts, tau_acc, tau_mag)
        self.state = basic_state()
        self._no_mag = np.zeros(3)

    def update(self, gyr, acc, mag=None):
        gyr = _vec3(gyr, "gyr")
        acc = _vec3(acc, "acc")
        has_mag = mag is not None
        m = _vec3(mag, "mag") if has_mag else self._no_mag
        if not basic_step(self.state[0], self.coeffs[0], gyr, acc, m, has_mag):
            log.warning("skipped sample with non-finite values")
        return self.quat6, self.quat9

    def update_batch(self, gyr, acc, mag=None):
        """Process ``(N, 3)`` arrays; returns a dict of per-sample outputs."""
        gyr = np.ascontiguousarray(gyr, dtype=float)
        acc = np.ascontiguousarray(acc, dtype=float)
        n = gyr.shape[0]
        if gyr.shape != (n, 3) or acc.shape != (n, 3):
            raise ValueError("gyr and acc must be (N, 3) arrays of equal length")
        has_mag = mag is not None
        if has_mag:
            mag = np.ascontiguousarray(mag, dtype=float)
            if mag.shape != (n, 3):
                raise ValueError("mag must be an (N, 3) array matching gyr")
        else:
            mag = np.zeros((n, 3))
        out6 = np.empty((n, 4))
        out9 = np.empty((n, 4))
        delta = np.empty(n)
        skipped = np.zeros(n, dtype=np.bool_)
        basic_batch(self.state[0], self.coeffs[0], gyr, acc, mag, has_mag, out6, out9, delta, skipped)
        return {"quat6": out6, "quat9": out9, "delta": delta, "skipped": skipped}

    @property
    def quat6(self):
        return quat_6d(self.state[0])

    @property
    def quat9(self):
        return quat_9d(self.state[0])

    @property
    def delta(self):
        return float(self.state["delta"][0])

    def reset(self):
        self.state = basic_state()
