"""Rest detection and the gyroscope bias Kalman filter.

The bias ``b`` (rad/s, sensor frame) is the only Kalman state. It is modeled
as a random walk with per-step variance ``v`` and observed in one of two ways:

* at rest the low-pass filtered gyroscope reading measures the bias directly
  (``y = gyr_lp``, ``C = I``);
* during motion the inclination correction rate of the previous step, with
  low-pass filtered rotation matrix and filtered bias contribution added
  back, gives a noisy measurement of the horizontal components of
  ``R @ b`` (``C = R_lp``); the vertical axis gets an almost infinite
  variance because the accelerometer carries no information about it.

Variances are derived from the desired terminal standard deviations: a
measurement variance ``w = sigma**4 / v + sigma**2`` makes the stationary
posterior standard deviation under continuous updates exactly ``sigma``.
"""

import math

import numpy as np
from numba import njit

from .lowpass import butter2_coeffs, init_window, lpf_step
from .quatmath import quat_to_rotmat

DEG = math.pi / 180.0

REST_STATE_DTYPE = np.dtype([
    ("gyr_lp", "f8", (4, 3)),
    ("acc_lp", "f8", (4, 3)),
    ("gyr_lp_out", "f8", 3),
    ("acc_lp_out", "f8", 3),
    ("t_rest", "f8"),
    ("rest", "?"),
    ("gyr_dev", "f8"),
    ("acc_dev", "f8"),
])

REST_COEFFS_DTYPE = np.dtype([
    ("Ts", "f8"),
    ("b", "f8", 3),
    ("a", "f8", 2),
    ("init_len", "i8"),
    ("th_gyr", "f8"),
    ("th_acc", "f8"),
    ("min_time", "f8"),
    ("max_rate", "f8"),
])

BIAS_STATE_DTYPE = np.dtype([
    ("bias", "f8", 3),
    ("P", "f8", (3, 3)),
    ("r_lp", "f8", (4, 9)),
    ("blp_lp", "f8", (4, 2)),
    ("r_lp_out", "f8", 9),
    ("blp_out", "f8", 2),
    ("singular_skips", "i8"),
])

BIAS_COEFFS_DTYPE = np.dtype([
    ("Ts", "f8"),
    ("b", "f8", 3),
    ("a", "f8", 2),
    ("init_len", "i8"),
    ("v", "f8"),
    ("w_motion", "f8"),
    ("w_vertical", "f8"),
    ("w_rest", "f8"),
    ("p0", "f8"),
    ("clip", "f8"),
    ("rest_enabled", "?"),
    ("motion_enabled", "?"),
])

# return codes of bias_kf_step
PREDICT_ONLY = 0
REST_UPDATE = 1
MOTION_UPDATE = 2
SINGULAR_SKIP = -1


def rest_coeffs(Ts, tau=0.5, th_gyr=2.0 * DEG, th_acc=0.5, min_time=1.5, max_rate=2.0 * DEG):
    """Rest detector coefficients; thresholds in rad/s and m/s^2.

    A filtered rate above ``max_rate`` on any axis (the bias clip) rules out
    rest, so a perfectly steady rotation is not mistaken for a static sensor.
    """
    if not (th_gyr > 0 and th_acc > 0 and min_time > 0):
        raise ValueError("rest thresholds and minimum time must be positive")
    c = np.zeros(1, REST_COEFFS_DTYPE)
    f = butter2_coeffs(tau, Ts)
    c["Ts"] = Ts
    c["b"] = f.b
    c["a"] = f.a
    c["init_len"] = init_window(tau, Ts)
    c["th_gyr"] = th_gyr
    c["th_acc"] = th_acc
    c["min_time"] = min_time
    c["max_rate"] = max_rate
    return c


def rest_state():
    return np.zeros(1, REST_STATE_DTYPE)


@njit(cache=True)
def _dev(x, lp):
    d0 = x[0] - lp[0]
    d1 = x[1] - lp[1]
    d2 = x[2] - lp[2]
    return math.sqrt(d0 * d0 + d1 * d1 + d2 * d2)


@njit(cache=True)
def rest_detect_step(r, c, gyr, acc):
    """Update the rest detector with one raw sample and return the rest flag."""
    for i in range(3):
        if not (math.isfinite(gyr[i]) and math.isfinite(acc[i])):
            r.t_rest = 0.0
            r.rest = False
            return False
    lpf_step(gyr, c.b, c.a, r.gyr_lp, c.init_len, r.gyr_lp_out)
    lpf_step(acc, c.b, c.a, r.acc_lp, c.init_len, r.acc_lp_out)
    r.gyr_dev = _dev(gyr, r.gyr_lp_out)
    r.acc_dev = _dev(acc, r.acc_lp_out)
    spinning = False
    for i in range(3):
        if abs(r.gyr_lp_out[i]) > c.max_rate:
            spinning = True
    if spinning or r.gyr_dev >= c.th_gyr or r.acc_dev >= c.th_acc:
        r.t_rest = 0.0
    else:
        r.t_rest += c.Ts
    r.rest = r.t_rest >= c.min_time
    return r.rest


def bias_kf_params(Ts, sigma_init=0.5 * DEG, forgetting_time=100.0, sigma_motion=0.1 * DEG,
                   sigma_rest=0.03 * DEG):
    """Random-walk variance ``v``, measurement variances and initial covariance.

    The random walk is scaled so that, without measurements, the standard
    deviation grows from 0 to 0.1 deg/s within ``forgetting_time``.
    Returns ``(v, w_motion, w_rest, P0)`` in (rad/s)^2.
    """
    if not Ts > 0:
        raise ValueError(f"Ts must be positive, got {Ts!r}")
    if not forgetting_time > 0:
        raise ValueError("forgetting time must be positive")
    v = (0.1 * DEG) ** 2 * Ts / forgetting_time
    w_motion = sigma_motion ** 4 / v + sigma_motion ** 2
    w_rest = sigma_rest ** 4 / v + sigma_rest ** 2
    P0 = sigma_init ** 2 * np.eye(3)
    return v, w_motion, w_rest, P0


def bias_coeffs(Ts, tau_acc=3.0, sigma_init=0.5 * DEG, forgetting_time=100.0, clip=2.0 * DEG,
                sigma_motion=0.1 * DEG, vertical_forgetting_factor=1e-4, sigma_rest=0.03 * DEG,
                rest_enabled=True, motion_enabled=True):
    v, w_motion, w_rest, P0 = bias_kf_params(Ts, sigma_init, forgetting_time, sigma_motion, sigma_rest)
    c = np.zeros(1, BIAS_COEFFS_DTYPE)
    f = butter2_coeffs(tau_acc, Ts)
    c["Ts"] = Ts
    c["b"] = f.b
    c["a"] = f.a
    c["init_len"] = init_window(tau_acc, Ts)
    c["v"] = v
    c["w_motion"] = w_motion
    c["w_vertical"] = w_motion / vertical_forgetting_factor
    c["w_rest"] = w_rest
    c["p0"] = P0[0, 0]
    c["clip"] = clip
    c["rest_enabled"] = rest_enabled
    c["motion_enabled"] = motion_enabled
    return c


def bias_state(coeffs):
    s = np.zeros(1, BIAS_STATE_DTYPE)
    s["P"][0] = coeffs["p0"][0] * np.eye(3)
    return s


@njit(cache=True)
def bias_sigma(P):
    """Square root of the largest absolute row sum of ``P``.

    By Gershgorin's theorem this bounds the largest eigenvalue, so the result
    is an upper bound on the standard deviation in the worst direction.
    """
    m = 0.0
    for i in range(3):
        s = abs(P[i, 0]) + abs(P[i, 1]) + abs(P[i, 2])
        if s > m:
            m = s
    return math.sqrt(m)


@njit(cache=True)
def _inv3(S, out):
    det = (S[0, 0] * (S[1, 1] * S[2, 2] - S[1, 2] * S[2, 1])
           - S[0, 1] * (S[1, 0] * S[2, 2] - S[1, 2] * S[2, 0])
           + S[0, 2] * (S[1, 0] * S[2, 1] - S[1, 1] * S[2, 0]))
    scale = abs(S[0, 0]) + abs(S[1, 1]) + abs(S[2, 2])
    if not math.isfinite(det) or abs(det) <= 1e-13 * scale * scale * scale:
        return False
    out[0, 0] = (S[1, 1] * S[2, 2] - S[1, 2] * S[2, 1]) / det
    out[0, 1] = (S[0, 2] * S[2, 1] - S[0, 1] * S[2, 2]) / det
    out[0, 2] = (S[0, 1] * S[1, 2] - S[0, 2] * S[1, 1]) / det
    out[1, 0] = (S[1, 2] * S[2, 0] - S[1, 0] * S[2, 2]) / det
    out[1, 1] = (S[0, 0] * S[2, 2] - S[0, 2] * S[2, 0]) / det
    out[1, 2] = (S[0, 2] * S[1, 0] - S[0, 0] * S[1, 2]) / det
    out[2, 0] = (S[1, 0] * S[2, 1] - S[1, 1] * S[2, 0]) / det
    out[2, 1] = (S[0, 1] * S[2, 0] - S[0, 0] * S[2, 1]) / det
    out[2, 2] = (S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]) / det
    return True


@njit(cache=True)
def _clip(x, lim):
    return min(max(x, -lim), lim)


@njit(cache=True)
def kf_update(k, C, y, w, clip):
    """Measurement update with innovation and state clipping; False if S is singular."""
    P = k.P
    b = k.bias
    PCt = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for m in range(3):
                acc += P[i, m] * C[j, m]
            PCt[i, j] = acc
    S = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for m in range(3):
                acc += C[i, m] * PCt[m, j]
            S[i, j] = acc
        S[i, i] += w[i]
    Sinv = np.empty((3, 3))
    if not _inv3(S, Sinv):
        return False
    K = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for m in range(3):
                acc += PCt[i, m] * Sinv[m, j]
            K[i, j] = acc
    e = np.empty(3)
    for i in range(3):
        e[i] = _clip(y[i] - (C[i, 0] * b[0] + C[i, 1] * b[1] + C[i, 2] * b[2]), clip)
    for i in range(3):
        b[i] = _clip(b[i] + K[i, 0] * e[0] + K[i, 1] * e[1] + K[i, 2] * e[2], clip)
    # P <- P - K C P, with C P = PCt^T since P is symmetric
    Pn = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            Pn[i, j] = P[i, j] - (K[i, 0] * PCt[j, 0] + K[i, 1] * PCt[j, 1] + K[i, 2] * PCt[j, 2])
    for i in range(3):
        for j in range(i, 3):
            m = 0.5 * (Pn[i, j] + Pn[j, i])
            P[i, j] = m
            P[j, i] = m
    return True


@njit(cache=True)
def bias_kf_step(k, c, quat6, acc_earth, gyr_lp, at_rest):
    """One bias filter step.

    ``quat6`` is the current 6D orientation, ``acc_earth`` the normalized
    filtered acceleration in the vertical-aligned frame before this step's
    correction and ``gyr_lp`` the rest detector's filtered gyroscope.
    Returns one of ``PREDICT_ONLY``, ``REST_UPDATE``, ``MOTION_UPDATE`` or
    ``SINGULAR_SKIP``.
    """
    R = quat_to_rotmat(quat6)
    b = k.bias
    rb = np.empty(2)
    rb[0] = R[0, 0] * b[0] + R[0, 1] * b[1] + R[0, 2] * b[2]
    rb[1] = R[1, 0] * b[0] + R[1, 1] * b[1] + R[1, 2] * b[2]
    lpf_step(R.ravel(), c.b, c.a, k.r_lp, c.init_len, k.r_lp_out)
    lpf_step(rb, c.b, c.a, k.blp_lp, c.init_len, k.blp_out)

    for i in range(3):
        k.P[i, i] += c.v

    w = np.empty(3)
    if at_rest and c.rest_enabled:
        C = np.eye(3)
        y = gyr_lp.copy()
        w[:] = c.w_rest
        mode = REST_UPDATE
    elif c.motion_enabled:
        C = k.r_lp_out.reshape((3, 3)).copy()
        y = np.empty(3)
        y[0] = -acc_earth[1] / c.Ts + k.blp_out[0]
        y[1] = acc_earth[0] / c.Ts + k.blp_out[1]
        y[2] = 0.0
        w[0] = c.w_motion
        w[1] = c.w_motion
        w[2] = c.w_vertical
        mode = MOTION_UPDATE
    else:
        return PREDICT_ONLY

    if not kf_update(k, C, y, w, c.clip):
        k.singular_skips += 1
        return SINGULAR_SKIP
    return mode
