"""Magnetic disturbance detection, rejection and acceptance of a new field.

The field is summarized by its norm ``n`` and dip angle ``theta`` (positive
when the field points below the horizon), both low-pass filtered. A sample
is undisturbed when it lies within a relative norm band and an absolute dip
band around the reference. While disturbed, heading updates are first
suspended and, after a maximum rejection time, only damped. A candidate
field that stays consistent for long enough during sufficient rotation is
accepted as the new reference.
"""

import math

import numpy as np
from numba import njit

from .lowpass import RUNNING, butter2_coeffs, exp_gain, init_window, lpf_step
from .quatmath import rotate_vector

DEG = math.pi / 180.0

MAGDIST_STATE_DTYPE = np.dtype([
    ("lp", "f8", (4, 2)),
    ("norm_dip", "f8", 2),
    ("n_ref", "f8"),
    ("theta_ref", "f8"),
    ("n_cand", "f8"),
    ("theta_cand", "f8"),
    ("t_undist", "f8"),
    ("t_cand", "f8"),
    ("t_reject", "f8"),
    ("disturbed", "?"),
    ("ref_initialized", "?"),
    ("accepted", "i8"),
])

MAGDIST_COEFFS_DTYPE = np.dtype([
    ("Ts", "f8"),
    ("b", "f8", 3),
    ("a", "f8", 2),
    ("init_len", "i8"),
    ("k_ref", "f8"),
    ("norm_th", "f8"),
    ("dip_th", "f8"),
    ("new_time", "f8"),
    ("new_min_gyr", "f8"),
    ("min_undisturbed", "f8"),
    ("max_reject", "f8"),
    ("reject_factor", "f8"),
])


def magdist_coeffs(Ts, current_tau=0.05, ref_tau=20.0, norm_th=0.1, dip_th=10.0 * DEG, new_time=20.0,
                   new_min_gyr=20.0 * DEG, min_undisturbed=0.5, max_reject=60.0, reject_factor=2.0):
    c = np.zeros(1, MAGDIST_COEFFS_DTYPE)
    f = butter2_coeffs(current_tau, Ts)
    c["Ts"] = Ts
    c["b"] = f.b
    c["a"] = f.a
    c["init_len"] = init_window(current_tau, Ts)
    c["k_ref"] = exp_gain(ref_tau, Ts)
    c["norm_th"] = norm_th
    c["dip_th"] = dip_th
    c["new_time"] = new_time
    c["new_min_gyr"] = new_min_gyr
    c["min_undisturbed"] = min_undisturbed
    c["max_reject"] = max_reject
    c["reject_factor"] = reject_factor
    return c


def magdist_state():
    s = np.zeros(1, MAGDIST_STATE_DTYPE)
    # a negative candidate norm can never match, so the first sample resets it
    s["n_cand"] = -1.0
    return s


def set_mag_reference(m, norm, dip):
    """Set the reference norm and dip (radians) of a magdist state record."""
    if not norm > 0:
        raise ValueError(f"reference norm must be positive, got {norm!r}")
    if not math.isfinite(dip):
        raise ValueError("reference dip must be finite")
    m["n_ref"] = norm
    m["theta_ref"] = dip
    m["ref_initialized"] = True


@njit(cache=True)
def dip_and_norm(mag, quat6):
    """Norm and dip angle of ``mag`` seen in the vertical-aligned frame of ``quat6``."""
    me = rotate_vector(quat6, mag)
    n = math.sqrt(me[0] * me[0] + me[1] * me[1] + me[2] * me[2])
    if not n > 0.0:
        return 0.0, 0.0
    return n, -math.asin(max(-1.0, min(1.0, me[2] / n)))


@njit(cache=True)
def _close(n, theta, n_ref, theta_ref, c):
    return abs(n - n_ref) < c.norm_th * n_ref and abs(theta - theta_ref) < c.dip_th


@njit(cache=True)
def rejection_scale(m, c, disturbed):
    """Heading gain multiplier: 0 at first, damped after the maximum rejection
    time, 1 when undisturbed (rejection time then decays back)."""
    if disturbed:
        if m.t_reject < c.max_reject:
            m.t_reject = min(m.t_reject + c.Ts, c.max_reject)
            return 0.0
        return 1.0 / c.reject_factor
    m.t_reject = max(m.t_reject - c.reject_factor * c.Ts, 0.0)
    return 1.0


@njit(cache=True)
def mag_dist_step(m, c, mag, quat6, gyr_norm):
    """Run detection, acceptance and rejection for one sample; returns the gain scale."""
    n_raw, theta_raw = dip_and_norm(mag, quat6)
    if not n_raw > 0.0:
        return 1.0
    raw = np.empty(2)
    raw[0] = n_raw
    raw[1] = theta_raw
    lpf_step(raw, c.b, c.a, m.lp, c.init_len, m.norm_dip)
    n = m.norm_dip[0]
    theta = m.norm_dip[1]
    if not m.ref_initialized:
        if m.lp[3, 0] != RUNNING:
            return 1.0
        m.n_ref = n
        m.theta_ref = theta
        m.ref_initialized = True

    # detection
    if _close(n, theta, m.n_ref, m.theta_ref, c):
        m.t_undist += c.Ts
        if m.t_undist >= c.min_undisturbed:
            m.disturbed = False
            m.n_ref += c.k_ref * (n - m.n_ref)
            m.theta_ref += c.k_ref * (theta - m.theta_ref)
    else:
        m.t_undist = 0.0
        m.disturbed = True

    # acceptance of a new field
    if _close(n, theta, m.n_cand, m.theta_cand, c):
        if gyr_norm >= c.new_min_gyr:
            m.t_cand += c.Ts
        m.n_cand += c.k_ref * (n - m.n_cand)
        m.theta_cand += c.k_ref * (theta - m.theta_cand)
        if m.disturbed and m.t_cand >= c.new_time:
            m.disturbed = False
            m.n_ref = m.n_cand
            m.theta_ref = m.theta_cand
            m.t_undist = c.min_undisturbed
            m.accepted += 1
    else:
        m.t_cand = 0.0
        m.n_cand = n
        m.theta_cand = theta

    return rejection_scale(m, c, m.disturbed)
