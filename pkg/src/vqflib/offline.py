"""Acausal forward-backward variant of the filter for recorded data.

The real-time filter is run once forward and once over the time-reversed
recording (gyroscope negated), and the two bias estimates are fused by
inverse-covariance weighting. The orientation is then recomputed with the
fused bias, zero-phase filtered acceleration and a heading filter that runs
forward and then backward over its own output.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .bias import bias_sigma
from .core import heading_filter_step, inclination_correct, mag_heading, strapdown
from .lowpass import exp_gain, filtfilt
from .quatmath import quat_from_heading, quat_multiply, rotate_vector
from .vqf import VQF, VqfParams

# floor added to covariances before inverting them, in (rad/s)^2
TIKHONOV = 1e-12


@dataclass
class OfflineResult:
    q6: np.ndarray
    q9: np.ndarray
    delta: np.ndarray
    bias: np.ndarray
    bias_sigma: np.ndarray
    mag_disturbed: np.ndarray
    rest: np.ndarray
    bias_forward: np.ndarray
    bias_backward: np.ndarray


def reverse_run_transform(gyr, acc, mag=None):
    """Time-reverse a recording; the gyroscope is negated so the reversed motion is consistent."""
    gyr = -np.asarray(gyr, dtype=float)[::-1].copy()
    acc = np.asarray(acc, dtype=float)[::-1].copy()
    if mag is None:
        return gyr, acc, None
    return gyr, acc, np.asarray(mag, dtype=float)[::-1].copy()


def merge_bias(b1, P1, b2, P2, eps=TIKHONOV):
    """Inverse-covariance fusion of forward estimates ``b1`` and backward estimates ``b2``.

    The backward run observes the negated bias, hence ``-b2``. Works on single
    samples or stacks of shape ``(N, 3)`` / ``(N, 3, 3)``.
    """
    eye = np.eye(3)
    I1 = np.linalg.inv(P1 + eps * eye)
    I2 = np.linalg.inv(P2 + eps * eye)
    info = I1 + I2
    rhs = (I1 @ b1[..., None] - I2 @ b2[..., None])
    b = np.linalg.solve(info, rhs)[..., 0]
    return b, np.linalg.inv(info)


@njit(cache=True)
def _inclination_sweep(q_si, acc, acc_lp_i):
    n = q_si.shape[0]
    q_ie = np.zeros(4)
    q_ie[0] = 1.0
    out = np.empty((n, 4))
    ae = np.empty(3)
    for i in range(n):
        inclination_correct(q_ie, acc_lp_i[i], ae)
        out[i] = quat_multiply(q_ie, q_si[i])
    return out


@njit(cache=True)
def _rotate_series(q, v):
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        out[i] = rotate_vector(q[i], v[i])
    return out


@njit(cache=True)
def _mag_headings(q6, mag):
    out = np.empty(q6.shape[0])
    for i in range(q6.shape[0]):
        m = mag[i]
        if m[0] == 0.0 and m[1] == 0.0 and m[2] == 0.0:
            out[i] = np.nan
        else:
            out[i] = mag_heading(q6[i], m)
    return out


@njit(cache=True)
def heading_pass(measured, disturbed, k_mag, gated, Ts, max_reject, reject_factor):
    """Causal heading filter over ``measured`` with disturbance gating.

    NaN measurements are skipped. While ``disturbed`` the update is suspended
    for up to ``max_reject`` seconds and damped by ``reject_factor`` after that.
    """
    n = measured.shape[0]
    out = np.empty(n)
    delta = 0.0
    count = 0
    t_reject = 0.0
    for i in range(n):
        scale = 1.0
        if gated:
            if disturbed[i]:
                if t_reject < max_reject:
                    t_reject = min(t_reject + Ts, max_reject)
                    scale = 0.0
                else:
                    scale = 1.0 / reject_factor
            else:
                t_reject = max(t_reject - reject_factor * Ts, 0.0)
        m = measured[i]
        if scale > 0.0 and not np.isnan(m):
            count += 1
            delta = heading_filter_step(delta, m, k_mag, count, scale)
        out[i] = delta
    return out


def heading_double_pass(measured, disturbed, Ts, tau_mag, gated=True, max_reject=60.0, reject_factor=2.0):
    """Run the heading filter forward, then backward over its own output."""
    measured = np.ascontiguousarray(measured, dtype=float)
    disturbed = np.ascontiguousarray(disturbed, dtype=np.bool_)
    k = exp_gain(tau_mag, Ts)
    fwd = heading_pass(measured, disturbed, k, gated, Ts, max_reject, reject_factor)
    back = heading_pass(fwd[::-1].copy(), disturbed[::-1].copy(), k, gated, Ts, max_reject, reject_factor)
    return back[::-1].copy()


def offline_vqf(gyr, acc, mag=None, Ts=0.01, params=None):
    """Forward-backward orientation estimation for a complete recording."""
    params = VqfParams() if params is None else params
    gyr = np.ascontiguousarray(gyr, dtype=float)
    acc = np.ascontiguousarray(acc, dtype=float)
    n = gyr.shape[0]
    if gyr.ndim != 2 or gyr.shape[1] != 3 or acc.shape != gyr.shape:
        raise ValueError("gyr and acc must be (N, 3) arrays of equal length")
    if mag is not None:
        mag = np.ascontiguousarray(mag, dtype=float)
        if mag.shape != gyr.shape:
            raise ValueError("mag must be an (N, 3) array matching gyr")
    if n < 2:
        raise ValueError("offline estimation needs at least 2 samples")

    fwd, P1 = VQF(Ts, params).update_batch(gyr, acc, mag, return_covariance=True)
    rg, ra, rm = reverse_run_transform(gyr, acc, mag)
    bwd, P2 = VQF(Ts, params).update_batch(rg, ra, rm, return_covariance=True)
    bwd = bwd[::-1]
    P2 = P2[::-1]

    b1 = fwd["bias"]
    b2 = bwd["bias"]
    bias, P = merge_bias(b1, P1, b2, P2)
    sigma = np.array([bias_sigma(np.ascontiguousarray(p)) for p in P])
    dist = fwd["mag_disturbed"] & bwd["mag_disturbed"]

    q0 = np.array([1.0, 0.0, 0.0, 0.0])
    q_si = strapdown(np.ascontiguousarray(gyr - bias), Ts, q0)
    acc_i = _rotate_series(q_si, acc)
    acc_lp_i = np.ascontiguousarray(filtfilt(acc_i, params.tau_acc, Ts))
    q6 = _inclination_sweep(q_si, acc, acc_lp_i)

    if mag is not None:
        measured = _mag_headings(q6, mag)
        delta = heading_double_pass(measured, dist, Ts, params.tau_mag, params.mag_dist_rejection,
                                    params.mag_max_rejection_time, params.mag_rejection_factor)
    else:
        delta = np.zeros(n)
    q9 = np.array([quat_multiply(quat_from_heading(d), q) for d, q in zip(delta, q6)]).reshape(n, 4)

    return OfflineResult(
        q6=q6, q9=q9, delta=delta, bias=bias, bias_sigma=sigma, mag_disturbed=dist,
        rest=fwd["rest"] | bwd["rest"], bias_forward=b1.copy(), bias_backward=-b2,
    )
