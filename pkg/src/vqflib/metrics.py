"""Orientation and bias error metrics.

Errors are measured with ``e = q_est * q_ref^-1``, i.e. in the reference
(earth) frame. The heading/inclination split factors ``e`` into a rotation
about the vertical axis (twist, heading) and a rotation about a horizontal
axis (swing, inclination) with ``e = swing * twist``.
"""

from dataclasses import asdict, dataclass

import numpy as np


def _quats(q):
    return np.asarray(q, dtype=float)


def _qmul(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], -1)


def _conj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def error_quat(q_est, q_ref):
    """``q_est * q_ref^-1`` for single quaternions or ``(N, 4)`` stacks."""
    return _qmul(_quats(q_est), _conj(_quats(q_ref)))


def quat_error_angle(q_est, q_ref):
    """Total rotation angle between the estimates in degrees, in [0, 180]."""
    # atan2 form of 2*acos(|w|); stays accurate for tiny angles
    e = error_quat(q_est, q_ref)
    return np.degrees(2.0 * np.arctan2(np.linalg.norm(e[..., 1:], axis=-1), np.abs(e[..., 0])))


def swing_twist(e):
    """Split ``e`` into ``(swing, twist)`` with ``e = swing * twist``; twist is about z."""
    e = _quats(e)
    w, z = e[..., 0], e[..., 3]
    n = np.hypot(w, z)
    safe = np.where(n > 0, n, 1.0)
    zero = np.zeros_like(w)
    twist = np.where((n > 0)[..., None], np.stack([w / safe, zero, zero, z / safe], -1),
                     np.array([1.0, 0.0, 0.0, 0.0]))
    swing = _qmul(e, _conj(twist))
    return swing, twist


def heading_inclination_split(q_est, q_ref):
    """Heading and inclination error in degrees."""
    e = error_quat(q_est, q_ref)
    w, z = e[..., 0], e[..., 3]
    heading = np.abs(np.degrees(2.0 * np.arctan2(z, w)))
    heading = np.where(heading > 180.0, 360.0 - heading, heading)
    inclination = np.degrees(2.0 * np.arctan2(np.hypot(e[..., 1], e[..., 2]), np.hypot(w, z)))
    return heading, inclination


def signed_heading_error(q_est, q_ref):
    """Heading error in radians in [-pi, pi)."""
    e = error_quat(q_est, q_ref)
    h = 2.0 * np.arctan2(e[..., 3], e[..., 0])
    return (h + np.pi) % (2 * np.pi) - np.pi


def rmse_over_mask(angles, mask=None):
    angles = np.asarray(angles, dtype=float)
    mask = np.ones(angles.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != angles.shape:
        raise ValueError(f"mask shape {mask.shape} does not match {angles.shape}")
    if not mask.any():
        raise ValueError("mask selects no samples")
    return float(np.sqrt(np.mean(angles[mask] ** 2)))


def bias_residual_rms(b_est, b_true):
    """RMS over time of the residual bias norm, in the input units."""
    b_est = np.asarray(b_est, dtype=float)
    b_true = np.asarray(b_true, dtype=float)
    if b_est.shape != b_true.shape:
        raise ValueError(f"shape mismatch {b_est.shape} vs {b_true.shape}")
    return float(np.sqrt(np.mean(np.sum((b_est - b_true) ** 2, axis=-1))))


def bias_reduction(b_est, b_true):
    """Fraction by which the residual bias norm is smaller than the true bias norm."""
    return 1.0 - bias_residual_rms(b_est, b_true) / bias_residual_rms(np.zeros_like(b_true), b_true)


@dataclass
class ErrorReport:
    orientation_rmse: float
    inclination_rmse: float
    heading_rmse: float
    bias_residual_rms: float
    motion_samples: int
    rest_samples: int

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def error_report(q_est, q_ref, motion_mask=None, b_est=None, b_true=None):
    """Errors over the motion samples; bias residual (deg/s, inputs in rad/s) over all samples."""
    q_est = _quats(q_est)
    q_ref = _quats(q_ref)
    if q_est.shape != q_ref.shape:
        raise ValueError(f"shape mismatch {q_est.shape} vs {q_ref.shape}")
    n = q_est.shape[0]
    mask = np.ones(n, dtype=bool) if motion_mask is None else np.asarray(motion_mask, dtype=bool)
    heading, inclination = heading_inclination_split(q_est, q_ref)
    bias_rms = float("nan")
    if b_est is not None and b_true is not None:
        bias_rms = float(np.degrees(bias_residual_rms(b_est, b_true)))
    return ErrorReport(
        orientation_rmse=rmse_over_mask(quat_error_angle(q_est, q_ref), mask),
        inclination_rmse=rmse_over_mask(inclination, mask),
        heading_rmse=rmse_over_mask(heading, mask),
        bias_residual_rms=bias_rms,
        motion_samples=int(mask.sum()),
        rest_samples=int(n - mask.sum()),
    )
