"""Quaternion and 3x3 helpers shared by the filter kernels.

Quaternions are float64 arrays ``[w, x, y, z]`` in the Hamilton convention.
``rotate_vector(q, v)`` evaluates ``q * v * q^-1``, i.e. it maps coordinates
expressed in the frame on the right of ``q`` into the frame on its left.

All functions are compiled with numba so that they can be called both from
Python (with float64 numpy arrays) and from inside other compiled kernels.
"""

import math

import numpy as np
from numba import njit

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def quat_multiply(q1, q2):
    """Hamilton product ``q1 * q2``."""
    w1, x1, y1, z1 = q1[0], q1[1], q1[2], q1[3]
    w2, x2, y2, z2 = q2[0], q2[1], q2[2], q2[3]
    out = np.empty(4)
    out[0] = w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2
    out[1] = w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2
    out[2] = w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2
    out[3] = w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2
    return out


@njit(cache=True)
def quat_conjugate_inverse(q):
    """Inverse of a unit quaternion (its conjugate)."""
    out = np.empty(4)
    out[0] = q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = -q[3]
    return out


@njit(cache=True)
def quat_normalize(q):
    """Scale ``q`` to unit norm in place; a zero quaternion is left untouched."""
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    if n > 0.0:
        q[0] /= n
        q[1] /= n
        q[2] /= n
        q[3] /= n


@njit(cache=True)
def quat_from_angle_axis(alpha, v):
    """Rotation by ``alpha`` radians about the direction of ``v``.

    A zero-length axis yields the identity, whatever the angle. This only
    happens for gyroscope samples that are exactly zero, where integrating
    nothing is the right answer.
    """
    out = np.zeros(4)
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if n == 0.0:
        out[0] = 1.0
        return out
    s = math.sin(0.5 * alpha) / n
    out[0] = math.cos(0.5 * alpha)
    out[1] = s * v[0]
    out[2] = s * v[1]
    out[3] = s * v[2]
    return out


@njit(cache=True)
def quat_from_heading(delta):
    """Rotation by ``delta`` about the vertical (z) axis."""
    out = np.zeros(4)
    out[0] = math.cos(0.5 * delta)
    out[3] = math.sin(0.5 * delta)
    return out


@njit(cache=True)
def rotate_vector(q, v):
    """Rotate ``v`` by the unit quaternion ``q`` (``q * v * q^-1``)."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    out = np.empty(3)
    out[0] = (1 - 2 * y * y - 2 * z * z) * v[0] + 2 * (x * y - w * z) * v[1] + 2 * (x * z + w * y) * v[2]
    out[1] = 2 * (x * y + w * z) * v[0] + (1 - 2 * x * x - 2 * z * z) * v[1] + 2 * (y * z - w * x) * v[2]
    out[2] = 2 * (x * z - w * y) * v[0] + 2 * (y * z + w * x) * v[1] + (1 - 2 * x * x - 2 * y * y) * v[2]
    return out


@njit(cache=True)
def quat_to_rotmat(q):
    """Rotation matrix ``R`` with ``R @ v == rotate_vector(q, v)``."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    R = np.empty((3, 3))
    R[0, 0] = 1 - 2 * y * y - 2 * z * z
    R[0, 1] = 2 * (x * y - w * z)
    R[0, 2] = 2 * (x * z + w * y)
    R[1, 0] = 2 * (x * y + w * z)
    R[1, 1] = 1 - 2 * x * x - 2 * z * z
    R[1, 2] = 2 * (y * z - w * x)
    R[2, 0] = 2 * (x * z - w * y)
    R[2, 1] = 2 * (y * z + w * x)
    R[2, 2] = 1 - 2 * x * x - 2 * y * y
    return R


@njit(cache=True)
def wrap_to_pi(angle):
    """Wrap an angle into ``[-pi, pi)``.

    Values already inside the interval are returned unchanged, so wrapping is
    exactly idempotent. The boundary maps to ``-pi`` (e.g. ``3*pi -> -pi``).
    """
    if -math.pi <= angle < math.pi:
        return angle
    out = angle - TWO_PI * math.floor((angle + math.pi) / TWO_PI)
    if out >= math.pi:
        out -= TWO_PI
    elif out < -math.pi:
        out += TWO_PI
    return out


@njit(cache=True)
def quat_angle_between(q1, q2):
    """Rotation angle (radians, in [0, pi]) of ``q1 * q2^-1``; sign-insensitive."""
    dot = abs(q1[0] * q2[0] + q1[1] * q2[1] + q1[2] * q2[2] + q1[3] * q2[3])
    return 2.0 * math.acos(min(1.0, dot))


def quat_equal(q1, q2, atol=1e-9):
    """True if ``q1`` and ``q2`` describe the same rotation (``q`` and ``-q`` alike)."""
    q1 = np.asarray(q1, float)
    q2 = np.asarray(q2, float)
    return bool(np.allclose(q1, q2, atol=atol, rtol=0) or np.allclose(q1, -q2, atol=atol, rtol=0))
