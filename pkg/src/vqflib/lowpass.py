"""Second-order Butterworth low-pass filtering and first-order gains.

Filters are parametrized by a time constant ``tau`` instead of a cutoff
frequency: the second-order filter uses ``f_c = sqrt(2) / (2 pi tau)`` so
that its step response passes roughly 0.5 at ``t = tau`` and settles within
5 % by ``t = 3 tau``, which matches a first-order filter with gain
``1 - exp(-Ts / tau)``.

Per-channel filter state is stored in a float array of shape ``(4, n)``:

* rows 0 and 1 hold the two delay registers (transposed direct form II),
* row 2 accumulates the sum of the samples seen during initialization,
* row 3 counts those samples; ``-1`` marks a channel that finished
  initialization and runs the recursive filter.

During the first ``tau`` seconds the output is the running mean of the input.
When the window is complete the delay registers are set so that the filter
is in steady state at that mean.
"""

import math
from typing import NamedTuple

import numpy as np
from numba import njit

RUNNING = -1.0


class ButterCoeffs(NamedTuple):
    """Coefficients of ``H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)``."""

    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    @property
    def b(self):
        return np.array([self.b0, self.b1, self.b2])

    @property
    def a(self):
        return np.array([self.a1, self.a2])

    def dc_gain(self):
        return (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)

    def poles(self):
        return np.roots([1.0, self.a1, self.a2])


def time_constant_to_cutoff(tau):
    """Cutoff frequency in Hz of the second-order filter with time constant ``tau``."""
    if not tau > 0:
        raise ValueError(f"time constant must be positive, got {tau!r}")
    return math.sqrt(2.0) / (2.0 * math.pi * tau)


def butter2_coeffs(tau, Ts):
    """Discrete second-order Butterworth low-pass for time constant ``tau``.

    Bilinear transform with the cutoff prewarped, so the DC gain is exactly
    one and the -3 dB point lands on the requested cutoff.
    """
    if not Ts > 0:
        raise ValueError(f"sampling time must be positive, got {Ts!r}")
    fc = time_constant_to_cutoff(tau)
    if fc >= 0.5 / Ts:
        raise ValueError(f"cutoff {fc:.4g} Hz (tau={tau}) is not below the Nyquist frequency {0.5 / Ts:.4g} Hz")
    C = math.tan(math.pi * fc * Ts)
    D = C * C + math.sqrt(2.0) * C + 1.0
    b0 = C * C / D
    return ButterCoeffs(
        b0=b0,
        b1=2.0 * b0,
        b2=b0,
        a1=2.0 * (C * C - 1.0) / D,
        a2=(1.0 - math.sqrt(2.0) * C + C * C) / D,
    )


def exp_gain(tau, Ts):
    """Gain ``1 - exp(-Ts/tau)`` of a first-order filter with time constant ``tau``."""
    if not tau > 0:
        raise ValueError(f"time constant must be positive, got {tau!r}")
    if not Ts > 0:
        raise ValueError(f"sampling time must be positive, got {Ts!r}")
    return 1.0 - math.exp(-Ts / tau)


def init_window(tau, Ts):
    """Number of samples averaged before the recursive filter takes over."""
    return max(1, int(math.ceil(tau / Ts - 1e-9)))


def lpf_new_state(channels=1):
    """Fresh filter state (initialization phase) for ``channels`` signals."""
    return np.zeros((4, channels))


@njit(cache=True)
def lpf_reset(state):
    state[:, :] = 0.0


@njit(cache=True)
def lpf_set_steady_state(state, b, a, values):
    """Put every channel into steady state at its entry of ``values``."""
    for i in range(state.shape[1]):
        v = values[i]
        state[0, i] = v * (1.0 - b[0])
        state[1, i] = v * (b[2] - a[1])
        state[2, i] = 0.0
        state[3, i] = RUNNING


@njit(cache=True)
def lpf_step(x, b, a, state, init_len, out):
    """Filter one sample of every channel of ``x`` into ``out``.

    A non-finite input resets that channel to the initialization phase and
    yields NaN for this step.
    """
    for i in range(x.shape[0]):
        xi = x[i]
        if not math.isfinite(xi):
            state[0, i] = 0.0
            state[1, i] = 0.0
            state[2, i] = 0.0
            state[3, i] = 0.0
            out[i] = math.nan
            continue
        if state[3, i] == RUNNING:
            y = b[0] * xi + state[0, i]
            state[0, i] = b[1] * xi - a[0] * y + state[1, i]
            state[1, i] = b[2] * xi - a[1] * y
            out[i] = y
        else:
            state[2, i] += xi
            state[3, i] += 1.0
            y = state[2, i] / state[3, i]
            if state[3, i] >= init_len:
                state[0, i] = y * (1.0 - b[0])
                state[1, i] = y * (b[2] - a[1])
                state[2, i] = 0.0
                state[3, i] = RUNNING
            out[i] = y


@njit(cache=True)
def _lfilter_from_steady(x, b, a, start, reverse):
    # single-channel recursion started in steady state at ``start``
    n = x.shape[0]
    y = np.empty(n)
    z0 = start * (1.0 - b[0])
    z1 = start * (b[2] - a[1])
    for k in range(n):
        i = n - 1 - k if reverse else k
        xi = x[i]
        yi = b[0] * xi + z0
        z0 = b[1] * xi - a[0] * yi + z1
        z1 = b[2] * xi - a[1] * yi
        y[i] = yi
    return y


@njit(cache=True)
def _filtfilt(x, b, a, init_len, pad_len):
    n = x.shape[0]
    m = min(init_len, n)
    head = 0.0
    tail = 0.0
    for i in range(m):
        head += x[i]
        tail += x[n - 1 - i]
    head /= m
    tail /= m
    # constant extension on the right so the forward output settles before the
    # backward pass starts; the left side is covered by the steady-state start
    ext = np.empty(n + pad_len)
    ext[:n] = x
    ext[n:] = tail
    fwd = _lfilter_from_steady(ext, b, a, head, False)
    back = _lfilter_from_steady(fwd, b, a, fwd[n + pad_len - 1], True)
    return back[:n].copy()


def filtfilt(signal, tau, Ts):
    """Zero-phase forward-backward low-pass filtering of a 1-D or (N, k) series.

    Each end is extended with the mean of its first/last ``tau`` seconds, long
    enough for the filter transient to decay below double precision, so the
    result is symmetric under time reversal.
    """
    x = np.asarray(signal, dtype=float)
    if x.shape[0] < 1:
        raise ValueError("filtfilt needs at least one sample")
    c = butter2_coeffs(tau, Ts)
    b, a = c.b, c.a
    init_len = init_window(tau, Ts)
    pad_len = int(math.ceil(36.0 * tau / Ts)) + 8
    if x.ndim == 1:
        return _filtfilt(x, b, a, init_len, pad_len)
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        out[:, j] = _filtfilt(np.ascontiguousarray(x[:, j]), b, a, init_len, pad_len)
    return out


class LowPass:
    """Stateful second-order low-pass for one or more channels.

    >>> lp = LowPass(tau=3.0, Ts=0.01)
    >>> float(lp.step(7.0))
    7.0
    """

    def __init__(self, tau, Ts, channels=1):
        self.tau = tau
        self.Ts = Ts
        self.coeffs = butter2_coeffs(tau, Ts)
        self._b = self.coeffs.b
        self._a = self.coeffs.a
        self.init_len = init_window(tau, Ts)
        self.state = lpf_new_state(channels)
        self._out = np.empty(channels)

    @property
    def initialized(self):
        return bool(np.all(self.state[3] == RUNNING))

    def step(self, x):
        """Filter one sample; returns a float for single-channel filters."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        lpf_step(x, self._b, self._a, self.state, self.init_len, self._out)
        if self._out.shape[0] == 1:
            return float(self._out[0])
        return self._out.copy()

    def set_steady_state(self, value):
        values = np.broadcast_to(np.asarray(value, dtype=float), (self.state.shape[1],))
        lpf_set_steady_state(self.state, self._b, self._a, np.ascontiguousarray(values))

    def reset(self):
        lpf_reset(self.state)
