"""IIR filters: frequency response and zero-phase forward-backward filtering."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import InvalidFilter, SignalTooShort


@dataclass(frozen=True)
class IirFilter:
    """Rational transfer function b(z)/a(z); ``a`` is normalised so a[0] == 1."""

    b: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if b.ndim != 1 or a.ndim != 1 or b.size == 0 or a.size == 0:
            raise InvalidFilter("coefficients must be non-empty vectors")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
            raise InvalidFilter("coefficients must be finite")
        if a[0] == 0:
            raise InvalidFilter("a[0] must be non-zero")
        b, a = b / a[0], a / a[0]
        if a.size > 1 and np.any(np.abs(np.roots(a)) >= 1.0):
            raise InvalidFilter("filter is unstable (pole on or outside unit circle)")
        b.flags.writeable = False
        a.flags.writeable = False
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "a", a)

    @property
    def order(self) -> int:
        return max(self.a.size, self.b.size) - 1

    @classmethod
    def identity(cls) -> "IirFilter":
        return cls([1.0], [1.0])

    @classmethod
    def parse(cls, b_text: str, a_text: str) -> "IirFilter":
        """Build from comma-separated coefficient strings."""
        def values(text):
            return [float(v) for v in text.replace(" ", "").split(",") if v]
        return cls(values(b_text), values(a_text))


# Coefficients as published for the noise-suppression stage (4th order,
# 16 kHz). Note the response: ~0 at DC and ~1 at Nyquist.
DEFAULT_B = (0.093981, -0.375923, 0.563885, -0.375923, 0.093981)
DEFAULT_A = (1.0, 0.0, 0.486029, 0.0, 0.017665)
DEFAULT_FILTER = IirFilter(DEFAULT_B, DEFAULT_A)


def butterworth_response(f: IirFilter, omega):
    """Evaluate H(e^{j omega}); ``omega`` may be scalar or array (rad/sample)."""
    omega = np.asarray(omega, dtype=np.float64)
    zinv = np.exp(-1j * omega)
    num = np.polyval(f.b[::-1], zinv)
    den = np.polyval(f.a[::-1], zinv)
    h = num / den
    return complex(h) if h.ndim == 0 else h


def steady_state(f: IirFilter) -> np.ndarray:
    """Initial delay-line state for a unit step (transposed direct form II)."""
    n = max(f.a.size, f.b.size)
    if n == 1:
        return np.zeros(0)
    a = np.zeros(n)
    b = np.zeros(n)
    a[:f.a.size] = f.a
    b[:f.b.size] = f.b
    companion = np.zeros((n - 1, n - 1))
    companion[0, :] = -a[1:]
    companion[np.arange(1, n - 1), np.arange(n - 2)] = 1.0
    lhs = np.eye(n - 1) - companion.T
    rhs = b[1:] - a[1:] * b[0]
    return np.linalg.solve(lhs, rhs)


def lfilter(f: IirFilter, x, zi=None):
    """Single causal pass. Returns ``(y, zf)`` when ``zi`` is given, else ``y``."""
    return signal.lfilter(f.b, f.a, x, zi=zi)


def filtfilt(f: IirFilter, x) -> np.ndarray:
    """Zero-phase filtering: forward pass, reversed second pass, reverse back.

    Edges use an odd extension of ``3 * max(len(a), len(b))`` samples and
    steady-state initial conditions, which suppresses start-up transients.
    """
    x = np.asarray(x, dtype=np.float64)
    padlen = 3 * max(f.a.size, f.b.size)
    if x.size <= padlen:
        raise SignalTooShort(f"filtfilt needs more than {padlen} samples, got {x.size}")
    head = 2 * x[0] - x[padlen:0:-1]
    tail = 2 * x[-1] - x[-2:-padlen - 2:-1]
    ext = np.concatenate([head, x, tail])
    zi = steady_state(f)
    y, _ = lfilter(f, ext, zi * ext[0])
    y = y[::-1]
    y, _ = lfilter(f, y, zi * y[0])
    return y[::-1][padlen:-padlen].copy()
