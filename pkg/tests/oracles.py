"""Closed-form reference values used across the test suite."""
import math

import numpy as np
from scipy.special import gamma


def gaussian_stream_M(s, amplitude=1.0, width=1.0):
    """X-ray of a Gaussian stream vortex at signed impact offset s."""
    x = np.asarray(s, dtype=float) / width
    return -amplitude * math.sqrt(2 * math.pi) * x * np.exp(-0.5 * x * x)


def lorentzian_stream_M(s, amplitude=1.0, width=1.0):
    x = np.asarray(s, dtype=float) / width
    return -2.0 * amplitude * x / (1.0 + x * x)


def gaussian_V_X(s, amplitude=1.0, width=1.0):
    """-1/2 times the line integral of a Gaussian potential."""
    x = np.asarray(s, dtype=float) / width
    return -0.5 * amplitude * width * math.sqrt(2 * math.pi) * np.exp(-0.5 * x * x)


def lorentzian_power_X(s, amplitude, width, p):
    s = np.asarray(s, dtype=float)
    cp = math.sqrt(math.pi) * gamma(0.5 * (p - 1)) / gamma(0.5 * p)
    return -0.5 * amplitude * width**p * cp * (width**2 + s**2) ** (0.5 * (1 - p))


def lorentzian_arc_mass(a, b):
    """Mass of the limiting measure of the unit Lorentzian stream on the arc [a, b).

    M = -2s/(1+s^2) ranges over [-1, 1]; in d = 2 the measure is
    (2 pi)^{-1} * 2 pi * |{s : M(s) in [a, b)}| = |{s : M(s) in [a, b)}|.
    For t = M(s) in (-1, 0) the preimages are s = (1 +- sqrt(1 - t^2)) / (-t).
    """
    def length(t):
        # measure of {s > 0 : -2s/(1+s^2) < t} for t in [-1, 0)
        if t <= -1:
            return 0.0
        r = math.sqrt(1 - t * t)
        return (1 + r) / (-t) - (1 - r) / (-t)

    return length(b) - length(a)


TEN_SQRT_PI = 10 * math.sqrt(math.pi)


def preimage_length(M, lo, hi, s_peak, s_max=60.0):
    """Lebesgue measure of {s in R : lo <= M(s) < hi} for an odd profile M.

    On (0, inf) the profile has one extremum at ``s_peak`` and decays to 0,
    so every level inside its range has exactly two preimages there.  The
    negative half-line is handled through M(-s) = -M(s).
    """
    from scipy.optimize import brentq

    def band(f):
        ext = f(s_peak)

        def outside(level):
            # |{s > 0 : f(s) beyond level, away from 0}|
            if level == 0 or (level < 0) != (ext < 0):
                return math.inf if level == 0 else 0.0
            if abs(level) >= abs(ext):
                return 0.0
            a = brentq(lambda s: f(s) - level, 0.0, s_peak, xtol=1e-15, rtol=1e-15)
            b = brentq(lambda s: f(s) - level, s_peak, s_max, xtol=1e-15, rtol=1e-15)
            return b - a

        if ext < 0:
            return outside(hi) - outside(lo) if hi < 0 else 0.0
        return outside(lo) - outside(hi) if lo > 0 else 0.0

    return band(lambda s: float(M(s))) + band(lambda s: -float(M(s)))


def line_moment(M, l1, l2, limit=math.inf):
    """int over R of (e^{iM}-1)^l1 (e^{-iM}-1)^l2 ds for a rotation-invariant planar profile."""
    from scipy.integrate import quad

    def f(s, part):
        z = np.exp(1j * M(s))
        v = (z - 1) ** l1 * (np.conj(z) - 1) ** l2
        return v.real if part == 0 else v.imag

    re = 2 * quad(f, 0, limit, args=(0,), epsabs=1e-13, epsrel=1e-12, limit=500)[0]
    # odd profiles give conjugate contributions on s < 0, so the imaginary parts cancel
    return complex(re, 0.0)
