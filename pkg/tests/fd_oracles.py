"""Analytic heat-kernel solutions used as oracles for the stencil."""

import numpy as np


def gaussian_1d(x, t, x0, amp, s0, alpha):
    """Free-space solution from amp*exp(-(x-x0)^2/(2 s0^2)) at t=0."""
    s2 = s0**2 + 2.0 * alpha * t
    return amp * np.sqrt(s0**2 / s2) * np.exp(-((x - x0) ** 2) / (2.0 * s2))


def gaussian_3d(X, Y, Z, t, centre, amp, s0, alpha):
    s2 = s0**2 + 2.0 * alpha * t
    r2 = (X - centre[0]) ** 2 + (Y - centre[1]) ** 2 + (Z - centre[2]) ** 2
    return amp * (s0**2 / s2) ** 1.5 * np.exp(-r2 / (2.0 * s2))


def gaussian_1d_insulated(x, t, x0, amp, s0, alpha, lo, hi, n_images=6):
    """Insulated interval [lo, hi]: free-space kernel summed over mirror images."""
    width = hi - lo
    out = np.zeros_like(np.asarray(x, dtype=float))
    for k in range(-n_images, n_images + 1):
        shift = 2.0 * k * width
        out = out + gaussian_1d(x, t, x0 + shift, amp, s0, alpha)
        out = out + gaussian_1d(x, t, 2.0 * lo - x0 + shift, amp, s0, alpha)
    return out


def gaussian_3d_insulated(X, Y, Z, t, centre, amp, s0, alpha, lows, highs):
    """Product of 1D image sums; the initial bump is amp * exp(-r^2 / (2 s0^2))."""
    fx = gaussian_1d_insulated(X, t, centre[0], 1.0, s0, alpha, lows[0], highs[0])
    fy = gaussian_1d_insulated(Y, t, centre[1], 1.0, s0, alpha, lows[1], highs[1])
    fz = gaussian_1d_insulated(Z, t, centre[2], 1.0, s0, alpha, lows[2], highs[2])
    return amp * fx * fy * fz
