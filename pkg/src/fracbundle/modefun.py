"""Stable scalar mode functions for the wave calculus.

Everything is expressed through entire functions of z = lambda * tau^2:

    C0(z) = sum_k (-z)^k / (2k+1)!   -> sin(sqrt z)/sqrt z,  sinh for z < 0
    C1(z) = sum_k (-z)^k / (2k+2)!   -> (1 - cos sqrt z)/z
    C2(z) = sum_k (-z)^k / (2k+3)!   -> (sqrt z - sin sqrt z)/z^{3/2}
    CC(z) = sum_k (-z)^k / (2k)!     -> cos sqrt z, cosh for z < 0

so the wave kernel and its first two antiderivatives are

    G(t, lam)  = t   * C0(lam t^2)
    G1(t, lam) = t^2 * C1(lam t^2)      (d/dt G1 = G,  G1(0) = 0)
    G2(t, lam) = t^3 * C2(lam t^2)      (d/dt G2 = G1, G2(0) = 0)

valid for every sign of lambda, with a power series used near z = 0 to
avoid cancellation.
"""

import numpy as np

_Z_SWITCH = 0.25
_N_TERMS = 12


def _series(z, offset):
    """sum_k (-z)^k / (2k + offset)! for |z| small."""
    from math import factorial

    out = np.zeros_like(z, dtype=np.float64)
    term = np.ones_like(z, dtype=np.float64) / factorial(offset)
    out += term
    zk = np.ones_like(z)
    for k in range(1, _N_TERMS):
        zk = zk * (-z)
        out += zk / factorial(2 * k + offset)
    return out


def _branched(z, offset, closed_pos, closed_neg):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = np.abs(z) < _Z_SWITCH
    pos = (~small) & (z > 0)
    neg = (~small) & (z < 0)
    if np.any(small):
        out[small] = _series(z[small], offset)
    if np.any(pos):
        x = np.sqrt(z[pos])
        out[pos] = closed_pos(x, z[pos])
    if np.any(neg):
        x = np.sqrt(-z[neg])
        out[neg] = closed_neg(x, -z[neg])
    return out


def wave_c0(z):
    """sin(sqrt z)/sqrt z with the sinh branch for z < 0."""
    return _branched(
        z, 1,
        lambda x, zp: np.sin(x) / x,
        lambda x, zn: np.sinh(x) / x,
    )


def wave_c1(z):
    """(1 - cos sqrt z)/z with the cosh branch for z < 0."""
    return _branched(
        z, 2,
        lambda x, zp: 2.0 * np.sin(0.5 * x) ** 2 / zp,
        lambda x, zn: 2.0 * np.sinh(0.5 * x) ** 2 / zn,
    )


def wave_c2(z):
    """(sqrt z - sin sqrt z)/z^1.5 with the sinh branch for z < 0."""
    return _branched(
        z, 3,
        lambda x, zp: (x - np.sin(x)) / (zp * x),
        lambda x, zn: (np.sinh(x) - x) / (zn * x),
    )


def wave_cos(z):
    """cos(sqrt z) with the cosh branch for z < 0."""
    return _branched(
        z, 0,
        lambda x, zp: np.cos(x),
        lambda x, zn: np.cosh(x),
    )


def wave_g(t, lam):
    """Wave kernel value G(t, lam); odd in t, G(0) = 0, dG/dt(0) = 1."""
    t = np.asarray(t, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    return t * wave_c0(lam * t**2)


def wave_g1(t, lam):
    """First antiderivative of the wave kernel in t, vanishing at 0."""
    t = np.asarray(t, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    return t**2 * wave_c1(lam * t**2)


def wave_g2(t, lam):
    """Second antiderivative of the wave kernel in t, vanishing at 0."""
    t = np.asarray(t, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    return t**3 * wave_c2(lam * t**2)
