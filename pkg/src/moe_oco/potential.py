"""Overflow-safe evaluation of the SQUINT evidence potential.

The potential is the integral ``xi(R, V) = int_0^{1/2} exp(eta*R - eta^2*V) d eta``,
whose closed form multiplies ``exp(R^2 / 4V)`` by a difference of two
complementary error functions.  Evaluated literally that overflows for
moderate ``R^2 / V`` and cancels catastrophically for large ``-R``.  Here
everything is carried in log space and the erfc difference is rewritten with
the scaled function ``erfcx(z) = exp(z^2) erfc(z)`` or with ``erf`` sums,
depending on where the maximiser ``eta* = R / 2V`` falls.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, erfcx

V_SMALL = 1e-12
_HALF_LOG_PI = 0.5 * math.log(math.pi)


def _log_first_moment_term(R):
    """log of int_0^{1/2} exp(eta*R) d eta, elementwise."""
    R = np.asarray(R, dtype=float)
    out = np.empty_like(R)
    small = np.abs(R) < 1.0
    Rs = np.where(small & (R != 0), R, 1.0)
    out[small] = np.log(np.expm1(Rs[small] / 2) / Rs[small])
    out[small & (R == 0)] = math.log(0.5)
    pos = ~small & (R > 0)
    out[pos] = R[pos] / 2 + np.log(-np.expm1(-R[pos] / 2)) - np.log(R[pos])
    neg = ~small & (R < 0)
    out[neg] = np.log(-np.expm1(R[neg] / 2)) - np.log(-R[neg])
    return out


def _second_moment_ratio(R):
    """E[eta^2] under the density proportional to exp(eta*R) on [0, 1/2]."""
    R = np.asarray(R, dtype=float)
    out = np.full_like(R, 1.0 / 12.0)
    big = np.abs(R) > 1e-3
    r = R[big]
    # stable form of  (int eta^2 e^{eta r}) / (int e^{eta r}) for r != 0
    c = 0.5
    with np.errstate(over="ignore", invalid="ignore"):
        # written relative to the upper endpoint for r > 0, lower for r < 0
        em = np.exp(-np.abs(r) * c)
        pos = r > 0
        num_pos = (c * c / r - 2 * c / r**2 + 2 / r**3) - 2 / r**3 * em
        den_pos = (1 - em) / r
        num_neg = (-2 / r**3) + em * (c * c / r - 2 * c / r**2 + 2 / r**3)
        den_neg = (em - 1) / r
        val = np.where(pos, num_pos / den_pos, num_neg / den_neg)
    out[big] = np.clip(val, 0.0, 0.25)
    return out


def squint_log_potential(R, V):
    """Natural log of the SQUINT potential; finite for every finite input."""
    R = np.asarray(R, dtype=float)
    V = np.asarray(V, dtype=float)
    if R.shape != V.shape:
        R, V = np.broadcast_arrays(R, V)
    if (V < 0).any():
        raise ValueError("V must be nonnegative")
    if not (np.isfinite(R).all() and np.isfinite(V).all()):
        raise ValueError("R and V must be finite")

    tiny = V < V_SMALL
    Vs = np.where(tiny, 1.0, V)
    sv = np.sqrt(Vs)
    a = -R / (2 * sv)
    b = a + sv / 2
    c = R / 2 - Vs / 4  # a^2 - b^2
    left = a >= 0
    right = ~left & (b <= 0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        # maximiser at or left of the interval (a >= 0): erfcx(a) - e^c erfcx(b)
        ea = erfcx(np.abs(a))
        res_left = np.log(ea) + np.log1p(-np.exp(c) * erfcx(np.abs(b)) / ea)
        # maximiser at or right of the interval (b <= 0): e^c erfcx(-b) - erfcx(-a)
        eb = erfcx(np.abs(b))
        res_right = c + np.log(eb) + np.log1p(-np.exp(-c) * erfcx(np.abs(a)) / eb)
        # maximiser inside: exp(a^2) * (erf(-a) + erf(b)), both terms positive
        res_inside = a * a + np.log(erf(-a) + erf(b))
    res = np.where(left, res_left, np.where(right, res_right, res_inside))
    out = _HALF_LOG_PI - np.log(2 * sv) + res

    if tiny.any():
        Rt, Vt = R[tiny], V[tiny]
        out = np.array(out, dtype=float)
        out[tiny] = _log_first_moment_term(Rt) + np.log1p(-Vt * _second_moment_ratio(Rt))
    if out.ndim == 0:
        return float(out)
    return out


def squint_potential(R, V):
    """The SQUINT potential itself; overflows to inf only when the true value does."""
    logxi = squint_log_potential(R, V)
    with np.errstate(over="ignore"):
        return np.exp(logxi)
