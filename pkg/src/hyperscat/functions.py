"""Smooth test functions with exact derivatives of arbitrary order.

Bumps and mollified steps are built from exp(-1/x); their derivatives are
obtained by Taylor-series recurrences (series of the rational exponent, then
the exp/divide recurrences), so no finite differencing enters anywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument

# Taylor coefficient arrays have shape (K+1, N) for N evaluation points.


def _taylor_exp(g):
    k1, n = g.shape
    h = np.zeros_like(g)
    h[0] = np.exp(g[0])
    for k in range(1, k1):
        acc = np.zeros(n)
        for j in range(1, k + 1):
            acc += j * g[j] * h[k - j]
        h[k] = acc / k
    return h


def _taylor_div(a, b):
    k1, n = a.shape
    c = np.zeros_like(a)
    c[0] = a[0] / b[0]
    for k in range(1, k1):
        acc = a[k].copy()
        for j in range(k):
            acc -= c[j] * b[k - j]
        c[k] = acc / b[0]
    return c


def _series_inv_linear(x0, root, sign, K):
    """Taylor coefficients of 1/(sign*(x - root)) at x0, orders 0..K."""
    base = sign * (x0 - root)
    k = np.arange(K + 1)[:, None]
    return (-sign) ** k * base[None, :] ** (-(k + 1.0))


def _bump_series(x0, a, b, K):
    """Taylor coefficients of exp(-(b-a)^2/(4 (x-a)(b-x)) + 1) inside (a, b)."""
    c = 0.25 * (b - a) ** 2
    inv_xa = _series_inv_linear(x0, a, +1.0, K)      # 1/(x-a)
    inv_bx = _series_inv_linear(x0, b, -1.0, K)      # 1/(b-x)
    g = -(c / (b - a)) * (inv_xa + inv_bx)
    g[0] += 1.0
    return _taylor_exp(g)


def _step_series(x0, K):
    """Taylor coefficients of the exp(-1/x) smoothstep strictly inside (0, 1)."""
    ga = -_series_inv_linear(x0, 0.0, +1.0, K)       # -1/x
    gb = -_series_inv_linear(x0, 1.0, -1.0, K)       # -1/(1-x)
    A = _taylor_exp(ga)
    B = _taylor_exp(gb)
    return _taylor_div(A, A + B)


_FACT = np.cumprod(np.concatenate(([1.0], np.arange(1.0, 64.0))))


@dataclass
class SmoothFunction:
    """A smooth function together with exact derivatives of every order.

    deriv_fn(x, k) must return the k-th derivative vectorized over x.
    """
    fn: Callable
    deriv_fn: Callable
    support: Optional[tuple] = None
    label: str = "smooth"

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def deriv(self, k):
        if k == 0:
            return self.fn
        return lambda x, k=k: self.deriv_fn(np.asarray(x, dtype=float), k)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def bump(a, b, amplitude=1.0):
        """C-infinity bump supported on (a, b), equal to `amplitude` at the center."""
        if not b > a:
            raise InvalidArgument("bump needs b > a")

        def value(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            inside = (x > a) & (x < b)
            xi = x[inside]
            out[inside] = amplitude * np.exp(
                -0.25 * (b - a) ** 2 / ((xi - a) * (b - xi)) + 1.0)
            return out

        def deriv(x, k):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            inside = (x > a) & (x < b)
            if np.any(inside):
                series = _bump_series(x[inside], a, b, k)
                out[inside] = amplitude * series[k] * _FACT[k]
            return out

        return SmoothFunction(value, deriv, support=(a, b), label=f"bump[{a},{b}]")

    @staticmethod
    def mollified_step(lam, delta):
        """1 below lam - delta, 0 above lam + delta, smooth monotone in between."""
        if delta <= 0:
            raise InvalidArgument("mollifier width must be positive")
        lo, hi = lam - delta, lam + delta
        scale = 1.0 / (hi - lo)

        def value(x):
            x = np.asarray(x, dtype=float)
            from .numerics import smoothstep
            return 1.0 - smoothstep((x - lo) * scale)

        def deriv(x, k):
            x = np.asarray(x, dtype=float)
            u = (x - lo) * scale
            out = np.zeros_like(x)
            inside = (u > 0.0) & (u < 1.0)
            if np.any(inside):
                series = _step_series(u[inside], k)
                out[inside] = -series[k] * _FACT[k] * scale**k
            return out

        return SmoothFunction(value, deriv, support=(-np.inf, hi),
                              label=f"step[{lam}+-{delta}]")

    @staticmethod
    def plateau(lo, hi, width):
        """1 on [lo, hi], 0 outside (lo - width, hi + width): a spectral window."""
        if width <= 0 or hi < lo:
            raise InvalidArgument("plateau needs width > 0 and hi >= lo")
        up = SmoothFunction.mollified_step(hi + 0.5 * width, 0.5 * width)
        dn = SmoothFunction.mollified_step(lo - 0.5 * width, 0.5 * width)

        def value(x):
            return up.fn(x) - dn.fn(x)

        def deriv(x, k):
            return up.deriv_fn(x, k) - dn.deriv_fn(x, k)

        return SmoothFunction(value, deriv, support=(lo - width, hi + width),
                              label=f"plateau[{lo},{hi}]")

    @staticmethod
    def gaussian(mu=0.0, sigma=1.0, amplitude=1.0):
        """Gaussian with Hermite-recursion derivatives (not compactly supported)."""

        def value(x):
            return amplitude * np.exp(-0.5 * ((np.asarray(x, float) - mu) / sigma) ** 2)

        def deriv(x, k):
            if k == 0:
                return value(x)
            u = (np.asarray(x, dtype=float) - mu) / sigma
            w = u / np.sqrt(2.0)
            hs = [np.ones_like(w), 2.0 * w]  # physicists' Hermite polynomials
            for nn in range(1, k):
                hs.append(2.0 * w * hs[-1] - 2.0 * nn * hs[-2])
            return (amplitude * (-1.0) ** k * hs[k]
                    * np.exp(-0.5 * u**2) / (np.sqrt(2.0) * sigma) ** k)

        return SmoothFunction(value, deriv, support=None,
                              label=f"gaussian[{mu},{sigma}]")

    @staticmethod
    def exponential(t):
        """x -> exp(-t x), the heat-trace test function."""

        def value(x):
            return np.exp(-t * np.asarray(x, dtype=float))

        def deriv(x, k):
            return (-t) ** k * np.exp(-t * np.asarray(x, dtype=float))

        return SmoothFunction(value, deriv, support=None, label=f"exp[-{t}x]")
