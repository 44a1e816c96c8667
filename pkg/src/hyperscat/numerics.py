"""Shared numerical primitives: smooth steps, stencils, Chebyshev families, tail fits.

Everything here is vectorized over numpy arrays and free of package state.
"""
from __future__ import annotations

import numpy as np
from numpy.polynomial import chebyshev as _cheb

from .errors import InvalidArgument, NumericFailure

_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# exp(-1/x) mollifier steps, with first and second derivatives
# ---------------------------------------------------------------------------

def _bump(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    p = x > 0
    out[p] = np.exp(-1.0 / x[p])
    return out


def _bump_d1(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    p = x > 0
    out[p] = np.exp(-1.0 / x[p]) / x[p] ** 2
    return out


def _bump_d2(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    p = x > 0
    out[p] = np.exp(-1.0 / x[p]) * (1.0 / x[p] ** 4 - 2.0 / x[p] ** 3)
    return out


def smoothstep(x, order=0):
    """C-infinity step s(x): 0 for x <= 0, 1 for x >= 1, built from exp(-1/x).

    order 0/1/2 selects the value or one of its derivatives.
    """
    x = np.asarray(x, dtype=float)
    a, b = _bump(x), _bump(1.0 - x)
    g = a + b
    if order == 0:
        return a / g
    da, db = _bump_d1(x), _bump_d1(1.0 - x)
    dg = da - db
    if order == 1:
        return (da * g - a * dg) / g**2
    if order == 2:
        d2a, d2b = _bump_d2(x), _bump_d2(1.0 - x)
        d2g = d2a + d2b
        return (d2a * g - a * d2g) / g**2 - 2.0 * dg * (da * g - a * dg) / g**3
    raise InvalidArgument(f"smoothstep derivative order {order} not supported")


def ramp_up(x, lo, hi, order=0):
    """Smooth 0 -> 1 transition across (lo, hi); derivatives w.r.t. x."""
    if not hi > lo:
        raise InvalidArgument("ramp requires hi > lo")
    scale = 1.0 / (hi - lo)
    return smoothstep((np.asarray(x, float) - lo) * scale, order) * scale**order


def ramp_down(x, lo, hi, order=0):
    """Smooth 1 -> 0 transition across (lo, hi)."""
    v = ramp_up(x, lo, hi, order)
    return (1.0 - v) if order == 0 else -v


#: radius beyond which the radial perturbation cutoff theta vanishes identically
THETA_SUPPORT_RADIUS = 2.0


def theta_cutoff(s, order=0):
    """Compactly supported profile: 1 on s <= 1, 0 on s >= 2, smooth ramp between."""
    return ramp_down(s, 1.0, THETA_SUPPORT_RADIUS, order)


# ---------------------------------------------------------------------------
# finite-difference stencils (Fornberg weights)
# ---------------------------------------------------------------------------

def fd_weights(x0, nodes, order):
    """Weights w with sum_i w_i f(nodes_i) ~ f^{(order)}(x0) (Fornberg recursion)."""
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    if order >= n:
        raise InvalidArgument("stencil too short for requested derivative order")
    c = np.zeros((n, order + 1))
    c[0, 0] = 1.0
    c1, c4 = 1.0, nodes[0] - x0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5, c4 = 1.0, c4, nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    w = c[:, order]
    if order >= 1:
        w = w - w.sum() / len(w)  # exact-arithmetic no-op; kills constant leakage
    return w


def one_sided_derivative(fun, order, step, accuracy=6, x0=0.0):
    """d^order/dx^order of fun at x0 from one-sided samples x0, x0+step, ...

    Exact on polynomials of degree < order + accuracy, which is what makes the
    bracket stencil route annihilate low-degree families identically.
    """
    npts = order + accuracy
    nodes = x0 + step * np.arange(npts)
    w = fd_weights(x0, nodes, order)
    acc = None
    for wi, xi in zip(w, nodes):
        val = np.asarray(fun(xi), dtype=complex)
        acc = wi * val if acc is None else acc + wi * val
    if np.all(np.abs(acc.imag) < 1e3 * _EPS * (1.0 + np.abs(acc.real))):
        acc = acc.real
    return acc


def central_derivative(fun, x0, order, step, accuracy=4):
    """Central FD derivative of a callable at x0."""
    half = (order + accuracy - 1) // 2
    nodes = x0 + step * np.arange(-half, half + 1)
    w = fd_weights(x0, nodes, order)
    acc = None
    for wi, xi in zip(w, nodes):
        val = np.asarray(fun(xi), dtype=float)
        acc = wi * val if acc is None else acc + wi * val
    return acc


# ---------------------------------------------------------------------------
# Chebyshev interpolation of a smooth family on [0, 1]
# ---------------------------------------------------------------------------

class ChebFamily:
    """Global Chebyshev model of a smooth map eps -> scalar/array on [0, 1].

    Used wherever spectrally accurate eps-derivatives of a callback family are
    needed (the quadrature route of the bracket combinators).  Analytic inputs
    converge to machine precision well below the default degree.
    """

    def __init__(self, family, degree=48):
        nodes = 0.5 * (1.0 + np.cos(np.pi * np.arange(degree + 1) / degree))
        samples = [np.asarray(family(float(e))) for e in nodes]
        self.shape = samples[0].shape
        flat = np.stack([s.reshape(-1) for s in samples], axis=0)
        # map [0,1] -> [-1,1] for the chebfit domain
        x = 2.0 * nodes - 1.0
        self._dtype = flat.dtype
        if np.iscomplexobj(flat):
            coef = (_cheb.chebfit(x, flat.real, degree)
                    + 1j * _cheb.chebfit(x, flat.imag, degree))
        else:
            coef = _cheb.chebfit(x, flat, degree)
        # drop rounding-floor coefficients: for analytic families the series
        # decays geometrically and the trailing noise would otherwise be
        # amplified by repeated differentiation
        mags = np.max(np.abs(coef), axis=tuple(range(1, coef.ndim))) \
            if coef.ndim > 1 else np.abs(coef)
        floor = 1e-14 * (np.max(mags) if np.max(mags) > 0 else 1.0)
        keep = np.nonzero(mags > floor)[0]
        if len(keep) and keep[-1] + 1 < coef.shape[0]:
            coef = coef[: keep[-1] + 1]
        self._coef = coef

    def derivative(self, eps, order=0):
        """Value (order 0) or eps-derivative of the family at scalar eps in [0, 1]."""
        coef = self._coef
        if order:
            coef = _cheb.chebder(coef, order, scl=2.0)  # chain rule for [0,1]->[-1,1]
        val = np.asarray(_cheb.chebval(2.0 * float(eps) - 1.0, coef)).reshape(self.shape)
        return val if self.shape else val[()]

    def antiderivative_family(self):
        """Chebyshev family of the eps-antiderivative vanishing at eps=0."""
        coef = _cheb.chebint(self._coef, 1, scl=0.5, axis=0)
        base = _cheb.chebval(-1.0, coef)

        def fam(eps):
            v = np.asarray(_cheb.chebval(2.0 * eps - 1.0, coef) - base).reshape(self.shape)
            return v if self.shape else v[()]

        return fam

    def __call__(self, eps):
        return self.derivative(eps, 0)


# ---------------------------------------------------------------------------
# tensor-product Lagrange interpolation (node-exact, local cubic)
# ---------------------------------------------------------------------------

class LagrangeGridInterpolator:
    """Separable 4-point Lagrange interpolation on a uniform tensor grid.

    Unlike a global spline, the per-axis weights at a query lying exactly on
    a grid plane are (0, 1, 0, 0), so structural zeros of the data survive
    interpolation exactly; accuracy is local-cubic, O(h^4).
    """

    def __init__(self, axes, values):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values)
        self.steps = []
        self.sizes = []
        for a in self.axes:
            self.sizes.append(len(a))
            self.steps.append(a[1] - a[0] if len(a) > 1 else 1.0)

    def _axis_weights(self, x, axis):
        a = self.axes[axis]
        npts = self.sizes[axis]
        h = self.steps[axis]
        if npts == 1:
            return np.zeros(len(x), dtype=int), np.ones((len(x), 1))
        pts = min(4, npts)
        frac = (x - a[0]) / h
        # queries within 1e-9 cells of a node snap to it, so structural zeros
        # of the data survive exactly
        snapped = np.round(frac)
        frac = np.where(np.abs(frac - snapped) < 1e-9, snapped, frac)
        base = np.floor(frac).astype(int) - (pts // 2 - 1)
        base = np.clip(base, 0, npts - pts)
        t = frac - base
        w = np.ones((len(x), pts))
        for i in range(pts):
            for j in range(pts):
                if i != j:
                    w[:, i] *= (t - j) / (i - j)
        return base, w

    def __call__(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ndim = len(self.axes)
        bases, weights = [], []
        for k in range(ndim):
            b, w = self._axis_weights(pts[:, k], k)
            bases.append(b)
            weights.append(w)
        out = np.zeros(len(pts), dtype=self.values.dtype)
        # accumulate over the tensor product of per-axis stencil offsets
        counts = [w.shape[1] for w in weights]
        from itertools import product
        for combo in product(*[range(c) for c in counts]):
            idx = tuple(bases[k] + combo[k] for k in range(ndim))
            wprod = weights[0][:, combo[0]]
            for k in range(1, ndim):
                wprod = wprod * weights[k][:, combo[k]]
            out += wprod * self.values[idx]
        return out


# ---------------------------------------------------------------------------
# quadrature and tail handling
# ---------------------------------------------------------------------------

def gauss_legendre(a, b, n):
    """Nodes and weights of n-point Gauss-Legendre on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(int(n))
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def fit_exponential_tail(t, values):
    """Fit values ~ a + b*exp(-c*t) on the sampled tail; return (a, tail_err, rate).

    Falls back to the last sample with zero correction when the sequence has
    already converged to rounding level.  Raises NumericFailure if the samples
    do not decay.
    """
    t = np.asarray(t, float)
    v = np.asarray(values, float)
    if len(t) < 3:
        raise InvalidArgument("tail fit needs at least 3 samples")
    dv = np.diff(v)
    scale = max(np.max(np.abs(v)), 1.0)
    if np.max(np.abs(dv)) < 1e3 * _EPS * scale:
        return v[-1], 0.0, np.inf
    # log-linear regression on the increments: dv_i = b(e^{-c t_{i+1}}-e^{-c t_i})
    mask = np.abs(dv) > _EPS * scale
    tm = 0.5 * (t[1:] + t[:-1])[mask]
    ld = np.log(np.abs(dv[mask]))
    if len(tm) < 2:
        return v[-1], float(np.max(np.abs(dv))), np.inf
    slope, intercept = np.polyfit(tm, ld, 1)
    rate = -slope
    if rate <= 0:
        raise NumericFailure("tail samples do not decay exponentially")
    # dv_i ~ B e^{-c t_mid} * ... ; remaining correction after t[-1]:
    #   v(inf) - v(-1) = sum of future increments ~ dv_last * rho/(1-rho)
    rho = np.exp(-rate * (t[-1] - t[-2]))
    corr = dv[-1] * rho / (1.0 - rho) if rho < 1 else 0.0
    return float(v[-1] + corr), float(abs(corr)), float(rate)


def exponential_tail_integral(t, values):
    """Estimate int_{t[-1]}^inf of a sampled exponentially decaying integrand."""
    t = np.asarray(t, float)
    v = np.asarray(values, float)
    scale = np.max(np.abs(v)) if len(v) else 0.0
    if scale == 0.0 or abs(v[-1]) < 1e3 * _EPS * scale:
        return 0.0, 0.0
    mask = np.abs(v) > max(1e-300, 1e-13 * scale)
    if mask.sum() < 3:
        return 0.0, abs(v[-1]) * (t[-1] - t[0])
    slope, _ = np.polyfit(t[mask], np.log(np.abs(v[mask])), 1)
    rate = -slope
    if rate <= 0:
        raise NumericFailure("integrand tail does not decay; cannot close the integral")
    est = v[-1] / rate
    return float(est), float(abs(est) * 0.05 + abs(v[-1]) * _EPS)


def relative_gap(a, b):
    """Max-norm discrepancy |a-b| scaled by 1 + max(|a|,|b|)."""
    a = np.asarray(a)
    b = np.asarray(b)
    num = float(np.max(np.abs(a - b))) if a.size else 0.0
    den = 1.0 + max(float(np.max(np.abs(a))) if a.size else 0.0,
                    float(np.max(np.abs(b))) if b.size else 0.0)
    return num / den
