"""Metric families, phase-space regions, cutoffs and regularized volumes.

The funnel end carries coordinates (r, y) with dual momenta (rho, eta); the
interpolated principal symbol is

    p_eps(r, y, rho, eta) = rho^2 + e^{-2r} * b_eps(r, y) * |eta|^2,

with b_eps(r, y) = beta(y) + eps * e^{-r} * theta(kappa*r)^2 * gamma(e^{-r}, y).
Coefficient fields are scalar (isotropic in eta); the angular coordinate lives
on the covering line, so no chart transitions are needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import numerics as nm
from .errors import InvalidArgument, NumericFailure, UnsupportedModel

Array = np.ndarray


# ---------------------------------------------------------------------------
# coefficient fields
# ---------------------------------------------------------------------------

def _zero(*args):
    return np.zeros(np.broadcast(*args).shape) if args else 0.0


@dataclass(frozen=True)
class BetaField:
    """Scalar angular coefficient beta(y) >= c > 0 with analytic partials.

    y enters through its first component only (the built-in families are
    y1-periodic); grad/hess return arrays shaped like y.
    """
    value: Callable
    d1: Callable = _zero      # d/dy1
    d2: Callable = _zero      # d^2/dy1^2
    y_independent: bool = True

    def grad(self, y):
        g = np.zeros_like(y)
        g[..., 0] = self.d1(y[..., 0])
        return g

    def hess(self, y):
        h = np.zeros(y.shape + (y.shape[-1],))
        h[..., 0, 0] = self.d2(y[..., 0])
        return h


@dataclass(frozen=True)
class GammaField:
    """Perturbation coefficient gamma(x, y), x = e^{-r}, with analytic partials."""
    value: Callable
    dx: Callable = _zero
    dxx: Callable = _zero
    dy1: Callable = _zero
    dxy1: Callable = _zero
    dy1y1: Callable = _zero
    y_independent: bool = True


def constant_beta(c=1.0):
    return BetaField(value=lambda y1, c=c: c + 0.0 * np.asarray(y1))


def constant_gamma(c):
    return GammaField(value=lambda x, y1, c=c: c + 0.0 * np.asarray(x))


def cosine_gamma(c):
    """gamma(x, y) = c * cos(y1): the coupled 'angular' family."""
    return GammaField(
        value=lambda x, y1, c=c: c * np.cos(y1) + 0.0 * np.asarray(x),
        dy1=lambda x, y1, c=c: -c * np.sin(y1) + 0.0 * np.asarray(x),
        dy1y1=lambda x, y1, c=c: -c * np.cos(y1) + 0.0 * np.asarray(x),
        y_independent=False,
    )


@dataclass(frozen=True)
class VCoefficients:
    """First-order coefficients v^{alpha,l}(x, y), |alpha| + l <= 1.

    const ~ (alpha, l) = (0, 0); d_r ~ (0, 1); d_y ~ (1, 0) on the first
    angular direction.  Only the transport subprincipal term consumes them.
    """
    const: Optional[Callable] = None
    d_r: Optional[Callable] = None
    d_y: Optional[Callable] = None

    def is_zero(self):
        return self.const is None and self.d_r is None and self.d_y is None


# ---------------------------------------------------------------------------
# metric family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BJet:
    """b_eps and its partials at a batch of (r, y, eps) points."""
    b: Array
    b_r: Array
    b_y: Array       # (..., d)
    b_e: Array
    b_rr: Array
    b_ry: Array      # (..., d)
    b_yy: Array      # (..., d, d)
    b_er: Array
    b_ey: Array      # (..., d)


@dataclass(frozen=True)
class MetricFamily:
    """Interpolating family g_eps = (beta + eps e^{-r} theta(kappa r)^2 gamma) |eta|^2."""
    n: int = 2
    beta: BetaField = field(default_factory=constant_beta)
    gamma: GammaField = field(default_factory=lambda: constant_gamma(0.0))
    v0: VCoefficients = field(default_factory=VCoefficients)
    v1: VCoefficients = field(default_factory=VCoefficients)
    kappa: float = 0.0
    C0: float = 4.0
    name: str = "custom"

    def __post_init__(self):
        if self.n < 2:
            raise InvalidArgument("dimension n must be >= 2")
        if not 0.0 <= self.kappa <= 1e6:
            raise InvalidArgument("kappa must be nonnegative")
        if self.C0 <= 0:
            raise InvalidArgument("ellipticity constant C0 must be positive")

    @property
    def d(self):
        """Angular dimension n - 1."""
        return self.n - 1

    def perturbation_support_radius(self):
        """Radius beyond which the gamma contribution vanishes exactly (inf if kappa=0)."""
        if self.kappa == 0.0:
            return np.inf
        return nm.THETA_SUPPORT_RADIUS / self.kappa

    # -- perturbation envelope u(r) = e^{-r} theta(kappa r)^2 and derivatives --
    def _envelope(self, r):
        ex = np.exp(-r)
        if self.kappa == 0.0:
            one = np.ones_like(ex)
            return ex, -ex, ex, one
        th = nm.theta_cutoff(self.kappa * r, 0)
        th1 = nm.theta_cutoff(self.kappa * r, 1) * self.kappa
        th2 = nm.theta_cutoff(self.kappa * r, 2) * self.kappa**2
        u = ex * th**2
        du = ex * (-th**2 + 2.0 * th * th1)
        d2u = ex * (th**2 - 4.0 * th * th1 + 2.0 * (th1**2 + th * th2))
        return u, du, d2u, th

    def b_jet(self, r, y, eps):
        """b_eps and partials up to second order; r (...,), y (..., d)."""
        r = np.asarray(r, dtype=float)
        y = np.asarray(y, dtype=float)
        y1 = y[..., 0]
        x = np.exp(-r)
        u, du, d2u, _ = self._envelope(r)
        g = self.gamma
        c = g.value(x, y1)
        c_x, c_xx = g.dx(x, y1), g.dxx(x, y1)
        c_r = -x * c_x
        c_rr = x * c_x + x**2 * c_xx
        beta = self.beta.value(y1)
        shape = np.broadcast(r, y1).shape
        b_y = np.zeros(shape + (self.d,))
        b_ry = np.zeros(shape + (self.d,))
        b_ey = np.zeros(shape + (self.d,))
        b_yy = np.zeros(shape + (self.d, self.d))
        if not self.beta.y_independent:
            b_y[..., 0] += self.beta.d1(y1)
            b_yy[..., 0, 0] += self.beta.d2(y1)
        if not g.y_independent:
            c_y = g.dy1(x, y1)
            c_ry = -x * g.dxy1(x, y1)
            c_yy = g.dy1y1(x, y1)
            b_y[..., 0] += eps * u * c_y
            b_ey[..., 0] += u * c_y
            b_ry[..., 0] += eps * (du * c_y + u * c_ry)
            b_yy[..., 0, 0] += eps * u * c_yy
        return BJet(
            b=beta + eps * u * c,
            b_r=eps * (du * c + u * c_r),
            b_y=b_y,
            b_e=u * c,
            b_rr=eps * (d2u * c + 2.0 * du * c_r + u * c_rr),
            b_ry=b_ry,
            b_yy=b_yy,
            b_er=du * c + u * c_r,
            b_ey=b_ey,
        )

    def b_value(self, r, y, eps):
        r = np.asarray(r, dtype=float)
        y1 = np.asarray(y, dtype=float)[..., 0]
        u, _, _, _ = self._envelope(r)
        return self.beta.value(y1) + eps * u * self.gamma.value(np.exp(-r), y1)

    def g_value(self, r, y, eta, eps):
        """The angular quadratic form g_eps(r, y, eta)."""
        eta = np.asarray(eta, dtype=float)
        return self.b_value(r, y, eps) * np.sum(eta**2, axis=-1)

    def v_interp(self, which, x, y1, eps):
        """tilde v^{alpha,l} = v0 + eps (v1 - v0); which in {'const','d_r','d_y'}."""
        f0 = getattr(self.v0, which)
        f1 = getattr(self.v1, which)
        a0 = f0(x, y1) if f0 is not None else 0.0
        a1 = f1(x, y1) if f1 is not None else 0.0
        return a0 + eps * (a1 - a0)

    def check_ellipticity(self, r, y, eps_values=(0.0, 0.5, 1.0)):
        """Verify C0^{-1} <= b_eps <= C0 on sampled (r, y)."""
        for e in eps_values:
            b = self.b_value(r, y, e)
            if np.any(b < 1.0 / self.C0) or np.any(b > self.C0):
                return False
        return True


def pure_hyperbolic(n=2):
    """beta = 1, gamma = 0: the decoupled constant-curvature model."""
    return MetricFamily(n=n, name="pure-hyperbolic")


def radial(c=1.0, kappa=0.0, n=2):
    """beta = 1, gamma = c: radial perturbation, decoupled angular modes."""
    return MetricFamily(n=n, gamma=constant_gamma(c), kappa=kappa,
                        C0=max(2.0, 1.0 + abs(c) + 0.5), name="radial")


def angular(c=0.5, kappa=0.0, n=2):
    """beta = 1, gamma = c cos(y1): y-coupled flow model."""
    if abs(c) >= 1.0:
        raise InvalidArgument("angular family needs |c| < 1 for ellipticity")
    return MetricFamily(n=n, gamma=cosine_gamma(c), kappa=kappa,
                        C0=max(2.0, (1.0 + abs(c)) / (1.0 - abs(c))), name="angular")


BUILTIN_FAMILIES = {
    "pure-hyperbolic": pure_hyperbolic,
    "radial": radial,
    "angular": angular,
}


def family_from_name(name, c=1.0, kappa=0.0, n=2):
    if name == "pure-hyperbolic":
        return pure_hyperbolic(n=n)
    if name == "radial":
        return radial(c=c, kappa=kappa, n=n)
    if name == "angular":
        return angular(c=c, kappa=kappa, n=n)
    raise InvalidArgument(f"unknown metric family '{name}'")


# ---------------------------------------------------------------------------
# phase points and the symbol
# ---------------------------------------------------------------------------

def _as_vec(v, d):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.shape != (d,):
        raise InvalidArgument(f"expected vector of length {d}, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class PhasePoint:
    """Cotangent point (r, y, rho, eta) with interpolation parameter eps."""
    r: float
    y: Array
    rho: float
    eta: Array
    eps: float = 0.0

    @staticmethod
    def make(r, y, rho, eta, eps=0.0, d=1):
        p = PhasePoint(float(r), _as_vec(y, d), float(rho), _as_vec(eta, d), float(eps))
        state = p.state()
        if not np.all(np.isfinite(state)):
            raise InvalidArgument("phase point has non-finite coordinates")
        return p

    def state(self):
        """Flat state vector [r, y..., rho, eta...]."""
        return np.concatenate(([self.r], self.y, [self.rho], self.eta))

    @property
    def d(self):
        return len(self.y)

    def energy(self, metric: MetricFamily, eps=None):
        e = self.eps if eps is None else eps
        return float(self.rho**2
                     + np.exp(-2.0 * self.r) * metric.g_value(self.r, self.y, self.eta, e))


def pack_states(points):
    """Stack phase points into an (N, 2+2d) state array."""
    return np.stack([p.state() for p in points], axis=0)


def split_state(z, d):
    """(..., 2+2d) state array -> (r, y, rho, eta) views."""
    r = z[..., 0]
    y = z[..., 1:1 + d]
    rho = z[..., 1 + d]
    eta = z[..., 2 + d:2 + 2 * d]
    return r, y, rho, eta


@dataclass(frozen=True)
class SymbolJet:
    """p_eps with gradient and Hessian in the ordering [r, y..., rho, eta..., eps]."""
    value: float
    grad: Array
    hess: Array
    names: tuple


def eval_symbol(point: PhasePoint, metric: MetricFamily) -> SymbolJet:
    """Principal symbol with analytic partials up to order 2 (built-in families)."""
    state = point.state()
    if not np.all(np.isfinite(state)):
        raise InvalidArgument("non-finite phase point")
    d = point.d
    r, y, rho, eta, eps = point.r, point.y, point.rho, point.eta, point.eps
    jet = metric.b_jet(np.asarray(r), y[None, :], eps)
    b, b_r, b_e = (float(np.asarray(jet.b).reshape(-1)[0]),
                   float(np.asarray(jet.b_r).reshape(-1)[0]),
                   float(np.asarray(jet.b_e).reshape(-1)[0]))
    b_y = jet.b_y[0]
    b_rr, b_er = (float(np.asarray(jet.b_rr).reshape(-1)[0]),
                  float(np.asarray(jet.b_er).reshape(-1)[0]))
    b_ry, b_ey, b_yy = jet.b_ry[0], jet.b_ey[0], jet.b_yy[0]
    E = np.exp(-2.0 * r)
    G = float(np.sum(eta**2))
    m = 2 * d + 3  # r, y(d), rho, eta(d), eps
    i_r, i_y = 0, slice(1, 1 + d)
    i_rho, i_eta, i_e = 1 + d, slice(2 + d, 2 + 2 * d), 2 + 2 * d
    grad = np.zeros(m)
    grad[i_r] = E * (b_r - 2.0 * b) * G
    grad[i_y] = E * b_y * G
    grad[i_rho] = 2.0 * rho
    grad[i_eta] = 2.0 * E * b * eta
    grad[i_e] = E * b_e * G
    H = np.zeros((m, m))
    H[i_r, i_r] = E * (b_rr - 4.0 * b_r + 4.0 * b) * G
    H[i_r, i_y] = H[i_y, i_r] = E * (b_ry - 2.0 * b_y) * G
    H[i_r, i_eta] = H[i_eta, i_r] = 2.0 * E * (b_r - 2.0 * b) * eta
    H[i_r, i_e] = H[i_e, i_r] = E * (b_er - 2.0 * b_e) * G
    H[i_y, i_y] = E * b_yy * G
    for k in range(d):
        H[1 + k, i_eta] = H[i_eta, 1 + k] = 2.0 * E * b_y[k] * eta
    H[i_y, i_e] = H[i_e, i_y] = E * b_ey * G
    H[i_rho, i_rho] = 2.0
    H[i_eta, i_eta] = 2.0 * E * b * np.eye(d)
    H[i_eta, i_e] = H[i_e, i_eta] = 2.0 * E * b_e * eta
    names = ("r",) + tuple(f"y{k}" for k in range(d)) + ("rho",) \
        + tuple(f"eta{k}" for k in range(d)) + ("eps",)
    return SymbolJet(value=rho**2 + E * b * G, grad=grad, hess=H, names=names)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegionSpec:
    """Outgoing/incoming areas Upsilon+- and the momentum-restricted Gamma+-.

    Upsilon kinds use sigma = sqrt(1 -+ w) - delta; Gamma kinds carry the
    smallness bound eps_area on e^{-2r} g(y, eta).  All defining inequalities
    are strict (open regions).
    """
    kind: str
    R: float
    w: float
    omega: tuple
    delta: float = 0.05
    eps_area: float = 0.05

    def __post_init__(self):
        if self.kind not in ("Upsilon+", "Upsilon-", "Gamma+", "Gamma-"):
            raise InvalidArgument(f"unknown region kind {self.kind!r}")
        if not 0.0 < self.w < 0.5:
            raise InvalidArgument("energy half-width must satisfy 0 < w < 1/2")
        if self.kind.startswith("Upsilon"):
            if not 0.0 < self.delta < np.sqrt(1.0 - self.sign * self.w):
                raise InvalidArgument("delta must satisfy 0 < delta < sqrt(1 -+ w)")
        else:
            if self.eps_area <= 0.0:
                raise InvalidArgument("Gamma regions need eps_area > 0")
        for lo, hi in self.omega:
            if not lo < hi:
                raise InvalidArgument("omega box intervals must be nonempty")

    @property
    def sign(self):
        return +1 if self.kind.endswith("+") else -1

    @property
    def sigma(self):
        return np.sqrt(1.0 - self.sign * self.w) - self.delta

    def contains(self, r, y, rho, eta, metric: MetricFamily):
        """Vectorized strict membership; energy and area use the eps=0 metric."""
        r = np.asarray(r, dtype=float)
        rho = np.asarray(rho, dtype=float)
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        area = np.exp(-2.0 * r) * metric.g_value(r, y, eta, 0.0)
        p0 = rho**2 + area
        ok = (p0 > 1.0 - self.w) & (p0 < 1.0 + self.w) & (r > self.R)
        for k, (lo, hi) in enumerate(self.omega):
            ok &= (y[..., k] > lo) & (y[..., k] < hi)
        if self.kind.startswith("Upsilon"):
            ok &= self.sign * rho > -self.sigma
        else:
            ok &= (self.sign * rho > 0.0) & (area < self.eps_area)
        return ok


def region_membership(point: PhasePoint, region: RegionSpec, metric: MetricFamily) -> bool:
    """Exact strict predicate for a single phase point."""
    return bool(region.contains(np.asarray([point.r]), point.y[None, :],
                                np.asarray([point.rho]), point.eta[None, :], metric)[0])


# ---------------------------------------------------------------------------
# nested region ladders and cutoffs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LadderSpec:
    """Geometric parameter ladders generating Gamma_1+ > ... > Gamma_6+."""
    R: float = 6.0
    w: float = 0.1
    eps: float = 0.05
    r_ratio: float = 1.12
    shrink: float = 0.75
    omega: tuple = ((-1.2, 1.2),)
    omega_shrink: float = 0.88
    levels: int = 6

    def __post_init__(self):
        if not (self.r_ratio > 1.0 and 0.0 < self.shrink < 1.0
                and 0.0 < self.omega_shrink < 1.0):
            raise InvalidArgument("ladder ratios must nest the regions strictly")
        if not 0.0 < self.w < 0.5:
            raise InvalidArgument("0 < w < 1/2 required")

    def level(self, k):
        """Parameters (R_k, eps_k, w_k, omega_k) of level k >= 1."""
        if not 1 <= k <= self.levels:
            raise InvalidArgument(f"ladder level {k} outside 1..{self.levels}")
        Rk = self.R * self.r_ratio ** (k - 1)
        wk = self.w * self.shrink ** (k - 1)
        ek = self.eps * self.shrink ** (k - 1)
        om = []
        for lo, hi in self.omega:
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            h = half * self.omega_shrink ** (k - 1)
            om.append((mid - h, mid + h))
        return Rk, ek, wk, tuple(om)

    def gamma_region(self, k, sign="+"):
        Rk, ek, wk, om = self.level(k)
        return RegionSpec(kind=f"Gamma{sign}", R=Rk, w=wk, omega=om, eps_area=ek)

    def upsilon_region(self, k=1, sign="+", delta=None):
        Rk, _, wk, om = self.level(k)
        d = 0.5 * np.sqrt(1.0 - (1 if sign == "+" else -1) * wk) if delta is None else delta
        return RegionSpec(kind=f"Upsilon{sign}", R=Rk, w=wk, omega=om, delta=d)


def _mid_ramp(x, a, b, up=True, frac=0.1):
    """Smooth 0/1 transition occupying the middle frac of the gap (a, b)."""
    mid, width = 0.5 * (a + b), 0.5 * abs(b - a) * frac
    lo, hi = mid - width, mid + width
    return nm.ramp_up(x, lo, hi) if up else nm.ramp_down(x, lo, hi)


@dataclass(frozen=True)
class CutoffProfile:
    """Smooth cutoffs chi_k: 1 on Gamma_k+, 0 outside Gamma_{k-1}+.

    Each factor is an exp(-1/x) mollifier step whose transition occupies 10%
    of the gap between consecutive ladder parameters, centered in the gap.
    """
    ladder: LadderSpec = field(default_factory=LadderSpec)

    def chi(self, k, r, y, rho, eta, metric: MetricFamily):
        if not 2 <= k <= self.ladder.levels:
            raise InvalidArgument(f"cutoff level must lie in 2..{self.ladder.levels}")
        Rp, ep, wp, omp = self.ladder.level(k - 1)
        Rk, ek, wk, omk = self.ladder.level(k)
        r = np.asarray(r, dtype=float)
        rho = np.asarray(rho, dtype=float)
        y = np.asarray(y, dtype=float)
        eta = np.asarray(eta, dtype=float)
        area = np.exp(-2.0 * r) * metric.g_value(r, y, eta, 0.0)
        p0 = rho**2 + area
        val = _mid_ramp(r, Rp, Rk, up=True)
        val = val * _mid_ramp(rho, 0.0, 0.5, up=True)
        val = val * _mid_ramp(area, ek, ep, up=False)
        val = val * _mid_ramp(p0, 1.0 - wp, 1.0 - wk, up=True)
        val = val * _mid_ramp(p0, 1.0 + wk, 1.0 + wp, up=False)
        for i, ((lop, hip), (lok, hik)) in enumerate(zip(omp, omk)):
            val = val * _mid_ramp(y[..., i], lop, lok, up=True)
            val = val * _mid_ramp(y[..., i], hik, hip, up=False)
        return val


def cutoff_chi(point: PhasePoint, profile: CutoffProfile, k: int,
               metric: MetricFamily) -> float:
    """Cutoff value in [0, 1] at a single phase point."""
    return float(profile.chi(k, np.asarray([point.r]), point.y[None, :],
                             np.asarray([point.rho]), point.eta[None, :], metric)[0])


# ---------------------------------------------------------------------------
# regularized volume
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegularizedVolume:
    value: float
    error_estimate: float
    tail_estimate: float
    route_gap: float
    q: int
    L: float


def volume_density_family(metric: MetricFamily, r, y):
    """eps -> dvol_eps density e^{(n-1)r} det(d^2_eta g_eps / 2)^{-1/2} on a grid."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    n = metric.n
    pref = np.exp((n - 1) * r)

    def fam(eps):
        return pref * metric.b_value(r, y, eps) ** (-(n - 1) / 2.0)

    return fam


def regularized_volume(metric: MetricFamily, q: int, L: float,
                       omega=None, cfg=None, nodes_r=24, nodes_y=24) -> RegularizedVolume:
    """Adaptive-panel quadrature of the q-bracketed volume density over [0,L] x Omega.

    The integrand is the eps_bracket combinator applied to the density family;
    both bracket routes are evaluated and their gap reported.  The L -> inf
    tail is estimated from the decay of the bracket density past L (exactly
    zero when the kappa cutoff kills the perturbation, infinite when the
    density does not decay, as happens for q < n without the cutoff).
    """
    from .epscalc import QBracketConfig, eps_bracket

    if q < 1:
        raise InvalidArgument("bracket order q must be >= 1")
    if not np.isfinite(L) or L <= 0:
        raise InvalidArgument("finite truncation radius L > 0 required")
    cfg = cfg or QBracketConfig(q=q)
    if omega is None:
        omega = ((0.0, 2.0 * np.pi),) * metric.d
    if metric.d != 1:
        raise UnsupportedModel("volume quadrature implemented for n = 2 (d = 1)")

    # panel boundaries: unit steps plus the kappa-ramp breakpoints, where the
    # mollifier has large derivatives
    breaks = set(np.arange(0.0, L + 0.5).tolist()) | {L}
    if metric.kappa > 0.0:
        for b in (1.0 / metric.kappa, nm.THETA_SUPPORT_RADIUS / metric.kappa,
                  0.5 / metric.kappa, 1.5 / metric.kappa):
            if 0.0 < b < L:
                breaks.add(float(b))
    edges = np.array(sorted(b for b in breaks if 0.0 <= b <= L))

    def _quad(nr, ny):
        r_nodes, r_w = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            x, w = nm.gauss_legendre(a, b, nr)
            r_nodes.append(x)
            r_w.append(w)
        r_nodes = np.concatenate(r_nodes)
        r_w = np.concatenate(r_w)
        y_nodes, y_w = nm.gauss_legendre(omega[0][0], omega[0][1], ny)
        R, Y = np.meshgrid(r_nodes, y_nodes, indexing="ij")
        W = np.outer(r_w, y_w)
        fam = volume_density_family(metric, R.ravel(), Y.reshape(-1, 1))
        res = eps_bracket(fam, cfg)
        return (float(np.sum(res.stencil * W.ravel())),
                float(np.sum(res.quadrature * W.ravel())), res.discrepancy)

    val, val_q, gap = _quad(nodes_r, nodes_y)
    coarse, _, _ = _quad(max(4, nodes_r // 2), max(4, nodes_y // 2))
    err = abs(val - coarse) + abs(val - val_q)
    # tail: sample the bracket density on [L, L+4]
    rt = np.linspace(L, L + 4.0, 9)
    yt = np.full_like(rt, 0.5 * (omega[0][0] + omega[0][1]))
    fam_t = volume_density_family(metric, rt, yt[:, None])
    tail_samples = np.asarray(eps_bracket(fam_t, cfg).stencil)
    width = omega[0][1] - omega[0][0]
    amax = float(np.max(np.abs(tail_samples)))
    # below the rounding floor of the e^{(n-1)r}-scaled density: no tail
    if amax < 1e-11 * np.exp((metric.n - 1) * (L + 4.0)):
        tail = 0.0
    else:
        ratio = abs(tail_samples[-1]) / max(abs(tail_samples[0]), 1e-300)
        if ratio >= 0.95:
            tail = np.inf
        else:
            rate = -np.log(ratio) / (rt[-1] - rt[0])
            tail = width * abs(tail_samples[0]) / rate
    if not np.isfinite(val):
        raise NumericFailure("volume quadrature did not converge")
    return RegularizedVolume(value=val, error_estimate=float(err),
                             tail_estimate=float(tail), route_gap=gap,
                             q=q, L=float(L))
