"""Generalized scattering phases and heat traces of the discretized model.

Everything is a mode sum over the angular Fourier index; per-mode spectra are
cached so the eps-stencil, eps-quadrature and every t or lambda evaluation
reuse the same eigenvalue sets.  The two bracket routes are carried through
all series and their gap reported.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .epscalc import QBracketConfig, eps_bracket
from .errors import (FitFailure, InvalidArgument, TruncationFailure,
                     WindowFailure)
from .model import MetricFamily, regularized_volume
from .specops import ModeOperatorSet, SpectralGrid


def omega_ball(n):
    """Volume of the unit ball in R^n."""
    from math import gamma, pi
    return pi ** (n / 2.0) / gamma(n / 2.0 + 1.0)


def _mode_order(m_max):
    """Deterministic mode ordering 0, 1, -1, 2, -2, ..."""
    out = [0]
    for m in range(1, m_max + 1):
        out.extend((m, -m))
    return out


# ---------------------------------------------------------------------------
# heat traces
# ---------------------------------------------------------------------------

@dataclass
class HeatTraceSeries:
    t: np.ndarray
    q: int
    values: np.ndarray            # stencil route
    values_quadrature: np.ndarray
    route_gap: float
    m_max: int
    tail_estimate: float          # semiclassical proxy for the |m| > m_max mass
    eigenvalue_floor_bound: float # the coarse m^2 e^{-2L} floor bound
    grid: SpectralGrid
    metric: MetricFamily

    def to_rows(self):
        rows = []
        for i, tv in enumerate(self.t):
            rows.append((tv, self.q, self.values[i],
                         abs(self.values[i] - self.values_quadrature[i]),
                         self.tail_estimate))
        return rows


def _weyl_mode_bracket(metric, q, t_grid, L, m, cfg):
    """Semiclassical proxy of the per-mode bracketed heat trace (cheap)."""
    r = np.linspace(0.0, L, 257)

    def fam(e):
        pot = m * m * np.exp(-2.0 * r) * metric.b_value(r, r[:, None] * 0.0, e)
        vals = np.trapezoid(np.exp(-np.multiply.outer(t_grid, pot)), r, axis=1)
        return (4.0 * np.pi * t_grid) ** -0.5 * vals

    res = eps_bracket(fam, cfg)
    return np.asarray(res.stencil)


def heat_trace_q(metric: MetricFamily, q, t_grid, grid: SpectralGrid = None,
                 m_max=40, cfg: QBracketConfig = None, include_shift=False,
                 tail_tol=None, modes: ModeOperatorSet = None) -> HeatTraceSeries:
    """Mode sum of eps_bracket(eps -> tr exp(-t P_eps^(m)), q) over |m| <= m_max.

    Both bracket routes are evaluated per mode from the shared spectral cache.
    The |m| > m_max tail is estimated with a semiclassical proxy (and the
    coarse eigenvalue-floor bound is reported alongside); if tail_tol is given
    and the proxy exceeds tail_tol relative to the series, truncation-failure
    is raised.
    """
    if q < 1:
        raise InvalidArgument("q must be >= 1")
    t_grid = np.asarray(t_grid, dtype=float)
    grid = grid or SpectralGrid()
    cfg = cfg or QBracketConfig(q=q, cheb_degree=16, quad_nodes=12)
    if cfg.q != q:
        raise InvalidArgument("bracket config order disagrees with q")
    modes = modes or ModeOperatorSet(metric, grid, include_shift)
    sten = np.zeros_like(t_grid)
    quad = np.zeros_like(t_grid)
    gap = 0.0
    for m in _mode_order(m_max):
        def fam(e, m=m):
            lam = modes.eigenvalues(m, e)
            return np.exp(-np.multiply.outer(t_grid, lam)).sum(axis=1)

        res = eps_bracket(fam, cfg)
        sten = sten + np.asarray(res.stencil)
        quad = quad + np.asarray(res.quadrature)
        gap = max(gap, res.discrepancy)
    # tail proxy over m_max < |m| <= 6 m_max (doubled for the two signs)
    proxy_cfg = QBracketConfig(q=q, cheb_degree=12, quad_nodes=8, route_tol=None)
    tail = np.zeros_like(t_grid)
    for m in range(m_max + 1, 6 * m_max + 1, max(1, m_max // 8)):
        tail = tail + 2.0 * np.abs(_weyl_mode_bracket(metric, q, t_grid, grid.L,
                                                      m, proxy_cfg)) \
            * max(1, m_max // 8)
    tail_est = float(np.max(tail))
    c_floor = np.exp(-2.0 * grid.L) / metric.C0
    n_grid = len(grid.interior)
    mtail = np.arange(m_max + 1, m_max + 2000)
    floor_bound = float(2.0 * n_grid * np.sum(
        np.exp(-np.min(t_grid) * c_floor * mtail**2)))
    if tail_tol is not None:
        scale = max(np.max(np.abs(sten)), 1e-300)
        if tail_est > tail_tol * scale:
            raise TruncationFailure(
                f"mode tail estimate {tail_est:.3e} above {tail_tol:.1e} x series")
    return HeatTraceSeries(t=t_grid, q=q, values=sten, values_quadrature=quad,
                           route_gap=gap, m_max=m_max, tail_estimate=tail_est,
                           eigenvalue_floor_bound=floor_bound, grid=grid,
                           metric=metric)


# ---------------------------------------------------------------------------
# expansion fits
# ---------------------------------------------------------------------------

@dataclass
class ExpansionFit:
    exponents: np.ndarray
    coefficients: np.ndarray
    residual: float
    condition: float
    n: int
    window: tuple
    a0_window_drift: float
    omega_n: float

    def coefficient(self, k):
        """a_k: the coefficient of t^{-n/2 + k} (k may be half-integer).

        Half-integer slots absorb the Dirichlet-wall artifacts of the
        truncated interval and are excluded from model comparisons.
        """
        e = -self.n / 2.0 + k
        idx = np.argmin(np.abs(self.exponents - e))
        if abs(self.exponents[idx] - e) > 1e-12:
            raise InvalidArgument(f"no basis slot at exponent {e}")
        return float(self.coefficients[idx])

    @property
    def a0(self):
        return self.coefficient(0)


def fit_heat_expansion(series: HeatTraceSeries, K=1.0, n=None,
                       max_condition=1e9) -> ExpansionFit:
    """Weighted least squares on the exponent basis {-n/2, -n/2+1/2, ..., K}.

    The fit solves min sum_i (t_i^{n/2} S_i - sum_k a_k t_i^{n/2+e_k})^2, i.e.
    rows are scaled by t^{n/2} so the leading coefficient is an intercept.
    Stability is reported as the a0 drift between the lower and upper
    two-thirds t-subwindows.
    """
    n = n if n is not None else series.metric.n
    t = series.t
    S = series.values
    expos = np.arange(-n / 2.0, K + 1e-9, 0.5)

    def _fit(tt, ss):
        A = tt[:, None] ** (expos[None, :] + n / 2.0)
        b = tt ** (n / 2.0) * ss
        coef, res, rank, sv = np.linalg.lstsq(A, b, rcond=None)
        cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
        resid = float(np.linalg.norm(A @ coef - b))
        return coef, cond, resid

    if len(t) < len(expos) + 2:
        raise FitFailure("not enough t samples for the requested basis")
    coef, cond, resid = _fit(t, S)
    if cond > max_condition:
        raise FitFailure(f"design matrix condition {cond:.2e}", condition=cond)
    k = len(t)
    lo = slice(0, int(np.ceil(2 * k / 3)))
    hi = slice(k - int(np.ceil(2 * k / 3)), k)
    c_lo, _, _ = _fit(t[lo], S[lo])
    c_hi, _, _ = _fit(t[hi], S[hi])
    drift = abs(c_lo[0] - c_hi[0]) / max(abs(coef[0]), 1e-300)
    return ExpansionFit(exponents=expos, coefficients=coef, residual=resid,
                        condition=float(cond), n=n, window=(float(t[0]), float(t[-1])),
                        a0_window_drift=float(drift), omega_n=omega_ball(n))


def a0_volume_oracle(metric: MetricFamily, q, L, cfg=None):
    """Gamma(n/2+1) (2 pi)^-n omega_n * bracketed volume: the heat leading term.

    For n = 2 the prefactor collapses to (4 pi)^{-1}.
    """
    from math import gamma, pi
    n = metric.n
    vol = regularized_volume(metric, q, L, cfg=cfg)
    pref = gamma(n / 2.0 + 1.0) * (2.0 * pi) ** (-n) * omega_ball(n)
    return pref * vol.value, vol


# ---------------------------------------------------------------------------
# scattering-phase samples
# ---------------------------------------------------------------------------

def mollified_step_values(x, lam, delta):
    """f_{lam, delta}(x): 1 below lam - delta, 0 above lam + delta."""
    return 1.0 - nm.smoothstep((np.asarray(x) - (lam - delta)) / (2.0 * delta))


@dataclass
class PhaseSample:
    lam: np.ndarray
    q: int
    delta: float
    h: float
    values: np.ndarray
    values_quadrature: np.ndarray
    route_gap: float
    m_max: int
    grid: SpectralGrid
    metric: MetricFamily


def xi_q(metric: MetricFamily, q, lam_grid, delta, h=1.0,
         grid: SpectralGrid = None, m_max=40, cfg: QBracketConfig = None,
         include_shift=False, modes: ModeOperatorSet = None) -> PhaseSample:
    """Mollified generalized scattering phase xi_{q, delta} on a lambda grid.

    xi(lam) = sum_m eps_bracket(eps -> tr f_{lam,delta}(h^2 P_eps^(m)), q).
    The h-rescaled family is realized through its spectrum (h^2 scales the
    eigenvalues exactly), which is what makes the rescaling identity an
    identity at rounding level.
    """
    if q < 1:
        raise InvalidArgument("q must be >= 1")
    if delta <= 0:
        raise InvalidArgument("mollifier width must be positive")
    lam_grid = np.asarray(lam_grid, dtype=float)
    grid = grid or SpectralGrid()
    # counting sums are C-infinity but wiggly in eps: higher fit degree (with
    # enough quadrature nodes to integrate its derivative exactly) and a
    # looser configured route tolerance than the heat family
    cfg = cfg or QBracketConfig(q=q, cheb_degree=40, quad_nodes=24,
                                route_tol=1e-4)
    modes = modes or ModeOperatorSet(metric, grid, include_shift)
    sten = np.zeros_like(lam_grid)
    quad = np.zeros_like(lam_grid)
    gap = 0.0
    for m in _mode_order(m_max):
        def fam(e, m=m):
            lam = h * h * modes.eigenvalues(m, e)
            out = np.empty(len(lam_grid))
            for i, lv in enumerate(lam_grid):
                out[i] = float(np.sum(mollified_step_values(lam, lv, delta)))
            return out

        res = eps_bracket(fam, cfg)
        sten = sten + np.asarray(res.stencil)
        quad = quad + np.asarray(res.quadrature)
        gap = max(gap, res.discrepancy)
    return PhaseSample(lam=lam_grid, q=q, delta=float(delta), h=float(h),
                       values=sten, values_quadrature=quad, route_gap=gap,
                       m_max=m_max, grid=grid, metric=metric)


# ---------------------------------------------------------------------------
# Weyl probe
# ---------------------------------------------------------------------------

@dataclass
class WeylReport:
    slope: float
    slope_target: float
    coefficient: float
    b0: float
    coefficient_rel_err: float
    max_jump: float
    window: tuple

    def to_dict(self):
        return {"slope": self.slope, "slope_target": self.slope_target,
                "coefficient": self.coefficient, "b0": self.b0,
                "coefficient_rel_err": self.coefficient_rel_err,
                "max_jump": self.max_jump, "window": list(self.window)}


def b0_volume_oracle(metric: MetricFamily, q, L, cfg=None):
    """(2 pi)^-n omega_n * bracketed volume: the Weyl leading coefficient."""
    from math import pi
    n = metric.n
    vol = regularized_volume(metric, q, L, cfg=cfg)
    return (2.0 * pi) ** (-n) * omega_ball(n) * vol.value, vol


def weyl_probe(sample: PhaseSample, b0: float, dr_ceiling_fraction=0.25) -> WeylReport:
    """log-log growth fit of the mollified phase against the b0 lam^{n/2} law.

    The lambda window must sit below the FD reliability ceiling
    (pi/dr)^2 / 4 and span at least a decade; the max adjacent-sample jump is
    reported as the continuity probe.
    """
    lam = sample.lam
    xi = sample.values
    n = sample.metric.n
    ceiling = (np.pi / sample.grid.dr) ** 2 / 4.0
    if np.max(lam) > dr_ceiling_fraction * ceiling:
        raise WindowFailure(
            f"lambda window reaches {np.max(lam):.3g}, above the reliable "
            f"fraction of the FD ceiling {ceiling:.3g}")
    if np.max(lam) / np.min(lam) < 10.0 * (1.0 - 1e-9):
        raise WindowFailure("lambda window must span at least a decade")
    sign = np.sign(b0) if b0 != 0 else 1.0
    vals = sign * xi
    if np.any(vals <= 0):
        raise WindowFailure("phase changes sign inside the window; "
                            "no log-log slope is defined")
    slope, intercept = np.polyfit(np.log(lam), np.log(vals), 1)
    # fixed-exponent leading coefficient: LS fit of xi against lam^{n/2}
    w = lam ** (n / 2.0)
    coeff = float(np.dot(xi, w) / np.dot(w, w))
    rel = abs(coeff - b0) / max(abs(b0), 1e-300)
    return WeylReport(slope=float(slope), slope_target=n / 2.0,
                      coefficient=coeff, b0=float(b0),
                      coefficient_rel_err=float(rel),
                      max_jump=float(np.max(np.abs(np.diff(xi)))),
                      window=(float(np.min(lam)), float(np.max(lam))))


def laplace_consistency(metric: MetricFamily, t_values, lam_max=40.0,
                        n_lam=400, delta=0.25, grid: SpectralGrid = None,
                        m_max=24, modes=None):
    """Compare t * int xi_1(lam) e^{-t lam} d lam with the q = 1 heat trace.

    Integration by parts of the Laplace transform of xi' (the mollified xi
    vanishes below the spectra, and e^{-t lam_max} must be negligible).
    Returns (lhs values, rhs values).
    """
    t_values = np.asarray(t_values, dtype=float)
    grid = grid or SpectralGrid(L=4.0, dr=0.02)
    lam_grid = np.linspace(1e-3, lam_max, n_lam)
    sample = xi_q(metric, 1, lam_grid, delta, grid=grid, m_max=m_max,
                  modes=modes)
    lhs = np.array([
        tv * np.trapezoid(sample.values * np.exp(-tv * lam_grid), lam_grid)
        for tv in t_values])
    series = heat_trace_q(metric, 1, t_values, grid=grid, m_max=m_max,
                          modes=modes)
    return lhs, series.values
