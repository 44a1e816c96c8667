import numpy as np
import pytest

from hyperscat.epscalc import QBracketConfig
from hyperscat.errors import FitFailure, TruncationFailure, WindowFailure
from hyperscat.model import pure_hyperbolic, radial
from hyperscat.specops import ModeOperatorSet, SpectralGrid
from hyperscat.traces import (HeatTraceSeries, a0_volume_oracle,
                              b0_volume_oracle, fit_heat_expansion,
                              heat_trace_q, laplace_consistency,
                              mollified_step_values, omega_ball, weyl_probe,
                              xi_q)


@pytest.fixture(scope="module")
def spectral_setup():
    metric = radial(c=1.0, kappa=2.0)
    grid = SpectralGrid(L=8.0, dr=0.04)
    return metric, grid, ModeOperatorSet(metric, grid)


def test_omega_ball():
    assert omega_ball(2) == pytest.approx(np.pi)
    assert omega_ball(3) == pytest.approx(4.0 * np.pi / 3.0)


def test_heat_trace_unperturbed_zero():
    g = SpectralGrid(L=4.0, dr=0.05)
    s = heat_trace_q(pure_hyperbolic(), 1, np.geomspace(0.05, 0.5, 6),
                     grid=g, m_max=8)
    assert np.max(np.abs(s.values)) == 0.0


def test_heat_trace_q1_is_direct_difference(spectral_setup):
    metric, grid, modes = spectral_setup
    t_grid = np.array([0.05, 0.1])
    s = heat_trace_q(metric, 1, t_grid, grid=grid, m_max=6, modes=modes)
    direct = np.zeros_like(t_grid)
    for m in range(-6, 7):
        lam1 = modes.eigenvalues(m, 1.0)
        lam0 = modes.eigenvalues(m, 0.0)
        direct += (np.exp(-np.multiply.outer(t_grid, lam1)).sum(1)
                   - np.exp(-np.multiply.outer(t_grid, lam0)).sum(1))
    assert np.max(np.abs(s.values - direct)) < 1e-12


def test_heat_trace_synthetic_2x2():
    # closed-form oracle: H_eps = diag(1, 2) + eps * offdiag(0.3)
    from hyperscat.epscalc import eps_bracket

    t = 0.7

    def exact_trace(e):
        lam = np.linalg.eigvalsh(np.array([[1.0, 0.3 * e], [0.3 * e, 2.0]]))
        return float(np.sum(np.exp(-t * lam)))

    # hand expansion: eigenvalues 1.5 -+ sqrt(0.25 + 0.09 e^2)
    def closed_form(e):
        s = np.sqrt(0.25 + 0.09 * e * e)
        return float(np.exp(-t * (1.5 - s)) + np.exp(-t * (1.5 + s)))

    for e in (0.0, 0.4, 1.0):
        assert exact_trace(e) == pytest.approx(closed_form(e), abs=1e-14)
    for q in (1, 2):
        res = eps_bracket(exact_trace, QBracketConfig(q=q, route_tol=None))
        oracle = eps_bracket(closed_form, QBracketConfig(q=q, route_tol=None))
        assert abs(res.stencil - oracle.stencil) < 1e-10


def test_heat_route_gap_small(spectral_setup):
    metric, grid, modes = spectral_setup
    s = heat_trace_q(metric, 2, np.geomspace(0.05, 0.3, 8), grid=grid,
                     m_max=12, modes=modes)
    assert s.route_gap < 1e-6
    assert np.isreal(s.values).all()
    # decaying perturbation: the bracketed trace falls off with t
    assert np.all(np.diff(np.abs(s.values)) < 0.0)


def test_heat_tail_guard():
    metric = radial(c=1.0, kappa=0.0)   # no cutoff: heavy mode tail
    g = SpectralGrid(L=8.0, dr=0.08)
    with pytest.raises(TruncationFailure):
        heat_trace_q(metric, 1, np.array([0.05]), grid=g, m_max=10,
                     tail_tol=0.05)


def test_fit_synthetic_exact(spectral_setup):
    metric, grid, _ = spectral_setup
    t = np.geomspace(0.02, 0.2, 14)
    syn = HeatTraceSeries(t=t, q=1, values=(2.0 + 3.0 * t) / t,
                          values_quadrature=(2.0 + 3.0 * t) / t,
                          route_gap=0.0, m_max=0, tail_estimate=0.0,
                          eigenvalue_floor_bound=0.0, grid=grid, metric=metric)
    fit = fit_heat_expansion(syn, K=1.0, n=2)
    assert fit.a0 == pytest.approx(2.0, abs=1e-9)
    assert fit.coefficient(1) == pytest.approx(3.0, abs=1e-8)
    assert abs(fit.coefficient(0.5)) < 1e-9
    assert fit.condition < 1e9


def test_fit_needs_enough_samples(spectral_setup):
    metric, grid, _ = spectral_setup
    t = np.geomspace(0.02, 0.2, 4)
    syn = HeatTraceSeries(t=t, q=1, values=1.0 / t, values_quadrature=1.0 / t,
                          route_gap=0.0, m_max=0, tail_estimate=0.0,
                          eigenvalue_floor_bound=0.0, grid=grid, metric=metric)
    with pytest.raises(FitFailure):
        fit_heat_expansion(syn, K=2.0, n=2)


def test_heat_a0_against_volume_oracle(spectral_setup):
    # the coarse-grid version of the acceptance comparison
    metric, grid, modes = spectral_setup
    s = heat_trace_q(metric, 1, np.geomspace(0.02, 0.2, 14), grid=grid,
                     m_max=40, modes=modes)
    fit = fit_heat_expansion(s, K=1.0)
    a0o, vol = a0_volume_oracle(metric, 1, grid.L)
    assert vol.tail_estimate == 0.0
    assert abs(fit.a0 - a0o) / abs(a0o) < 0.05
    assert fit.a0_window_drift < 0.02


# ---------------------------------------------------------------------------
# scattering phase
# ---------------------------------------------------------------------------

def test_xi_below_spectrum_zero(spectral_setup):
    metric, grid, modes = spectral_setup
    s = xi_q(metric, 1, np.array([0.01, 0.05]), 0.02, grid=grid, m_max=6,
             modes=modes)
    assert np.max(np.abs(s.values)) == 0.0


def test_xi_counting_oracle(spectral_setup):
    # q = 1 equals the mollified counting-function difference, directly
    metric, grid, modes = spectral_setup
    lam_grid = np.array([5.0, 9.0])
    delta = 1.0
    s = xi_q(metric, 1, lam_grid, delta, grid=grid, m_max=6, modes=modes)
    direct = np.zeros_like(lam_grid)
    for m in range(-6, 7):
        l1 = modes.eigenvalues(m, 1.0)
        l0 = modes.eigenvalues(m, 0.0)
        for i, lv in enumerate(lam_grid):
            direct[i] += (np.sum(mollified_step_values(l1, lv, delta))
                          - np.sum(mollified_step_values(l0, lv, delta)))
    assert np.max(np.abs(s.values - direct)) < 1e-12


def test_xi_rescaling_identity(spectral_setup):
    metric, grid, modes = spectral_setup
    h = 0.5
    mu = np.array([0.5, 0.8, 1.1])
    delta0 = 0.1
    a = xi_q(metric, 1, mu / h**2, delta0 / h**2, h=1.0, grid=grid, m_max=12,
             modes=modes)
    b = xi_q(metric, 1, mu, delta0, h=h, grid=grid, m_max=12, modes=modes)
    assert np.max(np.abs(a.values - b.values)) < 1e-10


def test_xi_mollifier_stability(spectral_setup):
    # on plateaus away from eigenvalue clusters, xi is O(delta)-insensitive
    metric, grid, modes = spectral_setup
    lam = np.array([40.0, 60.0])
    v1 = xi_q(metric, 1, lam, 2.0, grid=grid, m_max=24, modes=modes).values
    v2 = xi_q(metric, 1, lam, 4.0, grid=grid, m_max=24, modes=modes).values
    assert np.max(np.abs(v1 - v2)) < 0.5 * np.max(np.abs(v1))


def test_weyl_probe(spectral_setup):
    metric, grid, modes = spectral_setup
    lam = np.geomspace(10.0, 100.0, 25)
    s = xi_q(metric, 1, lam, 4.0, grid=grid, m_max=40, modes=modes)
    b0, _ = b0_volume_oracle(metric, 1, grid.L)
    rep = weyl_probe(s, b0)
    assert abs(rep.slope - 1.0) < 0.15
    assert rep.coefficient_rel_err < 0.2
    # continuity: adjacent jumps shrink under lambda refinement (coarse grids
    # alias the steep spots, so the rate is not proportional)
    s2 = xi_q(metric, 1, np.geomspace(10.0, 100.0, 100), 4.0, grid=grid,
              m_max=40, modes=modes)
    assert np.max(np.abs(np.diff(s2.values))) \
        < 0.9 * np.max(np.abs(np.diff(s.values)))


def test_weyl_probe_window_guards(spectral_setup):
    metric, grid, modes = spectral_setup
    s = xi_q(metric, 1, np.geomspace(10.0, 20.0, 5), 4.0, grid=grid, m_max=8,
             modes=modes)
    with pytest.raises(WindowFailure):
        weyl_probe(s, -0.1)   # less than a decade
    lam_high = np.geomspace(100.0, 1100.0, 5)
    s2 = xi_q(metric, 1, lam_high, 4.0, grid=grid, m_max=8, modes=modes)
    with pytest.raises(WindowFailure):
        weyl_probe(s2, -0.1)  # above the dr reliability ceiling


def test_laplace_consistency(spectral_setup):
    lhs, rhs = laplace_consistency(radial(c=1.0, kappa=2.0), [0.5, 0.8, 1.2],
                                   lam_max=60.0, m_max=20)
    rel = np.abs(lhs - rhs) / np.abs(rhs)
    assert np.max(rel) < 0.05
