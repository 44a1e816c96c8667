"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest -v tests/test_acceptance.py` (or `-s` to see the lines); all
tolerances are pinned here, nothing is deferred to later calibration.
"""
import time

import numpy as np
import pytest

from hyperscat import numerics as nm
from hyperscat.epscalc import (OperatorFamily, QBracketConfig,
                               birman_solomyak_residual, duhamel_residual,
                               egorov_residual, eps_bracket,
                               identity_residuals, random_hermitian)
from hyperscat.eikonal import PhaseGrid, build_phase, kuranishi_map
from hyperscat.flow import (FlowTolerances, batch_integrate,
                            invert_momentum_map_batch, sample_region,
                            verify_flow_estimates)
from hyperscat.functions import SmoothFunction
from hyperscat.model import (CutoffProfile, LadderSpec, pure_hyperbolic,
                             radial, regularized_volume)
from hyperscat.specops import (ModeOperatorSet, SpectralGrid, apply_function,
                               quantize_radial, reg_determinant,
                               reg_determinant_eig_oracle, schatten_norm)
from hyperscat.traces import (a0_volume_oracle, b0_volume_oracle,
                              fit_heat_expansion, heat_trace_q, weyl_probe,
                              xi_q)
from hyperscat.transport import (amplitude_a, amplitude_b0,
                                 default_target_symbol, transport_residual)


def _line(num, label, elapsed, budget, detail):
    print(f"\n[criterion {num}] PASS  {label}  ({elapsed:.1f}s < {budget:.0f}s)"
          f"  {detail}")


@pytest.fixture(scope="module")
def acceptance_spectral():
    """Shared mode-spectra cache for the heat and Weyl criteria."""
    metric = radial(c=1.0, kappa=2.0)
    grid = SpectralGrid(L=8.0, dr=0.01)
    return metric, grid, ModeOperatorSet(metric, grid)


def test_criterion_1_exact_identities():
    t0 = time.time()
    f = SmoothFunction.bump(-4.0, 4.0)
    f_tilde = SmoothFunction.plateau(-4.0, 4.0, 1.5)
    worst_random = 0.0
    for seed in (11, 23, 47):
        rng = np.random.default_rng(seed)
        fam = OperatorFamily(h0=random_hermitian(rng, 6, 1.0),
                             v=random_hermitian(rng, 6, 0.6), h=0.5)
        K = random_hermitian(rng, 6)
        A = random_hermitian(rng, 6, 0.7)
        B = random_hermitian(rng, 6, 0.7)
        P = random_hermitian(rng, 6, 1.0)
        rep = identity_residuals(fam, f, f_tilde, t=1.0, t0=0.7, K=K,
                                 A=A, B=B, P=P, eps=0.5, nodes=64)
        bs = birman_solomyak_residual(fam, SmoothFunction.gaussian(0.0, 1.3),
                                      nodes=64)
        du = duhamel_residual(fam, t=1.0, eps=0.5, nodes=64)
        worst_random = max(worst_random, rep.max_residual(), bs, du)
    assert worst_random < 1e-6
    # trivial cases at machine precision
    h0 = np.diag([0.4, 1.1, 2.3])
    vd = np.diag([0.2, -0.3, 0.5])
    fam0 = OperatorFamily(h0=h0, v=np.zeros((3, 3)))
    famc = OperatorFamily(h0=h0, v=vd)
    rng = np.random.default_rng(3)
    fam6 = OperatorFamily(h0=random_hermitian(rng, 6, 1.0),
                          v=random_hermitian(rng, 6, 0.5), h=0.5)
    K = random_hermitian(rng, 6)
    trivial = max(
        duhamel_residual(fam0, 1.0),
        birman_solomyak_residual(famc, SmoothFunction.gaussian(0.0, 1.0)),
        identity_residuals(fam6, f, f_tilde, t=1.0, t0=0.7, K=K,
                           eps=0.5).shift_trick,
        egorov_residual(fam6, f, 1.0, 0.7, K, eps=0.5),
    )
    assert trivial < 1e-12
    elapsed = time.time() - t0
    assert elapsed < 10.0
    _line(1, "Birman-Solomyak / Duhamel / shift / Egorov / intertwining",
          elapsed, 10,
          f"random max {worst_random:.2e} < 1e-6, trivial max {trivial:.2e} < 1e-12")


def test_criterion_2_eps_calculus():
    t0 = time.time()
    # stencil vs integral routes on analytic families
    worst_gap = 0.0
    for q in (1, 2, 3, 4):
        res = eps_bracket(lambda e: np.exp(0.7 * e) * np.sin(1.0 + e),
                          QBracketConfig(q=q, route_tol=None))
        worst_gap = max(worst_gap, res.discrepancy)
    assert worst_gap < 1e-8
    # polynomial annihilation (exact = the rounding floor of the stencils)
    worst_ann = 0.0
    for q in (2, 3, 5):
        res = eps_bracket(lambda e: 1.0 + 2.0 * e - 0.5 * e ** (q - 1),
                          QBracketConfig(q=q, route_tol=None))
        worst_ann = max(worst_ann, abs(res.stencil), abs(res.quadrature))
    assert worst_ann < 1e-7
    # primitive identity [antiderivative]_q = {T}_q
    fam = lambda e: np.cos(2.0 * e) + 0.3 * e
    anti = lambda e: np.sin(2.0 * e) / 2.0 + 0.15 * e**2
    worst_prim = 0.0
    for q in (1, 2, 3):
        b = eps_bracket(anti, QBracketConfig(q=q, route_tol=None))
        br = eps_bracket(fam, QBracketConfig(q=q, route_tol=None), form="brace")
        worst_prim = max(worst_prim, abs(b.stencil - br.stencil))
    assert worst_prim < 1e-9
    elapsed = time.time() - t0
    assert elapsed < 5.0
    _line(2, "bracket combinator routes / annihilation / primitive identity",
          elapsed, 5,
          f"route gap {worst_gap:.2e} < 1e-8, annihilation {worst_ann:.2e}, "
          f"primitive {worst_prim:.2e} < 1e-9")


def test_criterion_3_flow_estimates():
    t0 = time.time()
    ladder = LadderSpec()
    region = ladder.upsilon_region(1)
    rng = np.random.default_rng(314)
    detail = []
    for metric in (pure_hyperbolic(), radial(c=1.0)):
        pts = sample_region(region, metric, 500, rng)
        rep = verify_flow_estimates(pts, metric, region, eps=0.5, horizon=20.0,
                                    n_samples=121)
        assert rep.energy_drift < 1e-8
        assert rep.eta_zero_residual < 1e-12
        assert -rep.stats["rho_monotone"].sup_ratio > -1e-10
        for name, st in rep.stats.items():
            assert np.isfinite(st.sup_ratio), name
            if name in ("rt2", "yt2", "rhot2", "etat2", "angular_drift",
                        "y_improved"):
                assert st.horizon_change < 0.05, (metric.name, name,
                                                  st.horizon_change)
        worst_change = max(rep.stats[k].horizon_change
                           for k in ("rt2", "yt2", "rhot2", "etat2"))
        detail.append(f"{metric.name}: drift {rep.energy_drift:.1e}, "
                      f"max ratio change {worst_change:.3f}")
    elapsed = time.time() - t0
    assert elapsed < 120.0
    _line(3, "trajectory estimates on 500-point outgoing samples", elapsed,
          120, "; ".join(detail))


@pytest.fixture(scope="module")
def acceptance_phase():
    ladder = LadderSpec()
    metric = radial(c=1.0, kappa=0.0)
    grid = PhaseGrid.from_ladder(ladder, metric, nodes=(29, 5, 5, 9),
                                 r_span=7.0)
    phase = build_phase(grid, metric, eps=1.0, t_max=30.0)
    return ladder, metric, grid, phase


def test_criterion_4_eikonal(acceptance_phase):
    t0 = time.time()
    ladder, metric, grid, phase = acceptance_phase
    hj = float(np.max(np.abs(phase.hj_residual)))
    assert hj < 1e-6
    # decay ratio finite and grid-stable
    ratio = phase.free_deviation_ratio()
    finer = PhaseGrid.from_ladder(ladder, metric, nodes=(17, 5, 5, 13),
                                  r_span=7.0)
    other = build_phase(finer, metric, eps=1.0, t_max=30.0, ladder_points=3)
    ratio2 = other.free_deviation_ratio()
    assert np.isfinite(ratio) and np.isfinite(ratio2)
    assert abs(ratio - ratio2) < 0.2 * max(ratio, ratio2)
    # momentum-map round trip
    R, Y, P, E = grid.mesh()
    sel = slice(0, len(R), max(1, len(R) // 80))
    mom = invert_momentum_map_batch(R[sel], Y[sel][:, None],
                                    np.stack([P[sel], E[sel]], axis=1), 12.0,
                                    metric, eps=1.0)
    states = np.stack([R[sel], Y[sel], mom[:, 0], mom[:, 1]], axis=1)
    _, vals, _ = batch_integrate(metric, states, 1.0, (0.0, 12.0),
                                 np.array([12.0]), FlowTolerances())
    round_trip = max(float(np.max(np.abs(vals[-1, :, 2] - P[sel]))),
                     float(np.max(np.abs(vals[-1, :, 3] - E[sel]))))
    assert round_trip < 1e-9
    elapsed = time.time() - t0
    assert elapsed < 300.0
    _line(4, "Hamilton-Jacobi residual / phase decay / momentum round trip",
          elapsed, 300,
          f"HJ sup {hj:.1e} < 1e-6, decay ratio {ratio:.3f} vs {ratio2:.3f}, "
          f"round trip {round_trip:.1e} < 1e-9")


def test_criterion_5_transport(acceptance_phase):
    t0 = time.time()
    ladder, metric, grid, phase = acceptance_phase
    amp = amplitude_a(0, phase, metric, horizon=6.0, n_samples=129)
    # a0 = 1 exactly where c = 0 (the eta = 0 slice of the v = 0 model)
    iz = len(grid.eta) // 2
    slice_dev = float(np.max(np.abs(amp.a0[:, :, :, iz] - 1.0)))
    assert slice_dev < 1e-13
    decay = amp.decay_ratio()
    assert np.isfinite(decay)
    res_default = float(np.max(np.abs(transport_residual(amp, 0))))
    assert res_default < 1e-4
    # halving the grid spacing halves the residual
    sups = {}
    for nr, neta in ((15, 9), (29, 17)):
        g = PhaseGrid.from_ladder(ladder, metric, nodes=(nr, 5, 5, neta),
                                  r_span=7.0)
        ph = build_phase(g, metric, eps=1.0, t_max=24.0, ladder_points=3)
        am = amplitude_a(0, ph, metric, horizon=6.0, n_samples=129)
        sups[nr] = float(np.max(np.abs(transport_residual(am, 0))))
    assert sups[29] < 0.5 * sups[15]
    # b0 supported inside Gamma_4^+
    prof = CutoffProfile(ladder)
    b0 = amplitude_b0(default_target_symbol(prof, metric), amp, phase,
                      ladder.gamma_region(4), ladder=ladder)
    assert b0.support_ok
    assert np.sum(np.abs(b0.values) > 0) > 0
    elapsed = time.time() - t0
    assert elapsed < 300.0
    _line(5, "transport amplitudes and factorization symbol", elapsed, 300,
          f"a0 slice dev {slice_dev:.1e}, residual {res_default:.1e} -> "
          f"halving {sups[29] / sups[15]:.2f}, decay {decay:.3f}, b0 in Gamma4")


def test_criterion_6_heat_leading_coefficient(acceptance_spectral):
    t0 = time.time()
    metric, grid, modes = acceptance_spectral
    t_grid = np.geomspace(0.02, 0.2, 14)
    detail = []
    for q in (1, 2):
        series = heat_trace_q(metric, q, t_grid, grid=grid, m_max=40,
                              tail_tol=0.05, modes=modes)
        fit = fit_heat_expansion(series, K=1.0)
        a0_oracle, vol = a0_volume_oracle(metric, q, grid.L)
        rel = abs(fit.a0 - a0_oracle) / abs(a0_oracle)
        assert rel < 0.05, (q, fit.a0, a0_oracle)
        assert fit.a0_window_drift < 0.02
        assert series.route_gap < 1e-6
        detail.append(f"q={q}: a0 {fit.a0:+.5f} vs {a0_oracle:+.5f} "
                      f"(rel {rel:.3%}, drift {fit.a0_window_drift:.3%})")
    elapsed = time.time() - t0
    assert elapsed < 600.0
    _line(6, "heat leading coefficient vs regularized volume", elapsed, 600,
          "; ".join(detail))


def test_criterion_7_weyl_probe(acceptance_spectral):
    t0 = time.time()
    metric, grid, modes = acceptance_spectral
    lam = np.geomspace(12.0, 120.0, 25)
    sample = xi_q(metric, 1, lam, 4.0, grid=grid, m_max=40, modes=modes)
    b0, _ = b0_volume_oracle(metric, 1, grid.L)
    rep = weyl_probe(sample, b0)
    assert abs(rep.slope - rep.slope_target) < 0.15 * rep.slope_target
    assert rep.coefficient_rel_err < 0.20
    refined = xi_q(metric, 1, np.geomspace(12.0, 120.0, 75), 4.0, grid=grid,
                   m_max=40, modes=modes)
    jump_refined = float(np.max(np.abs(np.diff(refined.values))))
    assert jump_refined < 0.9 * rep.max_jump
    elapsed = time.time() - t0
    assert elapsed < 600.0
    _line(7, "Weyl growth of the mollified scattering phase", elapsed, 600,
          f"slope {rep.slope:.3f} (target 1), coeff rel {rep.coefficient_rel_err:.3%}, "
          f"jumps {rep.max_jump:.2f} -> {jump_refined:.2f}")


def test_criterion_8_functional_calculus():
    t0 = time.time()
    rng = np.random.default_rng(3)
    H = rng.standard_normal((6, 6))
    H = 0.5 * (H + H.T)
    H = H / np.max(np.abs(np.linalg.eigvalsh(H))) * 2.0
    f = SmoothFunction.bump(-2.8, 2.8)
    exact = apply_function(H, f, "spectral")
    errs = {N: float(np.max(np.abs(
        apply_function(H, f, "helffer_sjostrand", N=N) - exact)))
        for N in (2, 4)}
    assert errs[2] / errs[4] >= 10.0
    # quantization trace identity within the O(h) envelope over the h-sweep
    sym = lambda r, p: np.exp(-((r - np.pi) ** 2) / 0.5 - p**2 / 0.18)
    discs = {}
    for h in (0.2, 0.1, 0.05):
        qz = quantize_radial(sym, h, n_grid=128)
        discs[h] = qz.trace_discrepancy
        assert qz.trace_discrepancy <= 1e-6 * max(1.0, abs(qz.trace)) * (h / 0.2)
    elapsed = time.time() - t0
    assert elapsed < 60.0
    _line(8, "Helffer-Sjostrand order gain and quantization trace identity",
          elapsed, 60,
          f"HS err N2/N4 = {errs[2] / errs[4]:.1f}x >= 10x, trace gaps "
          + ", ".join(f"{discs[h]:.1e}" for h in (0.2, 0.1, 0.05)))


def test_criterion_9_schatten_determinants():
    t0 = time.time()
    rng = np.random.default_rng(99)
    worst = -np.inf
    for _ in range(1000):
        A = rng.standard_normal((5, 5))
        B = rng.standard_normal((5, 5))
        q = rng.uniform(1.0, 5.0)
        th = rng.uniform(0.15, 0.85)
        margin = schatten_norm(A @ B, q) \
            - schatten_norm(A, q / th) * schatten_norm(B, q / (1.0 - th))
        worst = max(worst, margin)
    assert worst <= 1e-10
    A = 0.3 * (rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6)))
    worst_det = 0.0
    for q in (1, 2, 3, 4):
        gap = abs(reg_determinant(A, q) - reg_determinant_eig_oracle(A, q))
        worst_det = max(worst_det, gap)
    assert worst_det < 1e-10
    nil = np.zeros((4, 4))
    nil[0, 1], nil[2, 3] = 2.0, -1.0
    assert abs(reg_determinant(nil, 2) - 1.0) < 1e-12
    assert abs(reg_determinant(np.zeros((3, 3)), 3) - 1.0) == 0.0
    elapsed = time.time() - t0
    assert elapsed < 30.0
    _line(9, "Schatten Hoelder triples and regularized determinants", elapsed,
          30, f"worst Hoelder margin {worst:.1e}, det oracle gap "
          f"{worst_det:.1e} < 1e-10")
