import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperscat import numerics as nm
from hyperscat.epscalc import QBracketConfig
from hyperscat.errors import InvalidArgument, UnsupportedModel
from hyperscat.model import (CutoffProfile, LadderSpec, PhasePoint, RegionSpec,
                             angular, cutoff_chi, eval_symbol, family_from_name,
                             pure_hyperbolic, radial, region_membership,
                             regularized_volume)


# ---------------------------------------------------------------------------
# symbol
# ---------------------------------------------------------------------------

def test_symbol_examples():
    m = pure_hyperbolic()
    assert eval_symbol(PhasePoint.make(0.0, 0.0, 1.0, 0.0), m).value == 1.0
    p = eval_symbol(PhasePoint.make(np.log(2.0), 0.0, 0.6, 1.0), m).value
    assert p == pytest.approx(0.61, abs=1e-15)
    m2 = radial(c=1.0)
    p2 = eval_symbol(PhasePoint.make(0.0, 0.0, 0.0, 1.0, eps=1.0), m2).value
    assert p2 == pytest.approx(2.0, abs=1e-15)


def test_symbol_nonfinite_rejected():
    with pytest.raises(InvalidArgument):
        PhasePoint.make(np.inf, 0.0, 1.0, 0.0)


@given(st.floats(1.5, 4.0), st.floats(-1.0, 1.0), st.floats(-1.2, 1.2),
       st.floats(-3.0, 3.0), st.floats(0.05, 0.95))
@settings(max_examples=25, deadline=None)
def test_symbol_jet_matches_fd(r, y, rho, eta, eps):
    m = angular(c=0.4, kappa=0.3)
    pt = PhasePoint.make(r, y, rho, eta, eps)
    jet = eval_symbol(pt, m)

    def val(dr=0.0, dy=0.0, drho=0.0, deta=0.0, de=0.0):
        q = PhasePoint.make(r + dr, y + dy, rho + drho, eta + deta, eps + de)
        return eval_symbol(q, m).value

    h = 1e-6
    fd = np.array([(val(dr=h) - val(dr=-h)), (val(dy=h) - val(dy=-h)),
                   (val(drho=h) - val(drho=-h)), (val(deta=h) - val(deta=-h)),
                   (val(de=h) - val(de=-h))]) / (2 * h)
    assert np.max(np.abs(fd - jet.grad)) < 2e-7 * (1.0 + np.max(np.abs(jet.grad)))
    h2 = 1e-4
    fd_rr = (val(dr=h2) - 2 * val() + val(dr=-h2)) / h2**2
    fd_ry = (val(dr=h2, dy=h2) - val(dr=h2, dy=-h2)
             - val(dr=-h2, dy=h2) + val(dr=-h2, dy=-h2)) / (4 * h2**2)
    fd_ee = (val(de=h2) - 2 * val() + val(de=-h2)) / h2**2
    scale = 1.0 + np.max(np.abs(jet.hess))
    assert abs(fd_rr - jet.hess[0, 0]) < 2e-6 * scale
    assert abs(fd_ry - jet.hess[0, 1]) < 2e-6 * scale
    assert abs(fd_ee - jet.hess[4, 4]) < 2e-6 * scale


@given(st.sampled_from([2.0, 1.0 / 3.0]), st.floats(0.5, 4.0),
       st.floats(-1.0, 1.0), st.floats(-4.0, 4.0), st.floats(0.0, 1.0))
@settings(max_examples=25, deadline=None)
def test_homogeneity_in_eta(s, r, y, eta, eps):
    m = angular(c=0.3, kappa=0.0)
    g1 = m.g_value(np.asarray(r), np.asarray([y]), np.asarray([s * eta]), eps)
    g0 = m.g_value(np.asarray(r), np.asarray([y]), np.asarray([eta]), eps)
    assert g1 == pytest.approx(s**2 * g0, rel=1e-13, abs=1e-13)


def test_ellipticity_and_matching():
    m = radial(c=1.0, kappa=0.0)
    r = np.linspace(0.0, 10.0, 41)
    y = np.zeros((41, 1))
    assert m.check_ellipticity(r, y)
    # g_eps - g_0 = O(e^{-r}) |eta|^2
    for eps in (0.5, 1.0):
        diff = np.abs(m.b_value(r, y, eps) - m.b_value(r, y, 0.0))
        assert np.all(diff <= eps * 1.0 * np.exp(-r) + 1e-15)


def test_kappa_support_exact():
    m = radial(c=1.0, kappa=0.5)
    r_supp = m.perturbation_support_radius()
    assert r_supp == pytest.approx(4.0)
    r = np.array([r_supp + 1e-9, r_supp + 1.0, 20.0])
    y = np.zeros((3, 1))
    assert np.all(m.b_value(r, y, 1.0) == m.b_value(r, y, 0.0))


def test_family_lookup():
    assert family_from_name("pure-hyperbolic").name == "pure-hyperbolic"
    with pytest.raises(InvalidArgument):
        family_from_name("saddle")
    with pytest.raises(InvalidArgument):
        angular(c=1.5)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

def _upsilon(sign="+", R=4.0, w=0.2, delta=0.3):
    return RegionSpec(kind=f"Upsilon{sign}", R=R, w=w, omega=((-1.0, 1.0),),
                      delta=delta)


def test_region_membership_examples():
    m = pure_hyperbolic()
    up = _upsilon("+")
    dn = _upsilon("-")
    p = PhasePoint.make(up.R + 1.0, 0.0, 1.0, 0.0)
    assert region_membership(p, up, m)
    p2 = PhasePoint.make(up.R + 1.0, 0.0, -1.0, 0.0)
    assert not region_membership(p2, up, m)
    assert region_membership(p2, dn, m)
    # boundary: p0 = 1 + w exactly is excluded (open interval); w = 0.21
    # makes the boundary momentum rho = 1.1 exactly representable
    upb = _upsilon("+", w=0.21)
    p3 = PhasePoint.make(upb.R + 1.0, 0.0, 1.1, 0.0)
    assert p3.rho**2 >= 1.0 + upb.w
    assert not region_membership(p3, upb, m)


def test_region_validation():
    with pytest.raises(InvalidArgument):
        RegionSpec(kind="Upsilon+", R=1.0, w=0.7, omega=((-1, 1),))
    with pytest.raises(InvalidArgument):
        RegionSpec(kind="Upsilon+", R=1.0, w=0.2, omega=((-1, 1),), delta=2.0)
    with pytest.raises(InvalidArgument):
        RegionSpec(kind="Gamma+", R=1.0, w=0.2, omega=((-1, 1),), eps_area=-1.0)


def test_gamma_subset_upsilon(ladder, radial_metric):
    gam = ladder.gamma_region(2)
    ups = RegionSpec(kind="Upsilon+", R=gam.R, w=gam.w, omega=gam.omega,
                     delta=0.3)
    rng = np.random.default_rng(5)
    from hyperscat.flow import sample_region
    pts = sample_region(gam, radial_metric, 50, rng)
    ok = ups.contains(pts[:, 0], pts[:, 1:2], pts[:, 2], pts[:, 3:4],
                      radial_metric)
    assert np.all(ok)


@given(st.floats(4.05, 8.0), st.floats(-0.95, 0.95), st.floats(-2.0, 2.0),
       st.floats(-500.0, 500.0))
@settings(max_examples=60, deadline=None)
def test_splitting_property(r, y, rho, eta):
    # every point with p0 in I(w), r > R, y in Omega lies in Upsilon+ or Upsilon-
    m = pure_hyperbolic()
    up, dn = _upsilon("+"), _upsilon("-")
    p0 = rho**2 + np.exp(-2 * r) * eta**2
    if not (1 - up.w < p0 < 1 + up.w):
        return
    pt = PhasePoint.make(r, y, rho, eta)
    assert region_membership(pt, up, m) or region_membership(pt, dn, m)


# ---------------------------------------------------------------------------
# cutoffs
# ---------------------------------------------------------------------------

def test_cutoff_values(ladder, radial_metric):
    prof = CutoffProfile(ladder)
    m = radial_metric
    # deep interior of Gamma_3: r safely above R_3, rho ~ 1, eta = 0
    R3 = ladder.level(3)[0]
    inside = PhasePoint.make(R3 + 2.0, 0.0, 1.0, 0.0)
    assert cutoff_chi(inside, prof, 3, m) == pytest.approx(1.0, abs=1e-15)
    # outside Gamma_2 (r below R_2's ramp) -> 0
    R1 = ladder.level(1)[0]
    outside = PhasePoint.make(R1 - 0.5, 0.0, 1.0, 0.0)
    assert cutoff_chi(outside, prof, 3, m) == 0.0
    with pytest.raises(InvalidArgument):
        cutoff_chi(inside, prof, 1, m)


def test_cutoff_ramp_midpoint(ladder, radial_metric):
    prof = CutoffProfile(ladder)
    R2, R3 = ladder.level(2)[0], ladder.level(3)[0]
    mid = 0.5 * (R2 + R3)
    val = cutoff_chi(PhasePoint.make(mid, 0.0, 1.0, 0.0), prof, 3, radial_metric)
    assert 0.0 < val < 1.0
    # FD gradient along r stays finite under step refinement
    for h in (1e-3, 1e-4):
        lo = cutoff_chi(PhasePoint.make(mid - h, 0.0, 1.0, 0.0), prof, 3,
                        radial_metric)
        hi = cutoff_chi(PhasePoint.make(mid + h, 0.0, 1.0, 0.0), prof, 3,
                        radial_metric)
        grad = (hi - lo) / (2 * h)
        assert np.isfinite(grad) and abs(grad) < 1e3


def test_rho_window_on_gamma(ladder, radial_metric):
    # on Gamma_k: (1 - w_k - eps_k)^{1/2} <= rho <= (1 + w_k)^{1/2}
    rng = np.random.default_rng(11)
    from hyperscat.flow import sample_region
    for k in (2, 4):
        gam = ladder.gamma_region(k)
        pts = sample_region(gam, radial_metric, 40, rng)
        _, ek, wk, _ = ladder.level(k)
        assert np.all(pts[:, 2] >= np.sqrt(1 - wk - ek) - 1e-12)
        assert np.all(pts[:, 2] <= np.sqrt(1 + wk) + 1e-12)


# ---------------------------------------------------------------------------
# regularized volume
# ---------------------------------------------------------------------------

def test_volume_zero_for_unperturbed():
    # q = 1 is an exact difference of identical values; q >= 2 subtracts
    # FD derivatives of a constant family, leaving pure rounding noise
    v1 = regularized_volume(pure_hyperbolic(), 1, 6.0)
    assert v1.value == 0.0 and v1.tail_estimate == 0.0
    for q in (2, 3):
        v = regularized_volume(pure_hyperbolic(), q, 6.0)
        assert abs(v.value) < 1e-7
        assert v.tail_estimate == 0.0


def test_volume_matches_substitution_oracle():
    # independent quadrature in u = e^{-r} (panelized Gauss-Legendre)
    m = radial(c=1.0, kappa=2.0)
    v = regularized_volume(m, 1, 8.0)
    acc = 0.0
    edges = np.exp(-np.array([8.0, 1.0, 0.75, 0.5, 0.25, 0.0]))
    for a, b in zip(edges[:-1], edges[1:]):
        u, w = nm.gauss_legendre(a, b, 200)
        rr = -np.log(u)
        th = nm.theta_cutoff(2.0 * rr)
        acc += np.sum(w * ((1.0 + u * th**2) ** -0.5 - 1.0) / u**2)
    oracle = 2.0 * np.pi * acc
    assert v.value == pytest.approx(oracle, abs=1e-9)
    assert v.tail_estimate == 0.0  # kappa kills the tail exactly


def test_volume_q2_smaller_and_tails():
    m0 = radial(c=1.0, kappa=0.0)
    v1 = regularized_volume(m0, 1, 8.0)
    v2 = regularized_volume(m0, 2, 8.0)
    assert abs(v2.value) < abs(v1.value)
    assert np.isinf(v1.tail_estimate)      # q < n: no decay without the cutoff
    assert np.isfinite(v2.tail_estimate)
    assert v1.route_gap < 1e-8 and v2.route_gap < 1e-8


def test_volume_validation():
    with pytest.raises(InvalidArgument):
        regularized_volume(radial(), 0, 4.0)
    with pytest.raises(InvalidArgument):
        regularized_volume(radial(), 1, np.inf)
