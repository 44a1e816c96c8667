import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperscat import numerics as nm


def test_smoothstep_endpoints():
    assert nm.smoothstep(np.array([-1.0, 0.0]))  .tolist() == [0.0, 0.0]
    assert nm.smoothstep(np.array([1.0, 2.0])).tolist() == [1.0, 1.0]


@given(st.floats(min_value=0.05, max_value=0.95))
@settings(max_examples=40, deadline=None)
def test_smoothstep_derivatives_match_fd(x):
    x = np.asarray([x])
    h = 1e-6
    fd1 = (nm.smoothstep(x + h) - nm.smoothstep(x - h)) / (2 * h)
    assert abs(fd1[0] - nm.smoothstep(x, 1)[0]) < 1e-7
    h2 = 1e-5
    fd2 = (nm.smoothstep(x + h2) - 2 * nm.smoothstep(x) + nm.smoothstep(x - h2)) / h2**2
    assert abs(fd2[0] - nm.smoothstep(x, 2)[0]) < 1e-4


def test_theta_cutoff_support():
    s = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    th = nm.theta_cutoff(s)
    assert th[0] == 1.0 and th[2] == 1.0
    assert th[4] == 0.0 and th[5] == 0.0
    assert 0.0 < th[3] < 1.0


def test_fd_weights_polynomial_exactness():
    nodes = 0.1 * np.arange(7)
    for order in (1, 2, 3):
        w = nm.fd_weights(0.0, nodes, order)
        for deg in range(7):
            exact = 0.0
            if deg == order:
                exact = float(np.prod(np.arange(1, order + 1)))
            assert np.dot(w, nodes**deg) == pytest.approx(exact, abs=1e-8)


def test_one_sided_derivative_accuracy():
    val = nm.one_sided_derivative(np.exp, 3, 0.02, accuracy=6)
    assert abs(val - 1.0) < 1e-7
    # exact on polynomials below order + accuracy
    val2 = nm.one_sided_derivative(lambda x: x**4 - 2 * x**2, 2, 0.05)
    assert abs(val2 - (-4.0)) < 1e-9


def test_cheb_family_derivatives():
    fam = nm.ChebFamily(lambda e: np.exp(0.8 * e) * np.sin(1.0 + 2.0 * e), degree=40)
    for e in (0.1, 0.5, 0.9):
        exact = (0.8 * np.sin(1 + 2 * e) + 2 * np.cos(1 + 2 * e)) * np.exp(0.8 * e)
        assert abs(fam.derivative(e, 1) - exact) < 1e-10


def test_cheb_antiderivative_family():
    fam = nm.ChebFamily(lambda e: np.cos(3.0 * e), degree=40)
    anti = fam.antiderivative_family()
    for e in (0.0, 0.3, 1.0):
        assert abs(anti(e) - np.sin(3.0 * e) / 3.0) < 1e-12


def test_lagrange_interpolator_node_exact_and_order():
    axes = (np.linspace(0, 1, 9), np.linspace(-1, 1, 7))
    X, Y = np.meshgrid(*axes, indexing="ij")
    vals = np.sin(2 * X) * np.cos(Y)
    interp = nm.LagrangeGridInterpolator(axes, vals)
    # node-exact
    pts = np.array([[axes[0][3], axes[1][5]], [axes[0][0], axes[1][6]]])
    out = interp(pts)
    assert np.allclose(out, [vals[3, 5], vals[0, 6]], atol=1e-14)
    # structural zero on a grid plane survives off-node queries in other axes
    vals0 = vals.copy()
    vals0[:, 3] = 0.0
    interp0 = nm.LagrangeGridInterpolator(axes, vals0)
    q = np.array([[0.123, axes[1][3]], [0.771, axes[1][3]]])
    assert np.max(np.abs(interp0(q))) == 0.0
    # local-cubic convergence
    errs = []
    for n in (9, 17):
        ax = (np.linspace(0, 1, n), np.linspace(-1, 1, n))
        Xf, Yf = np.meshgrid(*ax, indexing="ij")
        it = nm.LagrangeGridInterpolator(ax, np.sin(2 * Xf) * np.cos(Yf))
        qs = np.random.default_rng(0).uniform([0.1, -0.9], [0.9, 0.9], size=(64, 2))
        errs.append(np.max(np.abs(it(qs) - np.sin(2 * qs[:, 0]) * np.cos(qs[:, 1]))))
    assert errs[1] < errs[0] / 8.0


def test_exponential_tail_fit():
    t = np.linspace(3.0, 10.0, 24)
    vals = 2.5 + 0.8 * np.exp(-1.3 * t)
    a, err, rate = nm.fit_exponential_tail(t, vals)
    assert abs(a - 2.5) < 1e-6
    assert abs(rate - 1.3) < 0.05
    # converged sequence short-circuits
    a2, err2, _ = nm.fit_exponential_tail(t, np.full_like(t, 7.0))
    assert a2 == 7.0 and err2 == 0.0


def test_exponential_tail_integral():
    t = np.linspace(0.0, 12.0, 400)
    vals = 0.7 * np.exp(-2.0 * t)
    est, err = nm.exponential_tail_integral(t, vals)
    exact = 0.7 * np.exp(-2.0 * 12.0) / 2.0
    assert abs(est - exact) < 1e-12 + 0.1 * exact
