"""Transport equations along the phase characteristics: amplitudes a0, a1, b0.

The amplitude sweep transports along the Hamiltonian projections: since the
phase solves Hamilton-Jacobi, the characteristic through a tableau node is
the base projection of the flow started at (x, d_x phi(x, xi)), whose momenta
are tabulated exactly at the nodes.  The public transport_flow op integrates
the literal interpolated-gradient ODE and is cross-checked against that
projection.  Infinite quadratures close with exponential tail fits (decay
rate 2 rho is bounded below on the Gamma regions).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import numerics as nm
from .eikonal import PhaseFunction, _axis_derivative
from .errors import (ConstructionFailure, DomainFailure, InvalidArgument,
                     NumericFailure, SupportFailure)
from .flow import FlowTolerances, batch_integrate
from .model import CutoffProfile, MetricFamily, RegionSpec

_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# characteristic flows
# ---------------------------------------------------------------------------

@dataclass
class CharacteristicBundle:
    """Sampled characteristics (r_check, y_check) from a batch of nodes."""
    times: np.ndarray            # (nt,)
    r: np.ndarray                # (n, nt)
    y: np.ndarray                # (n, nt)
    rho: np.ndarray              # (n,)
    eta: np.ndarray              # (n,)
    inside: np.ndarray           # (n, nt) bool: clean in-grid samples


def _hamiltonian_characteristics(phase: PhaseFunction, horizon, n_samples=257,
                                 flow_tol: FlowTolerances = FlowTolerances()):
    """Project the flow from (x, d_x phi) at every tableau node."""
    grid = phase.grid
    R, Y, P, E = grid.mesh()
    states = np.stack([R, Y, phase.phi_r.ravel(), phase.phi_y.ravel()], axis=1)
    t_eval = np.linspace(0.0, horizon, n_samples)
    times, vals, _ = batch_integrate(phase.metric, states, phase.eps,
                                     (0.0, horizon), t_eval, flow_tol)
    r_t = vals[:, :, 0].T
    y_t = vals[:, :, 1].T
    inside = ((r_t <= grid.r[-1]) & (y_t >= grid.y[0]) & (y_t <= grid.y[-1]))
    inside[:, 0] = True
    return CharacteristicBundle(times=t_eval, r=r_t, y=y_t, rho=P, eta=E,
                                inside=inside)


def transport_flow(start, momenta, phase: PhaseFunction, horizon=8.0,
                   n_samples=257, rtol=1e-10, atol=1e-12):
    """Integrate d r/dt = 2 phi_r, d y/dt = e^{-2r} (d_eta g)(., d_y phi).

    The gradient tables are read through the node-exact interpolant; past the
    outer r edge of the tableau the deviation is frozen at the boundary value
    (it decays like e^{-r} there, and callers only use in-grid samples).
    Returns (times, r_check, y_check).
    """
    grid = phase.grid
    metric = phase.metric
    eps = phase.eps
    r0 = float(start[0])
    y0 = float(np.atleast_1d(start[1])[0])
    rho = float(momenta[0])
    eta = float(np.atleast_1d(momenta[1])[0])
    if not grid.contains(np.array([[r0, y0, rho, eta]]))[0]:
        raise DomainFailure("characteristic start outside the phase tableau")

    def rhs(t, z):
        pts = np.array([[z[0], z[1], rho, eta]])
        pr = phase.eval("phi_r", pts, clamp=True)[0]
        py = phase.eval("phi_y", pts, clamp=True)[0]
        b = float(metric.b_value(np.asarray(z[0]), np.asarray([z[1]]), eps))
        return [2.0 * pr, 2.0 * np.exp(-2.0 * z[0]) * b * py]

    sol = solve_ivp(rhs, (0.0, horizon), [r0, y0], method="DOP853",
                    t_eval=np.linspace(0.0, horizon, n_samples),
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericFailure(f"characteristic integration failed: {sol.message}")
    return sol.t, sol.y[0], sol.y[1]


# ---------------------------------------------------------------------------
# subprincipal symbol
# ---------------------------------------------------------------------------

def eval_subprincipal(pts, phase: PhaseFunction, metric: MetricFamily, eps=None,
                      clamp=False):
    """c_eps = d_r^2 phi + e^{-2r} g_eps(r, y, d_y) phi + e^{-r} (v-terms).

    pts: (N, 4) phase-space points inside the tableau.  Complex-valued when
    the first-order coefficients are complex; the tilde-v interpolation is
    v0 + eps (v1 - v0).
    """
    e = phase.eps if eps is None else eps
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    rr = phase.eval("phi_rr", pts, clamp=clamp)
    yy = phase.eval("phi_yy", pts, clamp=clamp)
    r, y = pts[:, 0], pts[:, 1]
    b = metric.b_value(r, y[:, None], e)
    c = rr + np.exp(-2.0 * r) * b * yy
    if not (metric.v0.is_zero() and metric.v1.is_zero()):
        x = np.exp(-r)
        pr = phase.eval("phi_r", pts, clamp=clamp)
        py = phase.eval("phi_y", pts, clamp=clamp)
        c = c.astype(complex)
        c += x * (np.asarray(metric.v_interp("d_r", x, y, e)) * pr
                  + np.asarray(metric.v_interp("d_y", x, y, e)) * x * py)
    return c


def _sample_c_along(bundle: CharacteristicBundle, phase, metric, eps):
    """c_eps sampled along the characteristics; outside samples are zeroed."""
    n, nt = bundle.r.shape
    mask = bundle.inside.ravel()
    pts = np.empty((int(mask.sum()), 4))
    pts[:, 0] = bundle.r.ravel()[mask]
    pts[:, 1] = bundle.y.ravel()[mask]
    pts[:, 2] = np.repeat(bundle.rho, nt)[mask]
    pts[:, 3] = np.repeat(bundle.eta, nt)[mask]
    vals = eval_subprincipal(pts, phase, metric, eps=eps, clamp=True)
    c = np.zeros(n * nt, dtype=vals.dtype)
    c[mask] = vals
    return c.reshape(n, nt)


def _tail_closed_integral(times, samples, inside):
    """int_0^inf of exponentially decaying samples known on the flagged range.

    Returns (integral (n,), running integral (n, nt), tail corrections (n,)).
    """
    from scipy.integrate import cumulative_simpson

    n, nt = samples.shape
    clipped = np.where(inside, samples, 0.0)
    running = cumulative_simpson(clipped, x=times, axis=1, initial=0.0)
    total = running[:, -1].copy()
    tails = np.zeros(n)
    bad = []
    global_scale = float(np.max(np.abs(np.where(inside, samples, 0.0)))) or 1.0
    for i in range(n):
        idx = np.nonzero(inside[i])[0]
        if len(idx) < 6:
            continue
        last = idx[-1]
        seg = slice(max(idx[0], last - max(8, len(idx) // 4)), last + 1)
        vals = samples[i, seg]
        ts = times[seg]
        scale = np.max(np.abs(samples[i, idx]))
        if scale < 1e3 * _EPS or abs(samples[i, last]) < 1e-13 * max(scale, 1.0):
            continue
        mask = np.abs(vals) > 1e-13 * scale
        if mask.sum() < 4:
            continue
        sl, _ = np.polyfit(ts[mask], np.log(np.abs(vals[mask])), 1)
        if sl >= -1e-6:
            # genuine non-decay: a long in-grid window whose integrand stays
            # at the global scale (short edge windows just skip the tail)
            if len(idx) >= nt // 2 and abs(samples[i, last]) > 1e-4 * global_scale:
                bad.append(i)
            continue
        tails[i] = samples[i, last] / (-sl)
        total[i] += tails[i]
    if bad:
        raise ConstructionFailure(
            f"{len(bad)} characteristic integrands do not decay on the "
            "tableau; extend the radial span or the horizon",
            worst_point=bad[0])
    return total, running, tails


def _closed_integral_complex(times, samples, inside):
    if np.iscomplexobj(samples):
        tr, rr_, _ = _tail_closed_integral(times, samples.real, inside)
        ti, ri, tails = _tail_closed_integral(times, samples.imag, inside)
        return tr + 1j * ti, rr_ + 1j * ri, tails
    return _tail_closed_integral(times, samples, inside)


# ---------------------------------------------------------------------------
# amplitude fields
# ---------------------------------------------------------------------------

@dataclass
class AmplitudeField:
    """a^(0) (and optionally a^(1)) on the phase tableau grid."""
    grid: object
    eps: float
    a0: np.ndarray
    a1: Optional[np.ndarray]
    c_table: np.ndarray
    tail_integral: np.ndarray
    phase: PhaseFunction
    metric: MetricFamily
    _interp: dict = field(default_factory=dict, repr=False)

    def interpolator(self, which="a0"):
        """Node-exact interpolant of the deviation (a0 - 1, a1, or P a0)."""
        if which not in self._interp:
            if which == "a0":
                data = self.a0 - 1.0
            elif which == "a1":
                data = self.a1
            elif which == "pa0":
                data = self.apply_operator()
            else:
                raise InvalidArgument(f"unknown amplitude table {which!r}")
            self._interp[which] = nm.LagrangeGridInterpolator(self.grid.axes, data)
        return self._interp[which]

    def decay_ratio(self):
        """sup |a0 - 1| e^r / <eta> over the grid."""
        R, _, _, E = np.meshgrid(*self.grid.axes, indexing="ij")
        w = np.sqrt(1.0 + E**2)
        return float(np.max(np.abs(self.a0 - 1.0) * np.exp(R) / w))

    def apply_operator(self, metric=None, eps=None):
        """P_eps applied to a0 by the symmetric second-order grid stencil."""
        metric = metric or self.metric
        e = self.eps if eps is None else eps
        hr, hy, _, _ = self.grid.spacing()
        a = self.a0
        a_rr = _second_central(a, 0, hr)
        a_yy = _second_central(a, 1, hy)
        R, Y, _, _ = np.meshgrid(*self.grid.axes, indexing="ij")
        b = metric.b_value(R, Y[..., None], e)
        out = -a_rr - np.exp(-2.0 * R) * b * a_yy
        if not (metric.v0.is_zero() and metric.v1.is_zero()):
            x = np.exp(-R)
            a_r = _axis_derivative(a, 0, hr)
            a_y = _axis_derivative(a, 1, hy)
            out = out.astype(complex)
            vc = np.asarray(metric.v_interp("const", x, Y, e))
            vr = np.asarray(metric.v_interp("d_r", x, Y, e))
            vy = np.asarray(metric.v_interp("d_y", x, Y, e))
            out += x * (vc * a + vr * a_r + vy * x * a_y)
        return out


def _second_central(values, axis, h):
    """Symmetric 3-point second derivative; one-sided 5-point rows at edges.

    The interior matches the spectral-model stencil; the boundary rows need
    genuinely one-sided weights (reusing the neighboring parabola would seed
    an O(1) relative error that the transported amplitudes inherit).
    """
    moved = np.moveaxis(values, axis, 0)
    out = np.empty_like(moved)
    out[1:-1] = (moved[2:] - 2.0 * moved[1:-1] + moved[:-2]) / h**2
    npts = moved.shape[0]
    edge = min(5, npts)
    wl = nm.fd_weights(0.0, h * np.arange(edge), 2)
    wr = nm.fd_weights(h * (edge - 1), h * np.arange(edge), 2)
    out[0] = np.tensordot(wl, moved[:edge], axes=(0, 0))
    out[-1] = np.tensordot(wr, moved[-edge:], axes=(0, 0))
    return np.moveaxis(out, 0, axis)


def amplitude_a(k, phase: PhaseFunction, metric: MetricFamily, eps=None,
                horizon=8.0, n_samples=257,
                flow_tol: FlowTolerances = FlowTolerances()) -> AmplitudeField:
    """Solve the transport hierarchy on the tableau.

    a0 = exp(int_0^inf c(x_check^t) dt); for k = 1 additionally the decaying
    solution of L a1 = -i P a0, i.e.
    a1 = i int_0^inf (P a0)(x_check^t) exp(int_0^t c) dt, with P a0 taken by
    the symmetric grid stencil and read along the characteristics.
    """
    if k not in (0, 1):
        raise InvalidArgument("amplitude order k must be 0 or 1")
    e = phase.eps if eps is None else eps
    grid = phase.grid
    bundle = _hamiltonian_characteristics(phase, horizon, n_samples, flow_tol)
    c_samples = _sample_c_along(bundle, phase, metric, e)
    total, running, tails = _closed_integral_complex(bundle.times, c_samples,
                                                     bundle.inside)
    a0 = np.exp(total).reshape(grid.shape)
    out = AmplitudeField(grid=grid, eps=e, a0=a0, a1=None,
                         c_table=c_samples[:, 0].reshape(grid.shape),
                         tail_integral=np.asarray(tails).reshape(grid.shape),
                         phase=phase, metric=metric)
    if k == 0:
        return out
    n, nt = bundle.r.shape
    pts = np.empty((n * nt, 4))
    pts[:, 0] = np.clip(bundle.r, grid.r[0], grid.r[-1]).ravel()
    pts[:, 1] = np.clip(bundle.y, grid.y[0], grid.y[-1]).ravel()
    pts[:, 2] = np.repeat(bundle.rho, nt)
    pts[:, 3] = np.repeat(bundle.eta, nt)
    pa0 = out.apply_operator()
    if np.iscomplexobj(pa0):
        re = nm.LagrangeGridInterpolator(grid.axes, pa0.real)(pts)
        im = nm.LagrangeGridInterpolator(grid.axes, pa0.imag)(pts)
        source = (re + 1j * im).reshape(n, nt)
    else:
        source = nm.LagrangeGridInterpolator(grid.axes, pa0)(pts).reshape(n, nt)
    integrand = source * np.exp(running)
    inner, _, _ = _closed_integral_complex(bundle.times, integrand, bundle.inside)
    # sign fixed by the transport equation L a1 = -i P a0 through the
    # variation-of-constants formula (the decaying solution)
    out.a1 = (1j * inner).reshape(grid.shape)
    return out


def transport_residual(field_: AmplitudeField, order=0, r_guard=2.5):
    """L_eps a + (i P a0 for order 1) on interior grid nodes.

    w_eps = (2 phi_r, 2 e^{-2r} b phi_y); amplitude derivatives by 4th-order
    grid stencils.  Nodes within r_guard of the outer radial edge are
    excluded: their characteristics leave the tableau almost immediately, so
    the amplitudes there are dominated by the tail closure rather than the
    transported integrals and carry no certifiable residual.
    """
    grid = field_.grid
    phase = field_.phase
    hr, hy, _, _ = grid.spacing()
    a = field_.a0 if order == 0 else field_.a1
    if a is None:
        raise InvalidArgument("order-1 residual needs a1 (build with k = 1)")

    def ddx(arr, axis, h):
        if np.iscomplexobj(arr):
            return (_axis_derivative(arr.real, axis, h)
                    + 1j * _axis_derivative(arr.imag, axis, h))
        return _axis_derivative(arr, axis, h)

    a_r = ddx(a, 0, hr)
    a_y = ddx(a, 1, hy)
    R, Y, P, E = np.meshgrid(*grid.axes, indexing="ij")
    pts = np.stack([R.ravel(), Y.ravel(), P.ravel(), E.ravel()], axis=1)
    c = eval_subprincipal(pts, phase, field_.metric,
                          eps=field_.eps).reshape(grid.shape)
    b = field_.metric.b_value(R, Y[..., None], field_.eps)
    res = (2.0 * phase.phi_r * a_r
           + 2.0 * np.exp(-2.0 * R) * b * phase.phi_y * a_y + c * a)
    if order == 1:
        res = res + 1j * field_.apply_operator()
    top = int(np.searchsorted(grid.r, grid.r[-1] - r_guard))
    top = max(3, min(top, grid.shape[0] - 2))
    interior = (slice(2, top),
                slice(2, -2) if grid.shape[1] >= 5 else slice(None),
                slice(None), slice(None))
    return res[interior]


# ---------------------------------------------------------------------------
# the factorization symbol b0
# ---------------------------------------------------------------------------

def default_target_symbol(profile: CutoffProfile, metric: MetricFamily):
    """A smooth symbol supported in Gamma_5^+ (the level-6 ladder cutoff).

    Signature sigma(r, y, rho, eta) with 1-D arrays (n = 2 lane).
    """
    if profile.ladder.levels < 6:
        raise InvalidArgument("need a 6-level ladder for a Gamma_5-supported symbol")

    def sigma(r, y, rho, eta):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float)).reshape(len(r), -1)
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float)).reshape(len(r), -1)
        return profile.chi(6, r, y, rho, eta, metric)

    return sigma


@dataclass
class SymbolField:
    grid: object
    values: np.ndarray
    support_ok: bool
    outside_max: float


def b0_evaluation_grid(ladder, phase: PhaseFunction, nodes=(21, 9, 17, 17)):
    """A momentum-refined grid spanning a fattened Gamma_4^+ window.

    The tableau's own rho axis is too coarse to resolve the nested momentum
    windows, so the factorization symbol is evaluated on this finer mesh
    through the phase/amplitude interpolants.
    """
    from .eikonal import PhaseGrid

    R4, e4, w4, om4 = ladder.level(4)
    nr, ny, nrho, neta = nodes
    r_hi = phase.grid.r[-1]
    r = np.linspace(min(R4 * 0.98, r_hi - 0.5), r_hi, nr)
    pad_y = 0.1 * (om4[0][1] - om4[0][0])
    y = np.linspace(om4[0][0] - pad_y, om4[0][1] + pad_y, ny)
    rho = np.linspace(np.sqrt(max(1.0 - 1.4 * w4 - e4, 1e-3)),
                      np.sqrt(1.0 + 1.4 * w4), nrho)
    # stay inside the tableau with a margin for the Jacobian differencing
    eta_max = min(np.exp(r[0]) * np.sqrt(1.4 * e4), 0.85 * phase.grid.eta[-1])
    eta = np.linspace(-eta_max, eta_max, neta)
    return PhaseGrid(r=r, y=y, rho=rho, eta=eta)


def amplitude_b0(sigma: Callable, a0_field: AmplitudeField, phase: PhaseFunction,
                 gamma4: RegionSpec, eval_grid=None, support_tol=1e-12,
                 ladder=None) -> SymbolField:
    """conj(b0)(x, xi) = sigma(x, theta(x, x, xi)) a0^{-1} |det d_xi theta|.

    theta(x, x, xi) = (phi_r, phi_y)(x, xi) read through the tableau
    interpolants on a momentum-refined evaluation grid; the Jacobian is a
    central difference in (rho, eta).  Support must stay inside Gamma_4^+.
    """
    grid = a0_field.grid
    metric = a0_field.metric
    if eval_grid is None:
        if ladder is None:
            raise InvalidArgument("amplitude_b0 needs eval_grid or ladder")
        eval_grid = b0_evaluation_grid(ladder, phase)
    R, Y, P, E = eval_grid.mesh()
    pts = np.stack([R, Y, P, E], axis=1)

    def theta_at(drho=0.0, deta=0.0):
        q = pts.copy()
        q[:, 2] += drho
        q[:, 3] += deta
        return (phase.eval("phi_r", q, clamp=True),
                phase.eval("phi_y", q, clamp=True))

    th_r, th_y = theta_at()
    hrho = 0.5 * (eval_grid.rho[1] - eval_grid.rho[0])
    heta = 0.5 * (eval_grid.eta[1] - eval_grid.eta[0])
    rp, yp = theta_at(drho=hrho)
    rm, ym = theta_at(drho=-hrho)
    re_, ye = theta_at(deta=heta)
    rme, yme = theta_at(deta=-heta)
    det = (((rp - rm) / (2 * hrho)) * ((ye - yme) / (2 * heta))
           - ((re_ - rme) / (2 * heta)) * ((yp - ym) / (2 * hrho)))
    a0_here = 1.0 + a0_field.interpolator("a0")(pts)
    sig = sigma(R, Y, th_r, th_y)
    vals = np.conj(sig * a0_here ** (-1) * np.abs(det))
    member = gamma4.contains(R, Y[:, None], P, E[:, None], metric)
    outside = np.abs(vals)[~member]
    outside_max = float(np.max(outside)) if outside.size else 0.0
    ok = outside_max <= support_tol
    if not ok:
        raise SupportFailure(
            f"b0 leaks outside Gamma_4^+: max magnitude {outside_max:.3e}")
    return SymbolField(grid=eval_grid, values=vals.reshape(eval_grid.shape),
                       support_ok=ok, outside_max=outside_max)
