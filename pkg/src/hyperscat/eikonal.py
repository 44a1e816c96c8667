"""Generating function, outgoing phase, and the Kuranishi mean-value map.

The phase is built as the large-time limit of S(t) - t rho^2 along inverted
characteristics.  Because S is a generating function of the flow, the first
partials of the phase are byproducts of the momentum-map inversion (the
limits of the inverted momenta and of the transported base point), so the
Hamilton-Jacobi residual of the tabulated phase is at rounding level; only
second partials rely on finite differences across the grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from . import numerics as nm
from .errors import (ConstructionFailure, DomainFailure, InvalidArgument,
                     NumericFailure)
from .flow import FlowTolerances, batch_integrate, invert_momentum_map_batch
from .model import LadderSpec, MetricFamily

_EPS = np.finfo(float).eps


# ---------------------------------------------------------------------------
# generating function samples
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratingFnSample:
    """S^+(t) composed with the inverse momentum map, with its gradient."""
    t: float
    value: float
    grad_x: np.ndarray        # (d rho~, d eta~) = (d_r S, d_y S)
    grad_xi: np.ndarray       # (d_rho S, d_eta S) = transported (r^t, y^t)
    euler_defect: float
    eps: float

    @property
    def gradient(self):
        return np.concatenate((self.grad_x, self.grad_xi))


def generating_function(t, base, momenta, metric: MetricFamily, eps=0.0,
                        flow_tol: FlowTolerances = FlowTolerances(),
                        n_quad=96) -> GeneratingFnSample:
    """Evaluate S^+(t, r, y, rho, eta) along the flow of the inverted momenta.

    The quadratic angular form makes the Euler-identity integrand vanish
    identically; it is still quadrature-sampled and reported as a defect.
    """
    r0, y0 = float(base[0]), np.atleast_1d(np.asarray(base[1], dtype=float))
    rho, eta = float(momenta[0]), np.atleast_1d(np.asarray(momenta[1], dtype=float))
    d = metric.d
    if t == 0.0:
        val = r0 * rho + float(y0 @ eta)
        return GeneratingFnSample(t=0.0, value=val,
                                  grad_x=np.concatenate(([rho], eta)),
                                  grad_xi=np.concatenate(([r0], y0)),
                                  euler_defect=0.0, eps=eps)
    mom = invert_momentum_map_batch(np.asarray([r0]), y0[None, :],
                                    np.concatenate(([rho], eta))[None, :],
                                    float(t), metric, eps=eps, flow_tol=flow_tol)
    state = np.concatenate(([r0], y0, mom[0]))[None, :]
    t_eval = np.linspace(0.0, t, n_quad)
    times, vals, _ = batch_integrate(metric, state, eps, (0.0, t), t_eval, flow_tol)
    w = 2 + 2 * d
    traj = vals[:, 0, :w]
    r_s, y_s = traj[:, 0], traj[:, 1:1 + d]
    eta_s = traj[:, 2 + d:]
    p_init = float(traj[0, 1 + d] ** 2
                   + np.exp(-2.0 * r_s[0]) * metric.g_value(r_s[0], y_s[0], eta_s[0], eps))
    # Euler defect integrand e^{-2r}(eta . d_eta g - 2 g); identically 0 for
    # quadratic angular forms, kept as a numerical guard
    b = metric.b_value(r_s, y_s, eps)
    g_vals = b * np.sum(eta_s**2, axis=1)
    defect_integrand = np.exp(-2.0 * r_s) * (2.0 * g_vals - 2.0 * g_vals)
    defect = float(np.trapezoid(defect_integrand, times))
    value = float(traj[-1, 0] * rho + traj[-1, 1:1 + d] @ eta - t * p_init - defect)
    return GeneratingFnSample(t=float(t), value=value,
                              grad_x=mom[0].copy(),
                              grad_xi=np.concatenate(([traj[-1, 0]], traj[-1, 1:1 + d])),
                              euler_defect=abs(defect), eps=eps)


# ---------------------------------------------------------------------------
# phase grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhaseGrid:
    """Tensor-product grid in (r, y, rho, eta) covering Gamma_1^+ (n = 2)."""
    r: np.ndarray
    y: np.ndarray
    rho: np.ndarray
    eta: np.ndarray

    @staticmethod
    def from_ladder(ladder: LadderSpec, metric: MetricFamily, nodes=(25, 5, 5, 9),
                    r_span=7.0, rho_pad=0.01):
        R1, e1, w1, om1 = ladder.level(1)
        nr, ny, nrho, neta = nodes
        r = np.linspace(R1 + 0.05, R1 + r_span, nr)
        y = np.linspace(om1[0][0], om1[0][1], ny)
        rho = np.linspace(np.sqrt(max(1.0 - w1 - e1, 1e-3)) - rho_pad,
                          np.sqrt(1.0 + w1) + rho_pad, nrho)
        beta_max = float(np.max(metric.beta.value(y)))
        eta_max = np.exp(r[0]) * np.sqrt(e1 / beta_max) * 0.999
        if neta % 2 == 0:
            neta += 1
        eta = np.linspace(-eta_max, eta_max, neta)
        return PhaseGrid(r=r, y=y, rho=rho, eta=eta)

    @property
    def shape(self):
        return (len(self.r), len(self.y), len(self.rho), len(self.eta))

    @property
    def axes(self):
        return (self.r, self.y, self.rho, self.eta)

    def mesh(self):
        """Flattened meshgrid columns (N,) for r, y, rho, eta."""
        R, Y, P, E = np.meshgrid(self.r, self.y, self.rho, self.eta, indexing="ij")
        return R.ravel(), Y.ravel(), P.ravel(), E.ravel()

    def spacing(self):
        return tuple(float(ax[1] - ax[0]) if len(ax) > 1 else 1.0
                     for ax in self.axes)

    def contains(self, pts, pad=0.0):
        ok = np.ones(len(pts), dtype=bool)
        for k, ax in enumerate(self.axes):
            ok &= (pts[:, k] >= ax[0] - pad) & (pts[:, k] <= ax[-1] + pad)
        return ok


def _axis_derivative(values, axis, h, order=1):
    """FD derivative along one axis of a 4-D array, 4th order inside,
    high-order one-sided at the boundary."""
    npts = values.shape[axis]
    if npts < 6:
        if npts < 3:
            return np.zeros_like(values)
        # fall back to dense stencil across the whole (short) axis
        out = np.zeros_like(values)
        moved = np.moveaxis(values, axis, 0)
        res = np.zeros_like(moved)
        xs = h * np.arange(npts)
        for i in range(npts):
            wgt = nm.fd_weights(xs[i], xs, order)
            res[i] = np.tensordot(wgt, moved, axes=(0, 0))
        return np.moveaxis(res, 0, axis)
    moved = np.moveaxis(values, axis, 0)
    res = np.empty_like(moved)
    stencil = nm.fd_weights(0.0, h * np.arange(-2, 3), order)
    for i in range(2, npts - 2):
        seg = moved[i - 2:i + 3]
        res[i] = np.tensordot(stencil, seg, axes=(0, 0))
    edge = min(6, npts)
    wl = [nm.fd_weights(h * i, h * np.arange(edge), order) for i in range(2)]
    wr = [nm.fd_weights(h * (npts - 1 - i), h * np.arange(npts - edge, npts) * 1.0,
                        order) for i in range(2)]
    for i in range(2):
        res[i] = np.tensordot(wl[i], moved[:edge], axes=(0, 0))
        res[npts - 1 - i] = np.tensordot(wr[i], moved[npts - edge:], axes=(0, 0))
    return np.moveaxis(res, 0, axis)


@dataclass
class PhaseFunction:
    """Gridded outgoing phase with first partials from the construction.

    phi and the first-partial tables come from the momentum-map limits (the
    Hamilton-Jacobi residual stored per node is evaluated from them, not from
    grid differencing).  Second partials are 4th-order finite differences of
    the tabulated first partials.
    """
    grid: PhaseGrid
    eps: float
    t_max: float
    metric: MetricFamily
    phi: np.ndarray
    phi_r: np.ndarray
    phi_y: np.ndarray
    phi_rho: np.ndarray
    phi_eta: np.ndarray
    hj_residual: np.ndarray
    tail_error: np.ndarray
    newton_sweeps: int = 0
    _interp: dict = field(default_factory=dict, repr=False)
    _second: dict = field(default_factory=dict, repr=False)

    def second_partial(self, which):
        """'rr', 'ry' or 'yy' finite-difference table."""
        if which not in self._second:
            hr, hy, _, _ = self.grid.spacing()
            if which == "rr":
                self._second[which] = _axis_derivative(self.phi_r, 0, hr)
            elif which == "ry":
                self._second[which] = _axis_derivative(self.phi_r, 1, hy)
            elif which == "yy":
                self._second[which] = _axis_derivative(self.phi_y, 1, hy)
            else:
                raise InvalidArgument(f"unknown second partial {which!r}")
        return self._second[which]

    def _free_table(self, name):
        """The free-phase part r rho + y eta of each field on the grid."""
        R, Y, P, E = np.meshgrid(*self.grid.axes, indexing="ij")
        return {"phi": R * P + Y * E, "phi_r": P, "phi_y": E,
                "phi_rho": R, "phi_eta": Y,
                "phi_rr": 0.0 * R, "phi_ry": 0.0 * R, "phi_yy": 0.0 * R}[name]

    @staticmethod
    def _free_at(name, pts):
        r, y, rho, eta = pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3]
        return {"phi": r * rho + y * eta, "phi_r": rho, "phi_y": eta,
                "phi_rho": r, "phi_eta": y,
                "phi_rr": 0.0 * r, "phi_ry": 0.0 * r, "phi_yy": 0.0 * r}[name]

    def _interpolator(self, name):
        """Node-exact Lagrange interpolant of the deviation from the free phase."""
        if name not in self._interp:
            tables = {"phi": self.phi, "phi_r": self.phi_r, "phi_y": self.phi_y,
                      "phi_rho": self.phi_rho, "phi_eta": self.phi_eta,
                      "phi_rr": lambda: self.second_partial("rr"),
                      "phi_ry": lambda: self.second_partial("ry"),
                      "phi_yy": lambda: self.second_partial("yy")}
            tab = tables[name]
            if callable(tab):
                tab = tab()
            self._interp[name] = nm.LagrangeGridInterpolator(
                self.grid.axes, tab - self._free_table(name))
        return self._interp[name]

    def eval(self, name, pts, clamp=False):
        """Evaluate a tabulated field at points (N, 4).

        Points outside the tableau raise DomainFailure unless clamp=True, in
        which case the deviation tables are read at the clamped coordinates
        (the free part is kept exact).
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if clamp:
            q = pts.copy()
            for k, ax in enumerate(self.grid.axes):
                q[:, k] = np.clip(q[:, k], ax[0], ax[-1])
        else:
            inside = self.grid.contains(pts, pad=1e-9)
            if not np.all(inside):
                raise DomainFailure(
                    f"{int(np.sum(~inside))} evaluation points left the phase grid")
            q = pts
        return self._interpolator(name)(q) + self._free_at(name, pts)

    def free_deviation_ratio(self):
        """sup |phi - r rho - y eta| e^r / |eta| over grid nodes with eta != 0."""
        R, Y, P, E = np.meshgrid(*self.grid.axes, indexing="ij")
        dev = np.abs(self.phi - R * P - Y * E) * np.exp(R)
        mask = np.abs(E) > 1e-12
        return float(np.max(dev[mask] / np.abs(E[mask])))

    def eps_is(self):
        return self.eps


def build_phase(grid: PhaseGrid, metric: MetricFamily, eps=0.0, t_max=30.0,
                ladder_points=4, newton_tol=1e-10,
                flow_tol: FlowTolerances = FlowTolerances()) -> PhaseFunction:
    """Construct phi = lim_{T -> inf} (S(T) - T rho^2) on the tensor grid.

    A warm-started Newton inversion of the time-T momentum map runs at an
    increasing ladder of times; the limit is closed by a vectorized
    exponential-tail fit (at the default regime the ladder has already
    converged to rounding and the fit degenerates to the last value).
    """
    if metric.d != 1:
        raise InvalidArgument("phase construction implemented for n = 2")
    R, Y, P, E = grid.mesh()
    n = len(R)
    targets = np.stack([P, E], axis=1)
    ladder = np.linspace(t_max / ladder_points, t_max, ladder_points)
    phis = np.empty((ladder_points, n))
    guess = targets.copy()
    sweeps = 0
    last = {}
    for it, T in enumerate(ladder):
        try:
            mom = invert_momentum_map_batch(R, Y[:, None], targets, float(T),
                                            metric, eps=eps, tol=newton_tol,
                                            flow_tol=flow_tol, initial_guess=guess)
        except NumericFailure as exc:
            raise ConstructionFailure(
                f"momentum inversion failed at T = {T}: {exc}") from exc
        guess = mom
        sweeps += 1
        states = np.stack([R, Y, mom[:, 0], mom[:, 1]], axis=1)
        _, vals, _ = batch_integrate(metric, states, eps, (0.0, float(T)),
                                     np.array([float(T)]), flow_tol)
        fin = vals[-1]
        p_init = (mom[:, 0] ** 2
                  + np.exp(-2.0 * R) * metric.b_value(R, Y[:, None], eps)
                  * mom[:, 1] ** 2)
        # phi(T) = S(T) - T rho^2 = r^T rho + y^T eta - T p_init - T rho^2,
        # with p_init the conserved energy of the inverted trajectory
        phis[it] = fin[:, 0] * P + fin[:, 1] * E - T * p_init - T * P**2
        last = {"mom": mom, "fin": fin}
    # vectorized exponential-tail closure over the ladder
    scale = np.maximum(np.max(np.abs(phis), axis=0), 1.0)
    if ladder_points >= 3:
        d2, d1 = phis[-1] - phis[-2], phis[-2] - phis[-3]
        tiny = np.abs(d2) < 1e3 * _EPS * scale
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(tiny, 0.0, np.clip(np.abs(d2 / np.where(d1 == 0, 1, d1)),
                                                0.0, 0.999))
        corr = np.where(tiny, 0.0, d2 * ratio / (1.0 - ratio))
        phi_flat = phis[-1] + corr
        tail = np.abs(corr) + np.abs(d2) * 1e-3
        if np.any(np.abs(d2) > 1e-4 * scale):
            worst = int(np.argmax(np.abs(d2)))
            raise ConstructionFailure(
                "phase tail did not converge on the time ladder",
                worst_point=(R[worst], Y[worst], P[worst], E[worst]))
    else:
        phi_flat = phis[-1]
        tail = np.full(n, np.nan)
    shape = grid.shape
    mom = last["mom"]
    fin = last["fin"]
    hj = (mom[:, 0] ** 2
          + np.exp(-2.0 * R) * metric.b_value(R, Y[:, None], eps) * mom[:, 1] ** 2
          - P**2)
    return PhaseFunction(
        grid=grid, eps=eps, t_max=t_max, metric=metric,
        phi=phi_flat.reshape(shape),
        phi_r=mom[:, 0].reshape(shape),
        phi_y=mom[:, 1].reshape(shape),
        phi_rho=(fin[:, 0] - 2.0 * t_max * P).reshape(shape),
        phi_eta=fin[:, 1].reshape(shape),
        hj_residual=hj.reshape(shape),
        tail_error=tail.reshape(shape),
        newton_sweeps=sweeps)


def hj_residual_sup(phase: PhaseFunction):
    return float(np.max(np.abs(phase.hj_residual)))


def eps_gain_ratio(metric: MetricFamily, grid: PhaseGrid, eps=0.5, delta=0.05,
                   t_max=30.0, flow_tol: FlowTolerances = FlowTolerances()):
    """sup |d phi / d eps| e^{2r} / |eta|: the j = 1 decay gain, by central FD."""
    hi = build_phase(grid, metric, eps=eps + delta, t_max=t_max, flow_tol=flow_tol)
    lo = build_phase(grid, metric, eps=eps - delta, t_max=t_max, flow_tol=flow_tol)
    dphi = (hi.phi - lo.phi) / (2.0 * delta)
    R, Y, P, E = np.meshgrid(*grid.axes, indexing="ij")
    mask = np.abs(E) > 1e-12
    return float(np.max(np.abs(dphi[mask]) * np.exp(2.0 * R[mask]) / np.abs(E[mask])))


# ---------------------------------------------------------------------------
# Kuranishi map
# ---------------------------------------------------------------------------

def kuranishi_map(phase: PhaseFunction, x, x_prime, xi, n_quad=16,
                  jac_step=None):
    """Mean-value map theta(x, x', xi) and its momentum Jacobian determinant.

    theta = int_0^1 (d_r phi, d_y phi)(x' + t(x - x'), xi) dt by Gauss
    quadrature of the interpolated gradient tables; the Jacobian d theta/d xi
    uses central differences with half-grid steps.
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(x_prime, dtype=float)
    xi = np.asarray(xi, dtype=float)
    nodes, weights = nm.gauss_legendre(0.0, 1.0, n_quad)

    def theta_of(xi_val):
        pts = np.empty((n_quad, 4))
        seg = xp[None, :] + nodes[:, None] * (x - xp)[None, :]
        pts[:, 0] = seg[:, 0]
        pts[:, 1] = seg[:, 1]
        pts[:, 2] = xi_val[0]
        pts[:, 3] = xi_val[1]
        tr = phase.eval("phi_r", pts)
        ty = phase.eval("phi_y", pts)
        return np.array([np.sum(weights * tr), np.sum(weights * ty)])

    theta = theta_of(xi)
    _, _, hrho, heta = phase.grid.spacing()
    steps = jac_step or (0.5 * hrho, 0.5 * heta)
    J = np.empty((2, 2))
    for k, hstep in enumerate(steps):
        dxi = np.zeros(2)
        dxi[k] = hstep
        J[:, k] = (theta_of(xi + dxi) - theta_of(xi - dxi)) / (2.0 * hstep)
    return theta, float(np.linalg.det(J))
