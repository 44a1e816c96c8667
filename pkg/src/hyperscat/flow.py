"""Hamiltonian flow of p_eps, variational equations, and trajectory estimates.

The state layout is [r, y_1..y_d, rho, eta_1..eta_d]; batches of N states are
integrated as one flattened adaptive solve (DOP853), which is what makes the
grid sweeps downstream cheap.  A tiny fixed-step RK4 integrator doubles as an
independent cross-check oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (ConservationFailure, InvalidArgument, InversionFailure,
                     NotInRegion, NumericFailure, ReachFailure)
from .model import MetricFamily, PhasePoint, RegionSpec, split_state

PARAMS = ("r", "y", "rho", "eta", "eps")


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------

def hamiltonian_field(metric: MetricFamily, z, eps):
    """Hamiltonian vector field of p_eps at a batch of states z (N, 2+2d)."""
    d = metric.d
    r, y, rho, eta = split_state(z, d)
    jet = metric.b_jet(r, y, eps)
    E = np.exp(-2.0 * r)
    G = np.sum(eta**2, axis=-1)
    out = np.empty_like(z)
    out[..., 0] = 2.0 * rho
    out[..., 1:1 + d] = 2.0 * E[..., None] * jet.b[..., None] * eta
    out[..., 1 + d] = E * (2.0 * jet.b - jet.b_r) * G
    out[..., 2 + d:] = -E[..., None] * jet.b_y * G[..., None]
    return out


def linearization_matrix(metric: MetricFamily, z, eps):
    """M_eps(t): Jacobian of the Hamiltonian field w.r.t. the state, (N, w, w)."""
    d = metric.d
    w = 2 + 2 * d
    r, y, rho, eta = split_state(z, d)
    jet = metric.b_jet(r, y, eps)
    E = np.exp(-2.0 * r)
    G = np.sum(eta**2, axis=-1)
    n = z.shape[0]
    p_rr = E * (jet.b_rr - 4.0 * jet.b_r + 4.0 * jet.b) * G
    p_ry = E[:, None] * (jet.b_ry - 2.0 * jet.b_y) * G[:, None]
    p_reta = 2.0 * E[:, None] * (jet.b_r - 2.0 * jet.b)[:, None] * eta
    p_yy = E[:, None, None] * jet.b_yy * G[:, None, None]
    p_yeta = 2.0 * E[:, None, None] * jet.b_y[:, :, None] * eta[:, None, :]
    p_etaeta = 2.0 * (E * jet.b)[:, None, None] * np.eye(d)[None, :, :]
    M = np.zeros((n, w, w))
    M[:, 0, 1 + d] = 2.0                      # d(rdot)/drho
    M[:, 1:1 + d, 0] = p_reta                 # d(ydot)/dr
    M[:, 1:1 + d, 1:1 + d] = np.swapaxes(p_yeta, 1, 2)
    M[:, 1:1 + d, 2 + d:] = p_etaeta
    M[:, 1 + d, 0] = -p_rr
    M[:, 1 + d, 1:1 + d] = -p_ry
    M[:, 1 + d, 2 + d:] = -p_reta
    M[:, 2 + d:, 0] = -p_ry
    M[:, 2 + d:, 1:1 + d] = -p_yy
    M[:, 2 + d:, 2 + d:] = -p_yeta
    return M


def eps_inhomogeneity(metric: MetricFamily, z, eps):
    """Y_eps = d/deps of the Hamiltonian field along the flow, (N, w)."""
    d = metric.d
    r, y, rho, eta = split_state(z, d)
    jet = metric.b_jet(r, y, eps)
    E = np.exp(-2.0 * r)
    G = np.sum(eta**2, axis=-1)
    out = np.zeros_like(z)
    out[..., 1:1 + d] = 2.0 * E[..., None] * jet.b_e[..., None] * eta
    out[..., 1 + d] = E * (2.0 * jet.b_e - jet.b_er) * G
    out[..., 2 + d:] = -E[..., None] * jet.b_ey * G[..., None]
    return out


def free_linearization(d):
    """The limiting matrix M with the single 2 in the (rdot, rho) slot; M^2 = 0."""
    w = 2 + 2 * d
    M = np.zeros((w, w))
    M[0, 1 + d] = 2.0
    return M


def energy(metric: MetricFamily, z, eps):
    d = metric.d
    r, y, rho, eta = split_state(z, d)
    return rho**2 + np.exp(-2.0 * r) * metric.g_value(r, y, eta, eps)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """A sampled flow line with its conservation diagnostics."""
    times: np.ndarray
    states: np.ndarray           # (nt, w)
    eps: float
    metric: MetricFamily
    energy_drift: float
    nfev: int
    sol: Optional[object] = None

    @property
    def d(self):
        return (self.states.shape[1] - 2) // 2

    def component(self, name):
        d = self.d
        idx = {"r": 0, "rho": 1 + d}
        if name in idx:
            return self.states[:, idx[name]]
        if name == "y":
            return self.states[:, 1:1 + d]
        if name == "eta":
            return self.states[:, 2 + d:]
        raise InvalidArgument(f"unknown component {name!r}")

    def energies(self):
        return energy(self.metric, self.states, self.eps)

    def end_point(self) -> PhasePoint:
        d = self.d
        z = self.states[-1]
        return PhasePoint.make(z[0], z[1:1 + d], z[1 + d], z[2 + d:], self.eps, d=d)


@dataclass(frozen=True)
class FlowTolerances:
    rtol: float = 1e-11
    atol: float = 1e-13
    drift_tol: float = 1e-8
    method: str = "DOP853"


def batch_integrate(metric: MetricFamily, states, eps, t_span, t_eval,
                    tol: FlowTolerances = FlowTolerances(), n_params=0,
                    param_cols=None):
    """Integrate a batch of states, optionally with variational columns.

    states: (N, w).  param_cols: list of parameter names; the variational
    columns follow the base state in the flattened layout.  Returns an array
    (nt, N, w*(1+npar)) and the solver object.
    """
    n, w = states.shape
    npar = 0 if param_cols is None else len(param_cols)
    z0 = np.zeros((n, w * (1 + npar)))
    z0[:, :w] = states
    d = metric.d
    if param_cols:
        for k, name in enumerate(param_cols):
            col = np.zeros((n, w))
            if name == "r":
                col[:, 0] = 1.0
            elif name == "y":
                col[:, 1] = 1.0
            elif name == "rho":
                col[:, 1 + d] = 1.0
            elif name == "eta":
                col[:, 2 + d] = 1.0
            elif name != "eps":
                raise InvalidArgument(f"unknown variational parameter {name!r}")
            z0[:, (1 + k) * w:(2 + k) * w] = col

    def rhs(t, zf):
        z = zf.reshape(n, w * (1 + npar))
        base = z[:, :w]
        out = np.empty_like(z)
        out[:, :w] = hamiltonian_field(metric, base, eps)
        if npar:
            M = linearization_matrix(metric, base, eps)
            X = z[:, w:].reshape(n, npar, w)
            dX = np.einsum("nij,npj->npi", M, X)
            for k, name in enumerate(param_cols):
                if name == "eps":
                    dX[:, k, :] += eps_inhomogeneity(metric, base, eps)
            out[:, w:] = dX.reshape(n, npar * w)
        return out.ravel()

    sol = solve_ivp(rhs, t_span, z0.ravel(), method=tol.method, t_eval=t_eval,
                    rtol=tol.rtol, atol=tol.atol, dense_output=False)
    if not sol.success:
        raise NumericFailure(f"flow integration failed: {sol.message}")
    vals = sol.y.T.reshape(len(sol.t), n, w * (1 + npar))
    return sol.t, vals, sol


def integrate_flow(start: PhasePoint, metric: MetricFamily, horizon,
                   tol: FlowTolerances = FlowTolerances(), n_samples=241,
                   eps=None, dense=False) -> Trajectory:
    """Adaptive flow integration with energy-drift monitoring.

    horizon may be negative (incoming trajectories).  On a drift breach the
    solve is retried once at 100x tighter tolerances before raising.
    """
    if not np.isfinite(start.state()).all():
        raise InvalidArgument("non-finite start point")
    e = start.eps if eps is None else float(eps)
    t_eval = np.linspace(0.0, horizon, n_samples)
    current = tol
    for attempt in range(2):
        if dense:
            sol = solve_ivp(
                lambda t, z: hamiltonian_field(metric, z[None, :], e)[0],
                (0.0, horizon), start.state(), method=current.method,
                t_eval=t_eval, rtol=current.rtol, atol=current.atol,
                dense_output=True)
            if not sol.success:
                raise NumericFailure(f"flow integration failed: {sol.message}")
            times, states, raw = sol.t, sol.y.T, sol
        else:
            times, vals, raw = batch_integrate(metric, start.state()[None, :], e,
                                               (0.0, horizon), t_eval, current)
            states = vals[:, 0, :]
        p = energy(metric, states, e)
        drift = float(np.max(np.abs(p - p[0])))
        if drift <= current.drift_tol:
            return Trajectory(times=times, states=states, eps=e, metric=metric,
                              energy_drift=drift, nfev=raw.nfev,
                              sol=raw.sol if dense else None)
        current = FlowTolerances(rtol=current.rtol * 1e-2, atol=current.atol * 1e-2,
                                 drift_tol=current.drift_tol, method=current.method)
    raise ConservationFailure(
        f"energy drift {drift:.3e} above tolerance {tol.drift_tol:.1e}")


def reference_rk4(start, metric: MetricFamily, horizon, n_steps=20000, eps=0.0):
    """Fixed-step classical RK4 oracle, independent of the adaptive path."""
    z = np.atleast_2d(np.asarray(start, dtype=float)).copy()
    h = horizon / n_steps
    for _ in range(n_steps):
        k1 = hamiltonian_field(metric, z, eps)
        k2 = hamiltonian_field(metric, z + 0.5 * h * k1, eps)
        k3 = hamiltonian_field(metric, z + 0.5 * h * k2, eps)
        k4 = hamiltonian_field(metric, z + h * k3, eps)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return z[0] if np.ndim(start) == 1 else z


# ---------------------------------------------------------------------------
# variational trajectories
# ---------------------------------------------------------------------------

@dataclass
class VariationalTrajectory:
    """Base flow plus Jacobian columns d(state)/d(parameter)."""
    times: np.ndarray
    states: np.ndarray            # (nt, w)
    columns: np.ndarray           # (nt, npar, w)
    params: tuple
    eps: float
    metric: MetricFamily

    def column(self, name):
        return self.columns[:, self.params.index(name), :]


def integrate_variational(start: PhasePoint, metric: MetricFamily, horizon,
                          parameters: Sequence[str] = ("eps",),
                          tol: FlowTolerances = FlowTolerances(),
                          n_samples=241, eps=None) -> VariationalTrajectory:
    """Co-integrate the linearized system along the flow.

    Initial columns are identity unit vectors for coordinate parameters, zero
    for eps (whose column carries the inhomogeneity Y_eps).
    """
    e = start.eps if eps is None else float(eps)
    t_eval = np.linspace(0.0, horizon, n_samples)
    times, vals, _ = batch_integrate(metric, start.state()[None, :], e,
                                     (0.0, horizon), t_eval, tol,
                                     param_cols=list(parameters))
    w = 2 + 2 * metric.d
    base = vals[:, 0, :w]
    cols = vals[:, 0, w:].reshape(len(times), len(parameters), w)
    p = energy(metric, base, e)
    drift = float(np.max(np.abs(p - p[0])))
    if drift > tol.drift_tol:
        raise ConservationFailure(f"energy drift {drift:.3e} in variational solve")
    return VariationalTrajectory(times=times, states=base, columns=cols,
                                 params=tuple(parameters), eps=e, metric=metric)


# ---------------------------------------------------------------------------
# asymptotic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticData:
    y_plus: np.ndarray
    eta_plus: np.ndarray
    rho_limit: float
    tail_rate: float
    extrapolation_error: float

    def check_energy(self, p_start, tol=1e-8):
        return abs(self.rho_limit**2 - p_start) <= tol


def asymptotic_data(traj: Trajectory, direction=+1) -> AsymptoticData:
    """Scattering data by exponential-tail extrapolation over the last decade."""
    from .numerics import fit_exponential_tail

    t = traj.times
    if len(t) < 16:
        raise InvalidArgument("trajectory too short for tail extrapolation")
    sel = np.abs(t) >= np.abs(t[-1]) / 10.0
    d = traj.d
    errs, rates = [], []

    def _fit(series):
        a, err, rate = fit_exponential_tail(t[sel], series[sel])
        errs.append(err)
        rates.append(rate)
        return a

    try:
        y_plus = np.array([_fit(traj.component("y")[:, k]) for k in range(d)])
        eta_plus = np.array([_fit(traj.component("eta")[:, k]) for k in range(d)])
        rho_lim = _fit(traj.component("rho"))
    except NumericFailure as exc:
        raise NotInRegion(f"tail not exponentially decaying: {exc}") from exc
    if direction * rho_lim < 0:
        raise NotInRegion("limit momentum has the wrong sign for this direction")
    finite = [r for r in rates if np.isfinite(r)]
    return AsymptoticData(y_plus=y_plus, eta_plus=eta_plus, rho_limit=float(rho_lim),
                          tail_rate=min(finite) if finite else np.inf,
                          extrapolation_error=float(max(errs)))


# ---------------------------------------------------------------------------
# sampling and estimate verification
# ---------------------------------------------------------------------------

def sample_region(region: RegionSpec, metric: MetricFamily, n, rng,
                  r_span=2.0, margin=0.95):
    """Draw n phase points strictly inside an Upsilon region (for n = 2)."""
    d = metric.d
    pts = np.zeros((n, 2 + 2 * d))
    count = 0
    attempts = 0
    is_gamma = region.kind.startswith("Gamma")
    while count < n:
        attempts += 1
        if attempts > 500 * n:
            raise NumericFailure("region sampling stalled; check parameters")
        r = region.R + rng.uniform(0.02 * r_span, r_span)
        y = np.array([rng.uniform(lo + 0.02 * (hi - lo), hi - 0.02 * (hi - lo))
                      for lo, hi in region.omega])
        p0 = rng.uniform(1.0 - margin * region.w, 1.0 + margin * region.w)
        if is_gamma:
            # draw the angular-energy share below the area bound
            g_target = rng.uniform(0.0, margin * min(region.eps_area, p0))
            rho = region.sign * np.sqrt(p0 - g_target)
        else:
            rho = rng.uniform(-margin * region.sigma, np.sqrt(p0) * margin) \
                * region.sign
            g_target = p0 - rho**2
            if g_target < 0:
                continue
        beta = metric.beta.value(y[0])
        eta_mag = np.exp(r) * np.sqrt(g_target / beta)
        direction = rng.choice([-1.0, 1.0], size=d)
        direction /= np.linalg.norm(direction)
        eta = eta_mag * direction
        z = np.concatenate(([r], y, [rho], eta))
        if region.contains(np.asarray([r]), y[None, :], np.asarray([rho]),
                           eta[None, :], metric)[0]:
            pts[count] = z
            count += 1
    return pts


_ESTIMATES = ("radial_linear", "rho_monotone", "angular_drift",
              "rt2", "yt2", "rhot2", "etat2", "y_improved")


@dataclass
class EstimateStat:
    sup_ratio: float
    argmax_point: int
    argmax_time: float
    sup_ratio_doubled: float = np.nan

    @property
    def horizon_change(self):
        if not np.isfinite(self.sup_ratio_doubled):
            return np.nan
        return abs(self.sup_ratio_doubled - self.sup_ratio) / (abs(self.sup_ratio) + 1e-300)

    def to_dict(self):
        return {"sup_ratio": self.sup_ratio, "argmax_point": int(self.argmax_point),
                "argmax_time": self.argmax_time,
                "sup_ratio_doubled": self.sup_ratio_doubled,
                "horizon_change": self.horizon_change}


@dataclass
class FlowEstimateReport:
    stats: dict
    energy_drift: float
    eta_zero_residual: float
    sample_size: int
    horizon: float

    def to_dict(self):
        return {"estimates": {k: v.to_dict() for k, v in self.stats.items()},
                "energy_drift": self.energy_drift,
                "eta_zero_residual": self.eta_zero_residual,
                "sample_size": self.sample_size, "horizon": self.horizon}

    def max_horizon_change(self):
        return max(v.horizon_change for v in self.stats.values()
                   if np.isfinite(v.horizon_change))


def _estimate_ratios(metric, states, eps, times, vals, cols, d, eps_pairs=None):
    """Per-estimate normalized sup ratios over nodes x times."""
    w = 2 + 2 * d
    n = states.shape[0]
    r0 = states[:, 0]
    eta0 = states[:, 2 + d:]
    abs_eta0 = np.maximum(np.linalg.norm(eta0, axis=1), 1e-300)
    rbar = np.exp(-r0)
    # vals has shape (nt, n, w*(1+npar)); reorganize to (n, nt, ...)
    base = vals[:, :, :w]
    r_t = base[:, :, 0].T                  # (n, nt)
    y_t = np.moveaxis(base[:, :, 1:1 + d], 0, 1)       # (n, nt, d)
    rho_t = base[:, :, 1 + d].T
    eta_t = np.moveaxis(base[:, :, 2 + d:], 0, 1)
    rho0 = states[:, 1 + d]
    dev_r = r_t - r0[:, None] - 2.0 * times[None, :] * rho0[:, None]
    dev_y = y_t - y_t[:, :1, :]
    dev_rho = rho_t - rho0[:, None]
    dev_eta = eta_t - eta_t[:, :1, :]
    tw = 1.0 + np.abs(times)[None, :]

    out = {}

    def record(name, ratio_nt):
        flat = np.nan_to_num(ratio_nt, nan=0.0)
        idx = np.unravel_index(np.argmax(flat), flat.shape)
        out[name] = (float(flat[idx]), int(idx[0]), float(times[idx[1]]))

    # a-priori estimates
    lower = r0[:, None] + times[None, :] - r_t
    record("radial_linear", lower)                        # empirical constant C
    field_rho = np.array([
        hamiltonian_field(metric, base[i], eps)[:, 1 + d] for i in range(len(times))
    ]).T                                                  # (n, nt)
    record("rho_monotone", -field_rho)                    # should be <= ~0
    record("angular_drift",
           np.linalg.norm(dev_y, axis=2) / rbar[:, None])

    weights = {0: (rbar * abs_eta0)[:, None], 1: (rbar**2 * abs_eta0)[:, None],
               2: (rbar**3 * abs_eta0)[:, None]}

    def sup_family(name, num_by_j):
        acc = None
        arg = None
        for j, num in num_by_j:
            ratio = num / weights[j]
            if name == "rt2":
                ratio = ratio / tw
            if acc is None or np.max(np.nan_to_num(ratio)) > acc:
                flat = np.nan_to_num(ratio)
                idx = np.unravel_index(np.argmax(flat), flat.shape)
                acc, arg = float(flat[idx]), (int(idx[0]), float(times[idx[1]]))
        out[name] = (acc, arg[0], arg[1])

    # j = 0 contributions plus eps-derivative (j = 1) ones from the columns
    cols_by = {}
    if cols is not None:
        for k, nm_ in enumerate(cols["params"]):
            cols_by[nm_] = np.moveaxis(cols["data"][:, :, k, :], 0, 1)  # (n, nt, w)

    def dev_derivative(which, pname):
        """d/d(pname) of the deviation from the free solution."""
        X = cols_by[pname]
        if which == "r":
            ddev = X[:, :, 0].copy()
            if pname == "r":
                ddev -= 1.0
            if pname == "rho":
                ddev -= 2.0 * times[None, :]
            return np.abs(ddev)
        if which == "rho":
            ddev = X[:, :, 1 + d].copy()
            if pname == "rho":
                ddev -= 1.0
            return np.abs(ddev)
        if which == "y":
            ddev = X[:, :, 1:1 + d].copy()
            if pname == "y":
                ddev[:, :, 0] -= 1.0
            return np.linalg.norm(ddev, axis=2)
        if which == "eta":
            ddev = X[:, :, 2 + d:].copy()
            if pname == "eta":
                ddev[:, :, 0] -= 1.0
            return np.linalg.norm(ddev, axis=2)
        raise InvalidArgument(which)

    for est, which, plain in (("rt2", "r", np.abs(dev_r)),
                              ("yt2", "y", np.linalg.norm(dev_y, axis=2)),
                              ("rhot2", "rho", np.abs(dev_rho)),
                              ("etat2", "eta", np.linalg.norm(dev_eta, axis=2))):
        fam = [(0, plain)]
        for pname in cols_by:
            j = 1 if pname == "eps" else 0
            fam.append((j, dev_derivative(which, pname)))
        if eps_pairs is not None and which in ("r", "y", "rho", "eta"):
            fam.append((2, eps_pairs[which]))
        sup_family(est, fam)

    # improved y bound: weight e^{-2r}|eta| for j = 0 and the eps column
    imp = np.linalg.norm(dev_y, axis=2) / weights[1]
    if "eps" in cols_by:
        imp = np.maximum(imp, dev_derivative("y", "eps") / weights[1])
    record("y_improved", imp)
    return out


def verify_flow_estimates(samples, metric: MetricFamily, region: RegionSpec,
                          eps=0.0, horizon=20.0, n_samples=161,
                          tol: FlowTolerances = FlowTolerances(),
                          second_eps_step=0.02, check_doubled=True):
    """Empirical sup of the normalized trajectory-estimate ratios.

    samples: (N, 2+2d) array of outgoing states; all must pass region
    membership (rejected indices are reported otherwise).  Derivative ratios
    cover all first-order parameters plus d^2/deps^2 by central differencing
    of the variational eps column.
    """
    states = np.asarray(samples, dtype=float)
    d = metric.d
    ok = region.contains(states[:, 0], states[:, 1:1 + d], states[:, 1 + d],
                         states[:, 2 + d:], metric)
    if not np.all(ok):
        raise NotInRegion("sample points outside the region",
                          indices=np.nonzero(~ok)[0])
    w = 2 + 2 * d
    params = ["r", "y", "rho", "eta", "eps"]
    t_eval = np.linspace(0.0, 2.0 * horizon if check_doubled else horizon, n_samples)
    times, vals, _ = batch_integrate(metric, states, eps, (0.0, t_eval[-1]),
                                     t_eval, tol, param_cols=params)
    base = vals[:, :, :w]
    drift = float(np.max(np.abs(
        energy(metric, base.reshape(-1, w), eps).reshape(len(times), -1)
        - energy(metric, states, eps)[None, :])))
    if drift > tol.drift_tol:
        raise ConservationFailure(f"energy drift {drift:.2e} over the sample sweep")
    cols = {"params": params,
            "data": vals[:, :, w:].reshape(len(times), len(states), len(params), w)}

    # second eps-derivatives by central differencing of the eps column
    eps_pairs = None
    if second_eps_step and 0.0 <= eps - second_eps_step < eps + second_eps_step <= 1.0:
        de = second_eps_step
        _, vp, _ = batch_integrate(metric, states, eps + de, (0.0, t_eval[-1]),
                                   t_eval, tol, param_cols=["eps"])
        _, vm, _ = batch_integrate(metric, states, eps - de, (0.0, t_eval[-1]),
                                   t_eval, tol, param_cols=["eps"])
        d2 = (vp[:, :, w:] - vm[:, :, w:]) / (2.0 * de)
        d2 = np.moveaxis(d2.reshape(len(times), len(states), w), 0, 1)
        eps_pairs = {"r": np.abs(d2[:, :, 0]),
                     "y": np.linalg.norm(d2[:, :, 1:1 + d], axis=2),
                     "rho": np.abs(d2[:, :, 1 + d]),
                     "eta": np.linalg.norm(d2[:, :, 2 + d:], axis=2)}

    half = times <= horizon + 1e-12

    def build(sel):
        cc = {"params": params, "data": cols["data"][sel]}
        ee = None if eps_pairs is None else {k: v[:, sel] for k, v in eps_pairs.items()}
        return _estimate_ratios(metric, states, eps, times[sel], vals[sel], cc, d,
                                eps_pairs=ee)

    ratios_half = build(half)
    stats = {}
    if check_doubled:
        ratios_full = build(np.ones_like(half, dtype=bool))
        for k in ratios_half:
            sup, arg, at = ratios_half[k]
            stats[k] = EstimateStat(sup_ratio=sup, argmax_point=arg, argmax_time=at,
                                    sup_ratio_doubled=ratios_full[k][0])
    else:
        for k in ratios_half:
            sup, arg, at = ratios_half[k]
            stats[k] = EstimateStat(sup_ratio=sup, argmax_point=arg, argmax_time=at)

    # eta = 0 residual: rerun the deviations on the eta = 0 projection
    zero = states[:min(8, len(states))].copy()
    zero[:, 2 + d:] = 0.0
    tz = np.linspace(0.0, horizon, 33)
    _, vz, _ = batch_integrate(metric, zero, eps, (0.0, horizon), tz, tol)
    dev = np.abs(vz[:, :, 0] - zero[:, 0][None, :]
                 - 2.0 * tz[:, None] * zero[:, 1 + d][None, :])
    others = np.abs(vz[:, :, 1:w] - vz[:1, :, 1:w])
    eta_zero = float(max(np.max(dev), np.max(others)))
    return FlowEstimateReport(stats=stats, energy_drift=drift,
                              eta_zero_residual=eta_zero,
                              sample_size=len(states), horizon=horizon)


# ---------------------------------------------------------------------------
# reach time and momentum-map inversion
# ---------------------------------------------------------------------------

@dataclass
class ReachReport:
    reach_time: float
    entry_times: np.ndarray
    horizon: float

    def to_dict(self):
        return {"reach_time": self.reach_time, "horizon": self.horizon,
                "entry_times": self.entry_times.tolist()}


def reach_time(region_from: RegionSpec, region_to: RegionSpec, samples,
               metric: MetricFamily, eps=0.0, horizon=40.0, dt=0.1,
               tol: FlowTolerances = FlowTolerances()) -> ReachReport:
    """Smallest sampled T with flow(sample) inside region_to for all t >= T."""
    states = np.asarray(samples, dtype=float)
    d = metric.d
    ok = region_from.contains(states[:, 0], states[:, 1:1 + d], states[:, 1 + d],
                              states[:, 2 + d:], metric)
    if not np.all(ok):
        raise NotInRegion("samples outside the source region",
                          indices=np.nonzero(~ok)[0])
    t_eval = np.arange(0.0, horizon + dt, dt)
    times, vals, _ = batch_integrate(metric, states, eps, (0.0, t_eval[-1]),
                                     t_eval, tol)
    w = 2 + 2 * d
    member = np.zeros((len(times), len(states)), dtype=bool)
    for i, t in enumerate(times):
        z = vals[i, :, :w]
        member[i] = region_to.contains(z[:, 0], z[:, 1:1 + d], z[:, 1 + d],
                                       z[:, 2 + d:], metric)
    entry = np.full(len(states), np.inf)
    for jcol in range(len(states)):
        col = member[:, jcol]
        if col[-1]:
            bad = np.nonzero(~col)[0]
            entry[jcol] = 0.0 if len(bad) == 0 else times[bad[-1] + 1]
    if np.any(~np.isfinite(entry)):
        worst = int(np.argmax(~np.isfinite(entry)))
        raise ReachFailure(f"{int(np.sum(~np.isfinite(entry)))} points never "
                           f"settle in the target region by t = {horizon}",
                           worst_point=states[worst])
    return ReachReport(reach_time=float(np.max(entry)), entry_times=entry,
                       horizon=horizon)


def invert_momentum_map(base, target, t, metric: MetricFamily, eps=0.0,
                        tol=1e-10, max_iter=30,
                        flow_tol: FlowTolerances = FlowTolerances()):
    """Initial momenta whose time-t flow momenta equal `target` at fixed (r, y).

    Newton iteration with the variational Jacobian; raises InversionFailure on
    divergence (point outside the diffeomorphism range).
    """
    r0, y0 = base
    rho_t, eta_t = target
    d = metric.d
    guesses = np.concatenate(([rho_t], np.atleast_1d(eta_t)))
    res = invert_momentum_map_batch(
        np.asarray([r0]), np.atleast_2d(y0), guesses[None, :], float(t),
        metric, eps=eps, tol=tol, max_iter=max_iter, flow_tol=flow_tol)
    return res[0, 0], res[0, 1:]


def invert_momentum_map_batch(r, y, target_mom, t, metric: MetricFamily, eps=0.0,
                              tol=1e-10, max_iter=30,
                              flow_tol: FlowTolerances = FlowTolerances(),
                              initial_guess=None):
    """Vectorized Newton inversion of (rho, eta) -> (rho^t, eta^t)(r, y, .).

    target_mom: (N, 1+d).  Returns (N, 1+d) initial momenta.
    """
    n = len(r)
    d = metric.d
    if d != 1:
        from .errors import UnsupportedModel
        raise UnsupportedModel("momentum-map inversion implemented for n = 2")
    w = 2 + 2 * d
    mom = np.array(target_mom, dtype=float) if initial_guess is None \
        else np.array(initial_guess, dtype=float)
    if t == 0.0:
        return np.array(target_mom, dtype=float)
    params = ["rho", "eta"]
    target = np.asarray(target_mom, dtype=float)
    for it in range(max_iter):
        states = np.zeros((n, w))
        states[:, 0] = r
        states[:, 1:1 + d] = y
        states[:, 1 + d] = mom[:, 0]
        states[:, 2 + d:] = mom[:, 1:]
        _, vals, _ = batch_integrate(metric, states, eps, (0.0, t),
                                     np.array([t]), flow_tol, param_cols=params)
        final = vals[-1, :, :w]
        got = np.concatenate((final[:, 1 + d:2 + d], final[:, 2 + d:]), axis=1)
        resid = got - target
        err = np.max(np.abs(resid))
        if err < tol:
            return mom
        X = vals[-1, :, w:].reshape(n, len(params), w)
        # Jacobian of (rho^t, eta^t) w.r.t. (rho0, eta0): (n, 1+d, 1+d)
        J = np.empty((n, 1 + d, 1 + d))
        for k in range(1 + d):
            J[:, 0, k] = X[:, k, 1 + d]
            J[:, 1:, k] = X[:, k, 2 + d:]
        try:
            step = np.linalg.solve(J, resid[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise InversionFailure(f"singular momentum-map Jacobian: {exc}") from exc
        if not np.all(np.isfinite(step)) or np.max(np.abs(step)) > 1e3:
            raise InversionFailure("Newton step diverged; target outside range")
        mom = mom - step
    raise InversionFailure(f"momentum inversion stalled at residual {err:.2e}")
