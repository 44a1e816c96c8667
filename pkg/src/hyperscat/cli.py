"""Experiment runner: subcommands, artifact files, figures, exit codes.

Exit code 0 on success, 1 on validation errors, 2 on numeric or tolerance
failures (with the failing check named on stderr).  Same config + seed give
byte-identical CSV/JSON artifacts.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import figures
from .config import DEFAULT_CONFIG, ExperimentConfig, load_config
from .epscalc import (OperatorFamily, QBracketConfig, birman_solomyak_residual,
                      duhamel_residual, eps_bracket, identity_residuals,
                      random_hermitian)
from .errors import HyperscatError, InvalidArgument
from .flow import (FlowTolerances, integrate_flow, sample_region,
                   verify_flow_estimates)
from .functions import SmoothFunction
from .model import CutoffProfile, PhasePoint
from .specops import ModeOperatorSet, SpectralGrid
from .traces import (a0_volume_oracle, b0_volume_oracle, fit_heat_expansion,
                     heat_trace_q, weyl_probe, xi_q)

SUBCOMMANDS = ("flow-verify", "eikonal", "transport", "identities", "heat",
               "ssf", "report")


def _fmt(x):
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path, header, rows, meta=None):
    """CSV with an optional leading '# {json}' metadata comment line."""
    lines = []
    if meta is not None:
        lines.append("# " + json.dumps(meta, sort_keys=True))
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
    return str(path)


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1,
                                     default=float) + "\n")
    return str(path)


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def run_flow_verify(cfg: ExperimentConfig, out: Path, quiet=False):
    metric = cfg.metric()
    ladder = cfg.ladder()
    region = ladder.upsilon_region(1)
    rng = np.random.default_rng(cfg.seed())
    n = cfg.get("flow", "samples", int)
    tol = FlowTolerances(rtol=cfg.get("flow", "rtol", float),
                         atol=cfg.get("flow", "atol", float),
                         drift_tol=cfg.get("flow", "drift_tol", float))
    pts = sample_region(region, metric, n, rng)
    report = verify_flow_estimates(pts, metric, region,
                                   eps=cfg.get("flow", "eps", float),
                                   horizon=cfg.get("flow", "horizon", float),
                                   tol=tol)
    payload = report.to_dict()
    payload["family"] = metric.name
    files = [write_json(out / "flow_report.json", payload)]
    # sampled-region grid dump
    eps = cfg.get("flow", "eps", float)
    member = region.contains(pts[:, 0], pts[:, 1:2], pts[:, 2], pts[:, 3:4],
                             metric)
    from .flow import energy as _energy
    p_grid = _energy(metric, pts, eps)
    files.append(write_csv(
        out / "sample_grid.csv", ["r", "y", "rho", "eta", "eps", "p", "member"],
        [(z[0], z[1], z[2], z[3], eps, pv, int(mv))
         for z, pv, mv in zip(pts, p_grid, member)],
        meta={"region": region.kind, "R": region.R, "w": region.w}))
    # one sampled trajectory dump
    p0 = PhasePoint.make(pts[0, 0], pts[0, 1], pts[0, 2], pts[0, 3], eps)
    traj = integrate_flow(p0, metric, cfg.get("flow", "horizon", float), tol)
    p_vals = traj.energies()
    rows = [(t, z[0], z[1], z[2], z[3], p, abs(p - p_vals[0]))
            for t, z, p in zip(traj.times, traj.states, p_vals)]
    files.append(write_csv(out / "trajectory.csv",
                           ["t", "r", "y", "rho", "eta", "p", "drift"], rows,
                           meta={"family": metric.name, "eps": traj.eps}))
    if not quiet:
        worst = max(v.sup_ratio for v in report.stats.values())
        print(f"flow-verify: {len(pts)} points, worst ratio {worst:.4g}, "
              f"drift {report.energy_drift:.2e}")
    return files, payload


def _build_phase(cfg: ExperimentConfig):
    from .eikonal import PhaseGrid, build_phase

    metric = cfg.metric()
    ladder = cfg.ladder()
    grid = PhaseGrid.from_ladder(
        ladder, metric,
        nodes=(cfg.get("eikonal", "nodes_r", int),
               cfg.get("eikonal", "nodes_y", int),
               cfg.get("eikonal", "nodes_rho", int),
               cfg.get("eikonal", "nodes_eta", int)),
        r_span=cfg.get("eikonal", "r_span", float))
    phase = build_phase(grid, metric, eps=cfg.get("eikonal", "eps", float),
                        t_max=cfg.get("eikonal", "t_max", float))
    return metric, ladder, grid, phase


def run_eikonal(cfg: ExperimentConfig, out: Path, quiet=False):
    metric, ladder, grid, phase = _build_phase(cfg)
    R, Y, P, E = grid.mesh()
    rows = list(zip(R, Y, P, E, phase.phi.ravel(), phase.phi_r.ravel(),
                    phase.phi_y.ravel(), phase.hj_residual.ravel()))
    meta = {"grid": {"r": [grid.r[0], grid.r[-1], len(grid.r)],
                     "y": [grid.y[0], grid.y[-1], len(grid.y)],
                     "rho": [grid.rho[0], grid.rho[-1], len(grid.rho)],
                     "eta": [grid.eta[0], grid.eta[-1], len(grid.eta)]},
            "eps": phase.eps, "t_max": phase.t_max, "family": metric.name}
    files = [write_csv(out / "phase.csv",
                       ["r", "y", "rho", "eta", "phi", "phi_r", "phi_y",
                        "hj_residual"], rows, meta=meta)]
    payload = {"hj_residual_sup": float(np.max(np.abs(phase.hj_residual))),
               "decay_ratio": phase.free_deviation_ratio(),
               "tail_error_max": float(np.nanmax(phase.tail_error)),
               "newton_sweeps": phase.newton_sweeps}
    payload.update(meta)
    files.append(write_json(out / "eikonal_report.json", payload))
    if not quiet:
        print(f"eikonal: HJ sup {payload['hj_residual_sup']:.2e}, "
              f"decay ratio {payload['decay_ratio']:.4g}")
    return files, payload


def run_transport(cfg: ExperimentConfig, out: Path, quiet=False):
    from .transport import (amplitude_a, amplitude_b0, default_target_symbol,
                            transport_residual)

    metric, ladder, grid, phase = _build_phase(cfg)
    amp = amplitude_a(1, phase, metric,
                      horizon=cfg.get("transport", "horizon", float),
                      n_samples=cfg.get("transport", "n_samples", int))
    res = transport_residual(amp, 0)
    res_pad = np.full(grid.shape, np.nan)
    res_pad[2:-2, 2:-2 if grid.shape[1] >= 5 else slice(None)] = np.real(res)
    R, Y, P, E = grid.mesh()
    rows = list(zip(R, Y, P, E,
                    np.real(amp.a0).ravel(), np.imag(amp.a0).ravel(),
                    np.real(amp.a1).ravel(), np.imag(amp.a1).ravel(),
                    res_pad.ravel()))
    meta = {"eps": amp.eps, "family": metric.name,
            "horizon": cfg.get("transport", "horizon", float)}
    files = [write_csv(out / "amplitudes.csv",
                       ["r", "y", "rho", "eta", "re_a0", "im_a0", "re_a1",
                        "im_a1", "transport_residual"], rows, meta=meta)]
    profile = CutoffProfile(ladder)
    b0 = amplitude_b0(default_target_symbol(profile, metric), amp, phase,
                      ladder.gamma_region(4), ladder=ladder)
    payload = {"transport_residual_sup": float(np.max(np.abs(res))),
               "a0_decay_ratio": amp.decay_ratio(),
               "b0_support_ok": bool(b0.support_ok),
               "b0_outside_max": b0.outside_max,
               "b0_nonzero_nodes": int(np.sum(np.abs(b0.values) > 0))}
    payload.update(meta)
    files.append(write_json(out / "transport_report.json", payload))
    if not quiet:
        print(f"transport: residual sup {payload['transport_residual_sup']:.2e}, "
              f"b0 support ok {payload['b0_support_ok']}")
    return files, payload


def run_identities(cfg: ExperimentConfig, out: Path, quiet=False):
    """Matrix-level residual suite: exact identities, bracket routes,
    functional calculus, Schatten/determinant checks."""
    from .specops import (apply_function, quantize_radial, reg_determinant,
                          reg_determinant_eig_oracle, schatten_norm)

    rng = np.random.default_rng(cfg.seed())
    fam = OperatorFamily(h0=random_hermitian(rng, 6, 1.0),
                         v=random_hermitian(rng, 6, 0.6), h=0.5)
    f = SmoothFunction.bump(-4.0, 4.0)
    f_tilde = SmoothFunction.plateau(-4.0, 4.0, 1.5)
    K = random_hermitian(rng, 6, 1.0)
    rep = identity_residuals(fam, f, f_tilde, t=1.0, t0=0.7, K=K, eps=0.5)
    payload = rep.as_dict()
    payload["birman_solomyak"] = birman_solomyak_residual(
        fam, SmoothFunction.gaussian(0.0, 1.3))
    payload["duhamel"] = duhamel_residual(fam, t=1.0, eps=0.5)
    gaps = [eps_bracket(lambda e: float(np.exp(0.9 * e) * np.cos(e)),
                        QBracketConfig(q=q, route_tol=None)).discrepancy
            for q in (1, 2, 3)]
    payload["bracket_route_gap"] = max(gaps)
    # functional calculus: Helffer-Sjostrand order gain vs the spectral route
    H = np.real(random_hermitian(rng, 6, 1.0))
    H = H / np.max(np.abs(np.linalg.eigvalsh(H))) * 2.0
    fb = SmoothFunction.bump(-2.8, 2.8)
    exact = apply_function(H, fb, "spectral")
    hs_err = {N: float(np.max(np.abs(
        apply_function(H, fb, "helffer_sjostrand", N=N) - exact)))
        for N in (2, 4)}
    payload["hs_error_order2"] = hs_err[2]
    payload["hs_error_order4"] = hs_err[4]
    payload["hs_order_gain"] = hs_err[2] / hs_err[4]
    sym = lambda r, p: np.exp(-((r - np.pi) ** 2) / 0.5 - p**2 / 0.18)
    payload["quantization_trace_gaps"] = {
        str(h): quantize_radial(sym, h, n_grid=128).trace_discrepancy
        for h in (0.2, 0.1, 0.05)}
    # Schatten Hoelder triples and the determinant oracle
    worst = -np.inf
    for _ in range(1000):
        A = rng.standard_normal((5, 5))
        B = rng.standard_normal((5, 5))
        q = rng.uniform(1.0, 5.0)
        th = rng.uniform(0.15, 0.85)
        worst = max(worst, schatten_norm(A @ B, q)
                    - schatten_norm(A, q / th) * schatten_norm(B, q / (1 - th)))
    payload["hoelder_worst_margin"] = worst
    Ad = 0.3 * random_hermitian(rng, 6) + 0.1j * np.triu(np.ones((6, 6)))
    payload["det_oracle_gap"] = max(
        abs(reg_determinant(Ad, q) - reg_determinant_eig_oracle(Ad, q))
        for q in (1, 2, 3))
    files = [write_json(out / "identities_report.json", payload)]
    if not quiet:
        print(f"identities: max identity residual "
              f"{max(rep.as_dict().values()):.2e}, HS gain "
              f"{payload['hs_order_gain']:.0f}x, Hoelder margin "
              f"{worst:.1e}")
    return files, payload


def run_heat(cfg: ExperimentConfig, out: Path, quiet=False):
    metric = cfg.spectral_metric()
    grid = SpectralGrid(L=cfg.get("spectral", "L", float),
                        dr=cfg.get("spectral", "dr", float))
    modes = ModeOperatorSet(metric, grid)
    t_grid = cfg.t_grid()
    tail_tol = cfg.get("spectral", "tail_tol", float)
    qs = cfg.ints("spectral", "q_list")
    m_max = cfg.get("spectral", "m_max", int)
    series, fits, oracles = [], [], []
    payload = {"family": metric.name, "kappa": metric.kappa, "q": {}}
    files = []
    for q in qs:
        s = heat_trace_q(metric, q, t_grid, grid=grid, m_max=m_max,
                         tail_tol=tail_tol, modes=modes)
        fit = fit_heat_expansion(s, K=1.0)
        a0o, vol = a0_volume_oracle(metric, q, grid.L)
        series.append(s)
        fits.append(fit)
        oracles.append(a0o)
        files.append(write_csv(
            out / f"heat_q{q}.csv",
            ["t", "q", "value", "route_gap", "tail_bound"], s.to_rows(),
            meta={"m_max": m_max, "L": grid.L, "dr": grid.dr,
                  "family": metric.name}))
        payload["q"][str(q)] = {
            "a0_fit": fit.a0,
            "a0_oracle": a0o,
            "a0_rel_err": abs(fit.a0 - a0o) / abs(a0o),
            "a0_window_drift": fit.a0_window_drift,
            "route_gap": s.route_gap,
            "tail_estimate": s.tail_estimate,
            "volume_value": vol.value,
            "fit_condition": fit.condition,
            "coefficients": dict(zip([f"{e:+.1f}" for e in fit.exponents],
                                     [float(c) for c in fit.coefficients])),
        }
    # spectra and a sparse operator dump for the lowest modes
    spec_rows = []
    for m in (0, 1):
        for e in (0.0, 1.0):
            lam = np.sort(modes.eigenvalues(m, e))
            spec_rows.extend((m, e, k + 1, lv) for k, lv in enumerate(lam[:64]))
    files.append(write_csv(out / "spectrum.csv", ["m", "eps", "k", "lambda_k"],
                           spec_rows, meta={"L": grid.L, "dr": grid.dr}))
    op = modes.operator(1, 1.0)
    trip = [(i, i, v) for i, v in enumerate(op.diagonal)]
    trip.extend((i, i + 1, v) for i, v in enumerate(op.offdiagonal))
    trip.extend((i + 1, i, v) for i, v in enumerate(op.offdiagonal))
    files.append(write_csv(out / "operator.csv", ["i", "j", "value"], trip,
                           meta={"m": 1, "eps": 1.0}))
    files.append(write_json(out / "heat_report.json", payload))
    files.append(figures.plot_heat_fit(series, fits, oracles, out / "heat.svg"))
    if not quiet:
        for q in qs:
            d = payload["q"][str(q)]
            print(f"heat q={q}: a0 {d['a0_fit']:+.6f} vs oracle "
                  f"{d['a0_oracle']:+.6f} (rel {d['a0_rel_err']:.3%})")
    return files, payload


def run_ssf(cfg: ExperimentConfig, out: Path, quiet=False):
    metric = cfg.spectral_metric()
    grid = SpectralGrid(L=cfg.get("spectral", "L", float),
                        dr=cfg.get("spectral", "dr", float))
    modes = ModeOperatorSet(metric, grid)
    lam = cfg.lambda_grid()
    delta = cfg.get("spectral", "delta", float)
    m_max = cfg.get("spectral", "m_max", int)
    qs = cfg.ints("spectral", "q_list")
    samples = []
    payload = {"family": metric.name, "kappa": metric.kappa, "q": {}}
    files = []
    rows = []
    for q in qs:
        s = xi_q(metric, q, lam, delta, grid=grid, m_max=m_max, modes=modes)
        samples.append(s)
        rows.extend((lv, q, xv, delta) for lv, xv in zip(s.lam, s.values))
        b0, _ = b0_volume_oracle(metric, q, grid.L)
        rep = weyl_probe(s, b0)
        # continuity probe on a refined grid
        s2 = xi_q(metric, q, cfg.lambda_grid(refine=3), delta, grid=grid,
                  m_max=m_max, modes=modes)
        payload["q"][str(q)] = dict(rep.to_dict(),
                                    route_gap=s.route_gap,
                                    max_jump_refined=float(
                                        np.max(np.abs(np.diff(s2.values)))))
    files.append(write_csv(out / "ssf.csv", ["lambda", "q", "xi", "delta"],
                           rows, meta={"m_max": m_max, "L": grid.L,
                                       "dr": grid.dr, "family": metric.name}))
    files.append(write_json(out / "ssf_report.json", payload))
    files.append(figures.plot_xi(samples, out / "xi.svg"))
    if not quiet:
        for q in qs:
            d = payload["q"][str(q)]
            print(f"ssf q={q}: slope {d['slope']:.3f} (target {d['slope_target']}), "
                  f"coeff rel err {d['coefficient_rel_err']:.3%}")
    return files, payload


def run_report(cfg: ExperimentConfig, out: Path, quiet=False):
    """Aggregate report: reuse existing artifacts, compute what is missing."""
    sections = {}
    files = []
    for name, runner in (("flow", run_flow_verify), ("identities", run_identities),
                         ("heat", run_heat), ("ssf", run_ssf)):
        artifact = out / f"{name if name != 'flow' else 'flow'}_report.json"
        if artifact.is_file():
            sections[name] = json.loads(artifact.read_text())
        else:
            _, sections[name] = runner(cfg, out, quiet=True)
    report = {"config": cfg.path, "seed": cfg.seed(), "sections": sections}
    files.append(write_json(out / "report.json", report))
    # figures from the aggregated data
    metric = cfg.spectral_metric()
    grid = SpectralGrid(L=cfg.get("spectral", "L", float),
                        dr=cfg.get("spectral", "dr", float))
    if not (out / "xi.svg").is_file():
        modes = ModeOperatorSet(metric, grid)
        sample = xi_q(metric, 1, cfg.lambda_grid(),
                      cfg.get("spectral", "delta", float), grid=grid,
                      m_max=cfg.get("spectral", "m_max", int), modes=modes)
        files.append(figures.plot_xi([sample], out / "xi.svg"))
    if not quiet:
        print(f"report: {out / 'report.json'}")
    return files, report


RUNNERS = {
    "flow-verify": run_flow_verify,
    "eikonal": run_eikonal,
    "transport": run_transport,
    "identities": run_identities,
    "heat": run_heat,
    "ssf": run_ssf,
    "report": run_report,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(
        prog="hyperscat",
        description="Desk-scale scattering-phase laboratory on hyperbolic "
                    "funnel ends")
    sub = ap.add_subparsers(dest="command")
    runp = sub.add_parser("run", help="run an experiment subcommand")
    runp.add_argument("subcommand", choices=SUBCOMMANDS)
    runp.add_argument("config", nargs="?", default=None,
                      help="experiment config file (defaults used if omitted)")
    runp.add_argument("--config", dest="config_flag", default=None)
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--set", dest="overrides", action="append", default=[],
                      metavar="SECTION.KEY=VALUE")
    runp.add_argument("--quiet", action="store_true")
    dump = sub.add_parser("default-config", help="print the default config")
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "default-config":
        print(DEFAULT_CONFIG.strip())
        return 0
    if args.command != "run":
        ap.print_help()
        return 1
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"output.seed={args.seed}")
        cfg = load_config(args.config_flag or args.config, overrides)
        out = cfg.out_dir(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except InvalidArgument as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    stale = out / "STALE"
    try:
        stale.write_text(f"{args.subcommand} in progress; outputs may be "
                         "partial\n")
        RUNNERS[args.subcommand](cfg, out, quiet=args.quiet)
    except InvalidArgument as exc:
        print(f"validation error [{args.subcommand}]: {exc}", file=sys.stderr)
        return 1
    except HyperscatError as exc:
        stale.write_text(f"{args.subcommand} failed: {type(exc).__name__}; "
                         "outputs from this run are partial\n")
        print(f"numeric/tolerance failure [{args.subcommand}]: "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    stale.unlink(missing_ok=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
