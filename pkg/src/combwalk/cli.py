"""Batch command-line front end.

Every run writes its tables (CSV or JSON) into ``--out-dir`` together with a
``<stem>.manifest.json`` recording the subcommand, the fully resolved
parameters, seed, package version, wall time and the sha256 of each output.
``--from-manifest`` replays such a record.  Exit codes: 0 success, 2 invalid
arguments, 3 internal-consistency failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .boundstates import bound_state_residual, solve_bound_states
from .chainspec import (ChainHamiltonian, component_sizes, de_dv_exact, de_dv_fd, n_e_gt4_formula,
                        penrose, spectral_flow)
from .comb import CombConfig, e_gt4_density, ensemble_manifest, run_lengths, sample_comb, sample_ensemble
from .diffusion import (diffusion_report, ensemble_ploc, escape_amplitude_scaling, escape_asymptotics,
                        oracle_comparison, p_embedded, p_esc_all, p_loc)
from .errors import CombError, InternalConsistencyError, InvalidArgument
from .riccati import (E_MAX, egt4_p1_exact, idos_grid, lyapunov_binary_chain, lyapunov_egt4,
                      lyapunov_phase_shift, lyapunov_transfer, lyapunov_upsilon, min_lyapunov_egt4,
                      simulate_kappa, small_e_scaling, thouless_check, upsilon_p0_exact)
from .smatrix import compute_smatrix, phase_shift_eigensystem, phase_shift_residual

THREADS_ENV = "COMBWALK_THREADS"
EXIT_OK, EXIT_USAGE, EXIT_CONSISTENCY = 0, 2, 3
# parameters that only steer where / how a run happens, not what it computes
_META = {"out_dir", "config", "from_manifest", "replay_out_dir", "threads", "format", "handler", "command", "mode"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------- output

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


class Output:
    """Collects the tables and the summary of one run, then writes them."""

    def __init__(self, stem, out_dir, fmt):
        self.stem = stem
        self.out_dir = Path(out_dir)
        self.fmt = fmt
        self.tables = {}
        self.summary = {}

    def table(self, name, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    def write(self):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, (header, rows) in self.tables.items():
            suffix = f"_{name}" if name else ""
            if self.fmt == "csv":
                path = self.out_dir / f"{self.stem}{suffix}.csv"
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(header)
                    for r in rows:
                        w.writerow([_fmt(v) for v in r])
            else:
                path = self.out_dir / f"{self.stem}{suffix}.json"
                recs = [dict(zip(header, r)) for r in rows]
                path.write_text(json.dumps(_jsonable(recs), indent=1) + "\n")
            paths.append(path)
        if self.summary:
            path = self.out_dir / f"{self.stem}_summary.json"
            path.write_text(json.dumps(_jsonable(self.summary), indent=1, sort_keys=True) + "\n")
            paths.append(path)
        return paths


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, stem, command, params, seed, wall, paths):
    manifest = {
        "subcommand": command,
        "params": _jsonable(params),
        "seed": seed,
        "version": __version__,
        "wall_time_s": wall,
        "outputs": {Path(p).name: _digest(p) for p in paths},
    }
    path = Path(out_dir) / f"{stem}.manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- shared arguments

def _comb_from_args(a) -> CombConfig:
    if a.occupancy:
        return CombConfig.from_string(a.occupancy, a.boundary)
    if a.n_sites is None:
        raise InvalidArgument("give --occupancy or --n-sites (with --p and --seed)")
    return sample_comb(a.p, a.n_sites, a.boundary, a.seed)


def _add_comb(p, n_sites=None, boundary="open"):
    p.add_argument("--occupancy", default=None, help="0/1 string, 1 = tooth (overrides sampling)")
    p.add_argument("--p", type=float, default=0.5, help="hole probability")
    p.add_argument("--n-sites", type=int, default=n_sites)
    p.add_argument("--boundary", choices=("open", "periodic"), default=boundary)


def _grid(lo, hi, steps):
    if steps < 1:
        raise InvalidArgument("--steps must be >= 1")
    if steps == 1:
        return np.array([float(lo)])
    return np.linspace(lo, hi, steps)


def _ordered_map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _comb_summary(comb):
    return {"occupancy": comb.occupancy(), "boundary": comb.boundary, "n_sites": comb.n_sites,
            "n_teeth": comb.n_teeth, "digest": comb.digest()}


# ---------------------------------------------------------------- subcommands

def cmd_comb(a, out):
    combs = sample_ensemble(a.p, a.n_sites, a.boundary, a.seed, a.samples)
    rows = []
    for i, c in enumerate(combs):
        rl = run_lengths(c)
        rows.append([i, c.seed, c.n_sites, c.n_teeth, c.n_holes, rl.n_t_odd, n_e_gt4_formula(c),
                     c.occupancy()])
    out.table("", ["index", "seed", "n_sites", "n_teeth", "n_holes", "n_t_odd", "n_e_gt4", "occupancy"], rows)
    out.summary = ensemble_manifest(a.p, a.n_sites, a.boundary, a.seed, a.samples, combs)


def cmd_spectrum(a, out):
    comb = _comb_from_args(a)
    v = _grid(a.v_min, a.v_max, a.v_steps)
    flow = spectral_flow(comb, v)
    rows = []
    for k, vk in enumerate(v):
        for j, e in enumerate(flow.levels[k]):
            pv, pe = penrose(vk, e)
            rows.append([vk, j, e, pv, pe])
    out.table("", ["v", "level", "energy", "penrose_v", "penrose_e"], rows)
    chain = ChainHamiltonian(comb, a.v_max)
    out.summary = {"comb": _comb_summary(comb), "n_crossings": len(flow.crossings),
                   "component_sizes_at_v_max": list(component_sizes(chain)) if abs(a.v_max) > 4 else None,
                   "min_slope": float(flow.slopes.min()), "max_slope": float(flow.slopes.max())}


def cmd_bound(a, out):
    comb = _comb_from_args(a)
    states = solve_bound_states(comb)
    rows = [[i, s.sigma, s.energy, s.cluster, s.norm_sq, bound_state_residual(comb, s)]
            for i, s in enumerate(states)]
    out.table("", ["index", "sigma", "energy", "cluster", "norm_sq", "residual"], rows)
    if a.amplitudes:
        out.table("amplitudes", ["state", "site", "amplitude"],
                  [[i, n, x] for i, s in enumerate(states) for n, x in enumerate(s.normalized())])
    out.summary = {"comb": _comb_summary(comb), "n_bound": len(states), "predicted": states.predicted,
                   "rejected_sigmas": states.rejected_sigmas}


def cmd_smatrix(a, out):
    comb = _comb_from_args(a)
    if a.theta is not None:
        ss = compute_smatrix(comb, a.theta)
        s = ss.s_full
        out.table("", ["row", "col", "re", "im"],
                  [[i, j, s[i, j].real, s[i, j].imag] for i in range(s.shape[0]) for j in range(s.shape[1])])
        ph = phase_shift_eigensystem(comb, a.theta)
        out.table("phases", ["index", "delta", "pi_flag"],
                  [[i, d, f] for i, (d, f) in enumerate(zip(ph.phases, ph.pi_flags))])
        out.summary = {"comb": _comb_summary(comb), "theta": a.theta, "theta_used": ss.theta_used,
                       "cond_x": ss.cond_x, "residuals": ss.residuals(),
                       "phase_shift_residual": float(np.max(phase_shift_residual(comb, ph), initial=0.0))}
        return
    thetas = np.pi * (np.arange(a.theta_steps) + 0.5) / a.theta_steps
    rows = []
    names = None
    for th in thetas:
        ss = compute_smatrix(comb, th)
        res = ss.residuals()
        names = names or list(res)
        rows.append([th, ss.theta_used, ss.cond_x] + [res[k] for k in names])
    out.table("", ["theta", "theta_used", "cond_x"] + (names or []), rows)
    out.summary = {"comb": _comb_summary(comb)}


_LYAP_HEADER = ["x", "p", "gamma_bar", "stderr_gamma", "eta_bar", "stderr_eta", "n_iter", "seed"]


def cmd_lyapunov(a, out):
    xs = _grid(a.e_min, a.e_max, a.steps)
    fam = a.mode
    if fam == "egt4":
        fn = lambda x: lyapunov_egt4(x, a.p, a.iters, a.seed)  # noqa: E731
    elif fam == "upsilon":
        fn = lambda x: lyapunov_upsilon(x, a.p, a.iters, a.seed)  # noqa: E731
    elif fam == "phaseshift":
        fn = lambda x: lyapunov_phase_shift(x, a.delta, a.p, a.iters, a.seed)  # noqa: E731
    elif fam == "chain":
        fn = lambda x: lyapunov_binary_chain(x, a.v, a.p, a.iters, a.seed)  # noqa: E731
    else:
        fn = lambda x: lyapunov_transfer(x, a.v, a.p, a.iters, a.seed)  # noqa: E731
    ests = _ordered_map(fn, xs, a.threads)
    rows = [[x, a.p, e.gamma_bar, e.stderr_gamma, e.eta_bar, e.stderr_eta, e.n_iter, e.seed]
            for x, e in zip(xs, ests)]
    out.table("", _LYAP_HEADER, rows)
    if fam == "egt4" and a.p == 1.0:
        out.summary = {"max_abs_error_vs_exact": float(np.max(np.abs(
            np.array([e.gamma_bar for e in ests]) - egt4_p1_exact(xs))))}
    elif fam == "upsilon" and a.p == 0.0:
        th = np.arccos(1.0 - xs / 2.0)
        out.summary = {"max_abs_error_vs_exact": float(np.max(np.abs(
            np.array([e.gamma_bar for e in ests]) - upsilon_p0_exact(th))))}


def cmd_idos(a, out):
    if a.mode == "egt4":
        xs = _grid(a.e_min, a.e_max, a.steps)
        ests = _ordered_map(lambda x: lyapunov_egt4(x, a.p, a.iters, a.seed), xs, a.threads)
        out.table("", ["energy", "eta_bar", "stderr_eta"], [[x, e.eta_bar, e.stderr_eta] for x, e in zip(xs, ests)])
        out.summary = {"density_at_e_max": e_gt4_density(a.p), "e_max": E_MAX}
    elif a.mode == "chain":
        xs = _grid(a.e_min, a.e_max, a.steps)
        eta = idos_grid(a.v, a.p, xs, a.iters, a.seed)
        out.table("", ["energy", "eta"], [[x, h] for x, h in zip(xs, eta)])
    else:
        energies = _grid(a.e_min, a.e_max, a.steps)
        rep = thouless_check(a.v, a.p, energies, a.points_per_band, a.iters, a.seed)
        out.table("", ["energy", "gamma", "stderr_gamma", "gamma_thouless", "deviation"],
                  [list(r) for r in zip(rep.energies, rep.gamma, rep.gamma_stderr, rep.gamma_thouless,
                                        rep.deviation)])
        out.summary = {"max_deviation": rep.max_deviation}


def cmd_scaling(a, out):
    if a.mode == "small-e":
        th = np.geomspace(a.theta_min, a.theta_max, a.points)
        fit = small_e_scaling(a.p, th, a.iters, a.seed)
        out.table("", ["theta", "gamma", "stderr_gamma"], list(zip(fit.thetas, fit.gamma, fit.gamma_stderr)))
        out.summary = {"p": a.p, "prefactor": fit.prefactor, "stderr": fit.stderr, "target": fit.target,
                       "relative_error": fit.relative_error}
    elif a.mode == "kappa":
        st = simulate_kappa(a.p, a.dt, a.n_steps, a.seed)
        out.summary = {"p": a.p, "mean": st.mean, "mean_stderr": st.mean_stderr, "cov": st.cov,
                       "cov_exact": st.cov_exact, "attractor": st.attractor, "fixed_point": st.fixed_point}
    else:
        m = min_lyapunov_egt4(a.p, np.linspace(4.0, E_MAX, a.points + 1)[1:], a.iters, a.seed)
        sw = m.sweep
        out.table("", ["energy", "gamma", "stderr_gamma", "eta", "stderr_eta"],
                  list(zip(sw.energies, sw.gamma, sw.stderr, sw.eta, sw.eta_stderr)))
        out.summary = {"gamma_min": m.gamma_min, "stderr": m.stderr, "energy": m.energy}


def cmd_diffusion(a, out):
    if a.mode == "report":
        comb = _comb_from_args(a)
        rep = diffusion_report(comb, a.start, a.tol)
        out.table("", ["tooth", "p_esc"], sorted(rep.p_esc_by_tooth.items()))
        out.table("profile", ["site", "p_loc"], list(enumerate(rep.profile)))
        out.summary = {"comb": _comb_summary(comb), "start": a.start, "p_loc": rep.p_loc,
                       "p_embedded": rep.p_embedded, "p_esc_total": float(sum(rep.p_esc_by_tooth.values())),
                       "completeness_residual": rep.completeness_residual,
                       "quadrature_error": rep.quadrature_error}
        if abs(rep.completeness_residual) > a.completeness_tol:
            out.write()
            raise InternalConsistencyError("completeness violated", residual=rep.completeness_residual)
    elif a.mode == "ensemble":
        st = ensemble_ploc(a.p, a.length, a.samples, a.seed, a.bins, a.threads)
        out.table("", ["bin_lo", "bin_hi", "tooth_count", "hole_count"],
                  [[st.bins[i], st.bins[i + 1], st.hist_tooth[i], st.hist_hole[i]] for i in range(a.bins)])
        gap = st.gap()
        out.summary = {"p": a.p, "length": a.length, "samples": a.samples, "mean": st.mean, "stderr": st.stderr,
                       "bound": st.bound, "within_bound": bool(st.mean <= st.bound + 3 * st.stderr),
                       "gap": gap}
    else:
        d = np.arange(a.d_min, a.d_max + 1, a.d_step)
        fit = escape_asymptotics(a.p, a.length, d, a.samples, a.seed, a.tol, a.starts, a.threads)
        out.table("", ["distance", "mean_p_esc", "stderr"], list(zip(fit.distances, fit.mean, fit.stderr)))
        out.summary = {"p": a.p, "exponent": fit.exponent, "coefficient": fit.coefficient,
                       "exponent_stderr": math.sqrt(fit.covariance[0, 0]),
                       "amplitude_estimate": escape_amplitude_scaling(a.p)}


def cmd_oracle(a, out):
    comb = _comb_from_args(a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cmp = oracle_comparison(comb, a.start, a.time, window=a.window, t_from=a.t_from,
                                tooth_length=a.tooth_length, dt=a.dt, dump_every=a.dump_every)
    out.table("", ["site", "tooth", "oracle", "formula", "relative_error"],
              [[n, comb.chi[n], cmp.oracle[n], cmp.formula[n], cmp.relative_error[n]]
               for n in range(comb.n_sites)])
    if a.dump_every:
        out.table("snapshots", ["time", "site", "prob"],
                  [[t, n, x] for t, prob in cmp.run.snapshots for n, x in enumerate(prob[:comb.n_sites])])
    out.summary = {"comb": _comb_summary(comb), "max_relative_error": cmp.max_relative_error,
                   "norm_drift": cmp.run.norm_drift, "trusted_until": cmp.run.trusted_until,
                   "tooth_length": cmp.run.tooth_length}


# ---------------------------------------------------------------- verify

def _verify_suite(quick, seed):
    """(name, passed, detail) for the cheap invariants of every module."""
    rng = np.random.default_rng(seed)
    n_comb = 20 if quick else 200
    out = []

    def rec(name, ok, detail):
        out.append((name, bool(ok), float(detail)))

    worst = 0
    for i in range(n_comb):
        comb = sample_comb(float(rng.choice([0.2, 0.5, 0.8])), int(rng.integers(1, 33)), "open", seed + i)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            n = len(solve_bound_states(comb, check=False))
        worst = max(worst, abs(n - n_e_gt4_formula(comb)))
    rec("bound count equals run-structure formula", worst == 0, worst)

    worst = 0.0
    for i in range(n_comb // 2):
        comb = sample_comb(0.5, int(rng.integers(2, 25)), "open", seed + 1000 + i)
        ch = ChainHamiltonian(comb, float(rng.uniform(-6, 6)))
        for lev in range(comb.n_sites):
            worst = max(worst, abs(de_dv_exact(ch, lev) - de_dv_fd(ch, lev)))
    rec("spectral slope exact vs finite difference", worst < 1e-6, worst)

    worst = 0.0
    for i in range(n_comb // 4):
        comb = sample_comb(0.5, int(rng.integers(1, 33)), "open", seed + 2000 + i)
        for th in rng.uniform(0.05, math.pi - 0.05, 4):
            res = compute_smatrix(comb, th, check=False).residuals()
            worst = max(worst, res["unitarity"], res["symmetry"], res["x_minus_y"], res["inverse_is_conj"])
    rec("scattering matrix unitary, symmetric, X - Y = -2i sin(theta) T", worst < 1e-9, worst)

    worst = 0.0
    for i in range(3 if quick else 10):
        comb = sample_comb(0.5, int(rng.integers(2, 17)), "periodic" if i % 2 else "open", seed + 3000 + i)
        n0 = int(rng.integers(comb.n_sites))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tot = p_loc(comb, n0) + p_embedded(comb, n0) + float(np.sum(p_esc_all(comb, n0, 1e-9).p_esc))
        worst = max(worst, abs(tot - 1.0))
    rec("completeness P^loc + P^emb + sum P^esc = 1", worst < 1e-6, worst)

    e = np.linspace(4.05, E_MAX, 5)
    err = max(abs(lyapunov_egt4(x, 1.0, 20000, seed).gamma_bar - float(egt4_p1_exact(x))) for x in e)
    rec("p = 1 Lyapunov exponent exact", err < 1e-10, err)

    est = lyapunov_egt4(E_MAX, 0.5, 200000 if quick else 10**6, seed)
    dev = abs(est.eta_bar - 1.0 / 3.0)
    rec("IDOS at E = 16/3, p = 0.5 equals 1/3", dev < max(3 * est.stderr_eta, 0.01), dev)
    return out


def cmd_verify(a, out):
    checks = _verify_suite(a.quick, a.seed)
    out.table("", ["check", "passed", "detail"], checks)
    failed = [c[0] for c in checks if not c[1]]
    out.summary = {"n_checks": len(checks), "failed": failed}
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail:.3g})")
    if failed:
        out.write()
        raise InternalConsistencyError(f"{len(failed)} invariant check(s) failed", failed=failed)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    common.add_argument("--out-dir", default=".")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--config", default=None, help="flat JSON object of flag values")

    top = _Parser(prog="combwalk", description="Quantum walks on random combs (batch front end).")
    top.add_argument("--version", action="version", version=__version__)
    top.add_argument("--from-manifest", default=None, help="replay the run recorded in a manifest")
    top.add_argument("--out-dir", dest="replay_out_dir", default=None, help=argparse.SUPPRESS)
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("comb", parents=[common], help="sample comb ensembles")
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--n-sites", type=int, default=64)
    p.add_argument("--boundary", choices=("open", "periodic"), default="open")
    p.add_argument("--samples", type=int, default=1)
    p.set_defaults(handler=cmd_comb)

    p = sub.add_parser("spectrum", parents=[common], help="spectral flow E(V) of the spine chain")
    _add_comb(p, 16)
    p.add_argument("--v-min", type=float, default=-8.0)
    p.add_argument("--v-max", type=float, default=8.0)
    p.add_argument("--v-steps", type=int, default=161)
    p.set_defaults(handler=cmd_spectrum)

    p = sub.add_parser("bound", parents=[common], help="E > 4 bound states")
    _add_comb(p, 32)
    p.add_argument("--amplitudes", action="store_true", help="also emit the spine amplitudes")
    p.set_defaults(handler=cmd_bound)

    p = sub.add_parser("smatrix", parents=[common], help="scattering matrix and its invariants")
    _add_comb(p, 16)
    p.add_argument("--theta", type=float, default=None, help="emit the full matrix at this theta")
    p.add_argument("--theta-steps", type=int, default=32)
    p.set_defaults(handler=cmd_smatrix)

    p = sub.add_parser("lyapunov", parents=[common], help="Riccati Lyapunov exponents on an energy grid")
    p.add_argument("mode", choices=("egt4", "upsilon", "phaseshift", "chain", "transfer"))
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--e-min", type=float, default=4.01)
    p.add_argument("--e-max", type=float, default=E_MAX)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--iters", type=int, default=10**5)
    p.add_argument("--delta", type=float, default=0.0, help="phase shift (phaseshift family)")
    p.add_argument("--v", type=float, default=3.0, help="binary-chain potential (chain, transfer)")
    p.set_defaults(handler=cmd_lyapunov)

    p = sub.add_parser("idos", parents=[common], help="integrated density of states")
    p.add_argument("mode", choices=("egt4", "chain", "thouless"))
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--v", type=float, default=3.0)
    p.add_argument("--e-min", type=float, default=4.01)
    p.add_argument("--e-max", type=float, default=E_MAX)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--iters", type=int, default=10**5)
    p.add_argument("--points-per-band", type=int, default=400)
    p.set_defaults(handler=cmd_idos)

    p = sub.add_parser("scaling", parents=[common], help="small-E scaling, kappa process, minimal gamma")
    p.add_argument("mode", choices=("small-e", "kappa", "min-gamma"))
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--theta-min", type=float, default=1e-4)
    p.add_argument("--theta-max", type=float, default=1e-2)
    p.add_argument("--points", type=int, default=9)
    p.add_argument("--iters", type=int, default=10**6)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--n-steps", type=int, default=None)
    p.set_defaults(handler=cmd_scaling)

    p = sub.add_parser("diffusion", parents=[common], help="localization and escape probabilities")
    p.add_argument("mode", choices=("report", "ensemble", "escape"))
    _add_comb(p, None, "periodic")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--length", type=int, default=200)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--completeness-tol", type=float, default=1e-6)
    p.add_argument("--d-min", type=int, default=20)
    p.add_argument("--d-max", type=int, default=100)
    p.add_argument("--d-step", type=int, default=10)
    p.add_argument("--starts", type=int, default=1, help="start sites per comb (escape)")
    p.set_defaults(handler=cmd_diffusion)

    p = sub.add_parser("oracle", parents=[common], help="direct time evolution against the spectral profile")
    _add_comb(p, 40, "periodic")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--time", type=float, default=500.0)
    p.add_argument("--tooth-length", type=int, default=None)
    p.add_argument("--window", type=int, default=30)
    p.add_argument("--t-from", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=0.5)
    p.add_argument("--dump-every", type=int, default=0)
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("verify", parents=[common], help="invariant suite")
    p.add_argument("mode", choices=("all",))
    p.add_argument("--quick", action="store_true")
    p.set_defaults(handler=cmd_verify)
    return top


def _apply_config(parser, argv, path):
    """Re-parse with config values as defaults so that explicit flags still win."""
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise InvalidArgument("config must be a flat JSON object")
    cfg = {k.lstrip("-").replace("-", "_"): v for k, v in cfg.items()}
    sub = parser._subparsers._group_actions[0].choices[argv[0]]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise InvalidArgument(f"unknown config keys: {', '.join(unknown)}")
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def _resolve_threads(value):
    if value is None:
        value = int(os.environ.get(THREADS_ENV, "1") or 1)
    if value < 1:
        raise InvalidArgument("--threads must be >= 1")
    return value


def _stem(args):
    return args.command if getattr(args, "mode", None) is None else f"{args.command}_{args.mode}".replace("-", "_")


def _run(args, command_line):
    args.threads = _resolve_threads(args.threads)
    params = {k: v for k, v in vars(args).items() if k not in _META}
    if getattr(args, "mode", None) is not None:
        params["mode"] = args.mode
    stem = _stem(args)
    out = Output(stem, args.out_dir, args.format)
    t0 = time.perf_counter()
    args.handler(args, out)
    paths = out.write()
    wall = time.perf_counter() - t0
    man = write_manifest(args.out_dir, stem, command_line, params, args.seed, wall, paths)
    for path in paths + [man]:
        print(path)
    return EXIT_OK


def _replay(parser, path, out_dir):
    try:
        man = json.loads(Path(path).read_text())
        command = man["subcommand"]
        params = dict(man["params"])
    except (OSError, ValueError, KeyError) as exc:
        raise InvalidArgument(f"cannot read manifest {path}: {exc}") from None
    argv = [command] + ([params.pop("mode")] if "mode" in params else [])
    args = parser.parse_args(argv)
    for k, v in params.items():
        setattr(args, k, v)
    args.out_dir = out_dir if out_dir is not None else str(Path(path).parent)
    return _run(args, command)


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.from_manifest:
            return _replay(parser, args.from_manifest, args.replay_out_dir)
        if args.command is None:
            parser.print_usage(sys.stderr)
            print("combwalk: error: a subcommand is required", file=sys.stderr)
            return EXIT_USAGE
        if args.config:
            args = _apply_config(parser, argv, args.config)
        return _run(args, args.command)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except InternalConsistencyError as exc:
        print(f"combwalk: internal consistency failure: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except (CombError, ValueError) as exc:
        print(f"combwalk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(dispatch())
