"""Batch front-end: ``perturbed-ifs <subcommand> --config FILE --seed N --out DIR --threads N``.

Exit codes: 0 ok, 2 configuration error, 3 assumption check failed, 4 I/O error.
Every data file is a pure function of (config, seed); wall time and thread
count go to ``timing.json`` only.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .chain import EmpiricalMeasure, drift_check, evolve, simulate, stationary_estimate
from .climit import center_g, clt_report, eta_checkpoints, mw_summands
from .coupling import q_mass_check, simulate_coupled, tail_report
from .io import ConfigError, RunConfig, load_config, read_csv, write_csv, write_json
from .metrics import PairStart, bl_distance, convergence_curve
from .model import ModelError, build_model, check_assumptions
from .rng import rng_stream

SUBCOMMANDS = ("check", "simulate", "couple", "distance", "rate", "clt", "mw")

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_IO = 0, 2, 3, 4


class AssumptionFailure(RuntimeError):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


class Run:
    """Holds the model, the provenance stamp and the output directory for one invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.exp = cfg.experiment
        self.out = Path(cfg.out)
        try:
            self.model = build_model(dict(cfg.model))
        except (ModelError, TypeError) as exc:
            raise ConfigError(f"invalid model: {exc}") from exc
        self.provenance = {"config_hash": cfg.hash, "seed": cfg.seed, "version": __version__}
        self.files: list[str] = []

    def stream(self, purpose: int):
        # one independent top-level stream per experiment component
        return rng_stream(self.cfg.seed, purpose)

    def csv(self, name: str, columns, rows):
        write_csv(self.out / name, columns, rows, self.provenance)
        self.files.append(name)

    def certify(self, t_grid: int | None = None):
        rep = check_assumptions(self.model, t_grid=t_grid or 1024)
        if not rep.all_ok:
            raise AssumptionFailure(f"assumption check failed: {rep.to_dict()}")
        return rep


def cmd_check(run: Run) -> dict:
    e = run.exp
    _require(e.t_grid >= 64 and e.x_grid >= 64, "t_grid and x_grid must be at least 64")
    rep = check_assumptions(run.model, t_grid=e.t_grid, x_grid=e.x_grid)
    write_json(run.out / "report.json", {**rep.to_dict(), **run.provenance})
    run.files.append("report.json")
    summary = {"report": rep.to_dict(), "verdict": "pass" if rep.all_ok else "fail"}
    if not rep.all_ok:
        summary["_exit"] = EXIT_ASSUMPTION
    return summary


def _point_cols(prefix: str, dim: int) -> list[str]:
    return [prefix] if dim == 1 else [f"{prefix}{i}" for i in range(dim)]


def cmd_simulate(run: Run) -> dict:
    e, m = run.exp, run.model
    _require(e.n >= 1, "n must be at least 1")
    _require(e.replicas >= 1000, "replicas must be at least 1000")
    run.certify()
    x0 = e.point("x0")
    traj = simulate(m, x0, e.n, run.stream(1))
    rows = []
    for k in range(e.n + 1):
        t = traj.times[k - 1] if k else float("nan")
        h = traj.perturbations[k - 1] if k else np.full(m.dim, np.nan)
        rows.append([k, *traj.states[k], t, *h])
    run.csv("trajectory.csv", ["step", *_point_cols("x", m.dim), "t", *_point_cols("h", m.dim)], rows)
    dr = drift_check(m, x0, e.n, e.replicas, run.stream(2), threads=run.cfg.threads)
    run.csv(
        "drift.csv",
        ["n", "v_mean", "v_se", "v_bound", "v2_mean", "v2_se", "v2_bound"],
        zip(dr.n, dr.v_mean, dr.v_se, dr.v_bound, dr.v2_mean, dr.v2_se, dr.v2_bound),
    )
    first, second = dr.satisfied()
    return {"drift_first_ok": bool(first.all()), "drift_second_ok": bool(second.all()), "a": dr.a, "Lambda": dr.Lambda, "c": dr.c}


def cmd_couple(run: Run) -> dict:
    e, m = run.exp, run.model
    _require(e.horizon >= 1, "horizon must be at least 1")
    _require(e.replicas >= 1000, "replicas must be at least 1000")
    _require(0 < e.kappa_frac < 1 and 0 < e.zeta < 1, "kappa_frac and zeta must lie in (0, 1)")
    rep = run.certify()
    _require(rep.a_hat < e.a_tilde < 1, "a_tilde must lie in (a, 1)")
    x0, y0 = e.point("x0"), e.point("y0")
    path = simulate_coupled(m, x0, y0, e.horizon, run.stream(3))
    rows = []
    for k in range(e.horizon + 1):
        tx = path.t_x[k - 1] if k else float("nan")
        ty = path.t_y[k - 1] if k else float("nan")
        h = path.h[k - 1] if k else np.full(m.dim, np.nan)
        rows.append([k, *path.x[k], *path.y[k], int(path.theta[k]), tx, ty, *h])
    cols = ["step", *_point_cols("x", m.dim), *_point_cols("y", m.dim), "theta", "t_x", "t_y", *_point_cols("h", m.dim)]
    run.csv("path.csv", cols, rows)
    tr = tail_report(m, x0, y0, e.horizon, e.replicas, run.stream(4), e.kappa_frac, e.zeta, threads=run.cfg.threads)
    run.csv("tail.csv", ["n", "p_tau", "p_tau_lo", "p_tau_hi", "p_d", "p_d_lo", "p_d_hi"], tr.rows())
    xs = np.linspace(e.pair_lo, e.pair_hi, e.n_pairs)
    pairs = [([x] * m.dim, [x + e.pair_distance] + [x] * (m.dim - 1)) for x in xs]
    q = q_mass_check(m, pairs, e.q_steps, e.replicas, run.stream(5), e.a_tilde, e.pair_distance, threads=run.cfg.threads)
    run.csv("qmass.csv", ["pair", "x", "y", "probability", "se", "bound"],
            [[i, p[0][0], p[1][0], q.probability[i], q.se[i], q.bound] for i, p in enumerate(q.pairs)])
    return {
        "tau_slope": tr.tau_slope,
        "tau_r_squared": tr.tau_r_squared,
        "censored_fraction": tr.censored_fraction,
        "d_moment": tr.moment,
        "d_moment_se": tr.moment_se,
        "gamma_bar": q.gamma_bar,
        "qmass_all_positive": q.all_positive,
        "qmass_above_bound": q.all_above_bound,
    }


def _read_cloud(path: str, dim: int) -> EmpiricalMeasure:
    header, rows = read_csv(path)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    if "weight" in header:
        w = data[:, header.index("weight")]
        pts = np.delete(data, header.index("weight"), axis=1)
        return EmpiricalMeasure(pts[:, :dim], w / w.sum())
    return EmpiricalMeasure(data[:, :dim])


def cmd_distance(run: Run) -> dict:
    e, m = run.exp, run.model
    if e.cloud_a or e.cloud_b:
        _require(bool(e.cloud_a and e.cloud_b), "give both cloud_a and cloud_b")
        try:
            mu, nu = _read_cloud(e.cloud_a, m.dim), _read_cloud(e.cloud_b, m.dim)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read clouds: {exc}") from exc
    else:
        _require(e.particles >= 1, "particles must be positive")
        _require(e.n >= 0, "n must be nonnegative")
        run.certify()
        mu = EmpiricalMeasure.point_mass(e.point("x0"), e.particles)
        nu = EmpiricalMeasure.point_mass(e.point("y0"), e.particles)
        for cloud in evolve(m, mu, e.n, run.stream(6), run.cfg.threads):
            mu = cloud
        for cloud in evolve(m, nu, e.n, run.stream(7), run.cfg.threads):
            nu = cloud
    _require(e.bl_method in ("auto", "line", "transport", "lp"), "bl_method must be auto, line, transport or lp")
    res = bl_distance(mu, nu, method=e.bl_method, cap=e.cap, bins=e.bins)
    run.csv("distance.csv", ["value", "status", "method", "support"], [[res.value, res.status, res.method, len(res.support)]])
    run.csv("witness.csv", _point_cols("z", m.dim) + ["f"], [[*z, f] for z, f in zip(res.support, res.witness)])
    return {"bl": res.value, "status": res.status, "method": res.method}


def cmd_rate(run: Run) -> dict:
    e, m = run.exp, run.model
    _require(e.particles >= 1000, "particles must be at least 1000")
    _require(e.n_max >= 2, "n_max must be at least 2")
    _require(e.mode in ("pair", "measure"), "mode must be pair or measure")
    run.certify()
    if e.mode == "pair":
        curve = convergence_curve(m, None, PairStart(e.point("x0"), e.point("y0")), e.n_max, e.particles,
                                  run.stream(8), threads=run.cfg.threads)
    else:
        _require(e.burn_in >= 1 and e.n_samples >= 2, "burn_in and n_samples must be positive")
        ref = stationary_estimate(m, e.burn_in, e.n_samples, run.stream(9), threads=run.cfg.threads)
        mu0 = EmpiricalMeasure.point_mass(e.point("x0"))
        curve = convergence_curve(m, mu0, ref, e.n_max, e.particles, run.stream(10), threads=run.cfg.threads)
    run.csv("curve.csv", ["n", "D", "noise_floor"], curve.rows())
    fit = curve.fit
    return {
        "mode": curve.mode,
        "q_hat": fit.q_hat if fit else None,
        "C_hat": fit.C_hat if fit else None,
        "r_squared": fit.r_squared if fit else None,
        "fit_range": list(fit.n_range) if fit else None,
    }


def _stationary(run: Run):
    e = run.exp
    _require(e.burn_in >= 1 and e.n_samples >= 2, "burn_in and n_samples must be positive")
    return stationary_estimate(run.model, e.burn_in, e.n_samples, run.stream(11), threads=run.cfg.threads)


def cmd_clt(run: Run) -> dict:
    e, m = run.exp, run.model
    _require(e.n >= 4, "n must be at least 4")
    _require(e.replicas >= 1000, "replicas must be at least 1000")
    run.certify()
    mu = _stationary(run)
    g = center_g(m, None, mu)
    init = "stationary" if e.init == "stationary" else e.point("x0")
    ns = sorted({max(1, e.n // 4), max(1, e.n // 2), e.n})
    cps = eta_checkpoints(m, g, ns, e.replicas, init, run.stream(12), mu, run.cfg.threads)
    rep = clt_report(cps[e.n], e.n, cps)
    run.csv("eta.csv", ["replica", "eta"], enumerate(cps[e.n]))
    counts, edges = np.histogram(cps[e.n], bins=40)
    run.csv("histogram.csv", ["lo", "hi", "count"], zip(edges[:-1], edges[1:], counts))
    run.csv("variance.csv", ["n", "variance"], sorted(rep.variance_curve.items()))
    return {"n": e.n, "replicas": e.replicas, "mean": rep.mean, "variance": rep.variance, "ks": rep.ks,
            "m_hat": g.m_hat, "m_se": g.se}


def cmd_mw(run: Run) -> dict:
    e, m = run.exp, run.model
    _require(e.n_max >= 1, "n_max must be at least 1")
    _require(e.inner_replicas >= 2 and e.outer >= 1, "inner_replicas >= 2 and outer >= 1 required")
    run.certify()
    mu = _stationary(run)
    g = center_g(m, None, mu)
    ns, s = mw_summands(m, g, mu, e.n_max, e.inner_replicas, run.stream(13), e.outer, threads=run.cfg.threads)
    run.csv("mw.csv", ["n", "s_n", "scaled"], zip(ns, s, s * ns**1.5))
    scaled = s * ns**1.5
    ref = scaled[min(7, len(ns) - 1)]
    return {"sum_s": float(s.sum()), "max_scaled_over_n8": float(scaled.max() / ref) if ref > 0 else None}


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "couple": cmd_couple,
    "distance": cmd_distance,
    "rate": cmd_rate,
    "clt": cmd_clt,
    "mw": cmd_mw,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perturbed-ifs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with [model], [experiment] and [run] sections")
        p.add_argument("--seed", type=int, help="overrides [run] seed")
        p.add_argument("--out", help="output directory (overrides [run] out)")
        p.add_argument("--threads", type=int, help="worker threads; never changes results")
    return parser


def _error_record(out: Path | None, code: int, exc: BaseException) -> None:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(out / "error.json", record)
        except OSError:
            pass


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    # known before the config loads, so config errors can still be recorded
    out = Path(args.out) if args.out is not None else None
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        if args.threads is not None:
            cfg.threads = args.threads
        _require(0 <= cfg.seed < 2**64, "seed must be a 64-bit unsigned integer")
        _require(cfg.threads >= 1, "threads must be at least 1")
        out = Path(cfg.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out}: {exc}") from exc
        run = Run(cfg)
        t0 = time.perf_counter()
        summary = COMMANDS[args.command](run)
        wall = time.perf_counter() - t0
        code = summary.pop("_exit", EXIT_OK)
        summary.update(command=args.command, files=sorted(run.files), model=run.model.describe(), **run.provenance)
        write_json(out / "summary.json", summary)
        write_json(out / "timing.json", {"wall_time_s": wall, "threads": cfg.threads, "command": args.command})
        return code
    except (ConfigError, ModelError, ValueError) as exc:
        _error_record(out, EXIT_CONFIG, exc)
        return EXIT_CONFIG
    except AssumptionFailure as exc:
        _error_record(out, EXIT_ASSUMPTION, exc)
        return EXIT_ASSUMPTION
    except OSError as exc:
        _error_record(None, EXIT_IO, exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
