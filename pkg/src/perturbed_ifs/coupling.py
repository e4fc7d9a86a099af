"""The coupled chain on X^2 x {0, 1} and its coupling-time statistics.

One coupled step draws a single perturbation h shared by both coordinates
and a pair of jump times from the minimal coupling of ``p(x, .)`` and
``p(y, .)``.  ``theta = 1`` marks a step where the common-time branch was
taken.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._parallel import map_spans
from .model import ModelSpec, check_assumptions
from .rng import RngStream
from .sampling import as_points, coupled_times_from_uniforms, h_from_uniforms, h_uniform_count

__all__ = [
    "CoupledState",
    "CoupledPath",
    "CoupledBatch",
    "TailReport",
    "QMassReport",
    "coupled_step",
    "simulate_coupled",
    "simulate_coupled_batch",
    "coupling_time",
    "coupling_times",
    "hitting_time",
    "hitting_times",
    "tail_report",
    "q_mass_check",
    "wilson_interval",
]


@dataclass(frozen=True)
class CoupledState:
    x: np.ndarray
    y: np.ndarray
    theta: int


@dataclass
class CoupledPath:
    """States ``x[0..H]``, ``y[0..H]``, flags ``theta[0..H]`` (``theta[0] = 1``),
    and the per-step times ``t_x[k]``, ``t_y[k]`` and shared ``h[k]`` for step ``k + 1``.
    """

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    t_x: np.ndarray
    t_y: np.ndarray
    h: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.theta) - 1

    def state(self, k: int) -> CoupledState:
        return CoupledState(self.x[k], self.y[k], int(self.theta[k]))


@dataclass
class CoupledBatch:
    """Lockstep replicas of the coupled chain; leading axis is the replica."""

    x: np.ndarray
    y: np.ndarray
    theta: np.ndarray
    t_x: np.ndarray
    t_y: np.ndarray
    h: np.ndarray

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def horizon(self) -> int:
        return self.theta.shape[1] - 1

    def path(self, i: int) -> CoupledPath:
        return CoupledPath(self.x[i], self.y[i], self.theta[i], self.t_x[i], self.t_y[i], self.h[i])


def _coupled_uniforms(model: ModelSpec) -> int:
    return 3 + h_uniform_count(model)


def coupled_step_from_uniforms(model: ModelSpec, X: np.ndarray, Y: np.ndarray, U: np.ndarray):
    tx, ty, same = coupled_times_from_uniforms(model, X, Y, U[:, :3])
    h = h_from_uniforms(model, U[:, 3:])
    Xn = np.asarray(model.S(X, tx), dtype=float) + h
    Yn = np.asarray(model.S(Y, ty), dtype=float) + h
    return Xn, Yn, same.astype(np.int8), tx, ty, h


def coupled_step(model: ModelSpec, x, y, rng: RngStream) -> CoupledState:
    X = as_points(x, model.dim)[:1]
    Y = as_points(y, model.dim)[:1]
    U = np.atleast_1d(rng.uniform(_coupled_uniforms(model)))[None, :]
    xn, yn, th, *_ = coupled_step_from_uniforms(model, X, Y, U)
    return CoupledState(xn[0], yn[0], int(th[0]))


def simulate_coupled(model: ModelSpec, x0, y0, horizon: int, rng: RngStream) -> CoupledPath:
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if rng.is_batch:
        raise ValueError("simulate_coupled takes a single stream")
    k = _coupled_uniforms(model)
    d = model.dim
    x = np.empty((horizon + 1, d))
    y = np.empty((horizon + 1, d))
    theta = np.ones(horizon + 1, dtype=np.int8)
    tx, ty, h = np.empty(horizon), np.empty(horizon), np.empty((horizon, d))
    x[0] = as_points(x0, d)[0]
    y[0] = as_points(y0, d)[0]
    for n in range(horizon):
        U = np.atleast_1d(rng.uniform(k))[None, :]
        xn, yn, th, a, b, hh = coupled_step_from_uniforms(model, x[n:n + 1], y[n:n + 1], U)
        x[n + 1], y[n + 1], theta[n + 1], tx[n], ty[n], h[n] = xn[0], yn[0], th[0], a[0], b[0], hh[0]
    return CoupledPath(x, y, theta, tx, ty, h)


def simulate_coupled_batch(
    model: ModelSpec, x0, y0, horizon: int, rng: RngStream, replicas: int | None = None, threads: int = 1
) -> CoupledBatch:
    """Run ``replicas`` coupled chains in lockstep.

    ``x0``/``y0`` are single points (broadcast) or ``(replicas, dim)`` arrays.
    ``rng`` is a single stream (children are spawned) or a batch.
    """
    d = model.dim
    X0 = as_points(x0, d)
    Y0 = as_points(y0, d)
    R = replicas if replicas is not None else max(len(X0), len(Y0), len(rng))
    X0 = np.broadcast_to(X0, (R, d))
    Y0 = np.broadcast_to(Y0, (R, d))
    streams = rng if rng.is_batch else rng.spawn(R)
    if len(streams) != R:
        raise ValueError("need one stream per replica")
    k = _coupled_uniforms(model)

    def work(lo, hi):
        sub = streams.subset(lo, hi)
        m = hi - lo
        x = np.empty((m, horizon + 1, d))
        y = np.empty((m, horizon + 1, d))
        theta = np.ones((m, horizon + 1), dtype=np.int8)
        tx, ty, h = np.empty((m, horizon)), np.empty((m, horizon)), np.empty((m, horizon, d))
        x[:, 0], y[:, 0] = X0[lo:hi], Y0[lo:hi]
        for n in range(horizon):
            out = coupled_step_from_uniforms(model, x[:, n], y[:, n], sub.uniform(k))
            x[:, n + 1], y[:, n + 1], theta[:, n + 1], tx[:, n], ty[:, n], h[:, n] = out
        return x, y, theta, tx, ty, h

    parts = map_spans(work, R, threads)
    streams.counter += horizon * ((k + 1) // 2)
    return CoupledBatch(*(np.concatenate([p[i] for p in parts]) for i in range(6)))


def coupling_times(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`coupling_time` over rows of ``theta[:, 0..H]``.

    tau = 1 + (last k in 1..H with theta_k = 0), or 1 without zeros.  The
    all-ones tail is confirmed only if it lasts at least ``max(1, H // 10)``
    steps; shorter tails are flagged as censored.
    """
    th = np.atleast_2d(np.asarray(theta))
    H = th.shape[1] - 1
    zero = th[:, 1:] == 0
    any_zero = zero.any(axis=1)
    last = np.where(any_zero, H - np.argmax(zero[:, ::-1], axis=1), 0)
    tau = last + 1
    censored = any_zero & (last > H - max(1, H // 10))
    return tau, censored


def coupling_time(path: CoupledPath | np.ndarray) -> tuple[int, bool]:
    theta = path.theta if isinstance(path, CoupledPath) else np.asarray(path)
    tau, cens = coupling_times(theta[None, :])
    return int(tau[0]), bool(cens[0])


def _vbar(model_xbar: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x - model_xbar, axis=-1) + np.linalg.norm(y - model_xbar, axis=-1)


def hitting_times(vbar: np.ndarray, threshold: float) -> np.ndarray:
    """First n >= 1 with ``vbar[:, n] < threshold``; ``H + 1`` if never."""
    v = np.atleast_2d(vbar)[:, 1:]
    hit = v < threshold
    return np.where(hit.any(axis=1), np.argmax(hit, axis=1) + 1, v.shape[1] + 1)


def hitting_time(path: CoupledPath, kappa_frac: float, a: float, c: float, xbar=0.0) -> int:
    """First visit time of the set {V(x) + V(y) < 2c / kappa}, kappa = kappa_frac (1 - a)."""
    if not 0.0 < kappa_frac < 1.0:
        raise ValueError("kappa_frac must lie in (0, 1)")
    kappa = kappa_frac * (1.0 - a)
    vbar = _vbar(np.atleast_1d(np.asarray(xbar, dtype=float)), path.x, path.y)
    return int(hitting_times(vbar[None, :], 2.0 * c / kappa)[0])


def wilson_interval(p: np.ndarray, n: int, z: float = 1.959963984540054) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # rounding can push an endpoint past p when p is 0 or 1
    return np.clip(np.minimum(centre - half, p), 0.0, 1.0), np.clip(np.maximum(centre + half, p), 0.0, 1.0)


def _log_slope(n: np.ndarray, p: np.ndarray) -> tuple[float, float, int]:
    keep = p > 0
    if keep.sum() < 3:
        return math.nan, math.nan, int(keep.sum())
    x, y = n[keep].astype(float), np.log(p[keep])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2, int(keep.sum())


@dataclass
class TailReport:
    horizon: int
    replicas: int
    n: np.ndarray
    p_tau: np.ndarray
    p_tau_lo: np.ndarray
    p_tau_hi: np.ndarray
    p_d: np.ndarray
    p_d_lo: np.ndarray
    p_d_hi: np.ndarray
    tau_slope: float
    tau_r_squared: float
    tau_fit_points: int
    d_slope: float
    d_r_squared: float
    censored_fraction: float
    moment: float
    moment_se: float
    kappa: float
    zeta: float

    @property
    def degenerate(self) -> bool:
        return not math.isfinite(self.tau_slope)

    def rows(self) -> list[tuple]:
        return list(zip(self.n, self.p_tau, self.p_tau_lo, self.p_tau_hi, self.p_d, self.p_d_lo, self.p_d_hi))


def tail_report(
    model: ModelSpec,
    x0,
    y0,
    horizon: int,
    replicas: int,
    rng: RngStream,
    kappa_frac: float = 0.5,
    zeta: float = 0.5,
    threads: int = 1,
) -> TailReport:
    """Empirical tails of the coupling time and of the first visit time to the small set.

    Tails are reported for n <= horizon / 2 only.  The geometric slope is a
    least-squares fit of log P(tau > n) over the nonzero points.  ``moment``
    is the sample mean of (a + kappa)^(-zeta d).
    """
    if replicas < 1000:
        raise ValueError("tail_report needs at least 1000 replicas")
    if not 0.0 < zeta < 1.0 or not 0.0 < kappa_frac < 1.0:
        raise ValueError("zeta and kappa_frac must lie in (0, 1)")
    rep = check_assumptions(model)
    a, c = rep.a_hat, rep.c_hat
    kappa = kappa_frac * (1.0 - a)
    batch = simulate_coupled_batch(model, x0, y0, horizon, rng, replicas, threads)
    tau, censored = coupling_times(batch.theta)
    d = hitting_times(_vbar(model.xbar, batch.x, batch.y), 2.0 * c / kappa)
    ns = np.arange(0, horizon // 2 + 1)
    p_tau = (tau[None, :] > ns[:, None]).mean(axis=1)
    p_d = (d[None, :] > ns[:, None]).mean(axis=1)
    t_lo, t_hi = wilson_interval(p_tau, replicas)
    d_lo, d_hi = wilson_interval(p_d, replicas)
    slope, r2, npts = _log_slope(ns, p_tau)
    d_slope, d_r2, _ = _log_slope(ns, p_d)
    cens = float(censored.mean())
    if cens > 0.1:
        warnings.warn(f"censoring fraction {cens:.3f} exceeds 10%; horizon too short for slope fitting")
    w = (a + kappa) ** (-zeta * d.astype(float))
    return TailReport(
        horizon=horizon,
        replicas=replicas,
        n=ns,
        p_tau=p_tau,
        p_tau_lo=t_lo,
        p_tau_hi=t_hi,
        p_d=p_d,
        p_d_lo=d_lo,
        p_d_hi=d_hi,
        tau_slope=slope,
        tau_r_squared=r2,
        tau_fit_points=npts,
        d_slope=d_slope,
        d_r_squared=d_r2,
        censored_fraction=cens,
        moment=float(w.mean()),
        moment_se=float(w.std(ddof=1) / math.sqrt(replicas)),
        kappa=kappa,
        zeta=zeta,
    )


@dataclass
class QMassReport:
    pairs: np.ndarray
    n: int
    r: float
    a_tilde: float
    probability: np.ndarray
    se: np.ndarray
    gamma_bar: float

    @property
    def bound(self) -> float:
        return self.gamma_bar**self.n

    @property
    def all_positive(self) -> bool:
        return bool(np.all(self.probability > 0))

    @property
    def all_above_bound(self) -> bool:
        return bool(np.all(self.probability >= self.bound))


def q_mass_check(
    model: ModelSpec,
    pairs,
    n: int,
    replicas: int,
    rng: RngStream,
    a_tilde: float = 0.9,
    r: float | None = None,
    threads: int = 1,
) -> QMassReport:
    """Empirical P(theta_1 = ... = theta_n = 1 and |x_n - y_n| < a_tilde^n r) per start pair.

    ``r`` defaults to the largest pair distance; pairs at distance exactly
    ``r`` are accepted.  The comparison value gamma_bar^n with
    gamma_bar = delta (1 - a / a_tilde) / M is informational.
    """
    rep = check_assumptions(model)
    if not rep.a_hat < a_tilde < 1.0:
        raise ValueError("a_tilde must lie in (a, 1)")
    P = np.asarray(pairs, dtype=float).reshape(-1, 2, model.dim)
    dist = np.linalg.norm(P[:, 0] - P[:, 1], axis=-1)
    r = float(dist.max()) if r is None else float(r)
    if np.any(dist > r * (1 + 1e-9) + 1e-15):
        raise ValueError("every pair must lie within distance r")
    probs, ses = np.empty(len(P)), np.empty(len(P))
    for i, (x, y) in enumerate(P):
        b = simulate_coupled_batch(model, x, y, n, rng, replicas, threads)
        dn = np.linalg.norm(b.x[:, n] - b.y[:, n], axis=-1)
        # coalesced pairs lie in every ball, including the degenerate r = 0 one
        ev = np.all(b.theta[:, 1:] == 1, axis=1) & ((dn < a_tilde**n * r) | (dn == 0.0))
        probs[i] = ev.mean()
        ses[i] = math.sqrt(probs[i] * (1 - probs[i]) / replicas)
    gamma_bar = rep.delta_hat * (1.0 - rep.a_hat / a_tilde) / rep.M_hat
    return QMassReport(P, n, r, a_tilde, probs, ses, gamma_bar)
