"""Normalized partial sums of a centred observable along the chain."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .chain import EmpiricalMeasure, advance
from .metrics import ks_statistic
from .model import ModelSpec
from .rng import RngStream
from .sampling import as_points

__all__ = [
    "Observable",
    "CLTReport",
    "clamp_observable",
    "center_g",
    "eta_samples",
    "eta_checkpoints",
    "clt_report",
    "mw_summands",
    "normal_cdf",
]

_erfc = np.frompyfunc(math.erfc, 1, 1)


def normal_cdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.asarray(0.5 * _erfc(-x / math.sqrt(2.0)), dtype=float)


@dataclass
class Observable:
    """g = g0 - m_hat with Lipschitz constant ``L_g`` and ``sup |g0| <= sup``."""

    g0: Callable[[np.ndarray], np.ndarray]
    L_g: float
    sup: float
    m_hat: float = 0.0
    se: float = 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.g0(x), dtype=float) - self.m_hat

    @property
    def G(self) -> float:
        return max(self.L_g, self.sup + abs(self.m_hat))

    def negated(self) -> Observable:
        g0 = self.g0
        return Observable(lambda x: -np.asarray(g0(x), dtype=float), self.L_g, self.sup, -self.m_hat, self.se)


def clamp_observable(mu_star_hat: EmpiricalMeasure) -> Callable[[np.ndarray], np.ndarray]:
    """g0(x) = clip(x - median, -1, 1) on the first coordinate; 1-Lipschitz, bounded by 1."""
    med = float(np.median(mu_star_hat.points[:, 0]))

    def g0(x):
        return np.clip(np.asarray(x, dtype=float)[..., 0] - med, -1.0, 1.0)

    return g0


def _chain_se(values: np.ndarray, mu: EmpiricalMeasure) -> float:
    """SE of the mean; uses whole-chain means when the cloud records interleaved chains."""
    chains = int(mu.meta.get("chains", 0) or 0)
    if chains > 1 and len(values) >= 2 * chains:
        steps = len(values) // chains
        means = values[: steps * chains].reshape(steps, chains).mean(axis=0)
        return float(means.std(ddof=1) / math.sqrt(chains))
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / math.sqrt(len(values)))


def center_g(
    model: ModelSpec,
    g0: Callable[[np.ndarray], np.ndarray] | None,
    mu_star_hat: EmpiricalMeasure,
    L_g: float = 1.0,
    sup: float = 1.0,
) -> Observable:
    """Centre ``g0`` against the invariant-measure proxy (default: the clamp observable)."""
    if g0 is None:
        g0 = clamp_observable(mu_star_hat)
        L_g, sup = 1.0, 1.0
    vals = np.asarray(g0(mu_star_hat.points), dtype=float)
    vals = np.broadcast_to(vals, (mu_star_hat.n,))
    m_hat = float(mu_star_hat.weights @ vals)
    return Observable(g0, float(L_g), float(sup), m_hat, _chain_se(vals, mu_star_hat))


def _initial_states(model, init, replicas, rng, mu_star_hat):
    if isinstance(init, str):
        if init != "stationary":
            raise ValueError(f"unknown init {init!r}")
        if mu_star_hat is None:
            raise ValueError("stationary start needs a cloud")
        u = rng.uniform(replicas)
        cdf = np.cumsum(mu_star_hat.weights)
        idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), mu_star_hat.n - 1)
        return mu_star_hat.points[idx].copy()
    return np.repeat(as_points(init, model.dim)[:1], replicas, axis=0)


def eta_checkpoints(
    model: ModelSpec,
    g: Observable,
    ns,
    replicas: int,
    init,
    rng: RngStream,
    mu_star_hat: EmpiricalMeasure | None = None,
    threads: int = 1,
) -> dict[int, np.ndarray]:
    """(g(x_1) + ... + g(x_n)) / sqrt(n) for every n in ``ns``, from the same paths."""
    ns = sorted({int(n) for n in ns})
    if not ns or ns[0] < 1:
        raise ValueError("n must be at least 1")
    X = _initial_states(model, init, replicas, rng, mu_star_hat)
    streams = rng.spawn(replicas)
    acc = np.zeros(replicas)
    out = {}
    for k in range(1, ns[-1] + 1):
        X = advance(model, X, streams, threads)
        acc += g(X)
        if k in ns:
            out[k] = acc / math.sqrt(k)
    return out


def eta_samples(
    model: ModelSpec,
    g: Observable,
    n: int,
    replicas: int,
    init,
    rng: RngStream,
    mu_star_hat: EmpiricalMeasure | None = None,
    threads: int = 1,
) -> np.ndarray:
    """``replicas`` independent copies of the normalized sum after ``n`` steps.

    ``init`` is ``"stationary"`` (start drawn from ``mu_star_hat``) or a point.
    """
    return eta_checkpoints(model, g, [n], replicas, init, rng, mu_star_hat, threads)[n]


@dataclass
class CLTReport:
    n: int | None
    replicas: int
    mean: float
    variance: float
    ks: float
    variance_curve: dict[int, float] | None = None


def clt_report(samples, n: int | None = None, variance_curve: dict[int, np.ndarray] | None = None) -> CLTReport:
    """Standardize by the sample mean and sd and compare with the standard normal."""
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 1000:
        raise ValueError("clt_report needs at least 1000 samples")
    sd = float(x.std(ddof=1))
    if not sd > 0:
        raise ValueError("zero-variance input")
    ks = ks_statistic((x - x.mean()) / sd, normal_cdf)
    curve = None if variance_curve is None else {int(k): float(np.var(v, ddof=1)) for k, v in sorted(variance_curve.items())}
    return CLTReport(n, len(x), float(x.mean()), sd * sd, ks, curve)


def mw_summands(
    model: ModelSpec,
    g: Observable,
    mu_star_hat: EmpiricalMeasure,
    n_max: int,
    inner_replicas: int,
    rng: RngStream,
    outer: int = 256,
    debias: bool = True,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """s_n = n^(-3/2) [ mean_x (sum_{k<n} <g, P^k delta_x>)^2 ]^(1/2) for n = 1..n_max.

    ``outer`` start points are drawn from the cloud; each gets
    ``inner_replicas`` paths, and every k uses the same paths.  With
    ``debias`` the inner-sampling variance of each squared partial sum is
    subtracted (clamped at zero).  Returns ``(n, s_n)``.
    """
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    starts = _initial_states(model, "stationary", outer, rng, mu_star_hat)
    X = np.repeat(starts, inner_replicas, axis=0)
    streams = rng.spawn(len(X))
    path_sums = np.zeros(len(X))
    S2 = np.empty(n_max)
    noise = np.empty(n_max)
    for n in range(1, n_max + 1):
        if n > 1:
            X = advance(model, X, streams, threads)
        path_sums += g(X)
        per = path_sums.reshape(outer, inner_replicas)
        est = per.mean(axis=1)
        var = per.var(axis=1, ddof=1) / inner_replicas if inner_replicas > 1 else np.zeros(outer)
        sq = est * est - var if debias else est * est
        S2[n - 1] = max(float(sq.mean()), 0.0)
        noise[n - 1] = float(var.mean())
    ns = np.arange(1, n_max + 1)
    raw = S2 + (noise if debias else 0.0)
    if np.any(noise > 0.5 * np.maximum(raw, 1e-300)):
        warnings.warn("inner Monte Carlo error dominates some partial sums; raise inner_replicas")
    return ns, ns**-1.5 * np.sqrt(S2)
