"""Forward simulation of the perturbed chain and particle approximations of its laws."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

from ._parallel import map_spans
from .model import ModelSpec, check_assumptions
from .rng import RngStream, rng_stream
from .sampling import as_points, h_from_uniforms, h_uniform_count, times_from_uniforms

__all__ = [
    "EmpiricalMeasure",
    "Trajectory",
    "DriftReport",
    "step",
    "simulate",
    "advance",
    "push_forward",
    "evolve",
    "stationary_estimate",
    "drift_check",
]


@dataclass
class EmpiricalMeasure:
    """A weighted particle cloud; ``points`` has shape ``(n, dim)``."""

    points: np.ndarray
    weights: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or len(pts) == 0:
            raise ValueError("points must be a non-empty (n, dim) array")
        self.points = pts
        if self.weights is None:
            self.weights = np.full(len(pts), 1.0 / len(pts))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(pts),):
            raise ValueError("weights and points differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        self.weights = w

    @classmethod
    def point_mass(cls, x, n: int = 1) -> EmpiricalMeasure:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(np.repeat(x[None, :], n, axis=0))

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(self.weights @ np.asarray(f(self.points), dtype=float))

    def split_half(self) -> tuple[EmpiricalMeasure, EmpiricalMeasure]:
        """Even- and odd-indexed particles as two equal-weight clouds.

        Clouds built here store independent replicas at alternating indices,
        so the halves are independent.
        """
        if self.n < 2:
            raise ValueError("need at least two particles to split")
        return EmpiricalMeasure(self.points[0::2]), EmpiricalMeasure(self.points[1::2])


@dataclass
class Trajectory:
    """States x_0..x_n with the jump times and perturbations that produced them."""

    states: np.ndarray
    times: np.ndarray
    perturbations: np.ndarray
    seed: int | None = None
    stream_id: int | None = None
    counter0: int = 0

    def __len__(self) -> int:
        return len(self.times)

    def replay_residual(self, model: ModelSpec) -> float:
        """max_k |x_{k+1} - S(x_k, t_{k+1}) - h_{k+1}|, evaluated step by step."""
        worst = 0.0
        for k in range(len(self.times)):
            nxt = np.asarray(model.S(self.states[k:k + 1], self.times[k:k + 1]), dtype=float)[0]
            worst = max(worst, float(np.max(np.abs(self.states[k + 1] - nxt - self.perturbations[k]))))
        return worst

    def replay(self, model: ModelSpec) -> Trajectory:
        """Re-simulate from the recorded stream and initial state."""
        if self.seed is None:
            raise ValueError("trajectory carries no stream provenance")
        rng = RngStream(self.seed, self.stream_id, self.counter0)
        return simulate(model, self.states[0], len(self), rng)


def _step_uniforms(model: ModelSpec) -> int:
    return 1 + h_uniform_count(model)


def step_from_uniforms(model: ModelSpec, X: np.ndarray, U: np.ndarray):
    t = times_from_uniforms(model, X, U[:, 0])
    h = h_from_uniforms(model, U[:, 1:])
    return np.asarray(model.S(X, t), dtype=float) + h, t, h


def step(model: ModelSpec, x, rng: RngStream):
    """One transition: t ~ p(x, .), h ~ perturbation law, x' = S(x, t) + h."""
    X = as_points(x, model.dim)[:1]
    U = np.atleast_1d(rng.uniform(_step_uniforms(model)))[None, :]
    xn, t, h = step_from_uniforms(model, X, U)
    return xn[0], float(t[0]), h[0]


def simulate(model: ModelSpec, x0, n: int, rng: RngStream) -> Trajectory:
    if n < 0:
        raise ValueError("n must be nonnegative")
    if rng.is_batch:
        raise ValueError("simulate takes a single stream")
    seed, sid, c0 = rng.seed, rng.stream_id, rng.counter
    x = as_points(x0, model.dim)[0]
    states = np.empty((n + 1, model.dim))
    times = np.empty(n)
    hs = np.empty((n, model.dim))
    states[0] = x
    for k in range(n):
        x, times[k], hs[k] = step(model, x, rng)
        states[k + 1] = x
    return Trajectory(states, times, hs, seed, sid, c0)


def advance(model: ModelSpec, X: np.ndarray, rng: RngStream, threads: int = 1, full: bool = False):
    """One lockstep transition of every replica; ``rng`` is a batch with one stream per row.

    Returns the new states (and the times and perturbations if ``full``).
    """
    if not rng.is_batch or len(rng) != len(X):
        raise ValueError("need one stream per replica")
    k = _step_uniforms(model)
    base = rng.counter

    def work(lo, hi):
        return step_from_uniforms(model, X[lo:hi], rng.subset(lo, hi).uniform(k))

    parts = map_spans(work, len(X), threads)
    rng.counter = base + (k + 1) // 2
    Xn = np.concatenate([p[0] for p in parts])
    if not full:
        return Xn
    return Xn, np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts])


def _replica_streams(rng: RngStream, n: int) -> RngStream:
    if rng.is_batch:
        if len(rng) != n:
            raise ValueError(f"batch of {len(rng)} streams for {n} particles")
        return rng
    return rng.spawn(n)


def push_forward(model: ModelSpec, mu: EmpiricalMeasure, rng: RngStream, threads: int = 1) -> EmpiricalMeasure:
    """Advance every particle one independent step; weights are carried over unchanged.

    A single stream spawns fresh per-particle streams; a batch is used as is.
    """
    streams = _replica_streams(rng, mu.n)
    return EmpiricalMeasure(advance(model, mu.points, streams, threads), mu.weights.copy())


def evolve(
    model: ModelSpec, mu: EmpiricalMeasure, n_steps: int, rng: RngStream, threads: int = 1
) -> Iterator[EmpiricalMeasure]:
    """Yield the particle clouds after 1, 2, ..., n_steps transitions."""
    streams = _replica_streams(rng, mu.n)
    X = mu.points
    for _ in range(n_steps):
        X = advance(model, X, streams, threads)
        yield EmpiricalMeasure(X, mu.weights.copy())


def stationary_estimate(
    model: ModelSpec,
    burn_in: int,
    n_samples: int,
    rng: RngStream,
    chains: int = 1024,
    x0=None,
    threads: int = 1,
) -> EmpiricalMeasure:
    """Equal-weight proxy for the invariant measure from interleaved chains.

    ``chains`` independent chains start at ``x0`` (default the reference
    point), run ``burn_in`` steps, and then every state is recorded until
    ``n_samples`` states are collected.  Storage is step-major, so each half
    of ``split_half`` holds whole chains.
    """
    if burn_in < 1 or n_samples < 1:
        raise ValueError("burn_in and n_samples must be positive")
    chains = max(1, min(int(chains), n_samples))
    if n_samples > 1 and chains % 2:
        chains -= 1 if chains > 1 else -1
    seed, sid = rng.seed, rng.stream_id
    streams = rng.spawn(chains)
    start = model.xbar if x0 is None else as_points(x0, model.dim)[0]
    X = np.repeat(start[None, :], chains, axis=0)
    for _ in range(burn_in):
        X = advance(model, X, streams, threads)
    steps = math.ceil(n_samples / chains)
    out = np.empty((steps, chains, model.dim))
    for k in range(steps):
        X = advance(model, X, streams, threads)
        out[k] = X
    meta = {"burn_in": burn_in, "n_samples": n_samples, "chains": chains, "seed": seed, "stream_id": sid}
    return EmpiricalMeasure(out.reshape(-1, model.dim)[:n_samples], meta=meta)


@dataclass
class DriftReport:
    n: np.ndarray
    v_mean: np.ndarray
    v_se: np.ndarray
    v_bound: np.ndarray
    v2_mean: np.ndarray
    v2_se: np.ndarray
    v2_bound: np.ndarray
    a: float
    Lambda: float
    c: float

    def satisfied(self, k_se: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
        return self.v_mean <= self.v_bound + k_se * self.v_se, self.v2_mean <= self.v2_bound + k_se * self.v2_se

    @property
    def ok(self) -> bool:
        first, second = self.satisfied()
        return bool(first.all() and second.all())


def drift_check(
    model: ModelSpec, x0, n_max: int, replicas: int, rng: RngStream, threads: int = 1
) -> DriftReport:
    """Monte Carlo first and second moments of V along the chain, against the drift bounds.

    First moment: a^n V(x0) + c/(1-a).  Second moment: 2 Lambda^n V(x0)^2 +
    4 c^2/(1-2 Lambda), which is infinite unless Lambda < 1/2.
    """
    if replicas < 1000:
        raise ValueError("drift_check needs at least 1000 replicas")
    rep = check_assumptions(model)
    a, lam, c = rep.a_hat, rep.Lambda_hat, rep.c_hat
    x = as_points(x0, model.dim)[0]
    v0 = float(model.V(x))
    streams = rng.spawn(replicas)
    X = np.repeat(x[None, :], replicas, axis=0)
    ns = np.arange(1, n_max + 1)
    stats = np.empty((n_max, 4))
    for i in range(n_max):
        X = advance(model, X, streams, threads)
        v = model.V(X)
        v2 = v * v
        sq = math.sqrt(replicas)
        stats[i] = v.mean(), v.std(ddof=1) / sq, v2.mean(), v2.std(ddof=1) / sq
    v_bound = a**ns * v0 + (c / (1 - a) if a < 1 else np.inf)
    if lam < 0.5:
        v2_bound = 2 * lam**ns * v0**2 + 4 * c**2 / (1 - 2 * lam)
    else:
        v2_bound = np.full(n_max, np.inf)
    return DriftReport(ns, stats[:, 0], stats[:, 1], v_bound, stats[:, 2], stats[:, 3], v2_bound, a, lam, c)
