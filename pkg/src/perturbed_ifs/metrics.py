"""Bounded-Lipschitz distance between particle clouds, rate fitting and KS statistics.

The distance between discrete measures mu and nu on support z_1..z_N is

    max  sum_i f_i (mu_i - nu_i)   over  |f_i| <= 1,  |f_i - f_j| <= |z_i - z_j|.

On the line only adjacent constraints matter, and the problem is solved
exactly by a dynamic programme over concave piecewise-linear value
functions (O(N) after sorting).  In higher dimension the same value is an
optimal transport cost: adding a ground point at distance 1 from every
support point turns |f| <= 1 into a Lipschitz constraint, so for
probability measures the distance is W1 under the cost min(|x - y|, 2).
That transport problem goes to a network simplex (POT).  A dense simplex
on a growing set of pair constraints is kept as an independent solver for
small supports.
"""

from __future__ import annotations

import math
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain import EmpiricalMeasure, advance, push_forward
from .lp import simplex_max
from .model import ModelSpec
from .rng import RngStream
from .sampling import as_points

__all__ = [
    "BLResult",
    "RateFit",
    "PairStart",
    "ConvergenceCurve",
    "bl_distance",
    "bl_line",
    "bl_lp",
    "bl_transport",
    "bin_cloud",
    "fit_geometric_rate",
    "convergence_curve",
    "ks_statistic",
]

SUPPORT_CAP = 4096
FEAS_TOL = 1e-9


@dataclass
class BLResult:
    value: float
    witness: np.ndarray
    support: np.ndarray
    status: str = "optimal"
    method: str = "line"

    def check_dual(self, signed_weights: np.ndarray, tol: float = FEAS_TOL) -> bool:
        """Feasibility of the witness and agreement of the value with it."""
        f = self.witness
        if np.any(np.abs(f) > 1 + tol):
            return False
        if abs(float(f @ signed_weights) - self.value) > tol:
            return False
        z = self.support
        if z.shape[1] == 1:
            order = np.argsort(z[:, 0], kind="stable")
            gaps = np.diff(z[order, 0])
            return bool(np.all(np.abs(np.diff(f[order])) <= gaps + tol))
        for i in range(len(z)):
            if np.any(np.abs(f - f[i]) > np.linalg.norm(z - z[i], axis=1) + tol):
                return False
        return True


def _merge(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Union support (duplicates merged, lexicographically sorted) and mu - nu on it."""
    if mu.dim != nu.dim:
        raise ValueError("measures live in different dimensions")
    pts = np.concatenate([mu.points, nu.points])
    w = np.concatenate([mu.weights, -nu.weights])
    if mu.dim == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        z = pts[order, 0]
        keep = np.concatenate([[True], np.diff(z) > 0])
        idx = np.cumsum(keep) - 1
        merged = np.zeros(int(keep.sum()))
        np.add.at(merged, idx, w[order])
        return z[keep][:, None], merged
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv.ravel(), w)
    return uniq, merged


def bl_line(z: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact 1-D solve on sorted distinct points ``z`` with signed weights ``w``.

    W_i(f) is the best partial objective with f_i = f.  Each W_i is concave
    and piecewise linear on [-1, 1], stored as breakpoints (position, slope
    drop) left and right of a middle piece of slope ``s``; the two deques
    carry lazy shifts.  Taking the max over |g - f| <= d opens a flat piece
    of width 2d at the argmax, which is a split plus two opposite shifts.
    """
    n = len(z)
    gaps = np.diff(z)
    left: deque = deque()  # ascending; last entry is the left end of the middle piece
    right: deque = deque()  # ascending; first entry is the right end
    off_l = off_r = 0.0
    s = 0.0
    lo_arg = np.empty(n)
    hi_arg = np.empty(n)
    for i in range(n):
        s += w[i]
        # restore: slope right of the middle piece < 0 and slope left of it > 0
        while right and s - right[0][1] >= 0.0:
            pos, drop = right.popleft()
            left.append((pos + off_r - off_l, drop))
            s -= drop
        while left and s + left[-1][1] <= 0.0:
            pos, drop = left.pop()
            right.appendleft((pos + off_l - off_r, drop))
            s += drop
        A = left[-1][0] + off_l if left else -1.0
        B = right[0][0] + off_r if right else 1.0
        if s > 0.0:
            A = B
        elif s < 0.0:
            B = A
        lo_arg[i], hi_arg[i] = A, B
        if i == n - 1:
            break
        d = gaps[i]
        if s > 0.0:
            left.append((B - off_l, s))
            if right:
                pos, drop = right[0]
                right[0] = (pos, drop - s)
        elif s < 0.0:
            right.appendleft((A - off_r, -s))
            if left:
                pos, drop = left[-1]
                left[-1] = (pos, drop + s)
        s = 0.0
        off_l -= d
        off_r += d
        while left and left[0][0] + off_l <= -1.0:
            left.popleft()
        while right and right[-1][0] + off_r >= 1.0:
            right.pop()
    f = np.empty(n)
    f[-1] = lo_arg[-1]
    for i in range(n - 2, -1, -1):
        nxt = f[i + 1]
        g = min(max(nxt, lo_arg[i]), hi_arg[i])
        f[i] = min(max(g, nxt - gaps[i]), nxt + gaps[i])
    np.clip(f, -1.0, 1.0, out=f)
    return float(f @ w), f


def _pair_violations(z: np.ndarray, f: np.ndarray, tol: float, block: int = 512) -> list[tuple[int, int]]:
    found = []
    for lo in range(0, len(z), block):
        dist = np.linalg.norm(z[lo:lo + block, None, :] - z[None, :, :], axis=-1)
        viol = (f[lo:lo + block, None] - f[None, :]) - dist
        ii, jj = np.nonzero(viol > tol)
        found.extend(zip((ii + lo).tolist(), jj.tolist()))
    return found


def bl_lp(z: np.ndarray, w: np.ndarray, max_rounds: int = 50, neighbours: int = 8) -> tuple[float, np.ndarray, str]:
    """All-pairs LP via constraint generation with the dense simplex.

    Variables g = f + 1 in [0, 2].  Starts from nearest-neighbour pair
    constraints and adds every violated pair until the solution satisfies
    all of them.  A stalled solve is repaired into a feasible witness by
    the McShane extension, making the value a lower bound.
    """
    n = len(z)
    if n == 1:
        f = np.array([1.0 if w[0] > 0 else -1.0])
        return float(f @ w), f, "optimal"
    k = min(n - 1, neighbours)
    pairs: set[tuple[int, int]] = set()
    for lo in range(0, n, 512):
        dist = np.linalg.norm(z[lo:lo + 512, None, :] - z[None, :, :], axis=-1)
        near = np.argsort(dist, axis=1, kind="stable")[:, 1:k + 1]
        for i, row in enumerate(near):
            for j in row:
                pairs.add((lo + i, int(j)))
                pairs.add((int(j), lo + i))
    status = "optimal"
    f = np.zeros(n)
    for _ in range(max_rounds):
        P = np.array(sorted(pairs))
        m = len(P)
        A = np.zeros((n + m, n))
        A[np.arange(n), np.arange(n)] = 1.0
        A[n + np.arange(m), P[:, 0]] = 1.0
        A[n + np.arange(m), P[:, 1]] = -1.0
        b = np.concatenate([np.full(n, 2.0), np.linalg.norm(z[P[:, 0]] - z[P[:, 1]], axis=1)])
        res = simplex_max(w, A, b)
        f = res.x - 1.0
        if res.status != "optimal":
            status = "iteration-limit"
            break
        new = [p for p in _pair_violations(z, f, 1e-12) if p not in pairs]
        if not new:
            break
        pairs.update(new)
    else:
        status = "iteration-limit"
    if status != "optimal":
        f = np.min(f[None, :] + np.linalg.norm(z[:, None, :] - z[None, :, :], axis=-1), axis=1)
        np.clip(f, -1.0, 1.0, out=f)
    return float(f @ w), f, status


def _load_ot():
    # POT probes every array backend at import; only numpy is needed here
    for key in ("PYTORCH", "JAX", "TENSORFLOW", "CUPY"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{key}", "1")
    import ot

    return ot


def _truncated_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.minimum(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1), 2.0)


def bl_transport(z: np.ndarray, w: np.ndarray, tol: float = FEAS_TOL) -> tuple[float, np.ndarray, str]:
    """Transport formulation on merged support ``z`` with signed weights ``w``.

    The witness is the c-transform of the demand-side potential, shifted
    into [-1, 1]; it is feasible by construction, so its value is reported
    and the status says whether it matches the transport cost.
    """
    ot = _load_ot()
    sup, dem = np.flatnonzero(w > 0), np.flatnonzero(w < 0)
    if len(sup) == 0:
        return 0.0, np.zeros(len(z)), "optimal"
    a, b = w[sup], -w[dem]
    b = b * (a.sum() / b.sum())
    cost = _truncated_cost(z[sup], z[dem])
    _, log = ot.emd(a, b, cost, numItermax=max(100_000, 50 * cost.size), log=True)
    v = np.asarray(log["v"], dtype=float)
    phi = np.empty(len(z))
    for lo in range(0, len(z), 1024):
        phi[lo:lo + 1024] = np.min(_truncated_cost(z[lo:lo + 1024], z[dem]) - v[None, :], axis=1)
    f = np.clip(phi - 0.5 * (phi.max() + phi.min()), -1.0, 1.0)
    value = float(f @ w)
    ok = log.get("warning") is None and abs(value - float(log["cost"])) <= tol
    return value, f, "optimal" if ok else "inexact"


def bin_cloud(mu: EmpiricalMeasure, nu: EmpiricalMeasure, bins: int = 256) -> tuple[EmpiricalMeasure, EmpiricalMeasure]:
    """Snap both clouds onto shared quantile cells of the pooled cloud.

    Each axis gets ``floor(bins ** (1 / dim))`` pooled-quantile cells; every
    particle moves to the pooled mean of its cell.  The displacement is at
    most the cell diameter, which bounds the induced bias.
    """
    d = mu.dim
    per_axis = max(1, int(math.floor(bins ** (1.0 / d) + 1e-9)))
    pts = np.concatenate([mu.points, nu.points])
    w = np.concatenate([mu.weights, nu.weights])
    cell = np.zeros(len(pts), dtype=np.int64)
    for ax in range(d):
        edges = np.quantile(pts[:, ax], np.linspace(0, 1, per_axis + 1)[1:-1])
        cell = cell * per_axis + np.searchsorted(edges, pts[:, ax], side="right")
    uniq, inv = np.unique(cell, return_inverse=True)
    mass = np.bincount(inv, weights=w, minlength=len(uniq))
    centres = np.stack([np.bincount(inv, weights=w * pts[:, ax], minlength=len(uniq)) for ax in range(d)], axis=1)
    centres /= mass[:, None]
    n_mu = mu.n
    wm = np.bincount(inv[:n_mu], weights=mu.weights, minlength=len(uniq))
    wn = np.bincount(inv[n_mu:], weights=nu.weights, minlength=len(uniq))
    km, kn = wm > 0, wn > 0
    return (
        EmpiricalMeasure(centres[km], wm[km] / wm[km].sum()),
        EmpiricalMeasure(centres[kn], wn[kn] / wn[kn].sum()),
    )


def bl_distance(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    method: str = "auto",
    cap: int = SUPPORT_CAP,
    bins: int = 256,
) -> BLResult:
    """Bounded-Lipschitz distance between two clouds.

    ``method`` is ``"line"`` (1-D only), ``"transport"``, ``"lp"`` (all
    pairs, small supports) or ``"auto"`` (line in 1-D, transport otherwise).
    The transport and LP solvers bin both clouds when the union support
    exceeds ``cap``.
    """
    if method == "auto":
        method = "line" if mu.dim == 1 else "transport"
    z, w = _merge(mu, nu)
    if method == "line":
        if z.shape[1] != 1:
            raise ValueError("the line solver needs one-dimensional clouds")
        value, f = bl_line(z[:, 0], w)
        return BLResult(max(value, 0.0), f, z, "optimal", "line")
    if method not in ("lp", "transport"):
        raise ValueError(f"unknown method {method!r}")
    label = method
    if len(z) > cap:
        mu, nu = bin_cloud(mu, nu, bins)
        z, w = _merge(mu, nu)
        label = f"{method}-binned"
    solver = bl_lp if method == "lp" else bl_transport
    value, f, status = solver(z, w)
    return BLResult(max(value, 0.0), f, z, status, label)


@dataclass
class RateFit:
    q_hat: float
    C_hat: float
    r_squared: float
    n_range: tuple[int, int]


def fit_geometric_rate(series) -> RateFit:
    """Least squares of log D_n = log C + n log q."""
    arr = np.asarray(list(series), dtype=float).reshape(-1, 2)
    if len(arr) < 3:
        raise ValueError("need at least 3 points")
    n, D = arr[:, 0], arr[:, 1]
    if np.any(~(D > 0)):
        raise ValueError("D_n must be positive; floor at the noise level first")
    y = np.log(D)
    X = np.column_stack([np.ones_like(n), n])
    (logC, logq), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ np.array([logC, logq])
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(y**2))):
        r2 = 1.0
    else:
        r2 = max(0.0, 1.0 - ss_res / ss_tot)
    return RateFit(float(math.exp(logq)), float(math.exp(logC)), r2, (int(n.min()), int(n.max())))


@dataclass(frozen=True)
class PairStart:
    """Start the pair mode of :func:`convergence_curve` from point masses at x and y."""

    x: object
    y: object


@dataclass
class ConvergenceCurve:
    mode: str
    n: np.ndarray
    D: np.ndarray
    noise_floor: np.ndarray
    fit: RateFit | None = None
    fit_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def rows(self) -> list[tuple]:
        return list(zip(self.n, self.D, self.noise_floor))


def _split_floor(mu: EmpiricalMeasure) -> float:
    a, b = mu.split_half()
    return bl_distance(a, b).value


def _fit_above_floor(n: np.ndarray, D: np.ndarray, floor: np.ndarray, cap: float = 2.0):
    # points at the metric's cap carry no rate information
    mask = (D > 2.0 * floor) & (D < cap * (1 - 1e-6))
    if mask.sum() < 3:
        return None, mask
    return fit_geometric_rate(zip(n[mask], D[mask])), mask


def convergence_curve(
    model: ModelSpec,
    mu0: EmpiricalMeasure | None,
    reference: EmpiricalMeasure | PairStart,
    n_max: int,
    particles: int,
    rng: RngStream,
    threads: int = 1,
) -> ConvergenceCurve:
    """D_n for n = 0..n_max with the Monte Carlo noise floor alongside.

    Pair mode (``reference`` a :class:`PairStart`): two independent clouds
    from point masses; the floor at each n is the split-half distance of
    the x-cloud.  Measure mode: ``mu0`` resampled to ``particles`` and
    pushed forward, compared with the fixed ``reference`` cloud whose
    split-half distance is the floor.  The rate is fitted over points above
    twice the floor.
    """
    if particles < 1000:
        raise ValueError("convergence_curve needs at least 1000 particles")
    ns = np.arange(n_max + 1)
    D = np.empty(n_max + 1)
    floor = np.empty(n_max + 1)
    if isinstance(reference, PairStart):
        mode = "pair"
        X = np.repeat(as_points(reference.x, model.dim)[:1], particles, axis=0)
        Y = np.repeat(as_points(reference.y, model.dim)[:1], particles, axis=0)
        sx, sy = rng.spawn(particles), rng.spawn(particles)
        for k in ns:
            if k:
                X = advance(model, X, sx, threads)
                Y = advance(model, Y, sy, threads)
            mx, my = EmpiricalMeasure(X), EmpiricalMeasure(Y)
            D[k] = bl_distance(mx, my).value
            floor[k] = _split_floor(mx) if k else 0.0
        floor[0] = floor[1] if n_max >= 1 else 0.0
    else:
        mode = "measure"
        if mu0 is None:
            raise ValueError("measure mode needs an initial cloud")
        if mu0.n == particles and np.allclose(mu0.weights, 1.0 / particles):
            X = mu0.points.copy()
        else:
            u = rng.uniform(particles)
            cdf = np.cumsum(mu0.weights)
            X = mu0.points[np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), mu0.n - 1)]
        streams = rng.spawn(particles)
        floor[:] = _split_floor(reference)
        for k in ns:
            if k:
                X = advance(model, X, streams, threads)
            D[k] = bl_distance(EmpiricalMeasure(X), reference).value
    fit, mask = _fit_above_floor(ns, D, floor)
    return ConvergenceCurve(mode, ns, D, floor, fit, mask)


def ks_statistic(sample, reference_cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """sup_x |F_n(x) - F(x)| for a continuous reference CDF."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = len(x)
    if n == 0:
        raise ValueError("empty sample")
    F = np.asarray(reference_cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(min(1.0, max(np.max(i / n - F), np.max(F - (i - 1) / n), 0.0)))
