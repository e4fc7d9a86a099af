"""Jump-time and perturbation sampling, and the minimal coupling of two jump-time laws.

Jump times are drawn by inverse CDF on the model's fixed grid of ``t_nodes``
subintervals.  The density is evaluated at the centre of the state's
quantization cell (width ``model.cell_width``), so the simulated kernel is
the cell-quantized one; every sampler in the package uses the same
quantized law, which keeps the coupling marginals exact.

Within a cell the law is piecewise uniform: interval ``k`` carries the
trapezoid mass of ``p`` on ``[t_k, t_{k+1}]`` (normalized to total 1).
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .rng import RngStream

__all__ = [
    "CdfGrid",
    "CdfCache",
    "cdf_grid",
    "sample_t",
    "sample_h",
    "min_mass",
    "sample_coupled_times",
    "h_uniform_count",
    "times_from_uniforms",
    "h_from_uniforms",
    "coupled_times_from_uniforms",
]

PAGE_ROWS = 512
DEGENERATE_RESIDUAL = 1e-12
COUPLED_CHUNK = 2048


@dataclass(frozen=True)
class CdfGrid:
    x: np.ndarray
    nodes: np.ndarray
    cdf_values: np.ndarray


def as_points(x, dim: int) -> np.ndarray:
    """Coerce a point or batch of points to shape ``(m, dim)``."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, dim) if a.shape[0] == dim else a.reshape(-1, 1)
    if a.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {a.shape}")
    return a


def _interval_cdf(pv: np.ndarray, dt: float) -> np.ndarray:
    """Normalized CDF at the nodes, from node values of the density (rows)."""
    masses = 0.5 * dt * (pv[..., 1:] + pv[..., :-1])
    masses = np.maximum(masses, 0.0)
    cdf = np.zeros(pv.shape[:-1] + (pv.shape[-1],))
    np.cumsum(masses, axis=-1, out=cdf[..., 1:])
    cdf /= cdf[..., -1:]
    cdf[..., -1] = 1.0
    return cdf


class CdfCache:
    """Pages of inverse-CDF tables for consecutive quantization cells.

    A page holds ``PAGE_ROWS`` cells along the first coordinate (the other
    coordinates fixed).  Row ``r`` is stored with ``2 r`` added, so a single
    ``searchsorted`` over the flat page inverts every row at once.  Pages are
    evicted least-recently-used beyond ``model.cache_pages``; rebuilding a
    page gives identical values, so eviction never changes results.
    """

    def __init__(self, model):
        self.model = model
        self.width = float(model.cell_width)
        self.nodes = model.t_grid
        self.dt = model.horizon_T / model.t_nodes
        self.row_len = model.t_nodes + 1
        self._pages: OrderedDict[tuple, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()

    def cells(self, X: np.ndarray) -> np.ndarray:
        return np.floor(X / self.width).astype(np.int64)

    def centers(self, cells: np.ndarray) -> np.ndarray:
        return (cells + 0.5) * self.width

    def _build(self, key: tuple) -> np.ndarray:
        rows = np.arange(PAGE_ROWS, dtype=np.int64)
        cells = np.empty((PAGE_ROWS, self.model.dim), dtype=np.int64)
        cells[:, 0] = key[0] * PAGE_ROWS + rows
        cells[:, 1:] = np.asarray(key[1:], dtype=np.int64)
        xc = self.centers(cells)
        pv = np.broadcast_to(
            np.asarray(self.model.p(xc[:, None, :], self.nodes[None, :]), dtype=float),
            (PAGE_ROWS, self.row_len),
        )
        cdf = _interval_cdf(pv, self.dt)
        cdf += 2.0 * rows[:, None]
        return cdf.ravel()

    def page(self, key: tuple) -> np.ndarray:
        with self._lock:
            page = self._pages.get(key)
            if page is not None:
                self._pages.move_to_end(key)
                return page
        page = self._build(key)
        with self._lock:
            page = self._pages.setdefault(key, page)
            self._pages.move_to_end(key)
            while len(self._pages) > self.model.cache_pages:
                self._pages.popitem(last=False)
        return page

    def _groups(self, cells: np.ndarray):
        """Yield (page key, member indices, rows within page)."""
        page0 = np.floor_divide(cells[:, 0], PAGE_ROWS)
        rows = cells[:, 0] - page0 * PAGE_ROWS
        keys = np.column_stack([page0, cells[:, 1:]]) if cells.shape[1] > 1 else page0[:, None]
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        if len(uniq) == 1:
            yield tuple(int(v) for v in uniq[0]), slice(None), rows
            return
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
        for j in range(len(uniq)):
            idx = order[bounds[j]:bounds[j + 1]]
            yield tuple(int(v) for v in uniq[j]), idx, rows[idx]

    def invert(self, cells: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Jump times for quantized states ``cells`` at uniforms ``u``."""
        t = np.empty(len(u))
        n_int = self.row_len - 1
        for key, idx, rows in self._groups(cells):
            flat = self.page(key)
            q = u[idx] + 2.0 * rows
            j = np.searchsorted(flat, q, side="right") - 1
            start = rows * self.row_len
            local = np.clip(j - start, 0, n_int - 1)
            j = start + local
            lo, hi = flat[j], flat[j + 1]
            frac = np.clip((q - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0, 1.0)
            t[idx] = self.nodes[local] + frac * self.dt
        return t

    def rows(self, cells: np.ndarray) -> np.ndarray:
        """CDF rows (at the nodes) for each quantized state, shape ``(m, t_nodes + 1)``."""
        out = np.empty((len(cells), self.row_len))
        for key, idx, rows in self._groups(cells):
            block = self.page(key).reshape(PAGE_ROWS, self.row_len)[rows]
            block -= 2.0 * rows[:, None]
            out[idx] = block
        return out


def cdf_grid(model, x) -> CdfGrid:
    """The (cached) grid CDF used when sampling jump times at state ``x``."""
    cache = model.cdf_cache
    cells = cache.cells(as_points(x, model.dim)[:1])
    return CdfGrid(x=cache.centers(cells)[0], nodes=cache.nodes.copy(), cdf_values=cache.rows(cells)[0])


def times_from_uniforms(model, X: np.ndarray, u: np.ndarray) -> np.ndarray:
    cache = model.cdf_cache
    return cache.invert(cache.cells(X), np.asarray(u, dtype=float))


def h_uniform_count(model) -> int:
    if model.perturbation == "box":
        return model.dim
    return 2 * ((model.dim + 1) // 2) + 1


def h_from_uniforms(model, U: np.ndarray) -> np.ndarray:
    """Perturbations from uniforms of shape ``(m, h_uniform_count(model))``."""
    U = np.asarray(U, dtype=float).reshape(-1, h_uniform_count(model))
    eps = model.epsilon
    if model.perturbation == "box":
        return eps * (2.0 * U - 1.0)
    if model.perturbation == "ball":
        d = model.dim
        k = (d + 1) // 2
        u1, u2 = U[:, :k], U[:, k:2 * k]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)], axis=1)[:, :d]
        norm = np.linalg.norm(z, axis=1, keepdims=True)
        norm[norm == 0.0] = 1.0
        radius = U[:, -1:] ** (1.0 / d)
        return eps * radius * z / norm
    raise ValueError(f"unknown perturbation law {model.perturbation!r}")


def sample_t(model, x, rng: RngStream) -> float:
    """One jump time from ``p(x, .)``."""
    X = as_points(x, model.dim)[:1]
    return float(times_from_uniforms(model, X, np.atleast_1d(rng.uniform()))[0])


def sample_h(model, rng: RngStream) -> np.ndarray:
    """One perturbation vector from the perturbation law."""
    return h_from_uniforms(model, rng.uniform(h_uniform_count(model)))[0]


def min_mass(model, x, y, t_nodes: int | None = None) -> float:
    """Total mass of the pointwise minimum of the two jump-time laws.

    Evaluated at the exact states (no quantization) on an interval grid of
    ``t_nodes`` subintervals.
    """
    n = model.t_nodes if t_nodes is None else int(t_nodes)
    t = np.linspace(0.0, model.horizon_T, n + 1)
    P = as_points(np.vstack([as_points(x, model.dim)[:1], as_points(y, model.dim)[:1]]), model.dim)
    pv = np.broadcast_to(np.asarray(model.p(P[:, None, :], t[None, :]), dtype=float), (2, n + 1))
    masses = np.diff(_interval_cdf(pv, model.horizon_T / n), axis=1)
    return float(np.minimum(masses[0], masses[1]).sum())


def _cdf_from_masses(masses: np.ndarray) -> np.ndarray:
    cdf = np.zeros((masses.shape[0], masses.shape[1] + 1))
    np.cumsum(masses, axis=1, out=cdf[:, 1:])
    total = cdf[:, -1:].copy()
    total[total <= 0.0] = 1.0
    cdf /= total
    cdf[:, -1] = 1.0
    return cdf


def _search_rows(cdf: np.ndarray, g: np.ndarray, u: np.ndarray, nodes: np.ndarray, dt: float) -> np.ndarray:
    """Invert row ``g[i]`` of ``cdf`` at ``u[i]`` with one flat search."""
    n = cdf.shape[1] - 1
    flat = (cdf + 2.0 * np.arange(len(cdf))[:, None]).ravel()
    j = np.searchsorted(flat, u + 2.0 * g, side="right") - 1 - g * (n + 1)
    j = np.clip(j, 0, n - 1)
    # the offset costs a few ulps; step back if that overshot the exact row
    j = np.where((u < cdf[g, j]) & (j > 0), j - 1, j)
    j = np.where((u >= cdf[g, j + 1]) & (j < n - 1), j + 1, j)
    lo, hi = cdf[g, j], cdf[g, j + 1]
    frac = np.clip((u - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0, 1.0)
    return nodes[j] + frac * dt


def coupled_times_from_uniforms(model, X: np.ndarray, Y: np.ndarray, U: np.ndarray):
    """Coupled jump times from uniforms ``U[:, 0:3]`` = (branch, t_x, t_y).

    Returns ``(t_x, t_y, same)``.  With probability ``alpha`` (the minimum
    mass) both coordinates share one time from the normalized minimum law;
    otherwise they draw independently from the normalized residual laws.
    The laws are built once per distinct pair of quantization cells.
    """
    cache = model.cdf_cache
    U = np.asarray(U, dtype=float)
    ub, ux, uy = U[:, 0], U[:, 1], U[:, 2]
    cx, cy = cache.cells(X), cache.cells(Y)
    same_cell = np.all(cx == cy, axis=1)
    tx = np.empty(len(X))
    ty = np.empty(len(X))
    same = np.ones(len(X), dtype=bool)

    sc = np.flatnonzero(same_cell)
    if len(sc):
        tx[sc] = cache.invert(cx[sc], ux[sc])
        ty[sc] = tx[sc]
    dc = np.flatnonzero(~same_cell)
    if not len(dc):
        return tx, ty, same
    d = model.dim
    uniq, inv = np.unique(np.concatenate([cx[dc], cy[dc]], axis=1), axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    nodes, dt = cache.nodes, cache.dt
    # bounded memory: each distinct cell pair needs full rows
    for lo in range(0, len(uniq), COUPLED_CHUNK):
        hi = min(lo + COUPLED_CHUNK, len(uniq))
        sel = order[bounds[lo]:bounds[hi]]
        members, g = dc[sel], inv[sel] - lo
        mx = np.diff(cache.rows(uniq[lo:hi, :d]), axis=1)
        my = np.diff(cache.rows(uniq[lo:hi, d:]), axis=1)
        mn = np.minimum(mx, my)
        alpha = mn.sum(axis=1)
        rx, ry = mx - mn, my - mn
        degenerate = (alpha >= 1.0 - DEGENERATE_RESIDUAL) | (rx.sum(axis=1) <= 0.0) | (ry.sum(axis=1) <= 0.0)
        take = degenerate[g] | (ub[members] < alpha[g])
        s, gs = members[take], g[take]
        if len(s):
            t = _search_rows(_cdf_from_masses(mn), gs, ux[s], nodes, dt)
            tx[s] = t
            ty[s] = t
        r, gr = members[~take], g[~take]
        if len(r):
            tx[r] = _search_rows(_cdf_from_masses(rx), gr, ux[r], nodes, dt)
            ty[r] = _search_rows(_cdf_from_masses(ry), gr, uy[r], nodes, dt)
            same[r] = False
    return tx, ty, same


def sample_coupled_times(model, x, y, rng: RngStream) -> tuple[float, float, bool]:
    """One draw from the coupled jump-time law of (x, y)."""
    X = as_points(x, model.dim)[:1]
    Y = as_points(y, model.dim)[:1]
    tx, ty, same = coupled_times_from_uniforms(model, X, Y, rng.uniform(3)[None, :])
    return float(tx[0]), float(ty[0]), bool(same[0])
