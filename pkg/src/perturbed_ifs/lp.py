"""A small dense simplex solver in dictionary form.

Solves ``max c.x  s.t.  A x <= b, x >= 0`` with ``b >= 0``, so the all-slack
basis is feasible and no phase one is needed.  The iterate stays primal
feasible throughout, so a stalled run still returns a feasible point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LPResult", "simplex_max"]


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    status: str  # "optimal" | "iteration-limit" | "unbounded"
    iterations: int


def simplex_max(
    c: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    max_iter: int | None = None,
    tol: float = 1e-11,
) -> LPResult:
    """Dantzig pricing, switching to Bland's rule after a run of degenerate pivots."""
    c = np.asarray(c, dtype=float)
    T = np.array(A, dtype=float, copy=True)
    rhs = np.array(b, dtype=float, copy=True)
    m, n = T.shape
    if rhs.shape != (m,) or c.shape != (n,):
        raise ValueError("inconsistent LP dimensions")
    if np.any(rhs < 0):
        raise ValueError("simplex_max needs b >= 0")
    obj = c.copy()
    z = 0.0
    nonbasic = np.arange(n)
    basic = np.arange(n, n + m)
    max_iter = max_iter if max_iter is not None else 50 * (m + n) + 1000
    degenerate_run = 0
    bland = False
    status = "iteration-limit"
    it = 0
    while it < max_iter:
        scale = max(1.0, float(np.max(np.abs(obj))))
        cand = np.flatnonzero(obj > tol * scale)
        if len(cand) == 0:
            status = "optimal"
            break
        if bland:
            k = cand[np.argmin(nonbasic[cand])]
        else:
            k = cand[np.argmax(obj[cand])]
        col = T[:, k]
        pos = col > tol
        if not pos.any():
            status = "unbounded"
            break
        ratios = np.full(m, np.inf)
        ratios[pos] = rhs[pos] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + 1e-13 * max(1.0, best))
        r = ties[np.argmin(basic[ties])] if bland else ties[np.argmax(col[ties])]
        if best <= 1e-14:
            degenerate_run += 1
            bland = bland or degenerate_run > 50
        else:
            degenerate_run = 0
            bland = False
        piv = T[r, k]
        newrow = T[r] / piv
        newrow[k] = 1.0 / piv
        col = col.copy()
        T -= np.outer(col, newrow)
        T[:, k] = -col / piv
        T[r] = newrow
        rr = rhs[r] / piv
        rhs -= col * rr
        rhs[r] = rr
        np.maximum(rhs, 0.0, out=rhs)
        ck = obj[k]
        obj -= ck * newrow
        obj[k] = -ck / piv
        z += ck * rr
        basic[r], nonbasic[k] = nonbasic[k], basic[r]
        it += 1
    x = np.zeros(n)
    sel = basic < n
    x[basic[sel]] = rhs[sel]
    return LPResult(x=x, value=float(c @ x), status=status, iterations=it)
