"""Model definition and numerical certification of the standing assumptions.

A model is the randomly perturbed system

    x_{n+1} = S(x_n, t_{n+1}) + h_{n+1},

with jump times drawn from a state-dependent density ``p(x, .)`` on ``[0, T]``
and perturbations ``h`` drawn from a law supported in the closed ball of
radius ``epsilon``.

Callables use numpy broadcasting: ``x`` has shape ``(..., dim)`` and ``t``
broadcasts against ``x[..., 0]``.  ``S`` returns ``(..., dim)``, ``p`` and
``lambda_fn`` return ``(...)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

__all__ = [
    "ModelError",
    "ModelSpec",
    "AssumptionReport",
    "build_model",
    "cc_affine",
    "expression_model",
    "check_assumptions",
    "phi",
]

NORMALIZATION_TOL = 1e-6
DINI_TOL = 1e-6


class ModelError(ValueError):
    """Raised for malformed model descriptions or violated invariants."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    dim: int
    horizon_T: float
    S: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lambda_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    p: Callable[[np.ndarray, np.ndarray], np.ndarray]
    omega_coeff: float
    epsilon: float
    epsilon_star: float
    xbar: np.ndarray
    window: tuple[np.ndarray, np.ndarray]
    perturbation: str = "box"
    family: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)
    t_nodes: int = 1024
    cell_width: float = 1e-3
    cache_pages: int = 64

    def __post_init__(self):
        # per-model inverse-CDF cache; deterministic and idempotent to fill
        from .sampling import CdfCache

        object.__setattr__(self, "cdf_cache", CdfCache(self))

    @property
    def t_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon_T, self.t_nodes + 1)

    def V(self, x) -> np.ndarray:
        """Distance to the reference point."""
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.xbar, axis=-1)

    def describe(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "dim": self.dim,
            "T": self.horizon_T,
            "epsilon": self.epsilon,
            "epsilon_star": self.epsilon_star,
            "omega_coeff": self.omega_coeff,
            "perturbation": self.perturbation,
            "window_lo": self.window[0].tolist(),
            "window_hi": self.window[1].tolist(),
            "xbar": self.xbar.tolist(),
            "t_nodes": self.t_nodes,
            "cell_width": self.cell_width,
            **{f"param_{k}": v for k, v in sorted(self.params.items())},
        }


def _window(lo, hi, dim: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dim,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dim,)).copy()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
        raise ModelError(f"malformed window [{lo.tolist()}, {hi.tolist()}]")
    return lo, hi


def _validate(model: ModelSpec, x_points: int = 65) -> None:
    """Check normalization and positivity of ``p`` on a coarse scan grid."""
    xs = _scan_points(model, x_points)
    t = model.t_grid
    try:
        with np.errstate(all="raise", under="ignore"):
            pv = np.asarray(model.p(xs[:, None, :], t[None, :]), dtype=float)
    except (FloatingPointError, OverflowError, ValueError) as exc:
        raise ModelError(f"density evaluation failed: {exc}") from exc
    pv = np.broadcast_to(pv, (len(xs), len(t)))
    interior = pv[:, 1:]
    if not np.all(np.isfinite(pv)) or interior.min() <= 0.0 or pv.min() < 0.0:
        raise ModelError("density positivity violated")
    mass = np.trapezoid(pv, t, axis=1)
    if np.max(np.abs(mass - 1.0)) > 1e-4:
        raise ModelError(f"density not normalized (max |mass - 1| = {np.max(np.abs(mass - 1.0)):.3g})")


def cc_affine(
    c0: float = 0.5,
    c1: float = 0.2,
    kappa: float = 0.5,
    T: float = 1.0,
    epsilon: float = 0.05,
    epsilon_star: float | None = None,
    window: tuple[float, float] = (-10.0, 10.0),
    t_nodes: int = 1024,
    cell_width: float = 1e-3,
) -> ModelSpec:
    """The built-in one-dimensional family.

    S(x,t) = (c0 + c1 cos(2 pi t/T)) x + 1,  p(x,t) = (1 + kappa tanh(x) cos(2 pi t/T)) / T.
    """
    if not abs(kappa) < 1.0:
        raise ModelError("density positivity violated")
    if T <= 0:
        raise ModelError("T must be positive")
    eps_star = epsilon if epsilon_star is None else epsilon_star
    if not 0.0 <= epsilon <= eps_star:
        raise ModelError("need 0 <= epsilon <= epsilon_star")
    w = 2.0 * math.pi / T

    def factor(t):
        return c0 + c1 * np.cos(w * np.asarray(t, dtype=float))

    def S(x, t):
        x = np.asarray(x, dtype=float)
        return factor(t)[..., None] * x + 1.0

    def lam(x, t):
        x = np.asarray(x, dtype=float)
        return np.abs(factor(t)) * np.ones_like(x[..., 0])

    def p(x, t):
        x = np.asarray(x, dtype=float)
        return (1.0 + kappa * np.tanh(x[..., 0]) * np.cos(w * np.asarray(t, dtype=float))) / T

    model = ModelSpec(
        dim=1,
        horizon_T=float(T),
        S=S,
        lambda_fn=lam,
        p=p,
        omega_coeff=2.0 * abs(kappa) / math.pi,
        epsilon=float(epsilon),
        epsilon_star=float(eps_star),
        xbar=np.zeros(1),
        window=_window(window[0], window[1], 1),
        family="cc-affine",
        params={"c0": c0, "c1": c1, "kappa": kappa},
        t_nodes=int(t_nodes),
        cell_width=float(cell_width),
    )
    _validate(model)
    return model


_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in (
        "sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "sinh", "cosh",
        "arctan", "abs", "minimum", "maximum", "clip", "where", "sign",
    )
}
_EXPR_NAMESPACE.update(pi=math.pi, e=math.e)


def _compile_expr(src: str, names: dict[str, Any]) -> Callable:
    code = compile(src, "<model expression>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NAMESPACE and name not in names and name not in ("x", "t"):
            raise ModelError(f"unknown name {name!r} in expression {src!r}")

    def fn(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        env = {**_EXPR_NAMESPACE, **names, "x": x[..., 0], "t": t}
        return np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float)

    return fn


def expression_model(
    S: str,
    lam: str,
    p: str,
    T: float,
    epsilon: float,
    omega_coeff: float,
    epsilon_star: float | None = None,
    xbar: float = 0.0,
    window: tuple[float, float] = (-10.0, 10.0),
    params: dict[str, float] | None = None,
    t_nodes: int = 1024,
    cell_width: float = 1e-3,
) -> ModelSpec:
    """One-dimensional model from numpy expressions in ``x``, ``t`` and ``T``."""
    names = {"T": float(T), **(params or {})}
    s_fn, l_fn, p_fn = (_compile_expr(e, names) for e in (S, lam, p))
    eps_star = epsilon if epsilon_star is None else epsilon_star
    if not 0.0 <= epsilon <= eps_star:
        raise ModelError("need 0 <= epsilon <= epsilon_star")
    if omega_coeff < 0:
        raise ModelError("omega_coeff must be nonnegative")

    def S_vec(x, t):
        x = np.asarray(x, dtype=float)
        out = s_fn(x, t)
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(out), x[..., 0].shape, np.shape(t)))[..., None]

    def broadcast(fn):
        def inner(x, t):
            x = np.asarray(x, dtype=float)
            out = fn(x, t)
            return np.broadcast_to(out, np.broadcast_shapes(np.shape(out), x[..., 0].shape, np.shape(t)))
        return inner

    model = ModelSpec(
        dim=1,
        horizon_T=float(T),
        S=S_vec,
        lambda_fn=broadcast(l_fn),
        p=broadcast(p_fn),
        omega_coeff=float(omega_coeff),
        epsilon=float(epsilon),
        epsilon_star=float(eps_star),
        xbar=np.array([float(xbar)]),
        window=_window(window[0], window[1], 1),
        family="expression",
        params={"S": S, "lambda": lam, "p": p, **(params or {})},
        t_nodes=int(t_nodes),
        cell_width=float(cell_width),
    )
    _validate(model)
    return model


def build_model(config: dict[str, Any]) -> ModelSpec:
    """Instantiate a model from a flat description.

    ``config["family"]`` is ``"cc-affine"`` (keys c0, c1, kappa, T, epsilon,
    epsilon_star, window) or ``"expression"`` (keys S, lambda, p, T, epsilon,
    omega_coeff, xbar, window plus free numeric parameters).
    """
    cfg = dict(config)
    family = cfg.pop("family", "cc-affine")
    common = {}
    for key in ("t_nodes", "cell_width"):
        if key in cfg:
            common[key] = cfg.pop(key)
    window = cfg.pop("window", (-10.0, 10.0))
    window = tuple(window)
    if len(window) != 2:
        raise ModelError(f"malformed window {window!r}")
    if family == "cc-affine":
        allowed = {"c0", "c1", "kappa", "T", "epsilon", "epsilon_star"}
        unknown = set(cfg) - allowed
        if unknown:
            raise ModelError(f"unknown cc-affine keys: {sorted(unknown)}")
        return cc_affine(window=window, **cfg, **common)
    if family == "expression":
        try:
            S, lam, p = cfg.pop("S"), cfg.pop("lambda"), cfg.pop("p")
        except KeyError as exc:
            raise ModelError(f"expression model needs key {exc}") from exc
        fixed = {k: cfg.pop(k) for k in ("T", "epsilon", "epsilon_star", "omega_coeff", "xbar") if k in cfg}
        if "T" not in fixed or "epsilon" not in fixed or "omega_coeff" not in fixed:
            raise ModelError("expression model needs T, epsilon and omega_coeff")
        params = {k: float(v) for k, v in cfg.items()}
        return expression_model(S, lam, p, window=window, params=params, **fixed, **common)
    raise ModelError(f"unknown model family {family!r}")


@dataclass
class AssumptionReport:
    a_hat: float
    Lambda_hat: float
    c_hat: float
    delta_hat: float
    M_hat: float
    dini_ratio: float
    omega_coeff: float
    normalization_error: float
    quad_error: float
    t_grid: int
    x_grid: int
    dini_ok: bool
    a_ok: bool
    Lambda_ok: bool
    Lambda_half_ok: bool
    normalization_ok: bool
    positivity_ok: bool
    holder_ok: bool

    @property
    def all_ok(self) -> bool:
        return all((self.dini_ok, self.a_ok, self.Lambda_ok, self.normalization_ok, self.positivity_ok))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["all_ok"] = self.all_ok
        return d


def _scan_points(model: ModelSpec, x_grid: int) -> np.ndarray:
    lo, hi = model.window
    axes = [np.linspace(lo[i], hi[i], x_grid) for i in range(model.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _trap_sup(values: np.ndarray, t: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Sup over rows of the trapezoid integral, with Richardson error estimate."""
    full = np.trapezoid(values, t, axis=-1)
    half = np.trapezoid(values[..., ::2], t[::2], axis=-1)
    err = float(np.max(np.abs(full - half)) / 3.0)
    return float(np.max(full)), err, full


def check_assumptions(model: ModelSpec, t_grid: int = 1024, x_grid: int = 201) -> AssumptionReport:
    """Certify a, Lambda, c, delta, M and the Dini modulus over the window.

    ``t_grid`` is the number of trapezoid subintervals on ``[0, T]`` (rounded
    up to even for the half-resolution error estimate); ``x_grid`` the number
    of scan points per coordinate of the window.
    """
    if t_grid < 64 or x_grid < 64:
        raise ValueError("grids must have at least 64 points")
    t_grid += t_grid % 2
    T = model.horizon_T
    t = np.linspace(0.0, T, t_grid + 1)
    xs = _scan_points(model, x_grid)
    X, Tt = xs[:, None, :], t[None, :]
    with np.errstate(all="ignore"):
        pv = np.broadcast_to(np.asarray(model.p(X, Tt), dtype=float), (len(xs), len(t)))
        lam = np.broadcast_to(np.asarray(model.lambda_fn(X, Tt), dtype=float), (len(xs), len(t)))
        a_hat, a_err, _ = _trap_sup(lam * pv, t)
        L_hat, L_err, _ = _trap_sup(lam**2 * pv, t)
        mass = np.trapezoid(pv, t, axis=1)
        norm_err = float(np.max(np.abs(mass - 1.0)))
        # inf over t in (0, T]; the open endpoint is approached down to T/2048
        t_pos = np.concatenate([[T / 2048.0], t[1:]])
        p_pos = np.broadcast_to(np.asarray(model.p(X, t_pos[None, :]), dtype=float), (len(xs), len(t_pos)))
        delta_hat = float(np.min(p_pos))
        M_hat = float(max(np.max(pv), np.max(p_pos)))
        s_bar = np.asarray(model.S(model.xbar[None, :], t), dtype=float)
        c_hat = float(np.max(np.linalg.norm(s_bar - model.xbar, axis=-1))) + model.epsilon_star
        dini_ratio = _dini_ratio(xs, pv, t)
    finite = all(map(math.isfinite, (a_hat, L_hat, c_hat, delta_hat, M_hat, dini_ratio)))
    quad_err = max(a_err, L_err, 1e-12)
    return AssumptionReport(
        a_hat=a_hat,
        Lambda_hat=L_hat,
        c_hat=c_hat,
        delta_hat=delta_hat,
        M_hat=M_hat,
        dini_ratio=dini_ratio,
        omega_coeff=model.omega_coeff,
        normalization_error=norm_err,
        quad_error=quad_err,
        t_grid=t_grid,
        x_grid=x_grid,
        dini_ok=finite and dini_ratio <= model.omega_coeff * (1 + DINI_TOL) + DINI_TOL,
        a_ok=finite and a_hat < 1.0,
        Lambda_ok=finite and L_hat < 1.0,
        Lambda_half_ok=finite and L_hat < 0.5,
        normalization_ok=finite and norm_err <= NORMALIZATION_TOL,
        positivity_ok=finite and bool(np.min(pv) >= 0.0) and delta_hat > 0.0,
        holder_ok=finite and a_hat <= math.sqrt(max(L_hat, 0.0)) + quad_err + 1e-12,
    )


def _dini_ratio(xs: np.ndarray, pv: np.ndarray, t: np.ndarray, max_points: int = 128) -> float:
    """sup over scanned pairs of int |p(x,.) - p(y,.)| dt / |x - y|."""
    idx = np.unique(np.linspace(0, len(xs) - 1, min(len(xs), max_points)).round().astype(int))
    best = 0.0
    # adjacent pairs on the full grid catch the local Lipschitz constant
    if xs.shape[1] == 1:
        diffs = np.trapezoid(np.abs(np.diff(pv, axis=0)), t, axis=1)
        dist = np.abs(np.diff(xs[:, 0]))
        best = float(np.max(diffs / dist))
    sub_x, sub_p = xs[idx], pv[idx]
    for i in range(len(idx) - 1):
        d = np.linalg.norm(sub_x[i + 1:] - sub_x[i], axis=-1)
        l1 = np.trapezoid(np.abs(sub_p[i + 1:] - sub_p[i]), t, axis=1)
        best = max(best, float(np.max(l1 / d)))
    return best


def phi(omega_coeff: float, zeta: float, s) -> np.ndarray:
    """sum_{n>=1} omega(zeta^n s) for the linear modulus omega(s) = omega_coeff * s."""
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (0, 1)")
    return omega_coeff * np.asarray(s, dtype=float) * zeta / (1.0 - zeta)
