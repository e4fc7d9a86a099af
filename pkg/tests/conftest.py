from __future__ import annotations

import pytest
from hypothesis import settings

from perturbed_ifs.chain import stationary_estimate
from perturbed_ifs.model import cc_affine
from perturbed_ifs.rng import rng_stream

settings.register_profile("repo", deadline=None, max_examples=40)
settings.load_profile("repo")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def model():
    return cc_affine()


@pytest.fixture(scope="session")
def mu_star(model):
    """Invariant-measure proxy at the default sizes (burn-in 1000, 100000 states)."""
    return stationary_estimate(model, 1000, 100_000, rng_stream(2024, 0))


@pytest.fixture
def record():
    def _record(index: int, ok: bool, detail: str):
        line = f"criterion {index:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def planar_model(kappa: float = 0.3, epsilon: float = 0.1):
    """Two-dimensional contraction with state-dependent jump times and ball perturbations."""
    import numpy as np

    from perturbed_ifs.model import ModelSpec

    def S(x, t):
        x = np.asarray(x, dtype=float)
        c = (0.5 + 0.1 * np.cos(2 * np.pi * np.asarray(t, dtype=float)))[..., None]
        return c * x + np.array([1.0, 0.0])

    def lam(x, t):
        x = np.asarray(x, dtype=float)
        return np.abs(0.5 + 0.1 * np.cos(2 * np.pi * np.asarray(t, dtype=float))) * np.ones_like(x[..., 0])

    def p(x, t):
        x = np.asarray(x, dtype=float)
        return 1.0 + kappa * np.tanh(x[..., 0] - x[..., 1]) * np.cos(2 * np.pi * np.asarray(t, dtype=float))

    return ModelSpec(
        dim=2,
        horizon_T=1.0,
        S=S,
        lambda_fn=lam,
        p=p,
        omega_coeff=2 * kappa * np.sqrt(2) / np.pi,
        epsilon=epsilon,
        epsilon_star=epsilon,
        xbar=np.zeros(2),
        window=(np.full(2, -5.0), np.full(2, 5.0)),
        perturbation="ball",
        family="planar-test",
        params={"kappa": kappa},
    )


@pytest.fixture(scope="session")
def planar():
    return planar_model()
