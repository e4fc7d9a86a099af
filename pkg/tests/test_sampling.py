from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from perturbed_ifs import sampling
from perturbed_ifs.metrics import ks_statistic
from perturbed_ifs.model import cc_affine
from perturbed_ifs.rng import rng_stream
from perturbed_ifs.sampling import (
    cdf_grid,
    coupled_times_from_uniforms,
    h_from_uniforms,
    h_uniform_count,
    min_mass,
    sample_coupled_times,
    sample_h,
    sample_t,
    times_from_uniforms,
)

KS_99 = 1.63  # asymptotic 1% critical value of sqrt(n) * KS


def cc_cdf(t, x, kappa=0.5, T=1.0):
    """Closed-form time CDF for the built-in family."""
    return t / T + kappa * math.tanh(x) * np.sin(2 * np.pi * t / T) / (2 * np.pi)


def cc_min_mass(x, y, kappa=0.5):
    # min(a, b) = (a + b)/2 - |a - b|/2 and the period average of |cos| is 2/pi
    return 1 - kappa * abs(math.tanh(x) - math.tanh(y)) / math.pi


def uniforms(seed, n, k=1):
    return rng_stream(seed).uniform(n * k).reshape(n, k)


@pytest.mark.parametrize("x", [-3.0, 0.2, 10.0])
def test_time_law_matches_closed_form_cdf(model, x):
    n = 100_000
    t = times_from_uniforms(model, np.full((n, 1), x), uniforms(1, n)[:, 0])
    assert t.min() >= 0.0 and t.max() <= 1.0
    assert ks_statistic(t, lambda s: cc_cdf(s, x)) < KS_99 / math.sqrt(n)


def test_kappa_zero_is_uniform():
    m = cc_affine(kappa=0.0)
    n = 50_000
    t = times_from_uniforms(m, np.full((n, 1), 4.0), uniforms(2, n)[:, 0])
    assert abs(t.mean() - 0.5) < 4 * math.sqrt(1 / 12 / n)
    assert ks_statistic(t, lambda s: s) < KS_99 / math.sqrt(n)


def test_first_fourier_coefficient(model):
    # E cos(2 pi t / T) = kappa tanh(x) / 2 under p(x, .)
    n = 100_000
    t = times_from_uniforms(model, np.full((n, 1), 10.0), uniforms(3, n)[:, 0])
    c = np.cos(2 * np.pi * t)
    assert abs(c.mean() - 0.25) < 4 * c.std() / math.sqrt(n)


def test_grid_inverse_is_exact_at_nodes(model):
    g = cdf_grid(model, 1.3)
    t = times_from_uniforms(model, np.full((5, 1), 1.3), g.cdf_values[[0, 100, 300, 700, 1000]])
    assert np.allclose(t, g.nodes[[0, 100, 300, 700, 1000]], atol=1e-12)


@given(st.floats(-12.0, 12.0))
def test_cdf_grid_invariants(x):
    g = cdf_grid(cc_affine(), x)
    assert g.cdf_values[0] == 0.0 and g.cdf_values[-1] == 1.0
    assert np.all(np.diff(g.cdf_values) >= 0.0)
    # the quantized row sits at the cell centre
    assert abs(g.x[0] - x) <= 0.5e-3 + 1e-12
    assert np.allclose(g.cdf_values, cc_cdf(g.nodes, g.x[0]), atol=1e-6)


def test_sample_t_single_draw_reproducible(model):
    a = sample_t(model, 0.5, rng_stream(9))
    assert a == sample_t(model, 0.5, rng_stream(9))
    assert 0.0 <= a <= 1.0


def test_cache_eviction_does_not_change_results():
    import dataclasses

    base = cc_affine()
    small = dataclasses.replace(base, cache_pages=1)
    X = rng_stream(4).uniform(20_000).reshape(-1, 1) * 40 - 20
    u = rng_stream(5).uniform(len(X))
    assert np.array_equal(times_from_uniforms(base, X, u), times_from_uniforms(small, X, u))
    assert len(small.cdf_cache._pages) == 1


def test_box_perturbation_moments(model):
    n = 100_000
    h = h_from_uniforms(model, uniforms(6, n, h_uniform_count(model)))
    assert h.shape == (n, 1)
    assert np.abs(h).max() <= model.epsilon
    var = model.epsilon**2 / 3
    assert abs(h.mean()) < 4 * math.sqrt(var / n)
    assert abs(h.var() - var) < 0.02 * var


def test_sample_h_uses_one_uniform_per_coordinate(model):
    r = rng_stream(8)
    h = sample_h(model, r)
    assert h.shape == (1,)
    assert h[0] == pytest.approx(model.epsilon * (2 * rng_stream(8).uniform(1)[0] - 1))


def test_ball_perturbation_is_uniform_in_disc(planar):
    n = 100_000
    k = h_uniform_count(planar)
    assert k == 3
    h = h_from_uniforms(planar, uniforms(7, n, k))
    r = np.linalg.norm(h, axis=1)
    assert r.max() <= planar.epsilon * (1 + 1e-12)
    # radius CDF (r / eps)^2 and uniform angle
    assert ks_statistic(r / planar.epsilon, lambda s: s**2) < KS_99 / math.sqrt(n)
    angle = (np.arctan2(h[:, 1], h[:, 0]) + np.pi) / (2 * np.pi)
    assert ks_statistic(angle, lambda s: s) < KS_99 / math.sqrt(n)


def test_ball_count_in_higher_dimension():
    from types import SimpleNamespace

    m = SimpleNamespace(dim=3, perturbation="ball", epsilon=1.0)
    assert h_uniform_count(m) == 5
    h = h_from_uniforms(m, uniforms(10, 20_000, 5))
    r = np.linalg.norm(h, axis=1)
    assert r.max() <= 1.0 + 1e-12
    assert ks_statistic(r, lambda s: s**3) < KS_99 / math.sqrt(len(r))


def test_unknown_perturbation_rejected():
    from types import SimpleNamespace

    with pytest.raises(ValueError):
        h_from_uniforms(SimpleNamespace(dim=1, perturbation="cauchy", epsilon=1.0), np.zeros((1, 1)))


def test_min_mass_separated_states(model):
    assert min_mass(model, 20.0, -20.0, t_nodes=4096) == pytest.approx(1 - 2 * 0.5 / math.pi, abs=1e-6)


@given(st.floats(-8, 8), st.floats(-8, 8))
def test_min_mass_closed_form_and_bounds(x, y):
    m = cc_affine()
    got = min_mass(m, x, y)
    assert got == pytest.approx(cc_min_mass(x, y), abs=2e-5)
    assert 0.5 - 1e-9 <= got <= 1.0 + 1e-12  # delta * T <= alpha <= 1


def test_min_mass_of_identical_states_is_one(model):
    assert min_mass(model, 1.7, 1.7) == pytest.approx(1.0, abs=1e-12)


def test_coupled_times_same_cell_always_agree(model):
    n = 1000
    X = np.full((n, 1), 2.0)
    tx, ty, same = coupled_times_from_uniforms(model, X, X + 1e-5, uniforms(11, n, 3))
    assert same.all() and np.array_equal(tx, ty)


def test_coupled_times_marginals_and_agreement(model):
    n = 100_000
    x, y = 20.0, -20.0
    U = uniforms(12, n, 3)
    tx, ty, same = coupled_times_from_uniforms(model, np.full((n, 1), x), np.full((n, 1), y), U)
    alpha = cc_min_mass(x, y)
    assert abs(same.mean() - alpha) < 3 * math.sqrt(alpha * (1 - alpha) / n)
    assert np.array_equal(tx[same], ty[same])
    assert ks_statistic(tx, lambda s: cc_cdf(s, x)) < KS_99 / math.sqrt(n)
    assert ks_statistic(ty, lambda s: cc_cdf(s, y)) < KS_99 / math.sqrt(n)


def test_coupled_times_chunking_is_invisible(model, monkeypatch):
    n = 5000
    r = rng_stream(13)
    X = r.uniform(n).reshape(-1, 1) * 6 - 3
    Y = r.uniform(n).reshape(-1, 1) * 6 - 3
    U = r.uniform(3 * n).reshape(n, 3)
    full = coupled_times_from_uniforms(model, X, Y, U)
    monkeypatch.setattr(sampling, "COUPLED_CHUNK", 7)
    chunked = coupled_times_from_uniforms(model, X, Y, U)
    for a, b in zip(full, chunked):
        assert np.array_equal(a, b)


def test_coupled_times_degenerate_for_flat_density():
    m = cc_affine(kappa=0.0)
    tx, ty, same = coupled_times_from_uniforms(m, np.array([[5.0]]), np.array([[-5.0]]), np.array([[0.99, 0.3, 0.8]]))
    assert same[0] and tx[0] == ty[0] == pytest.approx(0.3)


def test_sample_coupled_times_scalar(model):
    tx, ty, same = sample_coupled_times(model, 3.0, -3.0, rng_stream(14))
    assert isinstance(same, bool) and 0 <= tx <= 1 and 0 <= ty <= 1
    assert (tx == ty) == same


def test_planar_time_law(planar):
    n = 50_000
    x = np.array([2.0, -1.0])
    t = times_from_uniforms(planar, np.tile(x, (n, 1)), uniforms(15, n)[:, 0])
    k = 0.3 * math.tanh(3.0)
    assert ks_statistic(t, lambda s: s + k * np.sin(2 * np.pi * s) / (2 * np.pi)) < KS_99 / math.sqrt(n)


def test_points_shape_checked(model):
    with pytest.raises(ValueError):
        sampling.as_points(np.zeros((3, 2)), 1)
