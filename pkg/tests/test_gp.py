import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bopinn import gp
from bopinn.gp import GprHyper, fit, kernel_matrix, log_marginal_likelihood, predict, rbf_kernel
from oracles import dense_gp

GRID = np.linspace(0.1, 1.0, 1001)


def test_kernel_values():
    assert rbf_kernel(0.3, 0.3, GprHyper(2.0, 0.7)) == 2.0
    assert rbf_kernel(0.0, 0.2 * math.sqrt(2), GprHyper(1.0, 0.2)) == pytest.approx(0.36788, abs=5e-6)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 3))
def test_kernel_symmetry(a, b, ell):
    h = GprHyper(1.3, ell)
    assert rbf_kernel(a, b, h) == rbf_kernel(b, a, h)


def test_noise_floor_is_jitter():
    assert GprHyper(1.0, 1.0, 0.0).noise_variance == gp.JITTER
    with pytest.raises(ValueError):
        GprHyper(1.0, -1.0)


def test_single_point_interpolation():
    m = fit([0.5], [-1.0], GprHyper(1.0, 0.1))
    assert predict(m, 0.5)[0] == pytest.approx(-1.0, abs=1e-6)


def test_two_point_hand_solution():
    h = GprHyper(1.0, 1.0, 1e-10)
    m = fit([0.0, 1.0], [0.0, 1.0], h, normalize=False)
    k01 = math.exp(-0.5)
    # [[1+s, k], [k, 1+s]] a = [0, 1]
    s = 1e-10
    det = (1 + s) ** 2 - k01**2
    a = np.array([-k01, 1 + s]) / det
    k_star = math.exp(-0.125)
    assert predict(m, 0.5)[0] == pytest.approx(k_star * (a[0] + a[1]), abs=1e-12)


def test_scaling_linearity():
    x = np.array([0.1, 0.4, 0.7])
    y = np.array([0.3, -0.2, 0.5])
    m1 = fit(x, y, GprHyper(1.0, 0.3, 1e-6), normalize=False)
    m2 = fit(x, 10 * y, GprHyper(100.0, 0.3, 1e-4), normalize=False)
    assert np.allclose(predict(m2, GRID)[0], 10 * predict(m1, GRID)[0], atol=1e-9)
    assert np.allclose(predict(m2, GRID)[1], 10 * predict(m1, GRID)[1], atol=1e-9)


def test_interpolates_at_training_points():
    x = np.array([0.1, 0.35, 0.6, 0.9])
    y = np.sin(5 * x)
    m = fit(x, y, GprHyper(1.0, 0.2))
    mean, std = predict(m, x)
    assert np.allclose(mean, y, atol=1e-6) and np.all(std < 1e-4)


def test_prior_reversion_far_away():
    m = fit([0.0, 0.1], [0.5, 0.7], GprHyper(2.0, 0.05), normalize=False)
    mean, std = predict(m, 50.0)
    assert abs(mean) < 1e-12 and std == pytest.approx(math.sqrt(2.0))


def test_batch_equals_pointwise():
    m = fit([0.2, 0.5, 0.8], [1.0, -1.0, 0.5], GprHyper(1.0, 0.2))
    q = np.array([0.1, 0.33, 0.95])
    mean, std = predict(m, q)
    for i, c in enumerate(q):
        assert predict(m, c) == pytest.approx((mean[i], std[i]), abs=1e-15)


def test_lml_single_point():
    m = fit([0.3], [0.0], GprHyper(1.0 - 1e-10, 1.0, 1e-10), normalize=False)
    assert log_marginal_likelihood(m) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-9)


@given(st.integers(0, 10_000), st.floats(0.05, 1.0), st.floats(0.2, 5.0), st.floats(1e-6, 1e-2))
def test_matches_dense_oracle(seed, ell, sf2, sn2):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 1.0, 10)
    y = rng.normal(size=10)
    m = fit(x, y, GprHyper(sf2, ell, sn2), normalize=False)
    q = rng.uniform(0.0, 1.1, 25)
    mean, std = predict(m, q)
    o_mean, o_var, o_lml = dense_gp(x, y, q, sf2, ell, sn2 + m.jitter)
    assert np.allclose(mean, o_mean, rtol=0, atol=1e-8 * max(1, np.max(np.abs(o_mean))))
    assert np.allclose(std**2, np.maximum(o_var, 0), rtol=0, atol=1e-8)
    assert log_marginal_likelihood(m) == pytest.approx(o_lml, rel=1e-8, abs=1e-8)


def test_standardized_model_matches_oracle_on_standardized_targets():
    rng = np.random.default_rng(1)
    x = rng.uniform(0.1, 1, 10)
    y = -1e-4 * (1 + rng.random(10))
    h = GprHyper(1.0, 0.2, 1e-6)
    m = fit(x, y, h)
    ys = (y - y.mean()) / y.std()
    o_mean, o_var, o_lml = dense_gp(x, ys, GRID, 1.0, 0.2, 1e-6)
    mean, std = predict(m, GRID)
    assert np.allclose(mean, y.mean() + y.std() * o_mean, atol=1e-12)
    assert np.allclose(std, y.std() * np.sqrt(np.maximum(o_var, 0)), atol=1e-12)
    assert log_marginal_likelihood(m) == pytest.approx(o_lml, rel=1e-8)


def test_duplicate_points_stay_well_posed():
    x = np.array([0.2, 0.5, 0.5, 0.8])
    y = np.array([0.1, 0.4, 0.4, -0.3])
    m = fit(x, y, GprHyper(1.0, 0.2), normalize=False)
    _, _, o_lml = dense_gp(x, y, [0.5], 1.0, 0.2, m.hyper.noise_variance + m.jitter)
    assert log_marginal_likelihood(m) == pytest.approx(o_lml, rel=1e-6)
    assert predict(m, 0.5)[0] == pytest.approx(0.4, abs=1e-6)


@given(st.integers(0, 10_000), st.integers(1, 60))
def test_variance_nonnegative_and_cholesky_reconstructs(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 1.0, n)
    y = rng.normal(size=n)
    m = fit(x, y, GprHyper(1.0, 0.1))
    assert np.all(np.isfinite(predict(m, GRID)[1]))
    assert np.max(np.abs(m.chol @ m.chol.T - m.covariance())) < 1e-8


@given(st.integers(0, 10_000))
def test_adding_a_point_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 1.0, 8)
    y = rng.normal(size=8)
    h = GprHyper(1.0, 0.15)
    before = predict(fit(x, y, h, normalize=False), GRID)[1] ** 2
    x2 = np.append(x, rng.uniform(0.1, 1.0))
    after = predict(fit(x2, np.append(y, 0.3), h, normalize=False), GRID)[1] ** 2
    assert np.all(after <= before + 1e-8)


def test_ml2_fit_is_deterministic_and_bounded():
    x = np.linspace(0.1, 1, 12)
    y = -((x - 0.55) ** 2)
    a, b = fit(x, y), fit(x, y)
    assert a.hyper == b.hyper
    for v, (lo, hi) in zip((a.hyper.signal_variance, a.hyper.length_scale, a.hyper.noise_variance),
                           gp.HYPER_BOUNDS):
        assert lo * (1 - 1e-9) <= v <= hi * (1 + 1e-9)
    q = np.linspace(0.1, 1, 50)
    assert np.max(np.abs(predict(a, q)[0] - (-((q - 0.55) ** 2)))) < 1e-3


def test_ml2_beats_default_hyper():
    rng = np.random.default_rng(0)
    x = rng.uniform(0.1, 1, 15)
    y = np.sin(6 * x) + 0.01 * rng.normal(size=15)
    ml2 = fit(x, y)
    fixed = fit(x, y, GprHyper(1.0, 0.1, 1e-6))
    assert log_marginal_likelihood(ml2) >= log_marginal_likelihood(fixed) - 1e-9


def test_neg_lml_gradient():
    rng = np.random.default_rng(2)
    x = rng.uniform(0.1, 1, 9)
    ys = rng.normal(size=9)
    d2 = (x[:, None] - x[None, :]) ** 2
    z = np.array([0.3, -0.5, 1.0])  # noise variance ~2e-3: well conditioned
    _, g = gp._neg_lml_and_grad(z, x, ys, d2)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        fd = (gp._neg_lml_and_grad(z + e, x, ys, d2)[0] - gp._neg_lml_and_grad(z - e, x, ys, d2)[0]) / 2e-6
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def test_input_validation():
    with pytest.raises(ValueError):
        fit([0.1, 0.2], [1.0])
    with pytest.raises(ValueError):
        fit([0.1], [np.nan])
    with pytest.raises(ValueError):
        fit([0.1], [1.0], hyper="bogus")


def test_singular_after_escalation(monkeypatch):
    def always_fail(*a, **k):
        raise gp.LinAlgError("not PD")

    monkeypatch.setattr(gp, "cholesky", always_fail)
    with pytest.raises(gp.SingularModelError):
        fit([0.1, 0.2], [1.0, 2.0], GprHyper())
