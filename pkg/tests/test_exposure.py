import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from denc.data import Dataset
from denc.exposure import (ExposureModel, PropensityParams, exposure_log_likelihood,
                           exposure_marginal, fit_exposure, propensity, sample_unobserved)

LN2 = math.log(2.0)


def test_propensity_closed_forms():
    z = np.array([1.0, 0.0])
    assert propensity(z, 1, PropensityParams(np.zeros(2), 0.0)) == 0.5
    p = PropensityParams(np.array([math.log(3.0), 5.0]), 0.0)
    assert propensity(z, 1, p) == pytest.approx(0.75, abs=1e-15)
    assert propensity(z, 0, p) == pytest.approx(0.25, abs=1e-15)


def test_propensity_dimension_mismatch():
    with pytest.raises(ValueError):
        propensity(np.zeros(3), 1, PropensityParams.zeros(2))


def test_params_must_be_finite():
    with pytest.raises(ValueError):
        PropensityParams(np.array([np.nan]), 0.0)


@settings(max_examples=300, deadline=None)
@given(z=st.lists(st.floats(-50, 50), min_size=3, max_size=3),
       w=st.lists(st.floats(-5, 5), min_size=3, max_size=3), b=st.floats(-5, 5))
def test_propensities_complement(z, w, b):
    params = PropensityParams(np.array(w), b)
    p1 = propensity(np.array(z), 1, params)
    p0 = propensity(np.array(z), 0, params)
    assert p1 + p0 == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=300, deadline=None)
@given(z=st.lists(st.floats(-50, 50), min_size=2, max_size=2),
       w=st.lists(st.floats(-5, 5), min_size=2, max_size=2), b=st.floats(-5, 5),
       omega=st.floats(0.0, 0.999), prior=st.floats(1e-6, 1.0))
def test_marginal_is_a_probability(z, w, b, omega, prior):
    model = ExposureModel(PropensityParams(np.array(w), b), omega, prior)
    p1, pq = exposure_marginal(model, np.array(z))
    assert 0.0 <= p1 <= 1.0 and 0.0 <= pq <= 1.0
    assert p1 + pq == pytest.approx(1.0)


def test_model_validation():
    with pytest.raises(ValueError):
        ExposureModel(PropensityParams.zeros(1), omega=1.0)
    with pytest.raises(ValueError):
        ExposureModel(PropensityParams.zeros(1), rating_prior=0.0)


def test_loss_examples():
    Z = np.zeros((2, 3))
    model = ExposureModel(PropensityParams.zeros(3), omega=0.1)
    loss, _, _ = exposure_log_likelihood([0], [], Z, model)
    assert loss == pytest.approx(LN2)
    model0 = ExposureModel(PropensityParams.zeros(3), omega=0.0)
    loss, _, _ = exposure_log_likelihood([0], [1], Z, model0)
    assert loss == pytest.approx(2 * LN2)
    with pytest.raises(ValueError):
        exposure_log_likelihood([], [1], Z, model)


def la_value(w, b, pos, neg, Z, omega):
    # independent restatement of the exposure objective, pair by pair
    total = 0.0
    for u in pos:
        s = Z[u] @ w + b
        total -= math.log(1.0 / (1.0 + math.exp(-s)))
    for u in neg:
        s = Z[u] @ w + b
        total -= (1 - omega) * math.log(1.0 / (1.0 + math.exp(s)))
    return total


def test_loss_matches_pairwise_restatement():
    rng = np.random.default_rng(3)
    Z = rng.normal(size=(6, 4))
    w, b = rng.normal(size=4), 0.3
    pos, neg = rng.integers(0, 6, 15), rng.integers(0, 6, 9)
    model = ExposureModel(PropensityParams(w, b), omega=0.2)
    loss, _, _ = exposure_log_likelihood(pos, neg, Z, model)
    assert loss == pytest.approx(la_value(w, b, pos, neg, Z, 0.2), rel=1e-12)


def test_gradient_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(100):
        k = int(rng.integers(1, 6))
        Z = rng.normal(size=(8, k))
        pos, neg = rng.integers(0, 8, 12), rng.integers(0, 8, 12)
        w, b, omega = rng.normal(size=k), float(rng.normal()), float(rng.uniform(0, 0.9))
        model = ExposureModel(PropensityParams(w, b), omega)
        _, dw, db = exposure_log_likelihood(pos, neg, Z, model)
        fd_w = np.array([(la_value(w + h * e, b, pos, neg, Z, omega)
                          - la_value(w - h * e, b, pos, neg, Z, omega)) / (2 * h)
                         for e in np.eye(k)])
        fd_b = (la_value(w, b + h, pos, neg, Z, omega)
                - la_value(w, b - h, pos, neg, Z, omega)) / (2 * h)
        scale = max(np.max(np.abs(fd_w)), abs(fd_b), 1e-8)
        assert np.max(np.abs(dw - fd_w)) / scale < 1e-5
        assert abs(db - fd_b) / scale < 1e-5


def test_loss_unimodal_along_lines():
    rng = np.random.default_rng(5)
    Z = rng.normal(size=(10, 3))
    pos, neg = rng.integers(0, 10, 20), rng.integers(0, 10, 20)
    for _ in range(20):
        w0, d = rng.normal(size=3), rng.normal(size=3)
        vals = [exposure_log_likelihood(pos, neg, Z, ExposureModel(
            PropensityParams(w0 + t * d, 0.0), 0.1))[0] for t in np.linspace(-3, 3, 41)]
        diffs = np.sign(np.diff(vals))
        # once the restriction starts increasing it never decreases again
        first_up = np.argmax(diffs > 0) if np.any(diffs > 0) else len(diffs)
        assert np.all(diffs[first_up:] >= 0)


def test_sample_unobserved_avoids_observed():
    rng = np.random.default_rng(0)
    obs = np.sort(rng.choice(200, 150, replace=False))
    draws = sample_unobserved(10, 20, obs, 500, rng)
    assert len(draws) == 500
    assert not np.isin(draws, obs).any()
    with pytest.raises(ValueError):
        sample_unobserved(2, 2, np.arange(4), 1, rng)


def _dataset(m, n, rate, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < rate
    u, i = np.nonzero(mask)
    return Dataset(m, n, u, i, np.ones(len(u)))


def test_zero_epochs_keeps_zero_init():
    ds = _dataset(10, 10, 0.3, 0)
    model = fit_exposure(ds, np.ones((10, 2)), max_epochs=0)
    assert np.all(model.params.w0 == 0) and model.params.b0 == 0
    assert model.rating_prior == pytest.approx(len(ds) / 100)


def test_intercept_only_mle():
    # identical confounders, 3 positives per negative, omega = 0 -> sigmoid(b0) = 3/4
    ds = _dataset(40, 50, 0.3, 1)
    Z = np.zeros((40, 2))
    model = fit_exposure(ds, Z, omega=0.0, negative_ratio=1 / 3, max_epochs=200,
                         learning_rate=1.0, tol=0.0)
    assert np.allclose(model.params.w0, 0.0)
    assert 1 / (1 + math.exp(-model.params.b0)) == pytest.approx(0.75, abs=0.02)


def test_recovers_known_logistic():
    m, n, k = 300, 200, 4
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(m, k))
    w_true, b_true = np.array([1.0, -0.8, 0.5, 0.0]), -0.5
    p_true = 1 / (1 + np.exp(-(Z @ w_true + b_true)))
    mask = rng.random((m, n)) < p_true[:, None]
    u, i = np.nonzero(mask)
    model = fit_exposure(Dataset(m, n, u, i, np.ones(len(u))), Z, omega=0.1, seed=3)
    fitted = model.propensities(Z)
    assert np.corrcoef(fitted, p_true)[0, 1] > 0.9
    assert np.all((fitted[u] > 0) & (fitted[u] < 1))


def test_epoch_loss_trend_non_increasing():
    m, n = 100, 80
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(m, 3))
    p = 1 / (1 + np.exp(-(Z @ np.array([1.5, 0.0, -1.0]))))
    u, i = np.nonzero(rng.random((m, n)) < p[:, None])
    model = fit_exposure(Dataset(m, n, u, i, np.ones(len(u))), Z, learning_rate=0.1,
                         max_epochs=30, tol=0.0)
    h = np.array(model.history)
    # epoch means wander with the resampled negatives; the trend must not rise
    assert h[-5:].mean() <= h[:5].mean()
    assert np.all(np.diff(h) <= 0.02 * h[:-1])


def test_json_round_trip():
    model = ExposureModel(PropensityParams(np.array([0.1, -2.0]), 0.3), 0.2, 0.05)
    back = ExposureModel.from_json(model.to_json())
    assert np.array_equal(back.params.w0, model.params.w0)
    assert (back.params.b0, back.omega, back.rating_prior) == (0.3, 0.2, 0.05)
