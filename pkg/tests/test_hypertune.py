import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demboost.dataset import FEATURE_NAMES, FeatureTable
from demboost.errors import DomainError, TuningError
from demboost.gbtree import GbtParams
from demboost.hypertune import (
    BOOSTER_DIMENSIONS,
    Dimension,
    SearchSpace,
    expected_improvement,
    export_history,
    fit_gp,
    gp_posterior,
    incumbent_trace,
    load_params,
    read_history,
    save_params,
    standardize,
    tune,
    tune_booster,
)

X_SPACE = SearchSpace((Dimension("x", 0.0, 1.0),))


def quad(values):
    return (values["x"] - 0.3) ** 2


# ------------------------------------------------------------- EI and GP ---


def test_ei_reference_values():
    # mu = f_best, sigma = 1: EI = phi(0)
    assert expected_improvement(0.0, 1.0, 0.0) == pytest.approx(0.3989422804014327, abs=1e-12)
    # sigma = 0 reduces to max(f_best - mu, 0)
    assert expected_improvement(1.0, 0.0, 3.0) == 2.0
    assert expected_improvement(3.0, 0.0, 1.0) == 0.0
    # z = 1: 1 * Phi(1) + phi(1)
    assert expected_improvement(0.0, 1.0, 1.0) == pytest.approx(0.8413447460685429 + 0.24197072451914337, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(1e-6, 10), st.floats(-10, 10))
def test_ei_non_negative_and_monotone(mu, sigma, f_best):
    ei = expected_improvement(mu, sigma, f_best)
    assert ei >= 0
    assert ei >= max(f_best - mu, 0.0) - 1e-12
    assert expected_improvement(mu - 0.5, sigma, f_best) >= ei - 1e-12


def test_ei_vectorised():
    mu = np.array([0.0, 1.0, -1.0])
    sd = np.array([1.0, 0.0, 0.5])
    got = expected_improvement(mu, sd, 0.5)
    assert got.shape == (3,)
    assert all(got[i] == expected_improvement(mu[i], sd[i], 0.5) for i in range(3))
    with pytest.raises(DomainError):
        expected_improvement(0.0, -1.0, 0.0)


def test_gp_interpolates_observations():
    rng = np.random.default_rng(0)
    X = rng.random((8, 2))
    y = standardize(np.sin(4 * X[:, 0]) + X[:, 1])
    mu, sd = gp_posterior(X, y, X, length_scale=0.4)
    np.testing.assert_allclose(mu, y, atol=1e-3)
    assert np.all(sd < 1e-2)


def test_gp_far_point_reverts_to_prior():
    X = np.array([[0.0], [0.05]])
    mu, sd = gp_posterior(X, np.array([1.0, -1.0]), np.array([1.0]), length_scale=0.05)
    assert abs(mu) < 1e-3 and sd == pytest.approx(1.0, abs=1e-3)


def test_gp_needs_two_points():
    with pytest.raises(DomainError):
        gp_posterior(np.zeros((1, 1)), [0.0], [0.5])


def test_length_scale_selected_by_likelihood():
    x = np.linspace(0, 1, 12)[:, None]
    smooth = fit_gp(x, standardize(x[:, 0]))
    wiggly = fit_gp(x, standardize(np.sin(40 * x[:, 0])))
    assert smooth.length_scale > wiggly.length_scale


def test_duplicate_points_stay_positive_definite():
    X = np.array([[0.2], [0.2], [0.7]])
    fit_gp(X, np.array([0.0, 0.0, 1.0]), 0.8)


# ----------------------------------------------------------- search space ---


def test_dimension_mapping():
    d = Dimension("lr", 1e-3, 1.0, "log")
    assert d.from_unit(0.0) == pytest.approx(1e-3)
    assert d.from_unit(1.0) == pytest.approx(1.0)
    assert d.from_unit(0.5) == pytest.approx(math.sqrt(1e-3))
    n = Dimension("n", 1, 2000, kind="integer")
    assert n.from_unit(0.0) == 1 and n.from_unit(1.0) == 2000
    assert isinstance(n.from_unit(0.3), int)
    with pytest.raises(DomainError):
        Dimension("bad", 0.0, 1.0, "log")
    with pytest.raises(DomainError):
        Dimension("bad", 1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1))
def test_unit_round_trip(u):
    d = Dimension("a", 1e-3, 10.0, "log")
    assert d.to_unit(d.from_unit(u)) == pytest.approx(u, abs=1e-12)


def test_log_uniform_sampling():
    space = SearchSpace((Dimension("a", 1e-3, 1.0, "log"),))
    draws = np.array([p["a"] for p in space.sample(4000, np.random.default_rng(0))])
    # log-uniform median is the geometric mean of the bounds
    assert 0.02 <= np.median(draws) <= 0.05
    assert draws.min() >= 1e-3 and draws.max() <= 1.0


def test_booster_space_bounds():
    space = SearchSpace()
    assert space.names == tuple(d.name for d in BOOSTER_DIMENSIONS)
    lo = space.point(np.zeros(space.ndim))
    hi = space.point(np.ones(space.ndim))
    assert lo["n_estimators"] == 1 and hi["n_estimators"] == 2000
    assert lo["max_depth"] == 1 and hi["max_depth"] == 10
    GbtParams(**lo)
    GbtParams(**hi)


def test_overrides():
    space = SearchSpace().with_overrides({"n_estimators": [10, 50], "gamma": {"upper": 1.0}})
    dims = {d.name: d for d in space.dimensions}
    assert (dims["n_estimators"].lower, dims["n_estimators"].upper) == (10, 50)
    assert dims["gamma"].upper == 1.0 and dims["gamma"].scale == "log"
    with pytest.raises(DomainError):
        SearchSpace().with_overrides({"eta": [0, 1]})


# ------------------------------------------------------------------ tuner ---


def test_tune_finds_quadratic_minimum():
    best, history = tune(X_SPACE, quad, budget=30, n_init=5, seed=1)
    assert abs(best["x"] - 0.3) < 0.02
    assert len(history) == 30
    assert [t.index for t in history] == list(range(30))


def test_tune_deterministic():
    a = tune(X_SPACE, quad, budget=15, n_init=5, seed=7)
    b = tune(X_SPACE, quad, budget=15, n_init=5, seed=7)
    c = tune(X_SPACE, quad, budget=15, n_init=5, seed=8)
    assert [t.params for t in a[1]] == [t.params for t in b[1]]
    assert [t.params for t in a[1]] != [t.params for t in c[1]]


def test_failed_trials_are_recorded():
    def objective(values):
        if values["x"] > 0.5:
            raise ValueError("diverged")
        return quad(values)

    best, history = tune(X_SPACE, objective, budget=12, n_init=4, seed=0)
    failed = [t for t in history if t.failed]
    assert failed and all(math.isnan(t.objective) for t in failed)
    assert best["x"] <= 0.5


def test_all_trials_failing():
    with pytest.raises(TuningError):
        tune(X_SPACE, lambda v: math.nan, budget=4, n_init=2)


def test_budget_validation():
    with pytest.raises(DomainError):
        tune(X_SPACE, quad, budget=3, n_init=5)


def test_incumbent_trace():
    _, history = tune(X_SPACE, quad, budget=12, n_init=4, seed=2)
    trace = incumbent_trace(history)
    assert all(b <= a for a, b in zip(trace, trace[1:]))
    assert trace[-1] == min(t.objective for t in history)


def synthetic_tables(seed=0, n=600):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, len(FEATURE_NAMES)))
    X[:, 1] = rng.integers(0, 2, n)
    X[:, 9] = rng.uniform(0, 100, n)
    X[:, 10] = rng.uniform(0, 100, n)
    y = 5 * X[:, 1] + 0.03 * X[:, 9] + rng.normal(size=n) * 0.3
    t = FeatureTable(X, y, np.arange(n), np.zeros(n, dtype=int))
    return t.take(np.arange(0, 450)), t.take(np.arange(450, n))


def test_tune_booster_returns_best_trial_model():
    tr, va = synthetic_tables()
    space = SearchSpace().with_overrides({"n_estimators": [5, 60], "max_depth": [1, 4]})
    params, history, model, trace = tune_booster(tr, va, space, budget=6, n_init=3, seed=0)
    best = min((t for t in history if not t.failed), key=lambda t: t.objective)
    assert params.n_estimators == best.params["n_estimators"]
    assert model.params == params
    assert trace.val_rmse[model.best_iteration - 1] == best.objective
    assert params.early_stopping_rounds == 10


def test_history_round_trip(tmp_path):
    def objective(values):
        if values["x"] > 0.8:
            return math.inf
        return quad(values), 3

    space = SearchSpace((Dimension("x", 0.0, 1.0), Dimension("n", 1, 9, kind="integer")))
    _, history = tune(space, objective, budget=8, n_init=4, seed=3)
    p = tmp_path / "h.csv"
    export_history(history, p)
    back = read_history(p)
    assert p.read_text().splitlines()[0] == "trial,x,n,objective,best_iteration,failed"
    for a, b in zip(history, back):
        assert a.params == b.params and a.index == b.index and a.failed == b.failed
        assert a.best_iteration == b.best_iteration
        assert (math.isnan(a.objective) and math.isnan(b.objective)) or a.objective == b.objective


def test_params_file_round_trip(tmp_path):
    p = GbtParams(n_estimators=321, learning_rate=0.0123456789, reg_alpha=1e-3)
    save_params(p, tmp_path / "p.yaml")
    assert load_params(tmp_path / "p.yaml") == p
