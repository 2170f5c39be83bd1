import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from conftest import make_state, simulate_crossed
from dataset import Dataset
from errors import ConfigError, PredictionError
from estimator import fit
from families import FamilySpec, get_family
from inference import (confidence_intervals, covariance_beta, infer, predict, predict_baseline,
                       round_category, summary)
from models import FitConfig


def orthogonal_design(family):
    X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    y = np.array([1, 0, 1, 0]) if family.kind != 'gaussian' else np.array([0.3, -0.1, 0.2, 0.5])
    return Dataset(y=y, X=X, codes=(np.array([0, 1, 0, 1]),), family=family, n_levels=(2,))


def test_gaussian_orthonormal_design_covariance():
    ds = orthogonal_design(FamilySpec('gaussian'))
    state = make_state(ds, [[0.0]], [[0, 0]], psi=1.0)
    assert_allclose(covariance_beta(ds, state), np.eye(2) / 4.0, atol=1e-15)


def test_logistic_at_zero_predictor_uses_quarter_weights():
    ds = orthogonal_design(FamilySpec('bernoulli_logit'))
    state = make_state(ds, [[0.0]], [[0, 0]])
    expected = 4.0 * np.linalg.inv(ds.X.T @ ds.X)
    assert_allclose(covariance_beta(ds, state), expected, rtol=1e-12)


@pytest.mark.parametrize('kind', ['gaussian', 'bernoulli_logit', 'poisson_log', 'ordered_probit'])
def test_covariance_inverts_the_finite_difference_hessian(kind):
    ds = simulate_crossed(kind, (5, 4), reps=3, p=2, seed=11)
    state = make_state(ds, [[-0.2, 0.3], [0.1, -0.1]], [np.arange(5) % 2, np.arange(4) % 2],
                       beta=[0.2, -0.1], psi=0.7 if kind == 'gaussian' else 1.0)
    family = get_family(ds.family)
    offset = state.alpha[0][state.gamma[0][ds.codes[0]]] + state.alpha[1][state.gamma[1][ds.codes[1]]]

    def loglik(beta):
        return np.sum(family.log_density(ds.y, ds.X @ beta + offset, state.psi))

    h = 1e-4
    hessian = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h
            hessian[i, j] = (loglik(state.beta + ei + ej) - loglik(state.beta + ei - ej)
                             - loglik(state.beta - ei + ej) + loglik(state.beta - ei - ej)) / (4 * h * h)
    assert_allclose(covariance_beta(ds, state), np.linalg.inv(-hessian), rtol=1e-5)


def test_interval_example():
    intervals = confidence_intervals([1.0], np.array([[0.25]]), 0.95)
    assert_allclose(intervals[0], [1 - 0.5 * 1.959964, 1 + 0.5 * 1.959964], atol=1e-6)
    assert_allclose(intervals[0], [0.020, 1.980], atol=1e-3)


@pytest.mark.parametrize('level', [0.0, 1.0, -0.5, 1.5])
def test_level_must_be_inside_unit_interval(level):
    with pytest.raises(ConfigError):
        confidence_intervals([1.0], np.array([[0.25]]), level)


def test_infer_contains_estimates():
    ds = simulate_crossed('poisson_log', (6, 5), reps=3, p=2, seed=12)
    model = fit(ds, FitConfig(group_counts=(2, 2)))
    result = infer(model, ds, 0.9)
    assert np.all(result.intervals[:, 0] < result.beta)
    assert np.all(result.beta < result.intervals[:, 1])
    assert_allclose(result.cov_beta, result.cov_beta.T, atol=1e-10)
    assert np.all(np.linalg.eigvalsh(result.cov_beta) > 0)
    z = stats.norm.ppf(0.95)
    assert_allclose(result.intervals[:, 1] - result.beta, z * result.se)
    assert 'converged' in summary(model, ds, result)


def test_interval_width_shrinks_with_root_n():
    widths = []
    for reps in (4, 16):
        ds = simulate_crossed('gaussian', (5, 5), reps=reps, p=1, seed=13)
        model = fit(ds, FitConfig(group_counts=(2, 2)))
        result = infer(model, ds)
        widths.append(result.intervals[0, 1] - result.intervals[0, 0])
    assert widths[1] / widths[0] == pytest.approx(0.5, rel=0.25)


def ordered_model():
    ds = Dataset.from_labels(y=[1, 2, 3, 2], X=np.empty((4, 0)), way_labels=[['u1', 'u2', 'u1', 'u2']],
                             family=FamilySpec.ordered((-1.0, 1.0)), way_names=['user'])
    return make_state(ds, [[0.0]], [[0, 0]])


def test_ordered_prediction_by_symmetry():
    result = predict(ordered_model(), pd.DataFrame({'user': ['u1', 'u2']}))
    assert_allclose(result['prediction'], 2.0, atol=1e-12)
    assert_array_equal(result['category'], [2, 2])
    assert not result['unknown_level'].any()


def test_logistic_prediction_at_zero():
    ds = orthogonal_design(FamilySpec('bernoulli_logit'))
    state = make_state(ds, [[0.0]], [[0, 0]])
    rows = pd.DataFrame({'x1': ['0.0'], 'x2': ['0.0'], 'way1': ['1']})
    assert predict(state, rows)['prediction'].iloc[0] == pytest.approx(0.5)


def test_unknown_level_needs_permission():
    model = ordered_model()
    rows = pd.DataFrame({'user': ['u1', 'u9']})
    with pytest.raises(PredictionError) as info:
        predict(model, rows)
    assert info.value.level == 'u9'

    result = predict(model, rows, allow_new_levels=True)
    assert_array_equal(result['unknown_level'], [False, True])


def test_unknown_level_uses_way_center():
    ds = Dataset.from_labels(y=[0.0, 1.0, 2.0], X=np.empty((3, 0)), way_labels=[['a', 'b', 'c']],
                             family=FamilySpec('gaussian'), way_names=['w'])
    state = make_state(ds, [[-1.0, 2.5]], [[0, 1, 1]])
    result = predict(state, pd.DataFrame({'w': ['b', 'zzz']}), allow_new_levels=True)
    assert_allclose(result['eta'], [2.5, 4.0 / 3.0])


def test_baseline_prediction_uses_thresholds_only():
    family = FamilySpec.ordered((-1.0, 1.0))
    result = predict_baseline(family, [0.5], pd.DataFrame({'x': ['0', '2']}), ['x'])
    assert_allclose(result['eta'], [0.0, 1.0])
    assert result['prediction'].iloc[0] == pytest.approx(2.0)


@pytest.mark.parametrize('mean, expected', [(3.6, 4), (2.5, 3), (2.49, 2), (0.2, 1), (7.2, 5)])
def test_round_category(mean, expected):
    assert round_category(mean, 5) == expected
