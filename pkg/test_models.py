import json

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from errors import ConfigError
from families import FamilySpec
from models import FitConfig, FittedModel, FitWarnings


def sample_model():
    return FittedModel(
        family=FamilySpec.ordered((-1.0, 0.5)),
        beta=np.array([0.25, -1.5]),
        psi=1.0,
        alpha=[np.array([0.4, -0.2]), np.array([1.0, -1.0, 0.0])],
        gamma=[np.array([0, 1, 1]), np.array([2, 0, 1, 1])],
        lambda_=100.0,
        objective_trace=[-1.2, -1.1, -1.05],
        converged=True,
        sweeps=2,
        warnings=FitWarnings(underflow_floors=3),
        level_labels=[['u1', 'u2', 'u3'], ['m1', 'm2', 'm3', 'm4']],
        way_names=['user', 'movie'],
        covariate_names=['x1', 'x2'],
        response_name='rating',
        seed=7,
    )


def test_auto_group_counts_use_floor_sqrt():
    assert FitConfig().resolve_group_counts((70, 100, 3)) == (8, 10, 1)


def test_single_group_count_broadcasts():
    assert FitConfig(group_counts=[2]).resolve_group_counts((5, 6)) == (2, 2)


@pytest.mark.parametrize('counts', [[0, 2], [2, 7], [1, 2, 3]])
def test_group_counts_out_of_range(counts):
    with pytest.raises(ConfigError):
        FitConfig(group_counts=counts).resolve_group_counts((5, 6))


@pytest.mark.parametrize('changes', [
    {'lambda_': 0.0}, {'max_iter': 0}, {'tol_obj': -1.0}, {'seed': -3},
    {'init': 'kmeans'}, {'n_starts': 0}, {'newton_steps': 0},
])
def test_fit_config_validation(changes):
    with pytest.raises(ConfigError):
        FitConfig(**changes).validate()


def test_sorted_labels_orders_effects_and_keeps_level_effects():
    model = sample_model()
    ordered = model.sorted_labels()
    assert_array_equal(ordered.alpha[0], [-0.2, 0.4])
    assert_array_equal(ordered.alpha[1], [-1.0, 0.0, 1.0])
    for k in range(2):
        assert_array_equal(ordered.level_effects(k), model.level_effects(k))
    assert_array_equal(model.alpha[0], [0.4, -0.2])


def test_json_codec_carries_everything_predict_needs():
    model = sample_model()
    data = json.loads(json.dumps(model.to_dict()))
    assert data['schema_version'] == 1
    assert data['groups'][1]['assignments'] == [3, 1, 2, 2]
    back = FittedModel.from_dict(data)
    assert back.family == model.family
    assert back.way_names == model.way_names
    assert back.level_labels == model.level_labels
    assert back.warnings.underflow_floors == 3
    for k in range(2):
        assert_array_equal(back.gamma[k], model.gamma[k])
        assert_array_equal(back.level_effects(k), model.level_effects(k))


def test_unknown_schema_version_rejected():
    data = sample_model().to_dict()
    data['schema_version'] = 99
    with pytest.raises(ConfigError):
        FittedModel.from_dict(data)


def test_model_properties():
    model = sample_model()
    assert model.n_ways == 2
    assert model.group_counts == (2, 3)
    assert model.objective == -1.05
