import os

import numpy as np
import pytest

from dataset import Dataset
from families import FamilySpec
from models import FittedModel


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale reproduction, run with CGE_RUN_SLOW=1')


def pytest_collection_modifyitems(config, items):
    if os.environ.get('CGE_RUN_SLOW') == '1':
        return
    skip = pytest.mark.skip(reason='set CGE_RUN_SLOW=1 to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def simulate_crossed(kind, n_levels, reps=3, p=2, seed=0, effect_scale=1.0, thresholds=(-1.0, 1.0)):
    """Every level combination `reps` times, with level effects drawn per way"""
    rng = np.random.default_rng(seed)
    grids = np.meshgrid(*[np.arange(n) for n in n_levels], indexing='ij')
    codes = [np.repeat(g.ravel(), reps) for g in grids]
    N = codes[0].size
    X = rng.standard_normal((N, p))
    beta = np.linspace(-0.5, 0.5, p) if p else np.zeros(0)
    eta = X @ beta
    for c, n in zip(codes, n_levels):
        eta = eta + effect_scale * rng.standard_normal(n)[c]
    if kind == 'gaussian':
        y, family = eta + 0.5 * rng.standard_normal(N), FamilySpec('gaussian')
    elif kind == 'bernoulli_logit':
        y, family = rng.binomial(1, 1.0 / (1.0 + np.exp(-eta))), FamilySpec('bernoulli_logit')
    elif kind == 'poisson_log':
        y, family = rng.poisson(np.exp(0.5 * eta)), FamilySpec('poisson_log')
    else:
        family = FamilySpec.ordered(thresholds)
        y = np.searchsorted(thresholds, eta + rng.standard_normal(N)) + 1
    return Dataset(y=y, X=X, codes=tuple(codes), family=family, n_levels=tuple(n_levels))


def make_state(ds, alpha, gamma, beta=None, psi=1.0, lambda_=100.0):
    return FittedModel(
        family=ds.family,
        beta=np.zeros(ds.p) if beta is None else np.asarray(beta, dtype=float),
        psi=psi,
        alpha=[np.asarray(a, dtype=float) for a in alpha],
        gamma=[np.asarray(g, dtype=np.int64) for g in gamma],
        lambda_=lambda_,
        level_labels=[list(l) for l in ds.level_labels],
        way_names=list(ds.way_names),
        covariate_names=list(ds.covariate_names),
        response_name=ds.response_name,
    )


@pytest.fixture
def crossed():
    return simulate_crossed


@pytest.fixture
def state_for():
    return make_state
