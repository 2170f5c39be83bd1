"""Simulation designs, replicated fits and their summaries.

Every replication r draws from its own stream Generator(PCG64(seed + r)).
numpy's normals use the Ziggurat method and its gammas Marsaglia-Tsang, so a
seed gives the same data on every platform with the same numpy.

Gammas are rate-parameterized and shifted by their mean so effects have mean
zero: a + s ~ Gamma(shape 1, rate 1/s) and s - b ~ Gamma(shape 1, rate 1/s),
with s = 1 in the two-way design and s = 1/5 in the three-way design.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import special

from config import Config
from dataset import Dataset
from errors import CGEError, ConfigError, SimulationError
from estimator import fit, fit_ordered_null, recover_intercept
from families import FamilySpec
from inference import infer, predict, predict_baseline, round_category
from models import FitConfig

logger = logging.getLogger(__name__)

DESIGNS = ('two_way_logistic', 'three_way_poisson', 'ordered_two_way')
SCENARIOS = ('s1', 's2')

# Failed replications tolerated before the whole run is aborted
MAX_FAILURE_SHARE = 0.10

# Redraws of way indicators before giving up on hitting every level
MAX_INDICATOR_DRAWS = 20

ORDERED_THRESHOLDS = (-1.5, -0.5, 0.5, 1.5)


@dataclass
class Truth:
    intercept: float
    beta: np.ndarray
    effects: list
    thresholds: tuple = None
    # Per way, the drawn 0-based level of every observation; effects[k][assignments[k]] is its effect
    assignments: list = None


@dataclass
class SimDesign:
    design: str = 'two_way_logistic'
    N: int = 5000
    scenario: str = 's1'
    replications: int = 100
    seed: int = Config.SEED
    fit: FitConfig = field(default_factory=FitConfig)
    level: float = Config.CONFIDENCE_LEVEL
    threads: int = Config.THREADS

    def validate(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"Unknown design '{self.design}', expected one of {', '.join(DESIGNS)}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"Unknown scenario '{self.scenario}', expected s1 or s2")
        if self.replications < 1:
            raise ConfigError(f"replications must be positive, got {self.replications}")
        if self.N < 25:
            raise ConfigError(f"N must be at least 25 so every way has 2 or more levels, got {self.N}")
        if self.threads < 1:
            raise ConfigError(f"threads must be positive, got {self.threads}")
        self.fit.validate()
        return self

    def to_dict(self):
        data = asdict(self)
        data['fit'] = self.fit.to_dict()
        return data


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def draw_indicators(rng, N, n_levels, way):
    """Uniform level indicators, redrawn until every level is observed"""
    for _ in range(MAX_INDICATOR_DRAWS):
        codes = rng.integers(n_levels, size=N)
        if np.unique(codes).size == n_levels:
            return codes
    hit = np.unique(codes).size
    logger.warning(f"⚠ Way '{way}': only {hit} of {n_levels} levels observed after "
                   f"{MAX_INDICATOR_DRAWS} draws; shrinking to the observed levels")
    return codes


def _shifted_gamma(rng, scale, size, sign=1.0):
    # sign=+1: mean-zero right skew, sign=-1: mean-zero left skew
    return sign * (rng.gamma(1.0, scale, size) - scale)


def _build(y, X, indicators, names, family):
    return Dataset.from_labels(
        y=y,
        X=X,
        way_labels=[np.char.add(f'{name}', (codes + 1).astype(str)) for name, codes in zip(names, indicators)],
        family=family,
        response_name='y',
        covariate_names=[f'x{j + 1}' for j in range(X.shape[1])],
        way_names=names,
    )


def gen_two_way_logistic(N, scenario='s1', seed=0):
    rng = make_rng(seed)
    n = int(np.floor(np.sqrt(N)))
    intercept, beta = 1.0, np.array([-1.0, 0.5, 0.0, 0.0, 0.0])
    X = rng.standard_normal((N, beta.size))
    if scenario == 's1':
        a, b = rng.normal(0.0, 0.5, n), rng.normal(0.0, 1.0, n)
    else:
        a, b = _shifted_gamma(rng, 1.0, n), _shifted_gamma(rng, 1.0, n, sign=-1.0)
    za = draw_indicators(rng, N, n, 'a')
    zb = draw_indicators(rng, N, n, 'b')
    eta = intercept + X @ beta + a[za] + b[zb]
    y = rng.binomial(1, special.expit(eta))
    ds = _build(y, X, (za, zb), ('a', 'b'), FamilySpec('bernoulli_logit'))
    return ds, Truth(intercept=intercept, beta=beta, effects=[a, b], assignments=[za, zb])


def gen_three_way_poisson(N, scenario='s1', seed=0):
    rng = make_rng(seed)
    n = 2 * int(np.floor(np.sqrt(N)))
    intercept, beta = 1.0, np.array([-0.3, 0.3, 0.0, 0.0, 0.0])
    X = rng.standard_normal((N, beta.size))
    if scenario == 's1':
        a, b, c = rng.normal(0.0, 0.2, n), rng.normal(0.0, 0.3, n), rng.normal(0.0, 0.3, n)
    else:
        a = _shifted_gamma(rng, 0.2, n)
        b = _shifted_gamma(rng, 0.2, n, sign=-1.0)
        upper = rng.random(n) < 0.5
        c = np.where(upper, 0.3, -0.3) + rng.normal(0.0, 0.15, n)
    indicators = [draw_indicators(rng, N, n, w) for w in ('a', 'b', 'c')]
    eta = intercept + X @ beta + a[indicators[0]] + b[indicators[1]] + c[indicators[2]]
    y = rng.poisson(np.exp(eta))
    ds = _build(y, X, indicators, ('a', 'b', 'c'), FamilySpec('poisson_log'))
    return ds, Truth(intercept=intercept, beta=beta, effects=[a, b, c], assignments=list(indicators))


def gen_ordered_two_way(N, scenario='s1', seed=0):
    """Users x items ordered probit with five categories"""
    rng = make_rng(seed)
    n = int(np.floor(np.sqrt(N)))
    beta = np.array([0.5, -0.3, 0.0])
    X = rng.standard_normal((N, beta.size))
    if scenario == 's1':
        a, b = rng.normal(0.0, 0.5, n), rng.normal(0.0, 0.7, n)
    else:
        a, b = _shifted_gamma(rng, 0.5, n), _shifted_gamma(rng, 0.7, n, sign=-1.0)
    zu = draw_indicators(rng, N, n, 'user')
    zi = draw_indicators(rng, N, n, 'item')
    latent = X @ beta + a[zu] + b[zi] + rng.standard_normal(N)
    y = np.searchsorted(ORDERED_THRESHOLDS, latent) + 1
    family = FamilySpec.ordered(ORDERED_THRESHOLDS)
    ds = _build(y, X, (zu, zi), ('user', 'item'), family)
    return ds, Truth(intercept=0.0, beta=beta, effects=[a, b], thresholds=ORDERED_THRESHOLDS,
                     assignments=[zu, zi])


GENERATORS = {
    'two_way_logistic': gen_two_way_logistic,
    'three_way_poisson': gen_three_way_poisson,
    'ordered_two_way': gen_ordered_two_way,
}


def generate(design, N, scenario='s1', seed=0):
    if design not in GENERATORS:
        raise ConfigError(f"Unknown design '{design}'")
    return GENERATORS[design](N, scenario, seed)


def fit_with_thresholds(ds, cfg):
    """Fit, estimating ordered thresholds without effects first"""
    baseline = None
    if ds.family.kind == 'ordered_probit':
        cuts, beta0 = fit_ordered_null(ds, ds.family.n_categories)
        ds = ds.with_family(FamilySpec.ordered(cuts))
        baseline = beta0
    return ds, fit(ds, cfg), baseline


@dataclass
class SimResult:
    design: dict
    truth_beta: np.ndarray
    records: pd.DataFrame
    failures: int

    @property
    def estimates(self):
        return self.records[[f'beta{j + 1}' for j in range(len(self.truth_beta))]].to_numpy()

    @property
    def mse(self):
        return np.mean((self.estimates - self.truth_beta) ** 2, axis=0)

    @property
    def coverage(self):
        hits = self.records[[f'covered{j + 1}' for j in range(len(self.truth_beta))]].to_numpy()
        return hits.mean(axis=0)

    def table_row(self):
        row = {'N': self.design['N'], 'scenario': self.design['scenario']}
        for j, (m, c) in enumerate(zip(self.mse, self.coverage)):
            row[f'CGE_MSE_beta{j + 1}'] = float(m)
            row[f'CGE_CP_beta{j + 1}'] = float(c)
        row['CGE_MSE_mean'] = float(self.mse.mean())
        row['CGE_CP_mean'] = float(self.coverage.mean())
        row['runtime_mean'] = float(self.records['runtime'].mean())
        return row

    def to_dict(self):
        return {
            'design': self.design,
            'truth_beta': [float(b) for b in self.truth_beta],
            'replications_ok': int(len(self.records)),
            'failures': int(self.failures),
            'mse': [float(m) for m in self.mse],
            'coverage': [float(c) for c in self.coverage],
            'mse_mean': float(self.mse.mean()),
            'coverage_mean': float(self.coverage.mean()),
            'intercept_mean': float(self.records['intercept'].mean()),
            'runtime_mean': float(self.records['runtime'].mean()),
            'converged_share': float(self.records['converged'].mean()),
        }


def _replicate(design, r):
    seed = design.seed + r
    ds, truth = generate(design.design, design.N, design.scenario, seed)
    started = time.perf_counter()
    ds, model, _ = fit_with_thresholds(ds, replace(design.fit, seed=seed))
    result = infer(model, ds, design.level)
    runtime = time.perf_counter() - started
    record = {'replication': r, 'seed': seed}
    for j, b in enumerate(truth.beta):
        lower, upper = result.intervals[j]
        record[f'beta{j + 1}'] = float(result.beta[j])
        record[f'se{j + 1}'] = float(result.se[j])
        record[f'covered{j + 1}'] = bool(lower <= b <= upper)
    record.update(intercept=recover_intercept(model), converged=model.converged,
                  sweeps=model.sweeps, runtime=runtime)
    return record, truth


def run_replications(design):
    """Replications 1..R, each on its own stream; failures are counted and skipped"""
    design.validate()
    logger.info(f"Simulating {design.design} N={design.N} {design.scenario}: "
                f"{design.replications} replications on {design.threads} threads")
    records, truth_beta, failures = [], None, 0
    with ThreadPoolExecutor(max_workers=design.threads) as executor:
        futures = [executor.submit(_replicate, design, r) for r in range(1, design.replications + 1)]
        # Collected in replication order so the output does not depend on scheduling
        for r, future in enumerate(futures, start=1):
            try:
                record, truth = future.result()
            except CGEError as e:
                failures += 1
                logger.warning(f"⚠ replication {r}/{design.replications} failed: {e}")
                continue
            records.append(record)
            truth_beta = truth.beta
            logger.info(f"replication {r}/{design.replications}: beta={np.round(record_beta(record), 4).tolist()} "
                        f"converged={record['converged']} ({record['runtime']:.2f}s)")
    if failures > MAX_FAILURE_SHARE * design.replications:
        raise SimulationError(f"{failures} of {design.replications} replications failed")
    return SimResult(design=design.to_dict(), truth_beta=truth_beta,
                     records=pd.DataFrame(records), failures=failures)


def record_beta(record):
    return [v for key, v in record.items() if key.startswith('beta')]


def ordered_metrics(predictions, observed, n_categories=None):
    """(MAE, AC0, AC1) of predictive means against observed categories"""
    predictions = np.asarray(predictions, dtype=float)
    observed = np.asarray(observed)
    if predictions.shape != observed.shape:
        raise ConfigError(f"Got {predictions.size} predictions for {observed.size} observations")
    if predictions.size == 0:
        raise ConfigError("No predictions to score")
    upper = n_categories if n_categories is not None else np.inf
    rounded = round_category(predictions, upper)
    off_by = np.abs(rounded - observed)
    mae = float(np.mean(np.abs(predictions - observed)))
    return mae, float(np.mean(off_by == 0)), float(np.mean(off_by <= 1))


def ordered_split_study(N=5000, scenario='s1', seed=0, splits=20, test_fraction=0.1, cfg=None):
    """Held-out MAE/AC0/AC1 of the fit against the no-effects baseline over repeated splits"""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie strictly between 0 and 1, got {test_fraction}")
    cfg = cfg or FitConfig()
    rows = []
    for s in range(splits):
        ds, _ = gen_ordered_two_way(N, scenario, seed + s)
        order = make_rng(seed + s).permutation(ds.N)
        n_test = int(round(test_fraction * ds.N))
        train = ds.subset(np.sort(order[n_test:]))
        test = ds.to_frame().iloc[np.sort(order[:n_test])].reset_index(drop=True)

        train, model, beta0 = fit_with_thresholds(train, cfg)
        K = train.family.n_categories
        observed = test[ds.response_name].to_numpy()
        fitted = predict(model, test, allow_new_levels=True)['prediction']
        base = predict_baseline(train.family, beta0, test, ds.covariate_names)['prediction']
        for method, pred in (('CGE', fitted), ('baseline', base)):
            mae, ac0, ac1 = ordered_metrics(pred.to_numpy(), observed, K)
            rows.append({'split': s, 'method': method, 'MAE': mae, 'AC0': ac0, 'AC1': ac1})
        logger.info(f"split {s + 1}/{splits}: MAE CGE={rows[-2]['MAE']:.4f} baseline={rows[-1]['MAE']:.4f}")
    per_split = pd.DataFrame(rows)
    return per_split, per_split.groupby('method', sort=True)[['MAE', 'AC0', 'AC1']].mean()
