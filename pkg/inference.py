"""Wald inference on beta and mean-response prediction.

The covariance treats the fitted effects as known offsets, which is a naive
approximation that holds up when the sample is large. Nothing here accounts
for the uncertainty in the grouping.
"""
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg, stats

from errors import ConfigError, LoadError, PredictionError, RankDeficiencyError
from estimator import linear_predictor, recover_intercept, way_means
from families import get_family

logger = logging.getLogger(__name__)

COVARIANCE_METHOD = 'naive-wald (effects treated as known offsets)'


@dataclass
class InferenceResult:
    beta: np.ndarray
    cov_beta: np.ndarray
    se: np.ndarray
    intervals: np.ndarray
    level: float

    def to_dict(self, names=None):
        names = names or [f'x{j + 1}' for j in range(len(self.beta))]
        return {
            'method': COVARIANCE_METHOD,
            'level': float(self.level),
            'coefficients': [
                {'name': name, 'estimate': float(b), 'se': float(s),
                 'lower': float(lo), 'upper': float(hi)}
                for name, b, s, (lo, hi) in zip(names, self.beta, self.se, self.intervals)
            ],
            'cov_beta': [[float(v) for v in row] for row in self.cov_beta],
        }


def covariance_beta(ds, model):
    """Inverse observed information of beta with effects held as offsets"""
    if ds.p == 0:
        return np.zeros((0, 0))
    X = ds.X
    if ds.family.has_dispersion:
        info = X.T @ X / model.psi
    else:
        eta = linear_predictor(model, ds)
        weights = -get_family(ds.family).d2(ds.y, eta)
        info = X.T @ (weights[:, None] * X)
    try:
        cov = linalg.inv(info)
    except linalg.LinAlgError as e:
        raise RankDeficiencyError(f"Information matrix for beta is singular: {e}") from e
    if not np.all(np.isfinite(cov)):
        raise RankDeficiencyError("Information matrix for beta is singular")
    return 0.5 * (cov + cov.T)


def confidence_intervals(beta, cov, level=0.95):
    """Wald intervals beta_j +/- z * se_j, one row per coefficient"""
    if not 0.0 < level < 1.0:
        raise ConfigError(f"Confidence level must lie strictly between 0 and 1, got {level}")
    beta = np.asarray(beta, dtype=float)
    se = np.sqrt(np.diag(cov))
    z = stats.norm.ppf(0.5 * (1.0 + level))
    return np.column_stack([beta - z * se, beta + z * se])


def infer(model, ds, level=0.95):
    cov = covariance_beta(ds, model)
    return InferenceResult(
        beta=np.asarray(model.beta, dtype=float),
        cov_beta=cov,
        se=np.sqrt(np.diag(cov)),
        intervals=confidence_intervals(model.beta, cov, level),
        level=level,
    )


def round_category(mean, n_categories):
    """Half away from zero on the predictive mean, clamped to 1..K"""
    mean = np.asarray(mean, dtype=float)
    rounded = np.sign(mean) * np.floor(np.abs(mean) + 0.5)
    return np.clip(rounded, 1, n_categories).astype(np.int64)


def _design(model, rows):
    names = list(model.covariate_names or [])
    missing = [c for c in names + list(model.way_names) if c not in rows.columns]
    if missing:
        raise LoadError(f"Prediction rows are missing column '{missing[0]}'", column=missing[0])
    return _covariate_matrix(rows, names)


def _covariate_matrix(rows, names):
    if not names:
        return np.empty((len(rows), 0))
    columns = []
    for name in names:
        try:
            columns.append(rows[name].astype(float).to_numpy())
        except ValueError as e:
            raise LoadError(f"Cannot parse covariate column '{name}': {e}", column=name) from e
    return np.column_stack(columns)


def effect_offsets(model, rows, smoothed=None, allow_new_levels=False):
    """(offset, unknown) for rows labelled by the model's way columns.

    An unseen level gets its way's center (the level-average of assigned
    effects), which is the zero point of the centred effects.
    """
    centers = way_means(model.alpha, model.gamma)
    offset = np.zeros(len(rows))
    unknown = np.zeros(len(rows), dtype=bool)
    for k, name in enumerate(model.way_names):
        effects = smoothed.effects[k] if smoothed is not None else model.level_effects(k)
        index = pd.Index([str(l) for l in model.level_labels[k]])
        labels = rows[name].astype(str).to_numpy()
        positions = index.get_indexer(labels)
        new = positions < 0
        if new.any() and not allow_new_levels:
            label = labels[np.flatnonzero(new)[0]]
            raise PredictionError(f"Unknown level '{label}' of way '{name}'", level=label)
        offset += np.where(new, centers[k], effects[np.maximum(positions, 0)])
        unknown |= new
    return offset, unknown


def predict(model, rows, smoothed=None, allow_new_levels=False):
    """Mean-response predictions; smoothed effects replace point effects when given"""
    X = _design(model, rows)
    offset, unknown = effect_offsets(model, rows, smoothed, allow_new_levels)
    beta = smoothed.beta_smoothed if smoothed is not None and smoothed.beta_smoothed is not None else model.beta
    eta = (X @ beta if X.shape[1] else 0.0) + offset
    result = pd.DataFrame({'eta': eta, 'prediction': get_family(model.family).mean(eta),
                           'unknown_level': unknown})
    if model.family.kind == 'ordered_probit':
        result['category'] = round_category(result['prediction'], model.family.n_categories)
    if unknown.any():
        logger.warning(f"⚠ {int(unknown.sum())} rows reference unseen levels; way centers used")
    return result


def predict_baseline(family, beta, rows, covariate_names):
    """Predictions of the no-effects model (thresholds carried by `family`)"""
    names = list(covariate_names or [])
    missing = [c for c in names if c not in rows.columns]
    if missing:
        raise LoadError(f"Prediction rows are missing column '{missing[0]}'", column=missing[0])
    X = _covariate_matrix(rows, names)
    eta = X @ np.asarray(beta, dtype=float) if names else np.zeros(len(rows))
    result = pd.DataFrame({'eta': eta, 'prediction': get_family(family).mean(eta)})
    if family.kind == 'ordered_probit':
        result['category'] = round_category(result['prediction'], family.n_categories)
    return result


def summary(model, ds=None, inference=None, smoothed=None):
    """Plain-text report of a fit"""
    lines = [
        f"Crossed grouped-effects fit ({model.family.kind})",
        f"  ways: {', '.join(model.way_names)}  groups: {list(model.group_counts)}  lambda: {model.lambda_:g}",
        f"  converged: {model.converged} after {model.sweeps} sweeps, objective {model.objective:.8f}",
        f"  intercept (recovered): {recover_intercept(model):.6f}",
    ]
    if model.family.has_dispersion:
        lines.append(f"  psi: {model.psi:.6f}")
    if model.family.thresholds is not None:
        lines.append(f"  thresholds: {', '.join(f'{c:.4f}' for c in model.family.thresholds)}")
    if inference is not None and len(inference.beta):
        lines.append(f"  coefficients ({int(round(inference.level * 100))}% Wald, effects as offsets):")
        for name, b, s, (lo, hi) in zip(model.covariate_names, inference.beta, inference.se, inference.intervals):
            lines.append(f"    {name:<16} {b: .6f}  se {s:.6f}  [{lo: .6f}, {hi: .6f}]")
    if smoothed is not None and smoothed.beta_smoothed is not None:
        lines.append(f"  beta (smoothed): {', '.join(f'{b:.6f}' for b in smoothed.beta_smoothed)}")
    for k, name in enumerate(model.way_names):
        effects = ', '.join(f'{a:.4f}' for a in np.sort(model.alpha[k]))
        lines.append(f"  {name}: {len(model.gamma[k])} levels, group effects [{effects}]")
    warnings = {key: value for key, value in model.warnings.to_dict().items() if value}
    if warnings:
        lines.append(f"  warnings: {warnings}")
    return '\n'.join(lines) + '\n'
