"""Smoothed per-level effects from pseudo-posterior group probabilities.

A level's probability of belonging to group g is proportional to the product
of its rows' densities under effect alpha_{k,g}, with the fitted beta and the
other ways' point effects plugged in. Products are taken as sums of logs.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from errors import RankDeficiencyError
from estimator import PSI_FLOOR, damped_newton, level_log_likelihoods, linear_predictor
from families import get_family

logger = logging.getLogger(__name__)


@dataclass
class SmoothedEffects:
    probabilities: list
    effects: list
    beta_smoothed: np.ndarray = None
    psi_smoothed: float = None
    level_labels: list = field(default=None, repr=False)
    way_names: list = field(default=None, repr=False)

    def to_dict(self, model=None):
        ways = []
        for k, (probs, effects) in enumerate(zip(self.probabilities, self.effects)):
            entry = {
                'way': self.way_names[k] if self.way_names else f'way{k + 1}',
                'levels': list(self.level_labels[k]) if self.level_labels else None,
                'smoothed_effects': [float(e) for e in effects],
                'probabilities': [[float(v) for v in row] for row in probs],
            }
            if model is not None:
                entry['point_effects'] = [float(e) for e in model.level_effects(k)]
            ways.append(entry)
        data = {'ways': ways}
        if self.beta_smoothed is not None:
            data['beta_smoothed'] = [float(b) for b in self.beta_smoothed]
            data['psi_smoothed'] = float(self.psi_smoothed)
        if model is not None:
            data['beta'] = [float(b) for b in model.beta]
            data['psi'] = float(model.psi)
        return data

    @classmethod
    def from_dict(cls, data):
        ways = data['ways']
        beta = data.get('beta_smoothed')
        return cls(
            probabilities=[np.asarray(w['probabilities'], dtype=float) for w in ways],
            effects=[np.asarray(w['smoothed_effects'], dtype=float) for w in ways],
            beta_smoothed=np.asarray(beta, dtype=float) if beta is not None else None,
            psi_smoothed=data.get('psi_smoothed'),
            level_labels=[w['levels'] for w in ways],
            way_names=[w['way'] for w in ways],
        )


def pseudo_posterior(model, ds, k):
    """n_k x G_k matrix of group membership probabilities for way k"""
    if len(model.alpha[k]) == 1:
        return np.ones((ds.n_levels[k], 1))
    offset = linear_predictor(model, ds, skip_way=k)
    log_weights = level_log_likelihoods(model, ds, k, offset)
    return special.softmax(log_weights, axis=1)


def smooth_effects(model, ds):
    probabilities, effects = [], []
    for k in range(ds.K):
        probs = pseudo_posterior(model, ds, k)
        alpha_k = model.alpha[k]
        # Rounding can push a convex combination a hair outside the hull
        smoothed = np.clip(probs @ alpha_k, alpha_k.min(), alpha_k.max())
        probabilities.append(probs)
        effects.append(smoothed)
    return SmoothedEffects(
        probabilities=probabilities,
        effects=effects,
        level_labels=[list(l) for l in ds.level_labels],
        way_names=list(ds.way_names),
    )


def smoothed_offset(ds, smoothed):
    offset = np.zeros(ds.N)
    for k in range(ds.K):
        offset += smoothed.effects[k][ds.codes[k]]
    return offset


def reestimate_beta(ds, smoothed, start=None, max_iter=100, max_halvings=30):
    """(beta, psi) maximizing the likelihood with smoothed effects as the offset"""
    offset = smoothed_offset(ds, smoothed)
    X, y = ds.X, ds.y

    if ds.family.has_dispersion:
        resid = y - offset
        beta = np.zeros(ds.p)
        if ds.p:
            try:
                beta = linalg.solve(X.T @ X, X.T @ resid, assume_a='pos')
            except linalg.LinAlgError as e:
                raise RankDeficiencyError(f"Normal equations are singular: {e}") from e
            resid = resid - X @ beta
        return beta, max(float(np.mean(resid * resid)), PSI_FLOOR)

    if ds.p == 0:
        return np.zeros(0), 1.0

    family = get_family(ds.family)

    def loglik(b):
        return float(np.sum(family.log_density(y, X @ b + offset)))

    def derivatives(b):
        eta = X @ b + offset
        return X.T @ family.d1(y, eta), X.T @ (family.d2(y, eta)[:, None] * X)

    x0 = np.zeros(ds.p) if start is None else start
    beta, _ = damped_newton(loglik, derivatives, x0, max_iter=max_iter,
                            max_halvings=max_halvings, grad_tol=1e-10, what='smoothed beta')
    return beta, 1.0


def smooth(model, ds):
    """Smoothed effects for every way, then beta re-estimated once against them"""
    smoothed = smooth_effects(model, ds)
    smoothed.beta_smoothed, smoothed.psi_smoothed = reestimate_beta(ds, smoothed, start=model.beta)
    logger.info(f"✓ Smoothed {ds.K} ways; beta {np.round(model.beta, 4).tolist()} -> "
                f"{np.round(smoothed.beta_smoothed, 4).tolist()}")
    return smoothed
