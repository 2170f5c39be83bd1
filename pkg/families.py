"""Outcome families.

Each family gives the full log density of a response given the linear
predictor eta, plus the first and second derivatives in eta. All methods are
vectorized over numpy arrays and broadcast y against eta, so a column of
responses can be scored against a row of candidate effects in one call.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from errors import ConfigError, DomainError, NumericUnderflowError

logger = logging.getLogger(__name__)

KINDS = ('gaussian', 'bernoulli_logit', 'poisson_log', 'ordered_probit')

# Category probabilities below this are floored before taking logs
PROB_FLOOR = 1e-300

LOG_2PI = np.log(2.0 * np.pi)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class FamilySpec:
    """Distribution family tag; thresholds only for ordered_probit"""
    kind: str
    thresholds: tuple = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"Unknown family '{self.kind}', expected one of {', '.join(KINDS)}")
        if self.kind == 'ordered_probit':
            if self.thresholds is None or len(self.thresholds) == 0:
                raise ConfigError("ordered_probit needs at least one threshold")
            cuts = tuple(float(c) for c in self.thresholds)
            if not all(np.isfinite(cuts)):
                raise ConfigError(f"Thresholds must be finite, got {cuts}")
            if any(b <= a for a, b in zip(cuts, cuts[1:])):
                raise ConfigError(f"Thresholds must be strictly increasing, got {cuts}")
            object.__setattr__(self, 'thresholds', cuts)
        elif self.thresholds is not None:
            raise ConfigError(f"Family '{self.kind}' does not take thresholds")

    @property
    def has_dispersion(self):
        return self.kind == 'gaussian'

    @property
    def n_categories(self):
        if self.kind != 'ordered_probit':
            return None
        return len(self.thresholds) + 1

    @classmethod
    def ordered(cls, thresholds):
        return cls('ordered_probit', tuple(thresholds))

    @classmethod
    def ordered_placeholder(cls, n_categories):
        """Evenly spaced thresholds, used until the no-effects fit supplies real ones"""
        if n_categories < 2:
            raise ConfigError("ordered_probit needs at least 2 categories")
        return cls.ordered(np.arange(1, n_categories) - n_categories / 2.0)

    def to_dict(self):
        data = {'kind': self.kind}
        if self.thresholds is not None:
            data['thresholds'] = list(self.thresholds)
        return data

    @classmethod
    def from_dict(cls, data):
        thresholds = data.get('thresholds')
        return cls(data['kind'], tuple(thresholds) if thresholds is not None else None)


class BaseFamily(ABC):
    """Per-observation log density and its eta-derivatives"""

    def __init__(self, spec):
        self.spec = spec

    @abstractmethod
    def check_support(self, y):
        pass

    @abstractmethod
    def log_density(self, y, eta, psi=1.0, warnings=None):
        pass

    @abstractmethod
    def d1(self, y, eta, psi=1.0):
        pass

    @abstractmethod
    def d2(self, y, eta, psi=1.0):
        pass

    @abstractmethod
    def mean(self, eta):
        """Mean response given the linear predictor"""

    @abstractmethod
    def null_eta(self, y):
        """Linear predictor of the intercept-only fit"""

    def _reject(self, bad, y, what):
        index = int(np.flatnonzero(np.ravel(bad))[0])
        value = np.ravel(y)[index]
        raise DomainError(f"Response {value!r} at observation {index} is outside the {what} support")


class GaussianFamily(BaseFamily):

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y)
        if bad.any():
            self._reject(bad, y, 'gaussian')

    def log_density(self, y, eta, psi=1.0, warnings=None):
        resid = y - eta
        return -0.5 * resid * resid / psi - 0.5 * (LOG_2PI + np.log(psi))

    def d1(self, y, eta, psi=1.0):
        return (y - eta) / psi

    def d2(self, y, eta, psi=1.0):
        return np.full(np.broadcast(y, eta).shape, -1.0 / psi)

    def mean(self, eta):
        return np.asarray(eta, dtype=float)

    def null_eta(self, y):
        return float(np.mean(y))


class BernoulliLogitFamily(BaseFamily):

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        bad = (y != 0) & (y != 1)
        if bad.any():
            self._reject(bad, y, 'bernoulli')

    def log_density(self, y, eta, psi=1.0, warnings=None):
        return y * eta - np.logaddexp(0.0, eta)

    def d1(self, y, eta, psi=1.0):
        return y - special.expit(eta)

    def d2(self, y, eta, psi=1.0):
        p = special.expit(eta)
        return np.broadcast_to(-p * (1.0 - p), np.broadcast(y, eta).shape).copy()

    def mean(self, eta):
        return special.expit(eta)

    def null_eta(self, y):
        rate = np.clip(np.mean(y), 1e-6, 1 - 1e-6)
        return float(special.logit(rate))


class PoissonLogFamily(BaseFamily):

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y) | (y < 0) | (y != np.floor(y))
        if bad.any():
            self._reject(bad, y, 'poisson')

    def log_density(self, y, eta, psi=1.0, warnings=None):
        return y * eta - np.exp(eta) - special.gammaln(y + 1.0)

    def d1(self, y, eta, psi=1.0):
        return y - np.exp(eta)

    def d2(self, y, eta, psi=1.0):
        return np.broadcast_to(-np.exp(eta), np.broadcast(y, eta).shape).copy()

    def mean(self, eta):
        return np.exp(eta)

    def null_eta(self, y):
        return float(np.log(max(np.mean(y), 1e-6)))


class OrderedProbitFamily(BaseFamily):
    """Ordered probit with fixed thresholds c_1 < ... < c_{K-1}"""

    def __init__(self, spec):
        super().__init__(spec)
        self.cuts = np.concatenate([[-np.inf], spec.thresholds, [np.inf]])
        self.n_categories = len(spec.thresholds) + 1

    def check_support(self, y):
        y = np.asarray(y, dtype=float)
        bad = (y != np.floor(y)) | (y < 1) | (y > self.n_categories)
        if bad.any():
            self._reject(bad, y, f'ordered (1..{self.n_categories})')

    def _bounds(self, y, eta):
        y = np.asarray(y, dtype=np.int64)
        return self.cuts[y] - eta, self.cuts[y - 1] - eta

    @staticmethod
    def _probability(upper, lower):
        # Interval entirely above zero: difference of survival functions keeps precision
        in_upper_tail = lower > 0
        from_cdf = special.ndtr(upper) - special.ndtr(lower)
        from_sf = special.ndtr(-lower) - special.ndtr(-upper)
        return np.where(in_upper_tail, from_sf, from_cdf)

    @staticmethod
    def _pdf(x):
        return INV_SQRT_2PI * np.exp(-0.5 * x * x)

    @staticmethod
    def _x_pdf(x):
        with np.errstate(invalid='ignore'):
            return np.where(np.isfinite(x), x * INV_SQRT_2PI * np.exp(-0.5 * x * x), 0.0)

    def _guarded_probability(self, y, eta):
        upper, lower = self._bounds(y, eta)
        prob = self._probability(upper, lower)
        tiny = prob < PROB_FLOOR
        if tiny.any():
            row = int(np.argwhere(tiny)[0][0]) if tiny.ndim else 0
            raise NumericUnderflowError(
                f"Category probability vanished at observation {row}", index=row)
        return upper, lower, prob

    def log_density(self, y, eta, psi=1.0, warnings=None):
        upper, lower = self._bounds(y, eta)
        prob = self._probability(upper, lower)
        floored = prob < PROB_FLOOR
        if floored.any():
            count = int(np.count_nonzero(floored))
            logger.warning(f"⚠ {count} category probabilities floored at {PROB_FLOOR}")
            if warnings is not None:
                warnings.underflow_floors += count
            prob = np.maximum(prob, PROB_FLOOR)
        return np.log(prob)

    def d1(self, y, eta, psi=1.0):
        upper, lower, prob = self._guarded_probability(y, eta)
        return (self._pdf(lower) - self._pdf(upper)) / prob

    def d2(self, y, eta, psi=1.0):
        upper, lower, prob = self._guarded_probability(y, eta)
        u0 = (self._pdf(lower) - self._pdf(upper)) / prob
        u1 = (self._x_pdf(upper) - self._x_pdf(lower)) / prob
        return -(u0 * u0 + u1)

    def category_probabilities(self, eta):
        eta = np.asarray(eta, dtype=float)[..., None]
        upper = self.cuts[1:] - eta
        lower = self.cuts[:-1] - eta
        return self._probability(upper, lower)

    def mean(self, eta):
        categories = np.arange(1, self.n_categories + 1)
        return self.category_probabilities(eta) @ categories

    def null_eta(self, y):
        return 0.0


_FAMILIES = {
    'gaussian': GaussianFamily,
    'bernoulli_logit': BernoulliLogitFamily,
    'poisson_log': PoissonLogFamily,
    'ordered_probit': OrderedProbitFamily,
}


@lru_cache(maxsize=64)
def get_family(spec):
    return _FAMILIES[spec.kind](spec)


def _check_psi(spec, psi):
    if not psi > 0:
        raise ConfigError(f"Dispersion must be positive, got {psi}")
    if not spec.has_dispersion and psi != 1.0:
        raise ConfigError(f"Family '{spec.kind}' has no dispersion; psi must be 1, got {psi}")


def _scalar_or_array(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def log_density(fam, y, eta, psi=1.0, warnings=None):
    """Full log density of y given eta (normalizing constants included)"""
    _check_psi(fam, psi)
    family = get_family(fam)
    family.check_support(y)
    return _scalar_or_array(family.log_density(y, eta, psi, warnings))


def d1_eta(fam, y, eta, psi=1.0):
    _check_psi(fam, psi)
    family = get_family(fam)
    family.check_support(y)
    return _scalar_or_array(family.d1(y, eta, psi))


def d2_eta(fam, y, eta, psi=1.0):
    _check_psi(fam, psi)
    family = get_family(fam)
    family.check_support(y)
    return _scalar_or_array(family.d2(y, eta, psi))


def mean_response(fam, eta):
    return _scalar_or_array(get_family(fam).mean(eta))


def category_probabilities(fam, eta):
    if fam.kind != 'ordered_probit':
        raise ConfigError("Category probabilities are only defined for ordered_probit")
    return get_family(fam).category_probabilities(eta)
