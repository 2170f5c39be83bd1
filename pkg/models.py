"""Data models shared by the estimator, the smoother and the CLI."""
from dataclasses import dataclass, field, asdict

import numpy as np

from config import Config
from errors import ConfigError
from families import FamilySpec

INIT_STRATEGIES = ('quantile', 'random')


@dataclass
class FitConfig:
    """Tuning for one fit; group_counts is 'auto' or one positive integer per way"""
    group_counts: object = 'auto'
    lambda_: float = Config.LAMBDA
    max_iter: int = Config.MAX_ITER
    tol_obj: float = Config.TOL
    max_halvings: int = Config.MAX_HALVINGS
    seed: int = Config.SEED
    init: str = 'quantile'
    n_starts: int = 1
    # Damped-Newton steps per regression block (1 = one-step update)
    newton_steps: int = 1
    effect_newton_steps: int = 50

    def validate(self):
        if not self.lambda_ > 0:
            raise ConfigError(f"lambda must be positive, got {self.lambda_}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be positive, got {self.max_iter}")
        if not self.tol_obj > 0:
            raise ConfigError(f"tol must be positive, got {self.tol_obj}")
        if self.max_halvings < 1:
            raise ConfigError(f"max_halvings must be positive, got {self.max_halvings}")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")
        if self.init not in INIT_STRATEGIES:
            raise ConfigError(f"init must be one of {INIT_STRATEGIES}, got '{self.init}'")
        if self.n_starts < 1:
            raise ConfigError(f"n_starts must be positive, got {self.n_starts}")
        if self.newton_steps < 1 or self.effect_newton_steps < 1:
            raise ConfigError("Newton step counts must be positive")
        return self

    def resolve_group_counts(self, n_levels):
        """Per-way G_k; 'auto' gives floor(sqrt(n_k))"""
        if self.group_counts == 'auto' or self.group_counts is None:
            return tuple(max(1, int(np.floor(np.sqrt(n)))) for n in n_levels)
        counts = tuple(int(g) for g in self.group_counts)
        if len(counts) == 1 and len(n_levels) > 1:
            counts = counts * len(n_levels)
        if len(counts) != len(n_levels):
            raise ConfigError(f"Got {len(counts)} group counts for {len(n_levels)} ways")
        for k, (g, n) in enumerate(zip(counts, n_levels)):
            if g < 1 or g > n:
                raise ConfigError(f"Way {k + 1}: group count {g} must lie in 1..{n}")
        return counts

    def to_dict(self):
        data = asdict(self)
        if isinstance(self.group_counts, (tuple, list)):
            data['group_counts'] = list(self.group_counts)
        return data


@dataclass
class FitWarnings:
    underflow_floors: int = 0
    empty_groups: int = 0
    degenerate_dispersion: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class FittedModel:
    """State of the blockwise ascent; gamma is 0-based here and 1-based in JSON"""
    family: FamilySpec
    beta: np.ndarray
    psi: float
    alpha: list
    gamma: list
    lambda_: float
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    sweeps: int = 0
    warnings: FitWarnings = field(default_factory=FitWarnings)
    level_labels: list = None
    way_names: list = None
    covariate_names: list = None
    response_name: str = None
    seed: int = 0

    @property
    def n_ways(self):
        return len(self.alpha)

    @property
    def group_counts(self):
        return tuple(len(a) for a in self.alpha)

    @property
    def objective(self):
        return self.objective_trace[-1] if self.objective_trace else float('nan')

    def level_effects(self, k):
        """Assigned effect of every level of way k"""
        return self.alpha[k][self.gamma[k]]

    def copy(self):
        return FittedModel(
            family=self.family,
            beta=self.beta.copy(),
            psi=self.psi,
            alpha=[a.copy() for a in self.alpha],
            gamma=[g.copy() for g in self.gamma],
            lambda_=self.lambda_,
            objective_trace=list(self.objective_trace),
            converged=self.converged,
            sweeps=self.sweeps,
            warnings=FitWarnings(**self.warnings.to_dict()),
            level_labels=self.level_labels,
            way_names=self.way_names,
            covariate_names=self.covariate_names,
            response_name=self.response_name,
            seed=self.seed,
        )

    def sorted_labels(self):
        """Copy with each way's groups relabelled so effects ascend"""
        model = self.copy()
        for k in range(self.n_ways):
            order = np.argsort(self.alpha[k], kind='stable')
            relabel = np.empty_like(order)
            relabel[order] = np.arange(len(order))
            model.alpha[k] = self.alpha[k][order]
            model.gamma[k] = relabel[self.gamma[k]]
        return model

    def to_dict(self):
        return {
            'schema_version': Config.SCHEMA_VERSION,
            'family': self.family.to_dict(),
            'response': self.response_name,
            'covariates': list(self.covariate_names or []),
            'ways': list(self.way_names or []),
            'beta': [float(b) for b in self.beta],
            'psi': float(self.psi),
            'lambda': float(self.lambda_),
            'groups': [
                {
                    'way': name,
                    'effects': [float(a) for a in alpha],
                    'assignments': [int(g) + 1 for g in gamma],
                    'levels': list(labels),
                }
                for name, alpha, gamma, labels in zip(
                    self.way_names, self.alpha, self.gamma, self.level_labels)
            ],
            'objective_trace': [float(q) for q in self.objective_trace],
            'converged': bool(self.converged),
            'sweeps': int(self.sweeps),
            'seed': int(self.seed),
            'warnings': self.warnings.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        version = data.get('schema_version')
        if version != Config.SCHEMA_VERSION:
            raise ConfigError(f"Unsupported model schema_version {version!r}")
        groups = data['groups']
        return cls(
            family=FamilySpec.from_dict(data['family']),
            beta=np.asarray(data['beta'], dtype=float),
            psi=float(data['psi']),
            alpha=[np.asarray(g['effects'], dtype=float) for g in groups],
            gamma=[np.asarray(g['assignments'], dtype=np.int64) - 1 for g in groups],
            lambda_=float(data['lambda']),
            objective_trace=list(data.get('objective_trace', [])),
            converged=bool(data.get('converged', False)),
            sweeps=int(data.get('sweeps', 0)),
            warnings=FitWarnings(**data.get('warnings', {})),
            level_labels=[list(g['levels']) for g in groups],
            way_names=[g['way'] for g in groups],
            covariate_names=list(data.get('covariates', [])),
            response_name=data.get('response'),
            seed=int(data.get('seed', 0)),
        )
