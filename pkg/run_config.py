# run_config.py
import json
import os

from config import Config
from errors import ConfigError

COMMANDS = ('fit', 'smooth', 'predict', 'simulate')
FORMATS = ('json', 'csv')


class RunConfig:
    """Settings of one CLI run: defaults, then a JSON file, then command-line flags"""

    def __init__(self, config_file=None):
        self.config_file = config_file
        self.config = self.load_config()

    def load_config(self):
        """Load run configuration from file, merged over the defaults"""
        config = self.get_default_config()
        if not self.config_file:
            return config
        if not os.path.exists(self.config_file):
            raise ConfigError(f"Config file not found: {self.config_file}")
        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Failed to read config file {self.config_file}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {self.config_file} must hold a JSON object")
        self._merge(config, data)
        return config

    def get_default_config(self):
        """Get default configuration"""
        return {
            'command': None,
            'input': None,
            'schema': None,
            'family': None,
            'model': None,
            'rows': None,
            'smoothed': None,
            'out': Config.OUTPUT_DIR,
            'format': 'json',
            'level': Config.CONFIDENCE_LEVEL,
            'threads': Config.THREADS,
            'allow_new_levels': False,
            'fit': {
                'groups': 'auto',
                'lambda': Config.LAMBDA,
                'max_iter': Config.MAX_ITER,
                'tol': Config.TOL,
                'max_halvings': Config.MAX_HALVINGS,
                'seed': Config.SEED,
                'starts': 1,
                'init': 'quantile',
                'newton_steps': 1,
            },
            'simulate': {
                'design': 'two_way_logistic',
                'N': [5000],
                'scenario': 's1',
                'replications': 100,
            },
        }

    @staticmethod
    def _merge(base, update, prefix=''):
        for key, value in update.items():
            if key not in base:
                raise ConfigError(f"Unknown config key '{prefix}{key}'")
            if isinstance(base[key], dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"Config key '{prefix}{key}' must be an object")
                RunConfig._merge(base[key], value, prefix=f'{prefix}{key}.')
            else:
                base[key] = value

    def apply_overrides(self, overrides):
        """Flags given on the command line; None means not given"""
        given = {}
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, name = key.rpartition('.')
            target = given.setdefault(section, {}) if section else given
            target[name] = value
        self._merge(self.config, given)
        return self

    def validate(self):
        cfg = self.config
        if cfg['command'] not in COMMANDS:
            raise ConfigError(f"Unknown command '{cfg['command']}'")
        if cfg['format'] not in FORMATS:
            raise ConfigError(f"Unknown format '{cfg['format']}', expected json or csv")
        if not 0.0 < float(cfg['level']) < 1.0:
            raise ConfigError(f"--level must lie strictly between 0 and 1, got {cfg['level']}")
        if int(cfg['threads']) < 1:
            raise ConfigError(f"--threads must be positive, got {cfg['threads']}")
        required = {'fit': ('input', 'schema'), 'smooth': ('input', 'schema', 'model'),
                    'predict': ('model', 'rows'), 'simulate': ()}
        for key in required[cfg['command']]:
            if not cfg[key]:
                raise ConfigError(f"'{cfg['command']}' needs --{key}")
        for key in ('input', 'model', 'rows', 'smoothed'):
            if cfg[key] and not os.path.exists(cfg[key]):
                raise ConfigError(f"--{key} path does not exist: {cfg[key]}")
        return self

    def __getitem__(self, key):
        return self.config[key]

    @property
    def fit(self):
        return self.config['fit']

    @property
    def simulate(self):
        return self.config['simulate']

    def to_json(self):
        return json.dumps(self.config, indent=2, sort_keys=True)
