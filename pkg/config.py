import os
import sys

from dotenv import load_dotenv

# Load .env before the class body reads the environment
load_dotenv()


def _env_float(name, default):
    value = os.environ.get(name)
    if value is None or value == '':
        return default
    try:
        return float(value)
    except ValueError:
        print(f"⚠ WARNING: {name}={value!r} is not a number, using {default}", file=sys.stderr)
        return default


def _env_int(name, default):
    value = os.environ.get(name)
    if value is None or value == '':
        return default
    try:
        return int(value)
    except ValueError:
        print(f"⚠ WARNING: {name}={value!r} is not an integer, using {default}", file=sys.stderr)
        return default


class Config:
    # --- Estimation defaults ---
    # Penalty weight only fixes the location of the effects, so any large value works
    LAMBDA = _env_float('CGE_LAMBDA', 100.0)
    MAX_ITER = _env_int('CGE_MAX_ITER', 500)
    TOL = _env_float('CGE_TOL', 1e-8)
    MAX_HALVINGS = _env_int('CGE_MAX_HALVINGS', 30)
    SEED = _env_int('CGE_SEED', 0)
    # --- End Estimation defaults ---

    # Workers for replications; default is every available core
    THREADS = _env_int('CGE_THREADS', os.cpu_count() or 1)

    LOG_LEVEL = os.environ.get('CGE_LOG_LEVEL', 'INFO').upper()

    # Output folder for artifacts when --out is not given
    OUTPUT_DIR = os.environ.get('CGE_OUTPUT_DIR', os.path.join(os.getcwd(), 'output'))

    CONFIDENCE_LEVEL = _env_float('CGE_CONFIDENCE_LEVEL', 0.95)

    # Bumped whenever the model JSON layout changes
    SCHEMA_VERSION = 1

    # CLI spelling -> family kind
    FAMILY_ALIASES = {
        'gaussian': 'gaussian',
        'logistic': 'bernoulli_logit',
        'bernoulli': 'bernoulli_logit',
        'poisson': 'poisson_log',
        'ordered-probit': 'ordered_probit',
        'ordered_probit': 'ordered_probit',
    }
