import json
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)


def ensure_output_dir(directory):
    """Create the output directory if it doesn't exist"""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise OSError(f"Failed to create output directory {directory}: {e}") from e
    if not os.access(directory, os.W_OK):
        logger.warning(f"⚠ Output directory not writable: {directory}")
    return directory


def _to_builtin(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(data):
    """Deterministic JSON: sorted keys, fixed indent, shortest round-trip floats"""
    return json.dumps(data, indent=2, sort_keys=True, default=_to_builtin, allow_nan=True) + '\n'


def write_json(data, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(dumps(data))
    logger.info(f"✓ Wrote {path}")
    return path


def write_table(frame, path):
    frame.to_csv(path, index=False, encoding='utf-8', lineterminator='\n')
    logger.info(f"✓ Wrote {path}")
    return path


def write_text(text, path):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(text)
    logger.info(f"✓ Wrote {path}")
    return path


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
