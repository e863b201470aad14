"""
Experiment configuration file loading
"""

import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from scripts.platoon_errors import ConfigError

CONFIG_ENV_VAR = 'PLATOON_CONFIG'

# Every CLI flag has a config counterpart with '-' replaced by '_'
CONFIG_KEYS = frozenset({
    'p', 'q', 'kappa', 'beta', 'm', 'm_max', 'horizon', 'x_max', 'margin', 'boundary', 'tol',
    'slots', 'reps', 'seed', 'confidence', 'warmup', 'workers', 'simulate',
    'out', 'format', 'kappas', 'log_level',
})


def load_run_config(config_file: Optional[str] = None) -> Dict[str, Any]:
    """
    Load a flat key-value config file

    Falls back to the file named by PLATOON_CONFIG; returns {} when neither is set.

    Raises:
        ConfigError: unreadable file, not a mapping, or unknown keys
    """
    config_file = config_file or os.getenv(CONFIG_ENV_VAR)
    if not config_file:
        return {}

    try:
        with open(config_file) as f:
            config = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config: {e.strerror}", config_file)
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML: {e}", config_file)

    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError("Config must be a flat mapping of flag names to values", config_file)

    normalized = {str(key).replace('-', '_'): value for key, value in config.items()}
    unknown = sorted(set(normalized) - CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}", config_file)
    return normalized


def config_path_label(config_file: Optional[str]) -> str:
    config_file = config_file or os.getenv(CONFIG_ENV_VAR)
    return str(Path(config_file)) if config_file else '(none)'
