"""Settings, environment and logging setup for Gamma-VAE."""

import json
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml
from dotenv import load_dotenv

from .errors import ConfigError
from .training import TrainingConfig

# Load environment variables
load_dotenv()

SETTINGS_PATH = os.getenv('GAMMA_VAE_SETTINGS', 'config/config.yaml')
LOG_LEVEL = os.getenv('GAMMA_VAE_LOG_LEVEL')

DEFAULT_SETTINGS: Dict[str, Any] = {
    'logging': {
        'level': 'INFO',
        'log_file': None,
        'max_size_mb': 10,
        'backup_count': 5,
    },
    'defaults': {
        'normalize': 'standardize',
        'jitter_scale': 1e-6,
        'density_bins': 50,
    },
}


def thread_count() -> int:
    """Worker cap from GAMMA_VAE_THREADS (default: all cores)."""
    raw = os.getenv('GAMMA_VAE_THREADS')
    if raw is None or raw.strip() == '':
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"GAMMA_VAE_THREADS must be an integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"GAMMA_VAE_THREADS must be positive, got {value}")
    return value


def load_settings(path: Optional[str] = None) -> Dict[str, Any]:
    """Load YAML settings, falling back to built-in defaults per section."""
    settings = {section: dict(values) for section, values in DEFAULT_SETTINGS.items()}
    settings_file = Path(path or SETTINGS_PATH)
    if settings_file.exists():
        try:
            with open(settings_file, 'r') as f:
                loaded = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Error loading settings {settings_file}: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"settings {settings_file} must hold a mapping of sections")
        for section, values in loaded.items():
            if isinstance(values, dict):
                settings.setdefault(section, {}).update(values)
    if LOG_LEVEL:
        settings['logging']['level'] = LOG_LEVEL
    return settings


def setup_logging(settings: Mapping[str, Any]) -> None:
    """Set up console and optional rotating file logging."""
    log_config = settings['logging']
    logger = logging.getLogger()
    level = getattr(logging, str(log_config['level']).upper(), None)
    if not isinstance(level, int):
        raise ConfigError(f"unknown log level {log_config['level']!r}")
    logger.setLevel(level)

    for handler in list(logger.handlers):
        if getattr(handler, '_gammavae', False):
            logger.removeHandler(handler)

    if log_config.get('log_file'):
        log_file = Path(log_config['log_file'])
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=int(log_config['max_size_mb']) * 1024 * 1024,
            backupCount=int(log_config['backup_count'])
        )
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        ))
        file_handler._gammavae = True
        logger.addHandler(file_handler)

    # Console goes to stderr; stdout stays free for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
    console_handler._gammavae = True
    logger.addHandler(console_handler)

    logging.debug("Logging initialized")


def load_training_config(path: Optional[str] = None,
                         overrides: Optional[Mapping[str, Any]] = None) -> TrainingConfig:
    """
    Build a TrainingConfig with precedence flag > config file > default.

    Args:
        path: JSON file whose keys are exactly TrainingConfig field names
        overrides: Values given on the command line; None entries are ignored

    Returns:
        Validated TrainingConfig
    """
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, 'r') as f:
                loaded = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e.msg}", line=e.lineno)
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        values.update(loaded)
    if overrides:
        values.update({key: value for key, value in overrides.items() if value is not None})
    return TrainingConfig.from_dict(values)
