"""
Common utilities that are used throughout the package. Move anything that is used
more than once that isn't specific to any certain computation here.
"""

import datetime
import hashlib
import json
import logging
import os
import traceback
from typing import Any, Dict, List, Mapping, Optional, Type

import dateutil.parser
import numpy as np
import toml

from svnet.exceptions import (AppException, ConfigException, DataException,
                              SweepTaskException, UsageException, ValidationException)

APP_NAME = 'svnet'

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_current_command = ''


def set_command(name: str) -> None:
    """Name of the running subcommand, shown in every log line."""
    global _current_command
    _current_command = name


def _add_config_from_env(config: Dict[str, Any], config_key: str, env_variable: str,
                         missing_list: Optional[List[str]] = None,
                         default_value: Any = None) -> bool:
    """
    Function for adding configuration variables to a config dict from environment
    variables.

    :param config: config dict to update
    :param config_key: the name of the config key: config[config_key]
    :param env_variable: the name of the environment variable in which the value is stored
    :param missing_list: a list of strings to which missing environment variables
    are added. Can be omitted.
    :param default_value: if value is missing, set config value to this.
    :return: True if successful, False if environment variable was undefined
    """
    val = os.environ.get(env_variable, None)
    if val is not None:
        config[config_key] = val
        return True
    elif default_value:
        config[config_key] = default_value
        return True

    if missing_list is not None:
        missing_list.append(env_variable)
    return False


def env_threads() -> Optional[int]:
    """
    Worker count from SVNET_THREADS, None if the variable is not defined.
    """
    env: Dict[str, Any] = {}
    if not _add_config_from_env(env, 'threads', 'SVNET_THREADS'):
        return None
    try:
        threads = int(env['threads'])
    except ValueError:
        raise ConfigException(f'SVNET_THREADS must be an integer, got {env["threads"]!r}')
    if threads == 0 or threads < -1:
        raise ConfigException('SVNET_THREADS must be positive or -1 (all cores)')
    return threads


def init_logging(level: Optional[int] = None) -> logging.Logger:
    """
    Initializes the package logger with a single stream handler. Without an explicit
    level, SVNET_LOG_LEVEL is used and INFO after that.
    """

    class RunFormatter(logging.Formatter):
        def format(self, record):
            record.command = _current_command
            return super().format(record)

    env: Dict[str, Any] = {}
    if level is None and _add_config_from_env(env, 'level', 'SVNET_LOG_LEVEL'):
        level = logging.getLevelName(env['level'].upper())
    if not isinstance(level, int):
        level = logging.INFO

    logger = logging.getLogger(APP_NAME)
    logger.setLevel(level)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    ch = logging.StreamHandler()
    ch.setLevel(level)
    log_formatter = RunFormatter('[%(asctime)s] - %(name)s - %(levelname)s - %(command)s - %(message)s')  # noqa
    ch.setFormatter(log_formatter)
    logger.addHandler(ch)
    return logger


def parse_value(value: Any, default_type: Type[Any]) -> Any:
    # dates and times may be given as strings, therefore need to be parsed first
    if isinstance(value, str):
        try:
            if default_type is datetime.datetime:
                return dateutil.parser.parse(value, ignoretz=True)
            if default_type is datetime.date:
                return dateutil.parser.parse(value).date()
            if default_type is datetime.time:
                return dateutil.parser.parse(value).time()
        except (ValueError, OverflowError):
            return None
    if default_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if default_type is int and isinstance(value, bool):
        return None
    return value if isinstance(value, default_type) else None


def get_anydict_value(source_dict: Mapping[str, Any], key: str, default_value: Any,
                      default_type: Type[Any]):
    if isinstance(source_dict, Mapping):
        value = source_dict.get(key, default_value)
        return parse_value(value, default_type)

    raise AppException('Unsupported source_dict type: ' + type(source_dict).__name__)


def get_args(received: Mapping[str, Any],
             required: Optional[Dict[str, Type[Any]]] = None,
             defaultable: Optional[Dict[str, Any]] = None,
             optional: Optional[Dict[str, Type[Any]]] = None,
             constant: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Retrieve typed parameters from a configuration mapping

    :param received: The mapping that contains the source data
    :param required: The name and type of required key/value
    :param defaultable: The name and value of keys that will default to value if missing
    from received
    :param optional: The name and type of values that will be extracted from received
    if present
    :param constant: The name and value that will added to return dict. If key is present
    in received, the value will be overwritten by the value in constant
    :return: dict of extracted values
    :raises ConfigException: if a required key is missing or a value has the wrong type
    """
    if required is None and defaultable is None and optional is None and constant is None:
        raise AppException('One of the following is required: '
                           'required, defaultable, optional or constant.')

    required = required if required else {}
    defaultable = defaultable if defaultable else {}
    optional = optional if optional else {}
    constant = constant if constant else {}
    missing: List[str] = []
    invalid: List[str] = []
    ret_dict: Dict[str, Any] = {}

    # First loop through required args and add missing keys to error list

    for key, default_type in required.items():
        val = get_anydict_value(received, key, None, default_type)
        if val is None:
            missing.append(key)
        ret_dict[key] = val

    # Next loop through defaultable args, falling back to default values

    for key, default_value in defaultable.items():
        default_type = type(default_value)
        val = get_anydict_value(received, key, default_value, default_type)
        if val is None:
            invalid.append(key)
        ret_dict[key] = val

    # Next loop through optional args, omitting them if missing

    for key, default_type in optional.items():
        if received.get(key) is None:
            continue
        val = get_anydict_value(received, key, None, default_type)
        if val is None:
            invalid.append(key)
        else:
            ret_dict[key] = val

    # Finally copy constants

    ret_dict.update(constant)

    if len(missing) > 0:
        raise ConfigException('Missing following arguments: ' + ' '.join(missing))
    if len(invalid) > 0:
        raise ConfigException('Invalid type for following arguments: '
                              + ' '.join(invalid))

    return ret_dict


def load_toml(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding='utf-8') as f:
            return toml.load(f)
    except (OSError, toml.TomlDecodeError) as ex:
        raise ConfigException(f'Unable to read config file {path}: {ex}')


def merge_config(base: Mapping[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Recursively merge two config mappings; values in override win.
    """
    merged: Dict[str, Any] = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = value
    return merged


def json_default(value: Any) -> Any:
    if isinstance(value, (datetime.date, datetime.time, datetime.datetime)):
        return value.isoformat()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (set, frozenset, tuple)):
        return sorted(value) if isinstance(value, (set, frozenset)) else list(value)
    raise TypeError(f'Object of type {type(value).__name__} is not JSON serializable')


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, default=json_default, separators=(',', ':'))


def config_hash(config: Mapping[str, Any]) -> str:
    """
    SHA-256 of the canonical JSON dump of a configuration.
    """
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()


def file_digest(path: str, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            digest.update(chunk)
    return digest.hexdigest()


def handle_exception(exception: BaseException) -> int:
    """
    Convert exception into an exit status, logging it on the way

    :param exception:
    :return: exit status
    """
    logger = logging.getLogger(APP_NAME)
    if isinstance(exception, SweepTaskException) and isinstance(
            exception.__cause__, (DataException, ValidationException)):
        logger.error(str(exception))
        return EXIT_DATA
    if isinstance(exception, (UsageException, ConfigException)):
        logger.error(str(exception))
        return EXIT_USAGE
    elif isinstance(exception, (DataException, ValidationException)):
        logger.error(str(exception))
        return EXIT_DATA
    logger.error(''.join(traceback.format_exception(type(exception), exception,
                                                    exception.__traceback__)))
    return EXIT_INTERNAL
