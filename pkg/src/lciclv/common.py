import logging
import os
from enum import Enum
from typing import Any, Dict, Optional

import yaml

import pydantic

if pydantic.__version__ <"2.0.0":
    from pydantic import BaseModel, Extra
else:
    from pydantic.v1 import BaseModel, Extra


class GlobalSettings(BaseModel):
    logging_level: int = logging.INFO
    verbose: bool = False
    threads: Optional[int] = None
    chunk_size: int = 64
    trace_path: Optional[str] = None

    class Config:
        allow_population_by_field_name = True
        extra = Extra.allow

    @classmethod
    def define_settings(cls,
                        settings_type="default",
                        logging_level=logging.INFO,
                        verbose=None,
                        threads:int=None,
                        chunk_size:int=64,
                        trace_path:str=None,
                        **kwargs
                        ):
        """ Define the global settings for the project.

        Args:
            settings_type (str, optional): The name of the settings. Defaults to "default".
            logging_level (int, optional): The logging level to use. Defaults to logging.INFO.
            verbose (bool, optional): Print everything regardless of the level. Defaults to the LCICLV_VERBOSE env variable.
            threads (int, optional): Respondent-level worker threads. Defaults to LCICLV_THREADS or the number of cores.
            chunk_size (int, optional): Respondents per likelihood work unit. Results never depend on it being split across threads.
            trace_path (str, optional): Default file the optimizer trace is appended to.
        """
        if verbose is None:
            verbose = os.environ.get("LCICLV_VERBOSE", False) in [True,"true","True","1"]
        if threads is None:
            threads = default_thread_count()
        settings = cls(logging_level=logging_level, verbose=verbose, threads=threads,
                       chunk_size=chunk_size, trace_path=trace_path, **kwargs)
        if not hasattr(GlobalSettings, "registry"):
            setattr(GlobalSettings, "registry", {})
        GlobalSettings.registry[settings_type] = settings
        return settings

    @classmethod
    def get_current_settings(cls) -> "GlobalSettings":
        if not hasattr(GlobalSettings, "settings_type"):
            setattr(GlobalSettings, "settings_type", "default")
        if not hasattr(GlobalSettings, "registry") or GlobalSettings.settings_type not in GlobalSettings.registry:
            GlobalSettings.define_settings(settings_type=GlobalSettings.settings_type)
        return GlobalSettings.registry[GlobalSettings.settings_type]

    @classmethod
    def switch_settings(cls, settings_type:str):
        GlobalSettings.settings_type = settings_type


def default_thread_count()->int:
    env_threads = os.environ.get("LCICLV_THREADS")
    if env_threads:
        try:
            return max(1, int(env_threads))
        except ValueError:
            logging.warning(f"Ignoring invalid LCICLV_THREADS value {env_threads!r}")
    return os.cpu_count() or 1


class LogColors(Enum):
    RED = '\033[31m'
    GREEN = '\033[32m'
    YELLOW = '\033[33m'
    CYAN = '\033[36m'
    DARK_GRAY = '\033[90m'

    RESET = '\033[0m'


def print_log(log_object: Any, log_level: int, color: LogColors = None):
    settings = GlobalSettings.get_current_settings()
    if settings.logging_level <= log_level or settings.verbose:
        if isinstance(log_object, str):
            pass
        elif isinstance(log_object, dict):
            log_object = yaml.safe_dump(_plain(log_object), sort_keys=False)
        elif isinstance(log_object, BaseModel):
            log_object = yaml.safe_dump(_plain(log_object.dict()), sort_keys=False)

        if color is None:
            if log_level >= logging.ERROR:
                color = LogColors.RED
            elif log_level >= logging.WARNING:
                color = LogColors.YELLOW
            elif log_level >= logging.INFO:
                color = LogColors.GREEN
            else:
                color = LogColors.DARK_GRAY
        if type(color) is LogColors:
            color = color.value
        reset = LogColors.RESET.value if color else ""
        print(f"{color}{log_object}{reset}", flush=True)


def _plain(value:Any)->Any:
    # numpy scalars and tuples are not yaml-safe
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        try:
            return value.item()
        except (ValueError, TypeError):
            return str(value)
    if isinstance(value, Enum):
        return value.value
    return value


def as_plain_dict(data:Dict[str, Any])->Dict[str, Any]:
    return _plain(data)
