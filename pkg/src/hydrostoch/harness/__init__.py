from .config import ConfigError, RunConfig, from_dict, load
from .runner import continuous_dependence, run_ensemble, run_path

__all__ = ["ConfigError", "RunConfig", "from_dict", "load", "continuous_dependence",
           "run_ensemble", "run_path"]
