"""Desk-scale simulator of meta-initialized multi-task learning over a
clustered wireless network, with byte/gradient-exact energy accounting."""

__version__ = "0.1.0"

from .energy import EnergyProfile, EnergyReport, table1, table2_response
from .env import GridWorld, TaskSpec, builtin_tasks
from .qlearn import ParamVector, QNetConfig
from .runner import ExperimentConfig, RunRecord, monte_carlo, run_pipeline, sweep

__all__ = [
    "EnergyProfile", "EnergyReport", "ExperimentConfig", "GridWorld",
    "ParamVector", "QNetConfig", "RunRecord", "TaskSpec", "builtin_tasks",
    "monte_carlo", "run_pipeline", "sweep", "table1", "table2_response",
    "__version__",
]
