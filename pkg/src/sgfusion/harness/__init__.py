"""Configs, the scenario runner, dataset generation, serialization and the CLI."""

from .config import ConfigError, ScenarioConfig, config_from_dict, load_config
from .dataset import IoFailure, generate_dataset
from .runner import EmptyInput, RunReport, compute_metrics, run_scenario, run_trial
from .serialize import export_graph, scene_digest

__all__ = [
    "ConfigError", "ScenarioConfig", "config_from_dict", "load_config",
    "IoFailure", "generate_dataset",
    "EmptyInput", "RunReport", "compute_metrics", "run_scenario", "run_trial",
    "export_graph", "scene_digest",
]
