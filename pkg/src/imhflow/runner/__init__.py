"""Experiment runner: configuration, presets, execution and replay."""
from .config import RunConfig, from_dict, load_config
from .presets import list_presets, preset_config
from .run import RunArtifacts, compute_report, replay_diagnostics, run_experiment

__all__ = [
    "RunArtifacts",
    "RunConfig",
    "compute_report",
    "from_dict",
    "list_presets",
    "load_config",
    "preset_config",
    "replay_diagnostics",
    "run_experiment",
]
