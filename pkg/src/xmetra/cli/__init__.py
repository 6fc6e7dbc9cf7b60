"""Configuration-driven experiment harness and the ``xmetra`` command."""

from xmetra.cli.config import (ExperimentConfig, SweepConfig, build_config, load_config, parse_config_text,
                               read_config_file)
from xmetra.cli.harness import (Experiment, Selection, downsample_sweep, freeze_grid, freeze_sweep, kshot_sweep,
                                prepare, read_csv, run_experiment, select_checkpoint, subsample_pool, write_csv)
from xmetra.cli.main import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, main

__all__ = [
    "ExperimentConfig", "SweepConfig", "build_config", "load_config", "parse_config_text", "read_config_file",
    "Experiment", "Selection", "downsample_sweep", "freeze_grid", "freeze_sweep", "kshot_sweep", "prepare",
    "read_csv", "run_experiment", "select_checkpoint", "subsample_pool", "write_csv",
    "EXIT_CONFIG", "EXIT_DIVERGENCE", "EXIT_IO", "EXIT_OK", "main",
]
