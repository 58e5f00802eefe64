"""Desk-scale simulator of incremental transfer learning across virtual centers."""

from .config import ExperimentConfig, Scenario, parse_config, validate_config
from .data import apply_noise, load_external, make_synthetic_task
from .federation import (OverfitMonitor, RunSettings, handoff, monitor_epoch,
                         run_cwt, run_individual, run_joint, run_swt,
                         train_at_center)
from .checkpoint import (Checkpoint, decode_checkpoint, encode_checkpoint,
                         load_checkpoint, make_checkpoint, restore_from,
                         save_checkpoint)
from .metrics import (AccuracyMatrix, RunRecord, Summary, aggregate,
                      mean_accuracy, monotonicity, significance_vs_ft,
                      summarize)
from .regularizers import EXTRA_METHODS, METHODS, make_strategy

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "Scenario", "parse_config", "validate_config",
    "apply_noise", "load_external", "make_synthetic_task",
    "OverfitMonitor", "RunSettings", "handoff", "monitor_epoch",
    "run_cwt", "run_individual", "run_joint", "run_swt", "train_at_center",
    "Checkpoint", "decode_checkpoint", "encode_checkpoint", "load_checkpoint",
    "make_checkpoint", "restore_from", "save_checkpoint",
    "AccuracyMatrix", "RunRecord", "Summary", "aggregate", "mean_accuracy",
    "monotonicity", "significance_vs_ft", "summarize",
    "EXTRA_METHODS", "METHODS", "make_strategy",
    "__version__",
]
