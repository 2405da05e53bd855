"""Batch benchmark harness: config files in, iteration/timing tables out."""
from .config import ExperimentConfig, PreconditionerSpec, load_config
from .report import ReportRow, emit_report, parse_csv
from .runner import run_experiment

__all__ = ["ExperimentConfig", "PreconditionerSpec", "ReportRow", "emit_report", "load_config",
           "parse_csv", "run_experiment"]
