from .config import DataConfig, EvalConfig, ExperimentConfig, desk_preset, grid_configs, write_grid
from .experiment import (CSV_FIELDS, RunRecord, evaluate, load_data, parse_axis, run_experiment,
                         sweep, write_results_csv)
from .reports import (LatentReport, RobustnessReport, latent_report, robustness_report,
                      scatter_export)

__all__ = [
    "CSV_FIELDS", "DataConfig", "EvalConfig", "ExperimentConfig", "LatentReport",
    "RobustnessReport", "RunRecord", "desk_preset", "evaluate", "grid_configs", "latent_report",
    "load_data", "parse_axis", "robustness_report", "run_experiment", "scatter_export", "sweep",
    "write_grid", "write_results_csv",
]
