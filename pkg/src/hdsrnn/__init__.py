"""Dual-stage spatial/temporal attention RNN for multi-sensor forecasting, on a small numpy autodiff core."""

from .attention import SpatialVariant
from .baselines import BaselineSpec, run_baseline
from .errors import (AlignmentError, ConfigurationError, ContractError, DegenerateSensorError, DimensionError,
                     HdsRnnError, InsufficientDataError, RankDeficiencyError, TrainingDivergedError)
from .metrics import MetricSet, metrics, per_step_metrics
from .model import HDSRNN, Forecast, ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import PreparedData, SeriesPanel, make_panel, prepare, read_panel_csv, write_panel_csv
from .synthdata import GeneratorConfig, NetworkSpec, default_wds_spec, generate_panel
from .tensor import Tape, Tensor, backward, grad_check
from .training import Adam, TrainConfig, TrainReport, fit, grid_search

__version__ = "0.1.0"
