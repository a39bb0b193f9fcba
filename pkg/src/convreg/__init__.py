"""Convolutional regression tracker with truncated, positively weighted loss."""

from .bbox import BBox
from .config import ConfigError, RunConfig
from .evaluation import EvalReport, Sequence, SequenceError, load_corpus, load_sequence, run_ope, write_report
from .features import FeatureError, FeatureMap, PcaModel, extract, extract_hog, extract_raw, fit_pca, apply_pca
from .maps import gaussian_map, motion_map, target_map
from .regression import (
    LossConfig,
    RegressionError,
    RegressionModel,
    TrainConfig,
    TrainingDiverged,
    closed_form_ridge,
    conv_forward,
    gradient,
    loss,
    snr,
    train,
)
from .synth import SynthConfig, generate_sequence, save_otb, suite_config
from .tracker import Tracker, TrackerConfig, track_sequence

__version__ = "0.1.0"
