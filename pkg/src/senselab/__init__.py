"""Desk-scale cooperative spectrum sensing laboratory.

Simulates mobile primary/secondary users over fading channels, builds
covariance-sequence datasets, trains a two-tier transformer detector on a
from-scratch autodiff engine, calibrates Neyman-Pearson thresholds by
Monte Carlo, and evaluates detection performance against an
energy-detection baseline.
"""

from .autodiff import Tensor, backward, no_grad
from .config import PROFILES, build_configs
from .dataset import CssSample, SampleSequence, covariance, generate_planes
from .detection import DetectionReport, EvalConfig, ThresholdTable, evaluate_detector
from .mobility import MobilityState, ScenarioConfig, SignalMatrix
from .model import ModelConfig, TieredModel, load_checkpoint, save_checkpoint
from .training import Adam, TrainConfig, TrainReport, train_stage1, train_stage2

__version__ = "0.1.0"

__all__ = [
    "Adam", "CssSample", "DetectionReport", "EvalConfig", "MobilityState",
    "ModelConfig", "PROFILES", "SampleSequence", "ScenarioConfig",
    "SignalMatrix", "Tensor", "ThresholdTable", "TieredModel", "TrainConfig",
    "TrainReport", "backward", "build_configs", "covariance",
    "evaluate_detector", "generate_planes", "load_checkpoint", "no_grad",
    "save_checkpoint", "train_stage1", "train_stage2",
]
