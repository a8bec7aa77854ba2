"""Synthetic mmWave beam-tracking workbench.

Traffic scenes are traced into multipath channels, reduced to rate-optimal
codebook beams, windowed into observation sequences and used to train a
GRU that predicts the next beams from the past ones.
"""
from .channel import Codebook, OFDMConfig, array_response, build_channel, build_codebook
from .config import Config, ConfigError, load_config
from .metrics import EvalReport, evaluate, exp_decay_score, top1_accuracy
from .oracle import OracleConfig, beam_rates, optimal_beam
from .predictor import ModelConfig, PredictorModel, TrainConfig, predict, train
from .propagation import PropagationConfig, trace_paths
from .scene import default_layout, init_scene, step_scene

__version__ = "0.1.0"
