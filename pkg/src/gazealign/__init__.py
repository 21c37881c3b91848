"""Simulation and correction of gaze label shift across acquisition setups."""

from .errors import GazeAlignError
from .geometry import EulerRot, Extrinsics, angular_error, gaze_direction, polar_to_vector, vector_to_polar
from .pipeline import BenchmarkSpec, GlaConfig, GlaResult, evaluate_cross_domain, run_baseline, run_gla
from .regressor import ModelParams, TrainConfig
from .simulator import DomainSpec, FeatureMap, SyntheticDataset, generate_domain, make_domain_spec

__version__ = "0.1.0"
