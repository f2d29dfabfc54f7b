"""Desk-scale planner that couples a mixture action head with a latent world model."""

from .estimator import LatentDriverPlanner, SceneClassifier, check_scenarios, check_trajectory
from .model import LatentDriver, ModelConfig
from .scenegen import SceneType, generate_scenario
from .simulator import EgoAction, MetricsReport, Simulator
from .trainer import TrainConfig, evaluate_closed_loop, extract_samples, fit

__version__ = "0.1.0"
