"""Wave-speed inversion from a single noisy snapshot: a physics-informed network
forward solver driven by Gaussian-process Bayesian optimization."""

from .bo import BoConfig, BoTrace, run_bo, target_function
from .config import ExperimentConfig, build_config
from .pinn import sample_collocation, train_pinn
from .wave import WaveDomain, analytic_u, make_snapshot

__version__ = "0.1.0"

__all__ = [
    "BoConfig", "BoTrace", "ExperimentConfig", "WaveDomain", "analytic_u", "build_config",
    "make_snapshot", "run_bo", "sample_collocation", "target_function", "train_pinn",
]
