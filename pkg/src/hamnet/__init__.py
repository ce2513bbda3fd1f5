"""Hamiltonian deep neural networks: layers, training and stability diagnostics."""
from .convnet import ConvHamiltonianNet
from .data import Dataset, gen_double_moons, gen_swiss_roll, load_csv, load_mnist_idx, save_csv
from .estimator import HamiltonianNetClassifier
from .experiment import ExperimentSpec, SpecError, parse_spec, run_experiment
from .layers import VARIANTS, NetworkParams, OutputHead, forward_network
from .linalg import ConvergenceError, DimensionError, NonFiniteError
from .modelio import ModelFormatError, load_model, save_model
from .training import TrainConfig, evaluate, train_coordinate_descent

__version__ = "0.1.0"

__all__ = [
    "ConvHamiltonianNet", "Dataset", "gen_double_moons", "gen_swiss_roll", "load_csv",
    "load_mnist_idx", "save_csv", "HamiltonianNetClassifier", "ExperimentSpec", "SpecError",
    "parse_spec", "run_experiment", "VARIANTS", "NetworkParams", "OutputHead", "forward_network",
    "ConvergenceError", "DimensionError", "NonFiniteError", "ModelFormatError", "load_model",
    "save_model", "TrainConfig", "evaluate", "train_coordinate_descent",
]
