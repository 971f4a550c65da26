"""Hybrid epidemic forecasting: a graph neural network predicts the rates of a metapopulation SIR model."""

from .autodiff import ContractError, NumericDomainError
from .data import DataIntegrityError, EpiDataset, SchemaError, load_dataset
from .model import MepoGNN
from .network import NetworkConfig
from .synth import ScenarioConfig, synth_scenario
from .train import TrainConfig, curriculum_horizon, train

__version__ = "0.1.0"

__all__ = [
    "ContractError", "NumericDomainError", "DataIntegrityError", "SchemaError", "EpiDataset", "load_dataset",
    "MepoGNN", "NetworkConfig", "ScenarioConfig", "synth_scenario", "TrainConfig", "curriculum_horizon", "train",
    "__version__",
]
