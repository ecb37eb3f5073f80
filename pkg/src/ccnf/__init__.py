"""Causally consistent normalizing flows (CCNF) with SCM oracles and metrics."""
from .flow import CcnfModel, build_model
from .graph import CausalGraph, topological_batching
from .inference import (
    Intervention,
    counterfactual,
    do_on_model,
    interventions_sample,
    observations_sample,
)
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CausalGraph",
    "CcnfModel",
    "Intervention",
    "TrainConfig",
    "build_model",
    "counterfactual",
    "do_on_model",
    "interventions_sample",
    "observations_sample",
    "topological_batching",
    "train",
]
