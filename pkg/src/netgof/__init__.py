"""Goodness of fit of logistic regression models for binary networks."""
__version__ = "0.1.0"

from .graph_core import Network, NodeColumn, NodeDescriptorTable, code_covariates, read_network
from .vbem import Hyperparameters, VariationalState, fit_model, fit_single
from .model_select import FitResult, gof, model_posterior, summarize
from .graphon import GraphonGrid, dirichlet_joint_cdf, export_grid, identifiability_order, residual_phi_at
from .simulate import SimConfig, simulate_network, sweep

__all__ = [
    "Network", "NodeColumn", "NodeDescriptorTable", "code_covariates", "read_network",
    "Hyperparameters", "VariationalState", "fit_model", "fit_single",
    "FitResult", "gof", "model_posterior", "summarize",
    "GraphonGrid", "dirichlet_joint_cdf", "export_grid", "identifiability_order", "residual_phi_at",
    "SimConfig", "simulate_network", "sweep",
]
