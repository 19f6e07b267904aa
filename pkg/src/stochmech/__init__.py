"""Stochastic mechanics with a free diffusion constant.

Residual checks for the z-scaled Schrodinger equation, forward/backward
drifts and the generalized dynamical law, Euler-Maruyama path ensembles, and
a conservative Fokker-Planck solver with an Ornstein-Uhlenbeck oracle.
"""
from .core import Grid, Grid2D, GridField, ModelParams, ParameterError, params_from_beta, params_from_nu, params_from_z
from .states import CATALOG_NAMES, GridCoverageError, NodeError, WavePolar, catalog

__all__ = [
    "CATALOG_NAMES",
    "Grid",
    "Grid2D",
    "GridCoverageError",
    "GridField",
    "ModelParams",
    "NodeError",
    "ParameterError",
    "WavePolar",
    "catalog",
    "params_from_beta",
    "params_from_nu",
    "params_from_z",
]
__version__ = "0.1.0"
