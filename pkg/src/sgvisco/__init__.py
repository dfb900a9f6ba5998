"""Fourier-Galerkin solver for strain-gradient viscoelasticity on the periodic torus."""
from .energy import EnergyModel, double_well, make_model, quadratic, verify_hypotheses
from .evolution import BlowUpError, SolverConfig, State, Trajectory, init_state, linear_oracle, run
from .spectral import SpectralGrid

__version__ = "0.1.0"

__all__ = ["EnergyModel", "double_well", "quadratic", "make_model", "verify_hypotheses",
           "SpectralGrid", "SolverConfig", "State", "Trajectory", "BlowUpError",
           "init_state", "linear_oracle", "run", "__version__"]
