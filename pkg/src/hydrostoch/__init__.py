"""Stochastic primitive equations with transport noise on a periodic slab."""
from .domain import BC, Grid
from .dynamics import Forcing, SimState, step_ito, step_stratonovich
from .noise import NoiseModel, make_noise_model, strat_to_ito, validate

__all__ = ["BC", "Grid", "Forcing", "SimState", "NoiseModel", "make_noise_model",
           "step_ito", "step_stratonovich", "strat_to_ito", "validate"]
__version__ = "0.1.0"
