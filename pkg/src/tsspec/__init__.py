"""Forward and inverse spectral problems for Sturm-Liouville operators on time
scales made of finitely many segments and isolated points."""

from .asymptotics import (
    AsymptoticConstants,
    asymptotic_constants,
    branch_check,
    hadamard_theta,
    spectra_to_weights,
)
from .errors import ComputeError, ConfigError, TSSpecError
from .forward import SpectralData, eigenvalues, propagate, spectral_data, theta, weight_numbers
from .inverse import InverseOptions, SpectralInput, mean_model, recover_point_q, run_inverse
from .oracle import classical_reference, discrete_solve
from .potential import Potential, distance, from_functions, zero_potential
from .time_scale import TimeScale, tail, validate
from .weyl import WeylData, weyl_direct, weyl_from_spectra

__version__ = "0.1.0"

__all__ = [
    "AsymptoticConstants",
    "ComputeError",
    "ConfigError",
    "InverseOptions",
    "Potential",
    "SpectralData",
    "SpectralInput",
    "TSSpecError",
    "TimeScale",
    "WeylData",
    "asymptotic_constants",
    "branch_check",
    "classical_reference",
    "discrete_solve",
    "distance",
    "eigenvalues",
    "from_functions",
    "mean_model",
    "hadamard_theta",
    "propagate",
    "recover_point_q",
    "run_inverse",
    "spectra_to_weights",
    "spectral_data",
    "tail",
    "theta",
    "validate",
    "weight_numbers",
    "weyl_direct",
    "weyl_from_spectra",
    "zero_potential",
]
