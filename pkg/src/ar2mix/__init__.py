"""Spectral decomposition of multichannel series into latent AR(2) oscillations."""

from ._backend import BACKEND
from .kernel import Ar2Coeffs, Ar2Kernel, ar2_coeffs, kernel_autocov, kernel_density
from .model import MixtureModel, spectral_matrices, spectral_matrix

__all__ = [
    "BACKEND",
    "Ar2Coeffs",
    "Ar2Kernel",
    "ar2_coeffs",
    "kernel_autocov",
    "kernel_density",
    "MixtureModel",
    "spectral_matrix",
    "spectral_matrices",
]
__version__ = "0.1.0"
