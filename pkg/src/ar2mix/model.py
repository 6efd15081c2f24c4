"""Observation model ``X(t) = Lambda Z(t) + q(t)`` and its dependence measures.

Spectral quantities are one-sided: ``S(omega)`` integrates over ``[0, 0.5]`` to
the covariance.  The noise term ``noise_var`` is stored as the flat spectral
level added to the diagonal, not as a time-domain variance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kernel import Ar2Kernel, DomainError, ar2_coeffs, density_grid, kernel_autocov

__all__ = [
    "MixtureModel",
    "SpectralMatrix",
    "BlockCovariance",
    "spectral_matrix",
    "spectral_matrices",
    "cross_spectrum",
    "coherence",
    "autocovariance",
    "transfer_poly",
    "pdc_latent_to_signal",
    "pdc_signal_to_signal",
    "pdc_matrix",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

ROW_TOL = 1e-10


@dataclass(frozen=True)
class MixtureModel:
    kernels: tuple[Ar2Kernel, ...]
    weights: np.ndarray = field(repr=False)
    noise_var: float = 0.0

    def __post_init__(self):
        kernels = tuple(self.kernels)
        w = np.array(self.weights, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if not kernels:
            raise DomainError("a mixture needs at least one kernel")
        if w.ndim != 2 or w.shape[1] != len(kernels):
            raise DomainError(f"weights shape {w.shape} does not match {len(kernels)} kernels")
        if np.any(w < 0.0) or np.any(w > 1.0 + 1e-12):
            raise DomainError("weights must lie in [0, 1]")
        rows = (w**2).sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_TOL):
            raise DomainError(f"rows of weights**2 must sum to 1, got {rows}")
        if not (self.noise_var >= 0.0):
            raise DomainError(f"noise_var must be >= 0, got {self.noise_var!r}")
        # canonical order: psi ascending, ties by log_mod
        order = sorted(range(len(kernels)), key=lambda j: (kernels[j].psi, kernels[j].log_mod))
        w = w[:, order]
        w.setflags(write=False)
        object.__setattr__(self, "kernels", tuple(kernels[j] for j in order))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @classmethod
    def from_arrays(cls, psi, log_mod, weights, noise_var=0.0) -> "MixtureModel":
        kernels = tuple(Ar2Kernel(float(p), float(l)) for p, l in zip(psi, log_mod))
        return cls(kernels, weights, noise_var)

    @property
    def n_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_kernels(self) -> int:
        return len(self.kernels)

    @property
    def psi(self) -> np.ndarray:
        return np.array([k.psi for k in self.kernels])

    @property
    def log_mod(self) -> np.ndarray:
        return np.array([k.log_mod for k in self.kernels])


@dataclass(frozen=True)
class SpectralMatrix:
    freq: float
    values: np.ndarray


@dataclass(frozen=True)
class BlockCovariance:
    """Joint lag-``h`` covariance of ``(Z, X)``, latent block first."""

    lag: int
    blocks: np.ndarray
    n_kernels: int

    @property
    def latent(self) -> np.ndarray:
        return self.blocks[: self.n_kernels, : self.n_kernels]

    @property
    def cross(self) -> np.ndarray:
        """``Cov(X_i(t), Z_j(t+h))``, shape ``(n, K)``."""
        return self.blocks[self.n_kernels :, : self.n_kernels]

    @property
    def signal(self) -> np.ndarray:
        return self.blocks[self.n_kernels :, self.n_kernels :]


def _check_omega(omega):
    w = np.asarray(omega, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w < 0.0) or np.any(w > 0.5):
        raise DomainError("omega must lie in [0, 0.5]")
    return w


def _check_channel(model: MixtureModel, i: int, what: str = "channel") -> None:
    if not (0 <= i < model.n_channels):
        raise IndexError(f"{what} index {i} out of range for {model.n_channels} channels")


def spectral_matrices(model: MixtureModel, freqs) -> np.ndarray:
    """``S_XX`` on a grid, shape ``(M, n, n)``, real symmetric."""
    freqs = np.atleast_1d(_check_omega(freqs))
    g = density_grid(model.psi, model.log_mod, freqs)  # (K, M)
    lam = model.weights
    s = np.einsum("ik,km,jk->mij", lam, g, lam)
    s += model.noise_var * np.eye(model.n_channels)
    return s


def spectral_matrix(model: MixtureModel, omega: float) -> SpectralMatrix:
    s = spectral_matrices(model, [omega])[0]
    return SpectralMatrix(float(omega), s.astype(complex))


def cross_spectrum(model: MixtureModel, m: int, l: int, omega) -> complex:
    """Entry ``(m, l)`` of ``S_XX``; noise only enters when ``m == l``."""
    _check_channel(model, m)
    _check_channel(model, l)
    w = _check_omega(omega)
    g = density_grid(model.psi, model.log_mod, np.atleast_1d(w))[:, 0]
    val = float(np.sum(model.weights[m] * model.weights[l] * g))
    if m == l:
        val += model.noise_var
    return complex(val, 0.0)


def coherence(model: MixtureModel, m: int, l: int, omega) -> float:
    if m == l:
        _check_channel(model, m)
        return 1.0
    s_ml = cross_spectrum(model, m, l, omega)
    s_mm = cross_spectrum(model, m, m, omega).real
    s_ll = cross_spectrum(model, l, l, omega).real
    den = s_mm * s_ll
    if den <= 0.0:
        raise ZeroDivisionError("auto-spectrum vanished; coherence undefined")
    return float(min(1.0, abs(s_ml) ** 2 / den))


def autocovariance(model: MixtureModel, h: int) -> BlockCovariance:
    """Lag-``h`` block covariance of ``(Z, X)`` with unit-variance latents.

    ``noise_var`` is a one-sided spectral level, so white noise adds its
    variance ``noise_var / 2`` to the signal block at lag 0 only.
    """
    if h < 0:
        raise DomainError(f"lag must be nonnegative, got {h}")
    K, n = model.n_kernels, model.n_channels
    gam = np.diag([kernel_autocov(k, h) for k in model.kernels])
    lam = model.weights
    out = np.empty((K + n, K + n))
    out[:K, :K] = gam
    out[:K, K:] = gam @ lam.T
    out[K:, :K] = lam @ gam
    out[K:, K:] = lam @ gam @ lam.T
    if h == 0:
        out[K:, K:] += 0.5 * model.noise_var * np.eye(n)
    return BlockCovariance(h, out, K)


def transfer_poly(model: MixtureModel, j: int, omega) -> complex:
    """``Phi_j(omega) = phi1 e^{-2 pi i omega} + phi2 e^{-4 pi i omega}``."""
    if not (0 <= j < model.n_kernels):
        raise IndexError(f"kernel index {j} out of range for {model.n_kernels} kernels")
    co = ar2_coeffs(model.kernels[j])
    z = np.exp(-2j * np.pi * _check_omega(omega))
    return complex(co.phi1 * z + co.phi2 * z * z)


def pdc_latent_to_signal(model: MixtureModel, i: int, j: int, omega) -> float:
    """Magnitude of partial directed coherence from latent ``j`` to channel ``i``."""
    _check_channel(model, i)
    phi = transfer_poly(model, j, omega)
    col = model.weights[:, j]
    den = abs(phi) ** 2 * float(col @ col) + abs(1.0 - phi) ** 2
    return float(col[i] * abs(phi) / math.sqrt(den))


def pdc_signal_to_signal(model: MixtureModel, l: int, m: int, omega=None) -> float:
    _check_channel(model, l)
    _check_channel(model, m)
    return 1.0 if l == m else 0.0


def pdc_matrix(model: MixtureModel, omega) -> np.ndarray:
    """Full ``(K+n) x (K+n)`` PDC magnitude matrix from the closed forms.

    Entry ``[target, source]`` with latents first, then channels.
    """
    K, n = model.n_kernels, model.n_channels
    out = np.zeros((K + n, K + n))
    for j in range(K):
        phi = transfer_poly(model, j, omega)
        col = model.weights[:, j]
        den = math.sqrt(abs(phi) ** 2 * float(col @ col) + abs(1.0 - phi) ** 2)
        out[j, j] = abs(1.0 - phi) / den
        out[K:, j] = col * abs(phi) / den
    out[K:, K:] = np.eye(n)
    return out


# -- serialization -----------------------------------------------------------


def model_to_dict(model: MixtureModel) -> dict:
    return {
        "K": model.n_kernels,
        "psi": [float(x) for x in model.psi],
        "log_mod": [float(x) for x in model.log_mod],
        "lambda": [[float(x) for x in row] for row in model.weights],
        "noise_var": model.noise_var,
        "noise_convention": "flat one-sided spectral level added to the diagonal of S_XX",
    }


def model_from_dict(doc: dict) -> MixtureModel:
    psi, log_mod = doc["psi"], doc["log_mod"]
    if int(doc["K"]) != len(psi) or len(psi) != len(log_mod):
        raise DomainError("K does not match the parameter arrays")
    return MixtureModel.from_arrays(psi, log_mod, np.array(doc["lambda"], dtype=float), doc["noise_var"])


def save_model(model: MixtureModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2) + "\n")


def load_model(path) -> MixtureModel:
    return model_from_dict(json.loads(Path(path).read_text()))


def weights_normalized(raw: Sequence[Sequence[float]]) -> np.ndarray:
    """Rescale nonnegative rows so their squares sum to one."""
    w = np.abs(np.asarray(raw, dtype=float))
    return w / np.sqrt((w**2).sum(axis=1, keepdims=True))
