"""Data ingestion, Fourier transform and the multivariate Whittle likelihood.

Fourier coefficients are ``d(w_m) = T^{-1/2} sum_t X(t) exp(-2 pi i w_m t)`` for
``m = 1 .. T/2 - 1``.  The model spectrum ``S`` is one-sided, so the covariance
of ``d(w_m)`` is ``S(w_m) / 2`` and

    loglik = -sum_m { log|S_m / 2| + 2 d_m^* S_m^{-1} d_m }.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from .errors import DataError
from .kernel import density_grid
from .model import MixtureModel

__all__ = [
    "MultiChannelSeries",
    "FourierData",
    "standardize",
    "dft",
    "whittle_loglik",
    "whittle_loglik_spectra",
    "read_csv",
    "write_csv",
]

MIN_LENGTH = 16


@dataclass(frozen=True)
class MultiChannelSeries:
    samples: np.ndarray
    sampling_rate: float | None = None

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] < 1:
            raise DataError(f"samples must be a T x n matrix, got shape {x.shape}")
        T = x.shape[0]
        if T < MIN_LENGTH or T % 2:
            raise DataError(f"series length must be even and >= {MIN_LENGTH}, got {T}")
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise DataError(f"non-finite value at row {bad[0] + 1}, channel {bad[1] + 1}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def length(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FourierData:
    freqs: np.ndarray
    coeffs: np.ndarray  # (M, n) complex
    length: int

    @property
    def n_channels(self) -> int:
        return self.coeffs.shape[1]

    @property
    def re(self) -> np.ndarray:
        return np.ascontiguousarray(self.coeffs.real)

    @property
    def im(self) -> np.ndarray:
        return np.ascontiguousarray(self.coeffs.imag)

    def periodogram(self) -> np.ndarray:
        """Raw cross-periodogram ``d d^*`` at each frequency, shape ``(M, n, n)``."""
        d = self.coeffs
        return d[:, :, None] * d[:, None, :].conj()


def standardize(series: MultiChannelSeries) -> MultiChannelSeries:
    x = series.samples
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    scale = np.maximum(np.abs(mean), 1.0)
    const = np.flatnonzero(sd <= 1e-12 * scale)
    if const.size:
        raise DataError(f"channel {int(const[0]) + 1} has zero variance and cannot be standardized")
    z = (x - mean) / sd
    # second pass removes the rounding left by the first
    z = (z - z.mean(axis=0)) / z.std(axis=0)
    return MultiChannelSeries(z, series.sampling_rate)


def dft(series: MultiChannelSeries) -> FourierData:
    x = series.samples
    T = x.shape[0]
    # numpy indexes time from 0; the t = 1..T convention adds a phase e^{-2 pi i m / T}
    full = np.fft.rfft(x, axis=0) / np.sqrt(T)
    m = np.arange(1, T // 2)
    coeffs = full[1 : T // 2] * np.exp(-2j * np.pi * m / T)[:, None]
    return FourierData(m / T, coeffs, T)


def whittle_loglik(data: FourierData, model: MixtureModel) -> float:
    if model.n_channels != data.n_channels:
        raise DataError(
            f"model has {model.n_channels} channels but data has {data.n_channels}"
        )
    g = density_grid(model.psi, model.log_mod, data.freqs)
    return _backend.whittle_loglik(g, model.weights, model.noise_var, data.re, data.im)


def whittle_loglik_spectra(data: FourierData, spectra: np.ndarray) -> float:
    """Whittle log-likelihood for arbitrary Hermitian one-sided spectra ``(M, n, n)``.

    Used for models outside the AR(2) mixture (baselines, toy checks).
    """
    s = np.asarray(spectra) / 2.0
    chol = np.linalg.cholesky(s)
    logdet = 2.0 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=1, axis2=2))), axis=1)
    y = np.linalg.solve(chol, data.coeffs[..., None])[..., 0]
    return float(-np.sum(logdet + np.sum(np.abs(y) ** 2, axis=1)))


# -- CSV ----------------------------------------------------------------------


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_csv(path, sampling_rate: float | None = None) -> MultiChannelSeries:
    """Rows are time points, columns channels; an optional header row is skipped."""
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header, rows = rows[0], rows[1:]
    width = len(header) if header is not None else len(rows[0]) if rows else 0
    values = []
    for lineno, row in enumerate(rows, start=2 if header is not None else 1):
        if len(row) != width:
            raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
        try:
            values.append([float(c) for c in row])
        except ValueError as exc:
            raise DataError(f"{path}: row {lineno}: {exc}") from None
    return MultiChannelSeries(np.array(values, dtype=float).reshape(-1, width), sampling_rate)


def write_csv(series: MultiChannelSeries, path, header: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"ch{i + 1}" for i in range(series.n_channels)])
        for row in series.samples:
            w.writerow([repr(float(v)) for v in row])
