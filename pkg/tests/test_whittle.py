import math

import numpy as np
import pytest

from ar2mix import _backend
from ar2mix.errors import DataError, NotPositiveDefinite
from ar2mix.kernel import density_grid
from ar2mix.model import MixtureModel, spectral_matrices
from ar2mix.whittle import (
    FourierData,
    MultiChannelSeries,
    dft,
    read_csv,
    standardize,
    whittle_loglik,
    whittle_loglik_spectra,
    write_csv,
)
from conftest import random_model
from oracles import naive_whittle_2x2


def _data(rng, T=256, n=2):
    return dft(standardize(MultiChannelSeries(rng.standard_normal((T, n)))))


# -- standardize --------------------------------------------------------------


def test_standardize_moments(rng):
    x = standardize(MultiChannelSeries(rng.normal(3.0, 5.0, (500, 4))))
    assert np.all(np.abs(x.samples.mean(axis=0)) <= 1e-12)
    assert np.all(np.abs(x.samples.var(axis=0) - 1) <= 1e-12)


def test_standardize_idempotent(rng):
    once = standardize(MultiChannelSeries(rng.standard_normal((200, 3))))
    twice = standardize(once)
    assert np.max(np.abs(once.samples - twice.samples)) <= 1e-12


def test_standardize_short_ramp():
    # [1, 2, 3, 4] repeated to the minimum length keeps the same affine map
    x = standardize(MultiChannelSeries(np.tile([1.0, 2.0, 3.0, 4.0], 4)))
    assert abs(x.samples.mean()) <= 1e-12 and abs(x.samples.var() - 1) <= 1e-12
    assert np.allclose(x.samples[:4, 0], (np.arange(1, 5) - 2.5) / math.sqrt(1.25))


def test_standardize_keeps_correlation(rng):
    raw = rng.standard_normal((400, 3)) @ np.array([[1, 0.5, 0], [0, 1, 0.3], [0, 0, 1]]) * [1, 10, 0.1] + 7
    z = standardize(MultiChannelSeries(raw)).samples
    assert np.max(np.abs(np.corrcoef(raw.T) - np.corrcoef(z.T))) <= 1e-12


def test_standardize_constant_channel(rng):
    x = rng.standard_normal((64, 3))
    x[:, 1] = 4.2
    with pytest.raises(DataError, match="channel 2"):
        standardize(MultiChannelSeries(x))


def test_series_validation():
    with pytest.raises(DataError):
        MultiChannelSeries(np.zeros((31, 2)))
    x = np.zeros((32, 2))
    x[5, 1] = np.nan
    with pytest.raises(DataError, match="row 6, channel 2"):
        MultiChannelSeries(x)


# -- dft ----------------------------------------------------------------------


def test_dft_pure_cosine():
    T, k = 512, 37
    t = np.arange(1, T + 1)
    d = dft(MultiChannelSeries(np.cos(2 * np.pi * t * k / T)))
    mag = np.abs(d.coeffs[:, 0])
    assert d.freqs[np.argmax(mag)] == pytest.approx(k / T)
    assert mag[k - 1] == pytest.approx(math.sqrt(T) / 2, abs=1e-9)
    others = np.delete(mag, k - 1)
    assert others.max() <= 1e-9


def test_dft_index_range():
    d = dft(MultiChannelSeries(np.ones((64, 1)) + np.arange(64)[:, None]))
    assert len(d.freqs) == 31
    assert d.freqs[0] == 1 / 64 and d.freqs[-1] == 31 / 64


def test_dft_zero_series():
    d = dft(MultiChannelSeries(np.zeros((128, 2))))
    assert np.all(d.coeffs == 0)


def test_dft_matches_direct_sum(rng):
    x = rng.standard_normal((64, 2))
    d = dft(MultiChannelSeries(x))
    t = np.arange(1, 65)
    for m in (1, 7, 31):
        direct = (x * np.exp(-2j * np.pi * m * t / 64)[:, None]).sum(axis=0) / 8
        assert np.allclose(d.coeffs[m - 1], direct, atol=1e-12)


def test_parseval(rng):
    T = 1024
    x = standardize(MultiChannelSeries(rng.standard_normal((T, 3)))).samples
    d = dft(MultiChannelSeries(x))
    full = np.fft.fft(x, axis=0) / math.sqrt(T)
    dropped = np.abs(full[0]) ** 2 + np.abs(full[T // 2]) ** 2
    lhs = 2 * np.sum(np.abs(d.coeffs) ** 2, axis=0)
    assert np.allclose(lhs + dropped, np.sum(x**2, axis=0), rtol=1e-12)


def test_dft_deterministic(rng):
    x = rng.standard_normal((256, 3))
    a = dft(standardize(MultiChannelSeries(x.copy())))
    b = dft(standardize(MultiChannelSeries(x.copy())))
    assert np.array_equal(a.coeffs, b.coeffs)


# -- likelihood ---------------------------------------------------------------


def test_identity_spectrum(rng):
    # covariance S/2 = I at every frequency
    d = _data(rng, n=3)
    S = np.broadcast_to(2 * np.eye(3), (len(d.freqs), 3, 3))
    assert whittle_loglik_spectra(d, S) == pytest.approx(-np.sum(np.abs(d.coeffs) ** 2), rel=1e-13)


def test_scaling_identity(rng):
    d = _data(rng, n=3)
    m = random_model(rng, 3, 2)
    S = spectral_matrices(m, d.freqs)
    base = whittle_loglik_spectra(d, S)
    q = sum(2 * (v.conj() @ np.linalg.solve(s, v)).real for v, s in zip(d.coeffs, S))
    for c in (1.5, 4.0, 30.0):
        expected = base - (len(d.freqs) * 3 * math.log(c) + (1 / c - 1) * q)
        assert whittle_loglik_spectra(d, c * S) == pytest.approx(expected, rel=1e-10)


def test_naive_2x2_oracle(rng):
    for _ in range(20):
        d = _data(rng, T=int(rng.choice([64, 256, 1000])), n=2)
        m = random_model(rng, 2, int(rng.integers(1, 4)))
        ref = naive_whittle_2x2(d.coeffs, spectral_matrices(m, d.freqs))
        assert whittle_loglik(d, m) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("impl", ["backend", "fallback"])
def test_backends_agree(rng, impl):
    d = _data(rng, T=512, n=5)
    m = random_model(rng, 5, 4)
    g = density_grid(m.psi, m.log_mod, d.freqs)
    fn = _backend.whittle_loglik if impl == "backend" else _backend.fallback.whittle_loglik
    ref = whittle_loglik_spectra(d, spectral_matrices(m, d.freqs))
    assert fn(g, m.weights, m.noise_var, d.re, d.im) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("impl", ["backend", "fallback"])
def test_not_positive_definite(rng, impl):
    d = _data(rng, n=2)
    m = MixtureModel.from_arrays([0.1], [0.1], [[1.0], [1.0]], 0.0)
    g = density_grid(m.psi, m.log_mod, d.freqs)
    fn = _backend.whittle_loglik if impl == "backend" else _backend.fallback.whittle_loglik
    with pytest.raises(NotPositiveDefinite) as err:
        fn(g, m.weights, 0.0, d.re, d.im)
    assert err.value.index == 0


def test_dimension_mismatch(rng):
    with pytest.raises(DataError):
        whittle_loglik(_data(rng, n=2), random_model(rng, 3, 1))


def test_kernel_relabeling_invariance(rng):
    d = _data(rng, n=3)
    m = random_model(rng, 3, 3)
    perm = [2, 0, 1]
    p = MixtureModel.from_arrays(m.psi[perm], m.log_mod[perm], m.weights[:, perm], m.noise_var)
    assert whittle_loglik(d, p) == pytest.approx(whittle_loglik(d, m), rel=1e-13)


def test_inflated_noise_lowers_loglik(rng):
    d = _data(rng, n=3)
    m = random_model(rng, 3, 2)
    vals = [whittle_loglik(d, MixtureModel(m.kernels, m.weights, s)) for s in (10.0, 100.0, 1e3, 1e4)]
    assert np.all(np.diff(vals) < 0)


# -- CSV ----------------------------------------------------------------------


def test_csv_round_trip(tmp_path, rng):
    x = MultiChannelSeries(rng.standard_normal((32, 3)))
    for header in (True, False):
        write_csv(x, tmp_path / "x.csv", header=header)
        assert np.array_equal(read_csv(tmp_path / "x.csv").samples, x.samples)


def test_csv_ragged_row(tmp_path):
    lines = ["a,b"] + ["1,2"] * 10 + ["3"] + ["1,2"] * 10
    (tmp_path / "r.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="row 12"):
        read_csv(tmp_path / "r.csv")


def test_csv_bad_value(tmp_path):
    (tmp_path / "b.csv").write_text("1,2\n" * 3 + "1,x\n" + "1,2\n" * 20)
    with pytest.raises(DataError, match="row 4"):
        read_csv(tmp_path / "b.csv")


def test_fourier_periodogram_rank_one(rng):
    d = _data(rng, n=3)
    p = d.periodogram()
    assert isinstance(d, FourierData)
    assert np.all(np.linalg.matrix_rank(p, tol=1e-10) == 1)
