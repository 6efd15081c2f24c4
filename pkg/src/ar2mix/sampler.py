"""Metropolis-within-Gibbs sampler for the AR(2) Dirichlet-process mixture.

State
-----
* a partition ``0 = b_0 < b_1 < ... < b_K = 0.5`` of the frequency axis with one
  latent oscillation per subinterval, ``b_{j-1} < psi_j < b_j``;
* bandwidths ``log_mod`` (``L_j > 0``), noise level ``noise_var`` and DP
  precision ``alpha``;
* per channel a truncated stick-breaking vector (``sticks``, the stick
  fractions) and atoms (``atoms`` in ``(0, 1]``).  The squared weight of
  component ``k`` in channel ``i`` is the stick mass of the atoms in
  ``((k-1)/K, k/K]``.

One sweep runs: birth/death, cutoffs, psi, L, sticks, atoms, noise, alpha.

Birth and death keep component identities.  Atoms carrying at least
``heavy_atom_weight`` of stick mass follow their component to its new bin
(an affine map within bins), lighter atoms are redrawn from their uniform prior,
and optionally a few atoms are moved into the newborn bin (or released from
the dying one) so a new component can start with weight.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np
from scipy.special import gammaln, ndtr, ndtri

from . import _backend
from .whittle import FourierData

__all__ = [
    "PriorConfig",
    "SamplerConfig",
    "ChainState",
    "ChainTrace",
    "Sampler",
    "stick_weights",
    "weights_from_atoms",
    "weights_from_sticks",
    "bin_edges",
    "bin_index",
    "log_stirling_first",
    "run_chain",
    "run_chains",
    "chain_rng",
    "write_trace",
    "read_trace",
]

HALF = 0.5


# -- configuration ------------------------------------------------------------


@dataclass
class PriorConfig:
    psi_prior: str = "uniform"  # or "beta22": Beta(2, 2) stretched over the subinterval
    logmod_prior: str = "jeffreys"  # L^-2 on [logmod_min, inf), or "uniform02": U(0, 2)
    k_prior: str = "dp"  # or "uniform": discrete uniform on 1..k_max
    alpha_shape: float = 0.1
    alpha_rate: float = 0.1
    truncation_v: int = 50
    logmod_min: float = 1e-4
    noise_min: float = 1e-6
    stick_concentration: float = 1.0
    k_max: int | None = None
    n_eff: str = "components"  # or "frequencies"

    def __post_init__(self):
        if self.psi_prior not in ("uniform", "beta22"):
            raise ValueError(f"unknown psi_prior {self.psi_prior!r}")
        if self.logmod_prior not in ("jeffreys", "uniform02"):
            raise ValueError(f"unknown logmod_prior {self.logmod_prior!r}")
        if self.k_prior not in ("dp", "uniform"):
            raise ValueError(f"unknown k_prior {self.k_prior!r}")
        if self.n_eff not in ("components", "frequencies"):
            raise ValueError(f"unknown n_eff {self.n_eff!r}")
        for name in ("alpha_shape", "alpha_rate", "logmod_min", "noise_min", "stick_concentration"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.truncation_v < 1:
            raise ValueError("truncation_v must be >= 1")

    @property
    def kmax(self) -> int:
        if self.k_max is not None:
            return int(self.k_max)
        return min(30, self.truncation_v) if self.k_prior == "uniform" else self.truncation_v

    # log densities, up to constants shared by every state

    def log_psi(self, psi: float, lo: float, hi: float) -> float:
        if not (lo < psi < hi):
            return -math.inf
        width = hi - lo
        if self.psi_prior == "uniform":
            return -math.log(width)
        u = (psi - lo) / width
        return math.log(6.0 * u * (1.0 - u) / width)

    def log_logmod(self, L: float) -> float:
        if self.logmod_prior == "jeffreys":
            if L < self.logmod_min:
                return -math.inf
            return math.log(self.logmod_min) - 2.0 * math.log(L)
        return -math.log(2.0) if 0.0 < L < 2.0 else -math.inf

    def draw_psi(self, rng, lo: float, hi: float) -> float:
        u = rng.beta(2.0, 2.0) if self.psi_prior == "beta22" else rng.random()
        return lo + (hi - lo) * min(max(u, 1e-12), 1.0 - 1e-12)

    def draw_logmod(self, rng) -> float:
        if self.logmod_prior == "jeffreys":
            return self.logmod_min / (1.0 - rng.random())
        return 2.0 * (1.0 - rng.random()) * (1.0 - 1e-12)


@dataclass
class SamplerConfig:
    psi_step: float = 0.2  # coarse random-walk sd as a fraction of the subinterval width
    psi_step_fine: float = 0.002  # fine random-walk sd, cycles/sample
    logmod_step: float = 0.15
    noise_step: float = 0.15
    stick_step: float = 0.3
    atom_step: float = 0.3
    atom_jump_prob: float = 0.5
    channel_moves: int = 1
    birth_proposal: str = "data"  # or "prior"
    death_scheme: str = "keep"  # or "redraw"
    birth_logmod_center: float = 0.05
    birth_logmod_sd: float = 1.5
    birth_capture_prob: float = 0.9  # largest per-channel chance a birth pulls an atom into the new bin
    capture_floor: float = 0.02
    capture_move_prob: float = 0.5  # share of births/deaths that also move atoms
    heavy_atom_weight: float = 0.01
    init_k: int = 3
    init_logmod: float = 0.5
    init_noise: float = 0.1
    init_alpha: float = 1.0
    greedy: bool = False  # accept only improvements; plumbing checks only
    validate_every: int = 0

    def __post_init__(self):
        if self.birth_proposal not in ("data", "prior"):
            raise ValueError(f"unknown birth_proposal {self.birth_proposal!r}")
        if self.death_scheme not in ("keep", "redraw"):
            raise ValueError(f"unknown death_scheme {self.death_scheme!r}")


def config_from_dict(cls, doc: dict | None):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**doc)


def chain_rng(seed: int, chain_id: int = 0) -> np.random.Generator:
    """Counter-based Philox stream for chain ``chain_id`` of run ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain_id)])))


# -- stick-breaking weights ---------------------------------------------------


def stick_weights(fractions: np.ndarray) -> np.ndarray:
    """Weights from stick fractions; the last stick takes whatever remains."""
    x = np.array(fractions, dtype=float, copy=True)
    x[..., -1] = 1.0
    remain = np.cumprod(1.0 - x, axis=-1)
    out = x.copy()
    out[..., 1:] *= remain[..., :-1]
    return out


def weights_from_atoms(V: np.ndarray, theta: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Contributions ``p`` (rows sum to one) from atom weights ``V`` binned by ``edges``.

    Atom ``h`` of channel ``j`` adds ``V[j, h]`` to component ``k`` when
    ``edges[k] < theta[j, h] <= edges[k + 1]``.
    """
    V = np.atleast_2d(V)
    theta = np.atleast_2d(theta)
    K = len(edges) - 1
    idx = np.searchsorted(edges, theta, side="left") - 1
    np.clip(idx, 0, K - 1, out=idx)
    n = V.shape[0]
    flat = (idx + K * np.arange(n)[:, None]).ravel()
    return np.bincount(flat, weights=V.ravel(), minlength=n * K).reshape(n, K)


def bin_edges(K: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, K + 1)


def bin_index(theta, K: int):
    """Zero-based bin of atoms ``theta``: ``k`` when ``k/K < theta <= (k+1)/K``."""
    idx = np.searchsorted(bin_edges(K), theta, side="left") - 1
    return np.clip(idx, 0, K - 1)


def weights_from_sticks(V: np.ndarray, theta: np.ndarray, K: int) -> np.ndarray:
    """Mixing matrix ``Lambda`` with ``K`` equal-width atom bins.

    ``V`` rows are stick-breaking weights summing to one.
    """
    return np.sqrt(weights_from_atoms(V, theta, bin_edges(K)))


def log_stirling_first(N: int, kmax: int) -> np.ndarray:
    """``log |s(N, k)|`` for ``k = 0..kmax`` (unsigned Stirling numbers, first kind)."""
    row = np.full(kmax + 1, -np.inf)
    row[0] = 0.0
    for n in range(N):
        nxt = np.full(kmax + 1, -np.inf)
        with np.errstate(divide="ignore"):
            a = row + (math.log(n) if n > 0 else -np.inf)
        nxt[1:] = np.logaddexp(a[1:], row[:-1])
        nxt[0] = a[0]
        row = nxt
    return row


# -- state and trace ----------------------------------------------------------


@dataclass
class ChainState:
    sticks: np.ndarray  # (n, v) stick fractions
    atoms: np.ndarray  # (n, v) in (0, 1]
    cutoffs: np.ndarray  # (K + 1,)
    psi: np.ndarray  # (K,)
    log_mod: np.ndarray  # (K,)
    noise_var: float
    alpha: float

    @property
    def K(self) -> int:
        return len(self.psi)

    @property
    def n_channels(self) -> int:
        return self.sticks.shape[0]

    def stick_weights(self) -> np.ndarray:
        return stick_weights(self.sticks)

    def contributions(self) -> np.ndarray:
        return weights_from_atoms(self.stick_weights(), self.atoms, bin_edges(self.K))

    def weights(self) -> np.ndarray:
        return np.sqrt(self.contributions())

    def copy(self) -> "ChainState":
        return ChainState(
            self.sticks.copy(), self.atoms.copy(), self.cutoffs.copy(),
            self.psi.copy(), self.log_mod.copy(), float(self.noise_var), float(self.alpha),
        )

    def validate(self) -> None:
        b = self.cutoffs
        K = self.K
        if len(b) != K + 1 or b[0] != 0.0 or b[-1] != HALF or np.any(np.diff(b) <= 0):
            raise AssertionError(f"invalid partition {b}")
        if np.any(self.psi <= b[:-1]) or np.any(self.psi >= b[1:]):
            raise AssertionError("psi outside its subinterval")
        if np.any(self.log_mod <= 0) or not self.noise_var > 0 or not self.alpha > 0:
            raise AssertionError("nonpositive scale parameter")
        if np.any(self.atoms <= 0) or np.any(self.atoms > 1):
            raise AssertionError("atom outside (0, 1]")
        if np.any(self.sticks[:, :-1] <= 0) or np.any(self.sticks[:, :-1] >= 1):
            raise AssertionError("stick fraction outside (0, 1)")
        rows = (self.weights() ** 2).sum(axis=1)
        if np.any(np.abs(rows - 1.0) > 1e-10):
            raise AssertionError("weight rows do not have unit norm")


@dataclass
class ChainTrace:
    K: np.ndarray
    loglik: np.ndarray
    noise_var: np.ndarray
    alpha: np.ndarray
    psi: np.ndarray  # (iters, kpad), NaN padded
    log_mod: np.ndarray
    weights: np.ndarray  # (iters, n, kpad)
    seed: int = 0
    chain_id: int = 0
    acceptance: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.K)

    @property
    def n_channels(self) -> int:
        return self.weights.shape[1]

    def components(self, it: int):
        """``(psi, log_mod, weights)`` of iteration ``it`` without padding."""
        k = int(self.K[it])
        return self.psi[it, :k], self.log_mod[it, :k], self.weights[it, :, :k]


class _TraceBuilder:
    def __init__(self, iters: int, n: int):
        self.K = np.empty(iters, dtype=int)
        self.loglik = np.empty(iters)
        self.noise = np.empty(iters)
        self.alpha = np.empty(iters)
        self.psi: list[np.ndarray] = []
        self.log_mod: list[np.ndarray] = []
        self.weights: list[np.ndarray] = []
        self.n = n

    def record(self, it: int, state: ChainState, lam: np.ndarray, loglik: float) -> None:
        self.K[it] = state.K
        self.loglik[it] = loglik
        self.noise[it] = state.noise_var
        self.alpha[it] = state.alpha
        self.psi.append(state.psi.copy())
        self.log_mod.append(state.log_mod.copy())
        self.weights.append(lam.copy())

    def build(self, **meta) -> ChainTrace:
        iters = len(self.psi)
        kpad = int(self.K[:iters].max()) if iters else 1
        psi = np.full((iters, kpad), np.nan)
        lm = np.full((iters, kpad), np.nan)
        w = np.full((iters, self.n, kpad), np.nan)
        for it in range(iters):
            k = self.K[it]
            psi[it, :k] = self.psi[it]
            lm[it, :k] = self.log_mod[it]
            w[it, :, :k] = self.weights[it]
        return ChainTrace(self.K[:iters].copy(), self.loglik[:iters].copy(), self.noise[:iters].copy(),
                          self.alpha[:iters].copy(), psi, lm, w, **meta)


# -- birth proposal densities -------------------------------------------------


class _PsiProposal:
    """Piecewise-constant density on ``[0, 0.5]`` restricted to subintervals.

    Half of the mass follows the smoothed pooled periodogram, half is uniform.
    """

    def __init__(self, data: FourierData | None):
        if data is None or len(data.freqs) == 0:
            self.breaks = np.array([0.0, HALF])
            self.cdf = np.array([0.0, 1.0])
            return
        T = data.length
        power = np.sum(np.abs(data.coeffs) ** 2, axis=1)
        power = np.convolve(power, np.ones(3) / 3.0, mode="same")
        cells = len(power)
        mids = (np.arange(1, cells) + 0.5) / T
        self.breaks = np.concatenate([[0.0], mids, [HALF]])
        width = np.diff(self.breaks)
        mass = 0.5 * power / power.sum() + 0.5 * width / HALF
        self.cdf = np.concatenate([[0.0], np.cumsum(mass)])
        self.cdf /= self.cdf[-1]

    def _C(self, x):
        return np.interp(x, self.breaks, self.cdf)

    def sample(self, rng, lo: float, hi: float) -> float:
        a, b = self._C(lo), self._C(hi)
        u = a + (b - a) * rng.random()
        x = float(np.interp(u, self.cdf, self.breaks))
        eps = 1e-12 * (hi - lo)
        return min(max(x, lo + eps), hi - eps)

    def logpdf(self, x: float, lo: float, hi: float) -> float:
        i = int(np.clip(np.searchsorted(self.breaks, x, side="right") - 1, 0, len(self.breaks) - 2))
        dens = (self.cdf[i + 1] - self.cdf[i]) / (self.breaks[i + 1] - self.breaks[i])
        return math.log(dens) - math.log(self._C(hi) - self._C(lo))


class _LogmodProposal:
    """Equal mixture of the prior and a log-normal for ``L``, truncated to the prior support.

    The prior half keeps prior/proposal bounded, so components with tiny ``L``
    can still die.
    """

    def __init__(self, priors: PriorConfig, center: float, sd: float):
        self.priors = priors
        if priors.logmod_prior == "jeffreys":
            lo, hi = priors.logmod_min, math.inf
        else:
            lo, hi = 0.0, 2.0
        self.mu = math.log(center)
        self.sd = sd
        self.a = float(ndtr((math.log(lo) - self.mu) / sd)) if lo > 0 else 0.0
        self.b = float(ndtr((math.log(hi) - self.mu) / sd)) if math.isfinite(hi) else 1.0
        self.lo, self.hi = lo, hi

    def sample(self, rng) -> float:
        if rng.random() < 0.5:
            return self.priors.draw_logmod(rng)
        u = self.a + (self.b - self.a) * rng.random()
        L = math.exp(self.mu + self.sd * float(ndtri(u)))
        return min(max(L, self.lo * (1 + 1e-12) if self.lo > 0 else 1e-300), self.hi * (1 - 1e-12))

    def logpdf(self, L: float) -> float:
        z = (math.log(L) - self.mu) / self.sd
        ln = math.exp(-0.5 * z * z) / (self.sd * L * math.sqrt(2 * math.pi) * (self.b - self.a))
        return math.log(0.5 * ln + 0.5 * math.exp(self.priors.log_logmod(L)))


# -- sampler ------------------------------------------------------------------


class Sampler:
    """One Markov chain.  ``data=None`` gives the empty-data (prior-only) target.

    ``loglik_fn(g, lam, noise_var)`` replaces the Whittle likelihood, for toy
    targets in tests.
    """

    def __init__(self, data: FourierData | None, n_channels: int | None = None,
                 priors: PriorConfig | None = None, config: SamplerConfig | None = None,
                 rng: np.random.Generator | None = None, state: ChainState | None = None,
                 loglik_fn: Callable | None = None):
        self.priors = priors or PriorConfig()
        self.config = config or SamplerConfig()
        self.rng = rng if rng is not None else chain_rng(0)
        self.data = data
        if data is not None:
            n_channels = data.n_channels
        if n_channels is None:
            raise ValueError("n_channels is required without data")
        self.n = n_channels
        self._loglik_fn = loglik_fn
        if data is not None:
            theta = 2.0 * np.pi * data.freqs
            self._trig = (np.cos(theta), np.sin(theta), np.cos(2 * theta), np.sin(2 * theta))
            self._dre, self._dim = np.asfortranarray(data.re), np.asfortranarray(data.im)
            self.n_freq = len(data.freqs)
        else:
            self._trig = None
            self.n_freq = 0
        self._rel_power = self._rel_freqs = None
        if data is not None and len(data.freqs) > 0:
            power = np.abs(data.coeffs) ** 2
            kernel = np.ones(3) / 3.0
            power = np.stack([np.convolve(power[:, i], kernel, mode="same") for i in range(self.n)], axis=1)
            self._rel_power = power / power.mean(axis=0)
            self._rel_freqs = data.freqs
        self.psi_proposal = _PsiProposal(data if self.config.birth_proposal == "data" else None)
        self.logmod_proposal = _LogmodProposal(self.priors, self.config.birth_logmod_center,
                                               self.config.birth_logmod_sd)
        kmax = self.priors.kmax
        if self.priors.n_eff == "frequencies":
            if self.n_freq < kmax:
                raise ValueError("n_eff='frequencies' needs at least k_max Fourier frequencies")
            self._log_stirling = log_stirling_first(self.n_freq, kmax)
        else:
            self._log_stirling = None
        self.state = state.copy() if state is not None else self.initial_state()
        self.accepted: dict[str, int] = {}
        self.proposed: dict[str, int] = {}
        self._refresh()

    # -- setup

    def initial_state(self) -> ChainState:
        cfg, pri, rng = self.config, self.priors, self.rng
        K = max(1, min(cfg.init_k, pri.kmax))
        b = np.linspace(0.0, HALF, K + 1)
        v = pri.truncation_v
        sticks = rng.beta(1.0, pri.stick_concentration, size=(self.n, v))
        sticks = np.clip(sticks, 1e-12, 1 - 1e-12)
        sticks[:, -1] = 1.0
        atoms = 1.0 - rng.random((self.n, v))
        logmod = cfg.init_logmod
        if pri.logmod_prior == "uniform02":
            logmod = min(logmod, 1.999)
        return ChainState(sticks, atoms, b, 0.5 * (b[:-1] + b[1:]), np.full(K, max(logmod, pri.logmod_min)),
                          max(cfg.init_noise, pri.noise_min * 10), cfg.init_alpha)

    def _refresh(self) -> None:
        s = self.state
        self.V = s.stick_weights()
        self.lam = np.sqrt(weights_from_atoms(self.V, s.atoms, bin_edges(s.K)))
        self.g = self._grid(s.psi, s.log_mod)
        self.loglik = self._loglik(self.g, self.lam, s.noise_var)

    def _grid(self, psi, log_mod) -> np.ndarray:
        if self._trig is None:
            return np.zeros((len(psi), 0))
        out = np.empty((len(psi), self.n_freq))
        for j in range(len(psi)):
            _backend.density_row(float(psi[j]), float(log_mod[j]), *self._trig, out[j])
        return out

    def _row(self, psi: float, log_mod: float) -> np.ndarray:
        out = np.empty(self.n_freq)
        if self._trig is not None:
            _backend.density_row(psi, log_mod, *self._trig, out)
        return out

    def _loglik(self, g, lam, noise) -> float:
        if self._loglik_fn is not None:
            return float(self._loglik_fn(g, lam, noise))
        if self.data is None:
            return 0.0
        return _backend.whittle_loglik(g, lam, noise, self._dre, self._dim)

    # -- priors on K and the partition

    def _n_eff(self, K: int) -> int:
        return K if self.priors.n_eff == "components" else self.n_freq

    def log_prior_k(self, K: int, alpha: float) -> float:
        """``log p(K | alpha)`` up to a K-free constant, -inf outside ``1..k_max``."""
        if not (1 <= K <= self.priors.kmax):
            return -math.inf
        if self.priors.k_prior == "uniform":
            return 0.0
        N = self._n_eff(K)
        ls = 0.0 if self._log_stirling is None else self._log_stirling[K]
        return ls + K * math.log(alpha) + gammaln(alpha) - gammaln(alpha + N)

    @staticmethod
    def log_prior_partition(K: int) -> float:
        # K - 1 ordered uniform cutoffs on (0, 0.5)
        return math.lgamma(K) + (K - 1) * math.log(2.0)

    # -- MH plumbing

    def _accept(self, name: str, log_ratio: float, new_loglik: float | None = None) -> bool:
        self.proposed[name] = self.proposed.get(name, 0) + 1
        if self.config.greedy:
            ok = new_loglik is not None and new_loglik > self.loglik
        else:
            ok = log_ratio >= 0 or math.log(self.rng.random()) < log_ratio
        if ok:
            self.accepted[name] = self.accepted.get(name, 0) + 1
        return ok

    def acceptance_rates(self) -> dict[str, float]:
        return {k: self.accepted.get(k, 0) / v for k, v in self.proposed.items() if v}

    # -- kernel parameters, noise and cutoffs

    def update_psi(self, j: int) -> bool:
        s, cfg = self.state, self.config
        lo, hi = s.cutoffs[j], s.cutoffs[j + 1]
        sd = cfg.psi_step * (hi - lo)
        if self.rng.random() < 0.5:
            sd = min(sd, cfg.psi_step_fine)
        new = _reflect(s.psi[j] + sd * self.rng.standard_normal(), lo, hi)
        if not (lo < new < hi):
            self._accept("psi", -math.inf)
            return False
        old_row = self.g[j].copy()
        self.g[j] = self._row(new, s.log_mod[j])
        ll = self._loglik(self.g, self.lam, s.noise_var)
        lr = ll - self.loglik + self.priors.log_psi(new, lo, hi) - self.priors.log_psi(s.psi[j], lo, hi)
        if self._accept("psi", lr, ll):
            s.psi[j] = new
            self.loglik = ll
            return True
        self.g[j] = old_row
        return False

    def update_logmod(self, j: int) -> bool:
        s = self.state
        old = s.log_mod[j]
        new = old * math.exp(self.config.logmod_step * self.rng.standard_normal())
        lp_new = self.priors.log_logmod(new)
        if lp_new == -math.inf:
            self._accept("log_mod", -math.inf)
            return False
        old_row = self.g[j].copy()
        self.g[j] = self._row(s.psi[j], new)
        ll = self._loglik(self.g, self.lam, s.noise_var)
        lr = ll - self.loglik + lp_new - self.priors.log_logmod(old) + math.log(new / old)
        if self._accept("log_mod", lr, ll):
            s.log_mod[j] = new
            self.loglik = ll
            return True
        self.g[j] = old_row
        return False

    def update_noise(self) -> bool:
        s = self.state
        new = s.noise_var * math.exp(self.config.noise_step * self.rng.standard_normal())
        if new <= self.priors.noise_min:
            self._accept("noise_var", -math.inf)
            return False
        ll = self._loglik(self.g, self.lam, new)
        # the 1/sigma^2 prior cancels the log-scale Jacobian
        if self._accept("noise_var", ll - self.loglik, ll):
            s.noise_var = new
            self.loglik = ll
            return True
        return False

    def update_cutoff(self, j: int) -> bool:
        """Uniform proposal for interior cutoff ``j`` between its psi neighbours.

        Weights do not depend on the cutoffs, so only the psi priors enter.
        """
        s = self.state
        lo, hi = s.psi[j - 1], s.psi[j]
        new = lo + (hi - lo) * self.rng.random()
        if not (lo < new < hi):
            self._accept("cutoff", -math.inf)
            return False
        old = s.cutoffs[j]
        left, right = s.cutoffs[j - 1], s.cutoffs[j + 1]
        lp = self.priors.log_psi
        lr = (lp(s.psi[j - 1], left, new) + lp(s.psi[j], new, right)
              - lp(s.psi[j - 1], left, old) - lp(s.psi[j], old, right))
        if self._accept("cutoff", lr, self.loglik):
            s.cutoffs[j] = new
            return True
        return False

    # -- weights

    def update_stick(self, i: int) -> bool:
        """Logit random walk on one stick fraction of channel ``i``.

        The stick is picked with probability proportional to the mass left
        before it, which the move does not change.
        """
        s, rng = self.state, self.rng
        v = s.sticks.shape[1]
        if v < 2:
            return False
        x = s.sticks[i]
        remain = np.concatenate([[1.0], np.cumprod(1.0 - x[:-2])])
        h = int(rng.choice(v - 1, p=remain / remain.sum()))
        old = x[h]
        z = math.log(old / (1.0 - old)) + self.config.stick_step * rng.standard_normal()
        new = 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0
        if not (0.0 < new < 1.0):
            self._accept("sticks", -math.inf)
            return False
        c = self.priors.stick_concentration
        lr = ((c - 1.0) * (math.log1p(-new) - math.log1p(-old))
              + math.log(new * (1.0 - new)) - math.log(old * (1.0 - old)))
        x[h] = new
        V_i = stick_weights(x[None, :])[0]
        lam = self.lam.copy()
        lam[i] = np.sqrt(weights_from_atoms(V_i, s.atoms[i], bin_edges(s.K))[0])
        ll = self._loglik(self.g, lam, s.noise_var)
        if self._accept("sticks", ll - self.loglik + lr, ll):
            self.V[i] = V_i
            self.lam = lam
            self.loglik = ll
            return True
        x[h] = old
        return False

    def update_atom(self, i: int) -> bool:
        """Move one atom of channel ``i``: a uniform jump or a logit random walk.

        The atom is picked by stick weight, which the move does not change.
        """
        s, rng = self.state, self.rng
        w = self.V[i]
        h = int(rng.choice(len(w), p=w / w.sum()))
        old = s.atoms[i, h]
        if rng.random() < self.config.atom_jump_prob:
            new = 1.0 - rng.random()
            lr = 0.0
        else:
            if old >= 1.0:
                self._accept("atoms", -math.inf)
                return False
            z = math.log(old / (1.0 - old)) + self.config.atom_step * rng.standard_normal()
            new = 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0
            if not (0.0 < new < 1.0):
                self._accept("atoms", -math.inf)
                return False
            lr = math.log(new * (1.0 - new)) - math.log(old * (1.0 - old))
        K = s.K
        if bin_index(old, K) == bin_index(new, K):
            if self._accept("atoms", lr, self.loglik):
                s.atoms[i, h] = new
                return True
            return False
        s.atoms[i, h] = new
        lam = self.lam.copy()
        lam[i] = np.sqrt(weights_from_atoms(w, s.atoms[i], bin_edges(K))[0])
        ll = self._loglik(self.g, lam, s.noise_var)
        if self._accept("atoms", ll - self.loglik + lr, ll):
            self.lam = lam
            self.loglik = ll
            return True
        s.atoms[i, h] = old
        return False

    # -- alpha

    def update_alpha(self, eta: float | None = None) -> float:
        """Escobar-West auxiliary-variable update of the DP precision."""
        s, pri, rng = self.state, self.priors, self.rng
        K = s.K
        N = self._n_eff(K)
        if eta is None:
            eta = rng.beta(s.alpha + 1.0, N)
        shape_hi, shape_lo, rate = self.alpha_mixture(K, eta)
        odds = (pri.alpha_shape + K - 1.0) / (N * rate)
        shape = shape_hi if rng.random() < odds / (1.0 + odds) else shape_lo
        s.alpha = max(rng.gamma(shape, 1.0 / rate), 1e-300)
        return s.alpha

    def alpha_mixture(self, K: int, eta: float) -> tuple[float, float, float]:
        """Shapes ``(a + K, a + K - 1)`` and rate ``b - log eta`` of the gamma mixture."""
        pri = self.priors
        return pri.alpha_shape + K, pri.alpha_shape + K - 1.0, pri.alpha_rate - math.log(max(eta, 1e-300))

    # -- birth / death

    def _draw_new(self, lo: float, hi: float) -> tuple[float, float, float]:
        """Draw ``(psi, L)`` for a component on ``(lo, hi)``; also return log(prior/proposal)."""
        rng, pri = self.rng, self.priors
        if self.config.birth_proposal == "prior":
            return pri.draw_psi(rng, lo, hi), pri.draw_logmod(rng), 0.0
        psi = self.psi_proposal.sample(rng, lo, hi)
        L = self.logmod_proposal.sample(rng)
        return psi, L, self._log_prior_over_proposal(psi, L, lo, hi)

    def _log_prior_over_proposal(self, psi, L, lo, hi) -> float:
        if self.config.birth_proposal == "prior":
            return 0.0
        pri = self.priors
        return (pri.log_psi(psi, lo, hi) + pri.log_logmod(L)
                - self.psi_proposal.logpdf(psi, lo, hi) - self.logmod_proposal.logpdf(L))

    def _relabel(self, atoms: np.ndarray, K_old: int, K_new: int, mapping: np.ndarray):
        """Carry heavy atoms to their component's new bin and redraw light ones.

        ``mapping[k]`` is the new index of old component ``k`` (-1: removed).
        Returns ``(atoms, n_heavy)``, or ``None`` if a heavy atom has nowhere to go.
        """
        heavy = self.V >= self.config.heavy_atom_weight
        k = bin_index(atoms, K_old)
        dest = mapping[k]
        if np.any(heavy & (dest < 0)):
            return None
        e_old, e_new = bin_edges(K_old), bin_edges(K_new)
        out = atoms.copy()
        u = (atoms[heavy] - e_old[k[heavy]]) / (e_old[k[heavy] + 1] - e_old[k[heavy]])
        d = dest[heavy]
        out[heavy] = e_new[d] + u * (e_new[d + 1] - e_new[d])
        if np.any(bin_index(out[heavy], K_new) != d) or np.any(out[heavy] <= 0.0):
            return None
        light = ~heavy
        out[light] = 1.0 - self.rng.random(int(light.sum()))
        return out, int(heavy.sum())

    def _capture_probs(self, psi: float) -> np.ndarray:
        """Per-channel chance of moving an atom for a component at ``psi``.

        Rises with the channel's smoothed periodogram at ``psi`` relative to its
        mean, so peaks pull in the channels that carry them.  A function of
        ``psi`` and the data only, hence the same for a birth and its reverse.
        """
        cfg = self.config
        if self._rel_power is None:
            return np.full(self.n, cfg.birth_capture_prob)
        m = int(np.clip(np.searchsorted(self._rel_freqs, psi), 0, len(self._rel_freqs) - 1))
        r = self._rel_power[m]
        return cfg.capture_floor + (cfg.birth_capture_prob - cfg.capture_floor) * r / (r + 5.0)

    def _move_atoms(self, atoms: np.ndarray, lo: float, hi: float, psi: float,
                    capture: bool) -> tuple[np.ndarray, list[tuple[int, int]]]:
        """Relocate one atom (picked by stick weight) of a random channel subset into ``(lo, hi]``.

        Channels join the subset independently with :meth:`_capture_probs`, so
        birth and death pick it alike.  Returns the new atoms and the moved
        ``(channel, atom)`` pairs.
        """
        if not capture:
            return atoms, []
        rng = self.rng
        atoms = atoms.copy()
        chosen = rng.random(self.n) < self._capture_probs(psi)
        picked = []
        for i in np.flatnonzero(chosen):
            h = int(rng.choice(atoms.shape[1], p=self.V[i] / self.V[i].sum()))
            atoms[i, h] = hi - (hi - lo) * rng.random()
            picked.append((int(i), h))
        return atoms, picked

    def _propose(self, name, lr, cutoffs, psi, log_mod, atoms) -> bool:
        s = self.state
        g = self._grid(psi, log_mod)
        lam = np.sqrt(weights_from_atoms(self.V, atoms, bin_edges(len(psi))))
        ll = self._loglik(g, lam, s.noise_var)
        if self._accept(name, ll - self.loglik + lr, ll):
            s.cutoffs, s.psi, s.log_mod, s.atoms = cutoffs, psi, log_mod, atoms
            self.g, self.lam, self.loglik = g, lam, ll
            return True
        return False

    @staticmethod
    def _side_prob(k: int, K: int) -> float:
        """Probability that a death at component ``k`` of ``K`` merges toward a given neighbour."""
        return 0.5 if 0 < k < K - 1 else 1.0

    def birth_death(self) -> bool:
        s, rng = self.state, self.rng
        K = s.K
        j = int(rng.integers(K))
        birth = rng.random() < 0.5
        capture = rng.random() < self.config.capture_move_prob
        if birth:
            if K >= self.priors.kmax:
                self._accept("birth", -math.inf)
                return False
            return self.birth(j, capture)
        if K <= 1:
            self._accept("death", -math.inf)
            return False
        return self.death(j, capture)

    def birth(self, j: int, capture: bool = False) -> bool:
        """Split subinterval ``j`` at a uniform cutoff and add a component on the far side of ``psi_j``."""
        s, rng, pri = self.state, self.rng, self.priors
        K = s.K
        lo, hi = s.cutoffs[j], s.cutoffs[j + 1]
        c = lo + (hi - lo) * rng.random()
        if not (lo < c < hi) or c == s.psi[j]:
            self._accept("birth", -math.inf)
            return False
        if s.psi[j] < c:
            t, surv_side, new_side = j + 1, (lo, c), (c, hi)
        else:
            t, surv_side, new_side = j, (c, hi), (lo, c)
        cutoffs = np.insert(s.cutoffs, j + 1, c)
        lr = (self.log_prior_k(K + 1, s.alpha) - self.log_prior_k(K, s.alpha)
              + self.log_prior_partition(K + 1) - self.log_prior_partition(K)
              + math.log(hi - lo) + math.log(K) - math.log(K + 1)
              + math.log(self._side_prob(t, K + 1)))
        if self.config.death_scheme == "keep":
            psi_s, L_s = s.psi[j], s.log_mod[j]
            lr += pri.log_psi(psi_s, *surv_side) - pri.log_psi(psi_s, lo, hi)
        else:
            psi_s, L_s, ws = self._draw_new(*surv_side)
            lr += ws - self._log_prior_over_proposal(s.psi[j], s.log_mod[j], lo, hi)
        psi_t, L_t, wt = self._draw_new(*new_side)
        lr += wt
        psi = np.insert(s.psi, j, 0.0)
        log_mod = np.insert(s.log_mod, j, 0.0)
        s_idx = j + 1 if t == j else j
        psi[t], log_mod[t], psi[s_idx], log_mod[s_idx] = psi_t, L_t, psi_s, L_s
        if not np.all((psi > cutoffs[:-1]) & (psi < cutoffs[1:])):
            self._accept("birth", -math.inf)
            return False
        mapping = np.arange(K)
        mapping[mapping >= t] += 1
        moved = self._relabel(s.atoms, K, K + 1, mapping)
        if moved is None:
            self._accept("birth", -math.inf)
            return False
        atoms, n_heavy = moved
        lr += n_heavy * math.log(K / (K + 1))
        e = bin_edges(K + 1)
        atoms, picked = self._move_atoms(atoms, e[t], e[t + 1], psi_t, capture)
        # captured atoms: uniform on the new bin here, uniform on (0, 1] in reverse
        lr -= len(picked) * math.log(K + 1)
        return self._propose("birth", lr, cutoffs, psi, log_mod, atoms)

    def death(self, j: int, capture: bool = False) -> bool:
        """Remove component ``j`` and give its subinterval to a neighbour."""
        s, rng, pri = self.state, self.rng, self.priors
        K = s.K
        side_p = self._side_prob(j, K)
        if j == 0:
            t = 1
        elif j == K - 1:
            t = K - 2
        else:
            t = j + 1 if rng.random() < 0.5 else j - 1
        first = min(j, t)
        lo, hi = s.cutoffs[first], s.cutoffs[first + 2]
        cutoffs = np.delete(s.cutoffs, first + 1)
        lr = (self.log_prior_k(K - 1, s.alpha) - self.log_prior_k(K, s.alpha)
              + self.log_prior_partition(K - 1) - self.log_prior_partition(K)
              - math.log(hi - lo) + math.log(K) - math.log(K - 1) - math.log(side_p))
        lr -= self._log_prior_over_proposal(s.psi[j], s.log_mod[j], s.cutoffs[j], s.cutoffs[j + 1])
        lo_t, hi_t = s.cutoffs[t], s.cutoffs[t + 1]
        psi = s.psi.copy()
        log_mod = s.log_mod.copy()
        if self.config.death_scheme == "keep":
            lr += pri.log_psi(s.psi[t], lo, hi) - pri.log_psi(s.psi[t], lo_t, hi_t)
        else:
            psi[t], log_mod[t], w = self._draw_new(lo, hi)
            lr += w - self._log_prior_over_proposal(s.psi[t], s.log_mod[t], lo_t, hi_t)
        psi = np.delete(psi, j)
        log_mod = np.delete(log_mod, j)
        atoms, picked = self._move_atoms(s.atoms, 0.0, 1.0, s.psi[j], capture)
        # a birth only captures into the new bin, so released atoms must come from bin j
        if picked and np.any(bin_index(np.array([s.atoms[i, h] for i, h in picked]), K) != j):
            self._accept("death", -math.inf)
            return False
        lr += len(picked) * math.log(K)
        mapping = np.arange(K)
        mapping[j] = -1
        mapping[j + 1 :] -= 1
        moved = self._relabel(atoms, K, K - 1, mapping)
        if moved is None:
            self._accept("death", -math.inf)
            return False
        atoms, n_heavy = moved
        lr += n_heavy * math.log(K / (K - 1))
        return self._propose("death", lr, cutoffs, psi, log_mod, atoms)

    # -- sweeps

    def sweep(self) -> None:
        s = self.state
        self.birth_death()
        for j in range(1, s.K):
            self.update_cutoff(j)
        for j in range(s.K):
            self.update_psi(j)
        for j in range(s.K):
            self.update_logmod(j)
        for _ in range(self.config.channel_moves):
            for i in range(self.n):
                self.update_stick(i)
        for _ in range(self.config.channel_moves):
            for i in range(self.n):
                self.update_atom(i)
        if self.data is not None or self._loglik_fn is not None:
            self.update_noise()
        self.update_alpha()

    def run(self, iters: int, callback: Callable | None = None) -> ChainTrace:
        tb = _TraceBuilder(iters, self.n)
        for it in range(iters):
            self.sweep()
            if self.config.validate_every and (it + 1) % self.config.validate_every == 0:
                self.state.validate()
            if not math.isfinite(self.loglik):
                raise FloatingPointError(f"non-finite log-likelihood at iteration {it}")
            tb.record(it, self.state, self.lam, self.loglik)
            if callback is not None:
                callback(it, self)
        return tb.build(acceptance=self.acceptance_rates())


def _reflect(x: float, lo: float, hi: float) -> float:
    width = hi - lo
    y = (x - lo) % (2.0 * width)
    if y > width:
        y = 2.0 * width - y
    return lo + y


def run_chain(data: FourierData, priors: PriorConfig | None = None, iters: int = 1000, seed: int = 0,
              config: SamplerConfig | None = None, chain_id: int = 0) -> ChainTrace:
    """Run one chain; deterministic in ``(data, priors, config, seed, chain_id)``."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    sampler = Sampler(data, priors=priors, config=config, rng=chain_rng(seed, chain_id))
    trace = sampler.run(iters)
    trace.seed, trace.chain_id = int(seed), int(chain_id)
    return trace



def _chain_job(args):
    data, priors, iters, seed, config, chain_id = args
    return run_chain(data, priors, iters, seed, config, chain_id)


def run_chains(data: FourierData, chains: int, iters: int, seed: int = 0, priors: PriorConfig | None = None,
               config: SamplerConfig | None = None, workers: int = 1) -> list[ChainTrace]:
    """Independent chains ``0 .. chains-1``; ``workers > 1`` runs them in processes.

    Results do not depend on ``workers``.
    """
    jobs = [(data, priors, iters, seed, config, c) for c in range(chains)]
    if workers <= 1 or chains == 1:
        return [_chain_job(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=min(workers, chains)) as pool:
        return list(pool.map(_chain_job, jobs))

# -- trace files --------------------------------------------------------------

TRACE_FORMAT = "ar2mix-trace/1"


def _trace_columns(n: int, kpad: int) -> list[str]:
    cols = ["iter", "K", "loglik", "noise_var", "alpha"]
    cols += [f"psi_{k + 1}" for k in range(kpad)] + [f"L_{k + 1}" for k in range(kpad)]
    cols += [f"w_{i + 1}_{k + 1}" for i in range(n) for k in range(kpad)]
    return cols


def _cell(x: float) -> str:
    return "" if x != x else repr(float(x))


def write_trace(trace: ChainTrace, fh, meta: dict | None = None) -> None:
    """Write ``trace`` to an open text file: a ``# {json}`` header line, then CSV.

    Rows are iterations; components beyond ``K`` are left empty.
    """
    n, kpad = trace.n_channels, trace.psi.shape[1]
    header = {
        "format": TRACE_FORMAT,
        "n_channels": n,
        "kpad": kpad,
        "iterations": trace.iterations,
        "seed": trace.seed,
        "chain_id": trace.chain_id,
        "acceptance": trace.acceptance,
        "columns": _trace_columns(n, kpad),
    }
    if meta:
        header["meta"] = meta
    fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header["columns"])
    for it in range(trace.iterations):
        row = [str(it), str(int(trace.K[it])), repr(float(trace.loglik[it])), repr(float(trace.noise_var[it])),
               repr(float(trace.alpha[it]))]
        row += [_cell(x) for x in trace.psi[it]] + [_cell(x) for x in trace.log_mod[it]]
        row += [_cell(x) for x in trace.weights[it].ravel()]
        w.writerow(row)


def read_trace(fh) -> tuple[ChainTrace, dict]:
    """Inverse of :func:`write_trace`; returns the trace and its header."""
    first = fh.readline()
    if not first.startswith("# "):
        raise ValueError("trace file lacks its '# {json}' header")
    header = json.loads(first[2:])
    if header.get("format") != TRACE_FORMAT:
        raise ValueError(f"unsupported trace format {header.get('format')!r}")
    n, kpad = int(header["n_channels"]), int(header["kpad"])
    reader = csv.reader(fh)
    cols = next(reader)
    if cols != _trace_columns(n, kpad):
        raise ValueError("trace columns do not match the header layout")
    rows = [[float(c) if c else math.nan for c in r] for r in reader if r]
    a = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    trace = ChainTrace(
        K=a[:, 1].astype(int),
        loglik=a[:, 2].copy(),
        noise_var=a[:, 3].copy(),
        alpha=a[:, 4].copy(),
        psi=a[:, 5 : 5 + kpad].copy(),
        log_mod=a[:, 5 + kpad : 5 + 2 * kpad].copy(),
        weights=a[:, 5 + 2 * kpad :].reshape(len(rows), n, kpad).copy(),
        seed=int(header["seed"]),
        chain_id=int(header["chain_id"]),
        acceptance=dict(header.get("acceptance", {})),
    )
    return trace, header
