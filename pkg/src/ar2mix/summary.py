"""Posterior post-processing: top-likelihood filtering, clustering and band tables.

The retained draws are exploded into one row per component occurrence,
``(psi, L, lambda_1, ..., lambda_n)``, and clustered with a diagonal Gaussian
mixture.  Cluster summaries feed the frequency-band table.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.mixture import GaussianMixture

from .errors import DataError
from .kernel import density_grid
from .sampler import ChainTrace

__all__ = [
    "StackedSamples",
    "ClusterReport",
    "BandRow",
    "EmptySelection",
    "BANDS",
    "BAND_HEADER",
    "filter_top",
    "cluster_components",
    "mean_spectral_matrix",
    "band_of",
    "band_table",
    "band_table_csv",
    "reports_csv",
    "reports_json",
    "spectral_csv",
    "node_rows",
]

BANDS = (("Delta", 0.0, 4.0), ("Theta", 4.0, 8.0), ("Alpha", 8.0, 12.0), ("Beta", 12.0, 30.0), ("Gamma", 30.0, 60.0))
OUT_OF_BAND = "Other"
BAND_HEADER = ("Band", "Task", "psi_bar_Hz", "L_bar", "lambda_bar", "n_trials")
VAR_FLOOR = 1e-8


class EmptySelection(DataError):
    """No draw survived the likelihood filter."""


@dataclass(frozen=True)
class StackedSamples:
    """One row per component occurrence in a retained iteration.

    ``rows[:, 0]`` is psi, ``rows[:, 1]`` is L and the remaining ``n`` columns
    are that component's channel weights.  ``retained`` lists the kept
    ``(chain, iteration)`` pairs; ``origin`` maps each row back to its index
    in ``retained``.
    """

    rows: np.ndarray
    origin: np.ndarray
    retained: tuple[tuple[int, int], ...]
    k_values: np.ndarray
    threshold: float

    @property
    def n_channels(self) -> int:
        return self.rows.shape[1] - 2

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass
class ClusterReport:
    label: int
    count: int
    psi_mean: float
    psi_sd: float
    log_mod_mean: float
    log_mod_sd: float
    weight_mean: np.ndarray
    weight_sd: np.ndarray
    trial: str = ""

    @property
    def max_weight(self) -> float:
        return float(np.max(self.weight_mean))

    def psi_hz(self, sampling_rate: float) -> float:
        return self.psi_mean * sampling_rate

    def band(self, sampling_rate: float) -> str:
        return band_of(self.psi_hz(sampling_rate))

    def to_dict(self, sampling_rate: float | None = None) -> dict:
        doc = {
            "cluster": self.label,
            "count": self.count,
            "psi_mean": self.psi_mean,
            "psi_sd": self.psi_sd,
            "log_mod_mean": self.log_mod_mean,
            "log_mod_sd": self.log_mod_sd,
            "weight_mean": [float(x) for x in self.weight_mean],
            "weight_sd": [float(x) for x in self.weight_sd],
        }
        if sampling_rate is not None:
            doc["psi_mean_hz"] = self.psi_hz(sampling_rate)
            doc["psi_sd_hz"] = self.psi_sd * sampling_rate
            doc["band"] = self.band(sampling_rate)
        return doc


@dataclass(frozen=True)
class BandRow:
    band: str
    task: str
    psi_bar_hz: float
    log_mod_bar: float
    weight_bar: float
    n_trials: int

    def cells(self) -> tuple[str, ...]:
        return (self.band, self.task, f"{self.psi_bar_hz:.3g}", f"{self.log_mod_bar:.2g}",
                f"{self.weight_bar:.2f}", str(self.n_trials))


# -- filtering ----------------------------------------------------------------


def filter_top(traces: Sequence[ChainTrace], burnin: int, quantile: float = 0.95) -> StackedSamples:
    """Keep post-burn-in draws whose loglik is strictly above the pooled quantile."""
    if not traces:
        raise DataError("no traces given")
    if not 0.0 <= quantile < 1.0:
        raise ValueError(f"quantile must be in [0, 1), got {quantile}")
    for tr in traces:
        if not 0 <= burnin < tr.iterations:
            raise DataError(f"burn-in {burnin} must be below the chain length {tr.iterations}")
    pooled = np.concatenate([tr.loglik[burnin:] for tr in traces])
    threshold = float(np.quantile(pooled, quantile))
    retained, rows, origin, ks = [], [], [], []
    for c, tr in enumerate(traces):
        for it in np.flatnonzero(tr.loglik[burnin:] > threshold) + burnin:
            psi, lm, w = tr.components(int(it))
            origin.extend([len(retained)] * len(psi))
            retained.append((c, int(it)))
            ks.append(len(psi))
            rows.append(np.column_stack([psi, lm, w.T]))
    if not retained:
        raise EmptySelection(f"no draw has loglik above the {quantile:.3g} quantile ({threshold:.6g})")
    return StackedSamples(np.vstack(rows), np.asarray(origin), tuple(retained), np.asarray(ks), threshold)


# -- clustering ---------------------------------------------------------------


def _icl(gm: GaussianMixture, x: np.ndarray) -> float:
    # BIC plus twice the entropy of the soft assignment (lower is better)
    resp = gm.predict_proba(x)
    entropy = -np.sum(resp * np.log(np.clip(resp, 1e-300, None)))
    return gm.bic(x) + 2.0 * entropy


def cluster_components(samples: StackedSamples, criterion: str = "icl", n_init: int = 10,
                       seed: int = 0, k_range: tuple[int, int] | None = None) -> list[ClusterReport]:
    """Diagonal Gaussian-mixture clustering of the stacked rows, ordered by mean psi.

    The mixture is fit on ``(psi, log L, lambda)``: ``L`` spans several decades
    (sharp peaks near ``1e-4``, idle components far above 1) and would otherwise
    dominate the fit.  Reported moments are on the natural scale.
    """
    rows = np.asarray(samples.rows, dtype=float)
    x = rows.copy()
    x[:, 1] = np.log(x[:, 1])
    if x.shape[0] < 2:
        raise DataError("clustering needs at least two rows")
    if criterion not in ("icl", "bic"):
        raise ValueError(f"criterion must be 'icl' or 'bic', got {criterion!r}")
    if k_range is None:
        k_range = (int(samples.k_values.min()), int(samples.k_values.max()))
    n_distinct = len(np.unique(x, axis=0))
    lo = max(1, min(k_range[0], n_distinct))
    hi = max(lo, min(k_range[1], n_distinct))
    labels = np.zeros(len(x), dtype=int)
    if n_distinct > 1:
        best = None
        for k in range(lo, hi + 1):
            gm = GaussianMixture(k, covariance_type="diag", n_init=n_init, reg_covar=VAR_FLOOR,
                                 random_state=seed).fit(x)
            score = _icl(gm, x) if criterion == "icl" else gm.bic(x)
            if best is None or score < best[0]:
                best = (score, gm)
        labels = best[1].predict(x)
    reports = []
    for lab in np.unique(labels):
        part = rows[labels == lab]
        mean, sd = part.mean(axis=0), part.std(axis=0)
        reports.append(ClusterReport(0, len(part), float(mean[0]), float(sd[0]), float(mean[1]),
                                     float(sd[1]), mean[2:], sd[2:]))
    reports.sort(key=lambda r: r.psi_mean)
    for i, r in enumerate(reports):
        r.label = i
    return reports


# -- spectral estimate --------------------------------------------------------


def mean_spectral_matrix(traces: Sequence[ChainTrace], retained, freqs) -> np.ndarray:
    """Pointwise mean of ``Lambda diag(g) Lambda^T + noise I`` over retained draws.

    ``retained`` holds ``(chain, iteration)`` pairs, e.g. ``StackedSamples.retained``.
    Returns a real symmetric array of shape ``(len(freqs), n, n)``.
    """
    retained = list(retained)
    if not retained:
        raise EmptySelection("no retained draws")
    freqs = np.asarray(freqs, dtype=float)
    n = traces[0].n_channels
    total = np.zeros((len(freqs), n, n))
    for c, it in retained:
        tr = traces[c]
        psi, lm, w = tr.components(it)
        g = density_grid(psi, lm, freqs)
        total += np.einsum("ik,km,jk->mij", w, g, w)
        total[:, np.arange(n), np.arange(n)] += tr.noise_var[it]
    return total / len(retained)


# -- band tables --------------------------------------------------------------


def band_of(hz: float) -> str:
    """Band name for a frequency in Hz; intervals are half-open ``[lo, hi)``."""
    for name, lo, hi in BANDS:
        if lo <= hz < hi:
            return name
    return OUT_OF_BAND


def band_table(reports: Sequence[ClusterReport], sampling_rate: float, min_weight: float = 0.1,
               task: str | None = None) -> list[BandRow]:
    """Group clusters by band (and task) after dropping those below ``min_weight``.

    Each row averages psi (Hz), L and the leading channel weight over its
    clusters; ``n_trials`` counts distinct ``ClusterReport.trial`` values.
    """
    if not sampling_rate > 0:
        raise ValueError(f"sampling_rate must be positive, got {sampling_rate}")
    groups: dict[tuple[str, str], list[ClusterReport]] = {}
    for r in reports:
        if r.max_weight < min_weight:
            continue
        key = (r.band(sampling_rate), task if task is not None else r.trial)
        groups.setdefault(key, []).append(r)
    order = {name: i for i, (name, _, _) in enumerate(BANDS)}
    rows = []
    for (band, tsk), members in sorted(groups.items(), key=lambda kv: (order.get(kv[0][0], len(order)), kv[0][1])):
        rows.append(BandRow(
            band, tsk,
            float(np.mean([m.psi_hz(sampling_rate) for m in members])),
            float(np.mean([m.log_mod_mean for m in members])),
            float(np.mean([m.max_weight for m in members])),
            len({m.trial for m in members}),
        ))
    return rows


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def band_table_csv(rows: Sequence[BandRow]) -> str:
    return _csv(BAND_HEADER, [r.cells() for r in rows])


def reports_csv(reports: Sequence[ClusterReport], sampling_rate: float | None = None) -> str:
    n = len(reports[0].weight_mean) if reports else 0
    header = ["cluster", "count", "psi_mean", "psi_sd", "log_mod_mean", "log_mod_sd"]
    if sampling_rate is not None:
        header += ["psi_mean_hz", "psi_sd_hz", "band"]
    header += [f"w{i + 1}_mean" for i in range(n)] + [f"w{i + 1}_sd" for i in range(n)]
    rows = []
    for r in reports:
        row = [r.label, r.count, repr(r.psi_mean), repr(r.psi_sd), repr(r.log_mod_mean), repr(r.log_mod_sd)]
        if sampling_rate is not None:
            row += [repr(r.psi_hz(sampling_rate)), repr(r.psi_sd * sampling_rate), r.band(sampling_rate)]
        row += [repr(float(v)) for v in r.weight_mean] + [repr(float(v)) for v in r.weight_sd]
        rows.append(row)
    return _csv(header, rows)


def reports_json(reports: Sequence[ClusterReport], sampling_rate: float | None = None, **extra) -> str:
    doc = dict(extra, clusters=[r.to_dict(sampling_rate) for r in reports])
    return json.dumps(doc, indent=2)


def spectral_csv(freqs, spectra: np.ndarray) -> str:
    """Long format ``freq,i,j,re,im`` over the lower triangle (1-based channels)."""
    spectra = np.asarray(spectra)
    n = spectra.shape[1]
    rows = []
    for m, f in enumerate(np.asarray(freqs, dtype=float)):
        for i in range(n):
            for j in range(i + 1):
                z = complex(spectra[m, i, j])
                rows.append((repr(float(f)), i + 1, j + 1, repr(z.real), repr(z.imag)))
    return _csv(("freq", "i", "j", "re", "im"), rows)


def node_rows(reports: Sequence[ClusterReport], min_weight: float = 0.0) -> list[tuple[int, int, float]]:
    """``(channel, cluster, weight)`` edges for circular-layout plots."""
    out = []
    for r in reports:
        if r.max_weight < min_weight:
            continue
        for i, w in enumerate(r.weight_mean):
            out.append((i + 1, r.label, float(w)))
    return out
