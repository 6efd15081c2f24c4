"""Batch command line: ``ar2mix {simulate,fit,summarize,evaluate,measures}``.

Every command resolves its parameters (built-in defaults, then flags, then an
optional ``--config`` JSON file, which wins), writes the resolved document to
``config.json`` beside its outputs and commits all files by atomic rename, so a
failed run leaves no partial output.  Rerunning with ``--config <out>/config.json``
reproduces the outputs.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .errors import DataError, DomainError, NotPositiveDefinite
from .model import MixtureModel, model_from_dict, model_to_dict, pdc_latent_to_signal, spectral_matrices
from .sampler import PriorConfig, SamplerConfig, config_from_dict, read_trace, run_chains, write_trace
from .simulate import frequency_grid, gen_scenario, iae, load_scenario, periodogram_baseline
from .summary import (
    band_table,
    band_table_csv,
    cluster_components,
    filter_top,
    mean_spectral_matrix,
    node_rows,
    reports_csv,
    reports_json,
    spectral_csv,
)
from .whittle import FourierData, MultiChannelSeries, dft, read_csv, standardize

log = logging.getLogger("ar2mix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
EEG_SAMPLING_RATE = 256.0
WORKERS_ENV = "AR2MIX_WORKERS"
METHODS = ("mixture", "periodogram", "truth")

DEFAULTS = {
    "simulate": {"scenario": "ar2mix", "T": 1000, "seed": 0, "grid_points": 512},
    "fit": {"data": None, "iterations": 50000, "chains": 3, "seed": 0, "standardize": True,
            "priors": {}, "sampler": {}},
    "summarize": {"traces": None, "burnin": None, "quantile": 0.95, "criterion": "icl", "n_init": 10,
                  "cluster_seed": 0, "min_weight": 0.1, "sampling_rate": None, "task": "",
                  "grid_points": 512},
    "evaluate": {"scenario": "ar2mix", "replicates": 20, "T": 1000, "seed": 0, "iterations": 10000,
                 "chains": 3, "burnin": None, "quantile": 0.95, "grid_points": 512,
                 "smoothing_halfwidth": 0, "methods": ["mixture", "periodogram"], "priors": {},
                 "sampler": {}},
    "measures": {"model": None, "pairs": None, "grid_points": 512, "sampling_rate": None},
}


class UsageError(Exception):
    pass


# -- config resolution --------------------------------------------------------


def resolve(command: str, args: argparse.Namespace) -> dict:
    params = copy.deepcopy(DEFAULTS[command])
    for key in params:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    if getattr(args, "eeg_preset", False) and "sampling_rate" in params and params["sampling_rate"] is None:
        params["sampling_rate"] = EEG_SAMPLING_RATE
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if "params" in doc:
            if doc.get("command", command) != command:
                raise UsageError(f"config was written by '{doc['command']}', not '{command}'")
            doc = doc["params"]
        unknown = set(doc) - set(params)
        if unknown:
            raise UsageError(f"unknown {command} config keys: {sorted(unknown)}")
        params.update(doc)
    for key in ("priors", "sampler"):
        if key in params:
            cls = PriorConfig if key == "priors" else SamplerConfig
            try:
                params[key] = dataclasses.asdict(config_from_dict(cls, params[key]))
            except (TypeError, ValueError) as exc:
                raise UsageError(str(exc)) from None
    return params


def _config_doc(command: str, params: dict) -> str:
    doc = {"command": command, "params": params, "version": __version__, "backend": BACKEND}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _workers(args) -> int:
    if getattr(args, "workers", None):
        return int(args.workers)
    return int(os.environ.get(WORKERS_ENV, "1"))


def _require(params: dict, *keys: str) -> None:
    for key in keys:
        if params.get(key) is None:
            raise UsageError(f"missing required parameter '{key}'")


def _positive_int(params: dict, *keys: str) -> None:
    for key in keys:
        if int(params[key]) < 1:
            raise UsageError(f"{key} must be >= 1")


# -- output -------------------------------------------------------------------


def commit(out: Path, files: dict[str, str]) -> None:
    """Write every file to a temporary name first, then rename them all into place."""
    out.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, dst in staged:
        os.replace(tmp, dst)


def _manifest(command: str, files: dict[str, str], **extra) -> str:
    digests = {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())}
    return json.dumps(dict(extra, command=command, files=digests), indent=2, sort_keys=True) + "\n"


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _series_csv(series: MultiChannelSeries) -> str:
    return _rows_csv([f"ch{i + 1}" for i in range(series.n_channels)],
                     [[repr(float(v)) for v in row] for row in series.samples])


def _fourier(series: MultiChannelSeries, do_standardize: bool = True) -> FourierData:
    return dft(standardize(series) if do_standardize else series)


# -- simulate -----------------------------------------------------------------


def cmd_simulate(params: dict, out: Path, workers: int = 1) -> dict[str, str]:
    try:
        scenario = load_scenario(params["scenario"])
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    try:
        series, truth = gen_scenario(scenario, int(params["T"]), int(params["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    grid = frequency_grid(int(params["grid_points"]))
    files = {
        "data.csv": _series_csv(series),
        "truth.csv": spectral_csv(grid, truth(grid)),
        "config.json": _config_doc("simulate", params),
    }
    files["manifest.json"] = _manifest(
        "simulate", files, scenario=scenario.name, n_channels=scenario.n_channels, T=int(params["T"]),
        latents=[lat.label or {"ar": list(lat.ar), "ma": list(lat.ma)} for lat in scenario.latents],
        mixing=scenario.mixing.tolist(), noise_scale=scenario.noise_scale,
        channel_variances=truth.variances.tolist(),
    )
    return files


# -- fit ----------------------------------------------------------------------


def _priors(params) -> PriorConfig:
    return config_from_dict(PriorConfig, params["priors"])


def _sampler(params) -> SamplerConfig:
    return config_from_dict(SamplerConfig, params["sampler"])


def cmd_fit(params: dict, out: Path, workers: int = 1) -> dict[str, str]:
    _require(params, "data")
    _positive_int(params, "iterations", "chains")
    fd = _fourier(read_csv(params["data"]), bool(params["standardize"]))
    traces = run_chains(fd, int(params["chains"]), int(params["iterations"]), int(params["seed"]),
                        _priors(params), _sampler(params), workers)
    files = {}
    for tr in traces:
        buf = io.StringIO()
        write_trace(tr, buf, {"data": str(params["data"])})
        files[f"chain_{tr.chain_id + 1}.csv"] = buf.getvalue()
    files["config.json"] = _config_doc("fit", params)
    files["manifest.json"] = _manifest(
        "fit", files, chains=len(traces), iterations=int(params["iterations"]), n_channels=fd.n_channels,
        final_loglik=[float(tr.loglik[-1]) for tr in traces],
    )
    return files


# -- summarize ----------------------------------------------------------------


def load_traces(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"trace directory {directory} does not exist")
    paths = sorted(directory.glob("chain_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise DataError(f"no chain_*.csv trace files in {directory}")
    traces = []
    for path in paths:
        with open(path, newline="") as fh:
            try:
                traces.append(read_trace(fh)[0])
            except (ValueError, KeyError, StopIteration) as exc:
                raise DataError(f"{path}: {exc}") from None
    return traces


def default_burnin(iterations: int) -> int:
    # same proportion as 30000 of 50000
    return int(0.6 * iterations)


def model_from_reports(reports, noise_var: float, min_weight: float) -> MixtureModel:
    """Assemble cluster means into a mixture, keeping clusters above ``min_weight``.

    Rows are renormalized to unit sum of squares; a channel left without weight
    is split evenly across the kept clusters.
    """
    kept = [r for r in reports if r.max_weight >= min_weight] or list(reports)
    w = np.column_stack([r.weight_mean for r in kept]).astype(float)
    norm = np.sqrt((w**2).sum(axis=1))
    w[norm == 0] = 1.0
    w /= np.sqrt((w**2).sum(axis=1, keepdims=True))
    psi = [min(max(r.psi_mean, 1e-9), 0.5 - 1e-9) for r in kept]
    log_mod = [max(r.log_mod_mean, 1e-12) for r in kept]
    return MixtureModel.from_arrays(psi, log_mod, w, noise_var)


def summarize_traces(traces, params: dict):
    iters = min(tr.iterations for tr in traces)
    burnin = params["burnin"] if params["burnin"] is not None else default_burnin(iters)
    samples = filter_top(traces, int(burnin), float(params["quantile"]))
    reports = cluster_components(samples, params["criterion"], int(params["n_init"]), int(params["cluster_seed"]))
    grid = frequency_grid(int(params["grid_points"]))
    spectrum = mean_spectral_matrix(traces, samples.retained, grid)
    noise = float(np.mean([traces[c].noise_var[it] for c, it in samples.retained]))
    return samples, reports, grid, spectrum, noise, int(burnin)


def cmd_summarize(params: dict, out: Path, workers: int = 1) -> dict[str, str]:
    _require(params, "traces")
    traces = load_traces(params["traces"])
    samples, reports, grid, spectrum, noise, burnin = summarize_traces(traces, params)
    rate = params["sampling_rate"]
    for r in reports:
        r.trial = params["task"]
    model = model_from_reports(reports, noise, float(params["min_weight"]))
    files = {
        "clusters.csv": reports_csv(reports, rate),
        "clusters.json": reports_json(reports, rate, burnin=burnin, retained=len(samples.retained),
                                      threshold=samples.threshold, rows=len(samples)) + "\n",
        "spectrum.csv": spectral_csv(grid, spectrum),
        "nodes.csv": _rows_csv(("channel", "cluster", "weight"),
                               [(c, k, repr(w)) for c, k, w in node_rows(reports, float(params["min_weight"]))]),
        "model.json": json.dumps(model_to_dict(model), indent=2) + "\n",
        "config.json": _config_doc("summarize", params),
    }
    if rate is not None:
        files["bands.csv"] = band_table_csv(band_table(reports, float(rate), float(params["min_weight"]),
                                                       params["task"]))
    files["manifest.json"] = _manifest("summarize", files, clusters=len(reports), burnin=burnin)
    return files


# -- evaluate -----------------------------------------------------------------


def replicate_seed(seed: int, replicate: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(replicate)]).generate_state(1)[0])


def evaluate_replicate(params: dict, replicate: int) -> list[tuple[int, int, str, float]]:
    """IAE of every requested method for one simulated replicate."""
    scenario = load_scenario(params["scenario"])
    seed = replicate_seed(params["seed"], replicate)
    series, truth = gen_scenario(scenario, int(params["T"]), seed)
    grid = frequency_grid(int(params["grid_points"]))
    target = truth(grid, standardized=True)
    fd = _fourier(series)
    rows = []
    for method in params["methods"]:
        if method == "truth":
            est = target
        elif method == "periodogram":
            est = periodogram_baseline(fd, int(params["smoothing_halfwidth"]), grid)
        else:
            traces = run_chains(fd, int(params["chains"]), int(params["iterations"]), seed,
                                _priors(params), _sampler(params))
            burnin = params["burnin"] if params["burnin"] is not None else default_burnin(int(params["iterations"]))
            samples = filter_top(traces, int(burnin), float(params["quantile"]))
            est = mean_spectral_matrix(traces, samples.retained, grid)
        rows.append((replicate, seed, method, iae(est, target, grid)))
    return rows


def _evaluate_job(args):
    return evaluate_replicate(*args)


def cmd_evaluate(params: dict, out: Path, workers: int = 1) -> dict[str, str]:
    _positive_int(params, "replicates", "iterations", "chains", "grid_points")
    unknown = set(params["methods"]) - set(METHODS)
    if unknown or not params["methods"]:
        raise UsageError(f"methods must be drawn from {METHODS}")
    try:
        load_scenario(params["scenario"])
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    jobs = [(params, r) for r in range(int(params["replicates"]))]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_job, jobs))
    else:
        results = [_evaluate_job(j) for j in jobs]
    rows = [row for rep in results for row in rep]
    medians = {m: float(np.median([r[3] for r in rows if r[2] == m])) for m in params["methods"]}
    files = {
        "iae.csv": _rows_csv(("replicate", "seed", "method", "iae"), [(a, b, c, repr(d)) for a, b, c, d in rows]),
        "config.json": _config_doc("evaluate", params),
    }
    files["manifest.json"] = _manifest("evaluate", files, median_iae=medians)
    return files


# -- measures -----------------------------------------------------------------


def parse_pairs(text: str | None, n: int) -> list[tuple[int, int]]:
    """``"1:2,1:3"`` (1-based) to zero-based pairs; ``None`` means every ``m <= l``."""
    if text is None:
        return [(m, l) for m in range(n) for l in range(m, n)]
    pairs = []
    for item in str(text).split(","):
        try:
            a, b = (int(x) for x in item.replace("-", ":").split(":"))
        except ValueError:
            raise UsageError(f"bad channel pair {item!r}; use m:l") from None
        if not (1 <= a <= n and 1 <= b <= n):
            raise UsageError(f"channel pair {item!r} out of range 1..{n}")
        pairs.append((a - 1, b - 1))
    return pairs


def cmd_measures(params: dict, out: Path, workers: int = 1) -> dict[str, str]:
    _require(params, "model")
    try:
        model = model_from_dict(json.loads(Path(params["model"]).read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"cannot load model {params['model']}: {exc}") from None
    n, K = model.n_channels, model.n_kernels
    pairs = parse_pairs(params["pairs"], n)
    grid = frequency_grid(int(params["grid_points"]))
    rate = params["sampling_rate"]
    s = spectral_matrices(model, grid)
    diag = np.einsum("mii->mi", s)

    def lead(m, f):
        return [repr(float(f))] + ([repr(float(f) * rate)] if rate is not None else [])

    freq_cols = ["freq"] + (["freq_hz"] if rate is not None else [])
    coh = []
    for a, b in pairs:
        vals = np.ones(len(grid)) if a == b else np.minimum(1.0, s[:, a, b] ** 2 / (diag[:, a] * diag[:, b]))
        coh += [lead(m, f) + [a + 1, b + 1, repr(float(v))] for m, (f, v) in enumerate(zip(grid, vals))]
    pdc = []
    for m, f in enumerate(grid):
        for j in range(K):
            for i in range(n):
                pdc.append(lead(m, f) + [j + 1, i + 1, repr(pdc_latent_to_signal(model, i, j, f))])
    files = {
        "coherence.csv": _rows_csv(freq_cols + ["m", "l", "coherence"], coh),
        "pdc_latent_signal.csv": _rows_csv(freq_cols + ["latent", "channel", "pdc"], pdc),
        # signal-to-signal PDC is frequency independent: identity
        "pdc_signal_signal.csv": _rows_csv(("from_channel", "to_channel", "pdc"),
                                           [(l + 1, m + 1, 1.0 if l == m else 0.0) for l in range(n) for m in range(n)]),
        "config.json": _config_doc("measures", params),
    }
    files["manifest.json"] = _manifest("measures", files, n_channels=n, n_kernels=K)
    return files


# -- entry point --------------------------------------------------------------

COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "measures": cmd_measures,
}


def _methods(text: str) -> list[str]:
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ar2mix", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} core)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workers=False):
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--config", help="JSON config; its values override flags")
        if workers:
            sp.add_argument("--workers", type=int, help=f"worker processes (default ${WORKERS_ENV} or 1)")

    sp = sub.add_parser("simulate", help="generate a scenario dataset and its true spectrum")
    common(sp)
    sp.add_argument("--scenario", help="'ar2mix', 'misspec' or a scenario JSON file")
    sp.add_argument("--T", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--grid-points", dest="grid_points", type=int)

    sp = sub.add_parser("fit", help="run MCMC chains on a CSV series")
    common(sp, workers=True)
    sp.add_argument("--data", help="CSV, rows = time points, columns = channels")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--chains", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--no-standardize", dest="standardize", action="store_const", const=False)

    sp = sub.add_parser("summarize", help="filter, cluster and tabulate chain traces")
    common(sp)
    sp.add_argument("--traces", help="directory written by 'fit'")
    sp.add_argument("--burnin", type=int)
    sp.add_argument("--quantile", type=float)
    sp.add_argument("--criterion", choices=("icl", "bic"))
    sp.add_argument("--n-init", dest="n_init", type=int)
    sp.add_argument("--cluster-seed", dest="cluster_seed", type=int)
    sp.add_argument("--min-weight", dest="min_weight", type=float)
    sp.add_argument("--task", help="label for the band table's Task column")
    sp.add_argument("--grid-points", dest="grid_points", type=int)
    rate = sp.add_mutually_exclusive_group()
    rate.add_argument("--sampling-rate", dest="sampling_rate", type=float)
    rate.add_argument("--eeg-preset", action="store_true", help=f"sampling rate {EEG_SAMPLING_RATE:g} Hz")

    sp = sub.add_parser("evaluate", help="IAE study against the periodogram baseline")
    common(sp, workers=True)
    sp.add_argument("--scenario")
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--T", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--chains", type=int)
    sp.add_argument("--burnin", type=int)
    sp.add_argument("--quantile", type=float)
    sp.add_argument("--grid-points", dest="grid_points", type=int)
    sp.add_argument("--smoothing-halfwidth", dest="smoothing_halfwidth", type=int)
    sp.add_argument("--methods", type=_methods, help=f"comma list from {','.join(METHODS)}")

    sp = sub.add_parser("measures", help="coherence and PDC grids from a fitted model")
    common(sp)
    sp.add_argument("--model", help="model.json written by 'summarize'")
    sp.add_argument("--pairs", help="channel pairs for coherence, e.g. 1:2,1:3 (default all)")
    sp.add_argument("--grid-points", dest="grid_points", type=int)
    rate = sp.add_mutually_exclusive_group()
    rate.add_argument("--sampling-rate", dest="sampling_rate", type=float)
    rate.add_argument("--eeg-preset", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        params = resolve(args.command, args)
        files = COMMANDS[args.command](params, args.out, _workers(args))
        commit(args.out, files)
    except UsageError as exc:
        print(f"ar2mix {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotPositiveDefinite, FloatingPointError, ArithmeticError) as exc:
        print(f"ar2mix {args.command}: numeric failure: {exc!r}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DomainError, OSError, ValueError) as exc:
        print(f"ar2mix {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    log.info("wrote %d files to %s", len(files), args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
