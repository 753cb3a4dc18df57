"""Monte-Carlo experiment runner: seeded trials, aggregation, result files.

A run executes ``trials`` independent transmissions, each seeded by
(master seed, trial index) so results do not depend on worker count or
scheduling.  Per-iteration statistics are combined with a midpoint-split
streaming merge (Chan's parallel update of count/mean/M2), which makes
aggregation associative in practice: running two halves separately and
merging reproduces the single run bit for bit.

Detectors that converge early repeat their final value on the remaining
iterations so per-iteration means stay unbiased; the number of trials still
actively iterating is tracked alongside.  The density-evolution prediction
for the experiment's parameters is attached to every aggregate.
"""
from __future__ import annotations

import csv
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .channel import SpreadingSystem, SystemConfig, TrialSeed, sample_system
from .density_evolution import DEConfig, ber_theory, trajectory
from .detectors import DETECTOR_KINDS, run_detector
from .exceptions import ConfigurationError, DegeneracyError

# Fraction of errored trials above which a run is considered failed.
MAX_ERROR_FRACTION = 1e-3


class ExperimentError(RuntimeError):
    """Too many trials failed numerically."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully seeded, serializable description of a Monte-Carlo run."""

    system: SystemConfig
    detectors: tuple[str, ...] = ("improved",)
    max_iters: int = 30
    conv_threshold: float = 1e-8
    trials: int = 1000
    master_seed: int = 0
    out: str | None = None
    formats: tuple[str, ...] = ("csv",)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.conv_threshold <= 0:
            raise ConfigurationError("conv_threshold must be > 0")
        if not self.detectors:
            raise ConfigurationError("at least one detector kind is required")
        for kind in self.detectors:
            if kind not in DETECTOR_KINDS:
                raise ConfigurationError(
                    f"unknown detector kind {kind!r}; choose from {DETECTOR_KINDS}"
                )
        for fmt in self.formats:
            if fmt not in ("csv", "json"):
                raise ConfigurationError(f"unknown format {fmt!r}; choose csv or json")

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "detectors": list(self.detectors),
            "max_iters": self.max_iters,
            "conv_threshold": self.conv_threshold,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "out": self.out,
            "formats": list(self.formats),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {
            "system",
            "detectors",
            "max_iters",
            "conv_threshold",
            "trials",
            "master_seed",
            "out",
            "formats",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown spec keys: {sorted(unknown)}")
        if "system" not in d:
            raise ConfigurationError("spec needs a 'system' section")
        return cls(
            system=SystemConfig.from_dict(d["system"]),
            detectors=tuple(d.get("detectors", ("improved",))),
            max_iters=int(d.get("max_iters", 30)),
            conv_threshold=float(d.get("conv_threshold", 1e-8)),
            trials=int(d.get("trials", 1000)),
            master_seed=int(d.get("master_seed", 0)),
            out=d.get("out"),
            formats=tuple(d.get("formats", ("csv",))),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


@dataclass
class TrialBatch:
    """Raw per-trial traces for a contiguous range of trial indices.

    Arrays are padded to max_iters by repeating each trial's final value.
    """

    trial_indices: np.ndarray  # (n,) successful trials, ascending
    ber: dict[str, np.ndarray]  # kind -> (n, max_iters)
    d: dict[str, np.ndarray]  # kind -> (n, max_iters)
    iterations: dict[str, np.ndarray]  # kind -> (n,)
    converged: dict[str, np.ndarray]  # kind -> (n,) bool
    errors: list[tuple[int, str]]


def _pad_trace(trace: np.ndarray, length: int) -> np.ndarray:
    out = np.empty(length)
    k = len(trace)
    out[:k] = trace
    out[k:] = trace[-1]
    return out


def run_trials(spec: ExperimentSpec, trial_indices: Iterable[int]) -> TrialBatch:
    """Execute the given trials sequentially; each is seeded independently."""
    indices = sorted(int(i) for i in trial_indices)
    kinds = spec.detectors
    ber = {k: [] for k in kinds}
    d = {k: [] for k in kinds}
    iters = {k: [] for k in kinds}
    conv = {k: [] for k in kinds}
    ok_indices: list[int] = []
    errors: list[tuple[int, str]] = []
    for idx in indices:
        sys = sample_system(spec.system, TrialSeed(spec.master_seed, idx))
        try:
            per_kind = {
                kind: run_detector(sys, kind, spec.max_iters, spec.conv_threshold)
                for kind in kinds
            }
        except DegeneracyError as exc:
            errors.append((idx, str(exc)))
            continue
        ok_indices.append(idx)
        for kind, outp in per_kind.items():
            ber[kind].append(_pad_trace(outp.ber_trace, spec.max_iters))
            d[kind].append(_pad_trace(outp.d_trace, spec.max_iters))
            iters[kind].append(outp.iterations_run)
            conv[kind].append(outp.converged)
    n = len(ok_indices)
    return TrialBatch(
        trial_indices=np.asarray(ok_indices, dtype=np.int64),
        ber={k: np.asarray(v).reshape(n, spec.max_iters) for k, v in ber.items()},
        d={k: np.asarray(v).reshape(n, spec.max_iters) for k, v in d.items()},
        iterations={k: np.asarray(v, dtype=np.int64) for k, v in iters.items()},
        converged={k: np.asarray(v, dtype=bool) for k, v in conv.items()},
        errors=errors,
    )


def _merge_moments(a, b):
    na, ma, m2a = a
    nb, mb, m2b = b
    n = na + nb
    delta = mb - ma
    mean = ma + delta * (nb / n)
    m2 = m2a + m2b + delta * delta * (na * nb / n)
    return n, mean, m2


def _tree_moments(rows: np.ndarray, lo: int, hi: int):
    if hi - lo == 1:
        row = rows[lo]
        return 1, row.astype(np.float64), np.zeros_like(row, dtype=np.float64)
    mid = (lo + hi) // 2
    return _merge_moments(_tree_moments(rows, lo, mid), _tree_moments(rows, mid, hi))


def streaming_mean_stderr(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Columnwise mean and standard error by midpoint-split moment merging.

    The merge tree is a deterministic function of the row count, so
    aggregating two halves and combining them matches the full pass exactly.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    n = rows.shape[0]
    if n == 0:
        raise ConfigurationError("cannot aggregate an empty batch")
    count, mean, m2 = _tree_moments(rows, 0, n)
    if count > 1:
        stderr = np.sqrt(m2 / (count * (count - 1)))
    else:
        stderr = np.zeros_like(mean)
    return mean, stderr


@dataclass
class DetectorAggregate:
    kind: str
    ber_mean: np.ndarray  # (max_iters,)
    ber_stderr: np.ndarray  # (max_iters,)
    d_mean: np.ndarray  # (max_iters,)
    active_trials: np.ndarray  # (max_iters,) trials still iterating
    converged_fraction: float
    mean_iterations: float


@dataclass
class AggregateResult:
    spec: ExperimentSpec
    spec_hash: str
    detectors: dict[str, DetectorAggregate]
    de_ber: np.ndarray  # (max_iters,) optimal-Upsilon prediction, t = 1..max_iters
    trials: int
    errored_trials: int
    wall_seconds: float
    workers: int


def de_prediction(spec: ExperimentSpec, quadrature_order: int | None = None) -> np.ndarray:
    """Per-iteration predicted BER for the experiment's channel parameters."""
    cfg = spec.system
    kwargs = {} if quadrature_order is None else {"quadrature_order": quadrature_order}
    de_cfg = DEConfig(
        beta=cfg.load,
        sigma0_sq=cfg.true_noise_variance,
        sigma_sq=(
            cfg.true_noise_variance
            if cfg.assumed_noise_variance is None
            else cfg.assumed_noise_variance
        ),
        mode="optimal_upsilon",
        **kwargs,
    )
    states = trajectory(de_cfg, spec.max_iters)
    return np.array([ber_theory(s) for s in states])


def aggregate_batches(spec: ExperimentSpec, batches: Sequence[TrialBatch]) -> AggregateResult:
    """Combine raw trial batches (in trial order) into per-iteration stats."""
    if not batches:
        raise ConfigurationError("no batches to aggregate")
    errors = [e for b in batches for e in b.errors]
    n_err = len(errors)
    if n_err / spec.trials > MAX_ERROR_FRACTION:
        raise ExperimentError(
            f"{n_err}/{spec.trials} trials failed numerically; first: {errors[0]}"
        )
    detectors: dict[str, DetectorAggregate] = {}
    for kind in spec.detectors:
        ber = np.concatenate([b.ber[kind] for b in batches], axis=0)
        d = np.concatenate([b.d[kind] for b in batches], axis=0)
        iters = np.concatenate([b.iterations[kind] for b in batches])
        conv = np.concatenate([b.converged[kind] for b in batches])
        ber_mean, ber_stderr = streaming_mean_stderr(ber)
        d_mean, _ = streaming_mean_stderr(d)
        active = (iters[:, None] > np.arange(spec.max_iters)[None, :]).sum(axis=0)
        detectors[kind] = DetectorAggregate(
            kind=kind,
            ber_mean=ber_mean,
            ber_stderr=ber_stderr,
            d_mean=d_mean,
            active_trials=active.astype(np.int64),
            converged_fraction=float(np.mean(conv)),
            mean_iterations=float(np.mean(iters)),
        )
    return AggregateResult(
        spec=spec,
        spec_hash=spec.hash(),
        detectors=detectors,
        de_ber=de_prediction(spec),
        trials=int(sum(len(b.trial_indices) for b in batches)),
        errored_trials=n_err,
        wall_seconds=0.0,
        workers=1,
    )


def _worker(args: tuple[dict, list[int]]) -> TrialBatch:
    spec_dict, indices = args
    return run_trials(ExperimentSpec.from_dict(spec_dict), indices)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> AggregateResult:
    """Run all trials (optionally in a process pool) and aggregate.

    Output is a deterministic function of (spec, master_seed): trials are
    independently seeded and merged in index order, so the worker count
    cannot change any number.
    """
    if workers < 1:
        raise ConfigurationError("workers must be >= 1")
    t0 = time.perf_counter()
    all_indices = list(range(spec.trials))
    if workers == 1 or spec.trials == 1:
        batches = [run_trials(spec, all_indices)]
    else:
        chunks = [list(c) for c in np.array_split(all_indices, min(workers, spec.trials))]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_worker, [(spec.to_dict(), c) for c in chunks]))
    result = aggregate_batches(spec, batches)
    result.wall_seconds = time.perf_counter() - t0
    result.workers = workers
    return result


SWEEP_AXES = ("beta", "sigma0_sq", "sigma_sq", "N")


def _spec_for_value(base: ExperimentSpec, axis: str, value: float, index: int) -> ExperimentSpec:
    cfg = base.system
    if axis == "beta":
        system = replace(cfg, num_users=max(1, round(value * cfg.spreading_factor)))
    elif axis == "sigma0_sq":
        system = replace(cfg, true_noise_variance=float(value))
    elif axis == "sigma_sq":
        system = replace(cfg, assumed_noise_variance=float(value))
    elif axis == "N":
        n = int(value)
        system = replace(
            cfg, spreading_factor=n, num_users=max(1, round(cfg.load * n))
        )
    else:
        raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    # The assumed-noise axis does not alter the sampled systems, so the master
    # seed is reused there: detectors are then compared on identical data and
    # noise-blind results are bit-identical across the axis.  Axes that change
    # the system derive an independent sub-seed per value.
    if axis == "sigma_sq":
        seed = base.master_seed
    else:
        seq = np.random.SeedSequence(entropy=base.master_seed, spawn_key=(8000 + index,))
        seed = int(seq.generate_state(1, np.uint64)[0])
    return replace(base, system=system, master_seed=seed)


def sweep(
    base: ExperimentSpec, axis: str, values: Sequence[float], workers: int = 1
) -> list[tuple[float, AggregateResult]]:
    """run_experiment once per axis value."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if len(values) == 0:
        raise ConfigurationError("sweep needs at least one value")
    results = []
    for i, value in enumerate(values):
        spec_i = _spec_for_value(base, axis, value, i)
        results.append((float(value), run_experiment(spec_i, workers=workers)))
    return results


def _fmt(x: float) -> str:
    return f"{x:.17g}"


COMPARE_HEADER = ["iteration", "detector", "ber_mean", "ber_stderr", "d_mean", "de_ber"]


def write_compare_csv(result: AggregateResult, path: str) -> None:
    """The detector-vs-theory overlay table (fixed schema)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_HEADER)
        for kind, agg in result.detectors.items():
            for t in range(result.spec.max_iters):
                writer.writerow(
                    [
                        t + 1,
                        kind,
                        _fmt(agg.ber_mean[t]),
                        _fmt(agg.ber_stderr[t]),
                        _fmt(agg.d_mean[t]),
                        _fmt(result.de_ber[t]),
                    ]
                )


def write_result_csv(result: AggregateResult, path: str) -> None:
    """Compare schema plus the per-iteration active-trial count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_HEADER[:5] + ["active_trials", "de_ber"])
        for kind, agg in result.detectors.items():
            for t in range(result.spec.max_iters):
                writer.writerow(
                    [
                        t + 1,
                        kind,
                        _fmt(agg.ber_mean[t]),
                        _fmt(agg.ber_stderr[t]),
                        _fmt(agg.d_mean[t]),
                        int(agg.active_trials[t]),
                        _fmt(result.de_ber[t]),
                    ]
                )


def write_sweep_csv(axis: str, results: Sequence[tuple[float, AggregateResult]], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([axis, "master_seed"] + COMPARE_HEADER)
        for value, result in results:
            for kind, agg in result.detectors.items():
                for t in range(result.spec.max_iters):
                    writer.writerow(
                        [
                            _fmt(value),
                            result.spec.master_seed,
                            t + 1,
                            kind,
                            _fmt(agg.ber_mean[t]),
                            _fmt(agg.ber_stderr[t]),
                            _fmt(agg.d_mean[t]),
                            _fmt(result.de_ber[t]),
                        ]
                    )


def manifest_dict(result: AggregateResult) -> dict:
    return {
        "spec": result.spec.to_dict(),
        "spec_hash": result.spec_hash,
        "master_seed": result.spec.master_seed,
        "trials": result.trials,
        "errored_trials": result.errored_trials,
        "iterations": list(range(1, result.spec.max_iters + 1)),
        "detectors": {
            kind: {
                "ber_mean": agg.ber_mean.tolist(),
                "ber_stderr": agg.ber_stderr.tolist(),
                "d_mean": agg.d_mean.tolist(),
                "active_trials": agg.active_trials.tolist(),
                "converged_fraction": agg.converged_fraction,
                "mean_iterations": agg.mean_iterations,
            }
            for kind, agg in result.detectors.items()
        },
        "de_ber": result.de_ber.tolist(),
        "runtime": {
            "wall_seconds": result.wall_seconds,
            "workers": result.workers,
            "package_version": __version__,
        },
    }


def write_manifest_json(result: AggregateResult, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(manifest_dict(result), fh, indent=2)
        fh.write("\n")


def emit(result: AggregateResult, formats: Sequence[str], out_base: str) -> list[str]:
    """Write result files next to ``out_base`` (extension per format)."""
    written = []
    for fmt in formats:
        if fmt == "csv":
            path = out_base + ".csv"
            write_result_csv(result, path)
        elif fmt == "json":
            path = out_base + ".json"
            write_manifest_json(result, path)
        else:
            raise ConfigurationError(f"unknown format {fmt!r}")
        written.append(path)
    return written
