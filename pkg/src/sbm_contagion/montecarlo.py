"""Repeated simulation of finite networks and comparison with the limit theory.

Each trial is identified by ``(n, trial)`` and gets its own 64-bit seed
derived from the experiment's base seed (see :func:`child_seed`). A trial
realizes a population with per-vertex shocks, samples a graph and runs the
cascade, so results do not depend on how trials are scheduled.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analytic
from .cascade import run_cascade
from .graph import DETERMINISTIC, realize_population, sample_graph
from .model import ModelSpec, apply_shock

THREADS_ENV = "CONTAGION_THREADS"


def child_seed(base: int, n: int, trial: int) -> int:
    """64-bit seed of trial ``trial`` at size ``n``.

    Mixes ``(base, n, trial)`` through NumPy's ``SeedSequence`` hash, so any
    change in one of the three gives an unrelated stream.
    """
    return int(np.random.SeedSequence([int(base), int(n), int(trial)]).generate_state(1, np.uint64)[0])


def worker_count(default: int = 1) -> int:
    """Worker processes requested via ``CONTAGION_THREADS`` (``0`` = one per CPU)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return default
    value = int(raw)
    if value < 0:
        raise ValueError(f"{THREADS_ENV} must be non-negative")
    return value if value > 0 else (os.cpu_count() or 1)


@dataclass
class ExperimentConfig:
    spec: ModelSpec
    n_grid: Sequence[int]
    trials: int = 100
    seed: int = 0
    mode: str = DETERMINISTIC
    threshold: float = 0.03  # fractions below this count as a resilient outcome
    workers: int | None = None  # None: read CONTAGION_THREADS, default 1

    def __post_init__(self):
        self.n_grid = [int(n) for n in self.n_grid]
        if not self.n_grid or min(self.n_grid) < 1:
            raise ValueError("network sizes must be positive")
        if self.trials < 1:
            raise ValueError("trials must be positive")


@dataclass(frozen=True)
class TrialRecord:
    n: int
    trial: int
    seed: int
    fraction: float
    per_type: tuple
    importance_mass: float
    rounds: int
    ms: float


class TrialFailed(RuntimeError):
    def __init__(self, n: int, trial: int, seed: int, cause: BaseException):
        super().__init__(f"trial n={n} trial={trial} seed={seed} failed: {cause!r}")
        self.n, self.trial, self.seed = n, trial, seed


def run_one(spec: ModelSpec, n: int, trial: int, seed: int, mode: str = DETERMINISTIC) -> TrialRecord:
    start = time.perf_counter()
    try:
        pop = realize_population(spec, n, mode, seed)
        res = run_cascade(sample_graph(pop, spec, seed), spec.T)
    except Exception as exc:  # surface the offending seed
        raise TrialFailed(n, trial, seed, exc) from exc
    ms = (time.perf_counter() - start) * 1e3
    return TrialRecord(
        n=n,
        trial=trial,
        seed=seed,
        fraction=res.fraction,
        per_type=tuple(float(x) for x in res.per_type_fraction),
        importance_mass=res.importance_mass,
        rounds=res.rounds,
        ms=ms,
    )


def _run_task(args) -> TrialRecord:
    return run_one(*args)


@dataclass
class SizeSummary:
    n: int
    trials: int
    mean: float
    std: float
    min: float
    max: float
    below_threshold: float  # share of trials with a resilient outcome
    mean_above_threshold: float | None  # mean over the remaining trials

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrialsResult:
    records: list
    summary: list = field(default_factory=list)

    def fractions(self, n: int) -> np.ndarray:
        return np.array([r.fraction for r in self.records if r.n == n])


def summarize(records: Sequence[TrialRecord], threshold: float) -> list:
    out = []
    for n in sorted({r.n for r in records}):
        x = np.array([r.fraction for r in records if r.n == n])
        high = x[x >= threshold]
        out.append(
            SizeSummary(
                n=n,
                trials=int(x.size),
                mean=float(x.mean()),
                std=float(x.std(ddof=1)) if x.size > 1 else 0.0,
                min=float(x.min()),
                max=float(x.max()),
                below_threshold=float(np.mean(x < threshold)),
                mean_above_threshold=float(high.mean()) if high.size else None,
            )
        )
    return out


def run_trials(config: ExperimentConfig) -> TrialsResult:
    """Run every ``(n, trial)`` of the configuration and summarize per size."""
    tasks = [
        (config.spec, n, t, child_seed(config.seed, n, t), config.mode)
        for n in config.n_grid
        for t in range(config.trials)
    ]
    workers = worker_count() if config.workers is None else config.workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        records = [_run_task(t) for t in tasks]
    records.sort(key=lambda r: (r.n, r.trial))
    return TrialsResult(records, summarize(records, config.threshold))


# -- comparison with theory -------------------------------------------------------------


def analytic_candidates(spec: ModelSpec, tol: float = analytic.DEFAULT_TOL) -> dict:
    """Default fractions at the distinguished roots of the shocked system.

    ``smallest`` is ``g`` at the least joint root (the predicted limit),
    ``stable`` at the limit of shifted least roots, and ``largest`` at the
    greatest joint root overall. ``initial`` is the initially defaulted
    share, the outcome of a small network in which the shock does not spread.
    """
    shocked = apply_shock(spec)
    sys_ = analytic.System(shocked)
    lo = analytic.least_fixed_point(sys_, tol=tol)
    st = analytic.z_star(sys_, tol=tol)
    hi = analytic.greatest_fixed_point(sys_, tol=tol)
    return {
        "smallest": sys_.g(lo.z),
        "stable": sys_.g(st.z),
        "largest": sys_.g(hi.z),
        "initial": shocked.initial_default_mass(),
    }


def cluster_edges(candidates: Sequence[float], merge_tol: float = 1e-3) -> np.ndarray:
    """Midpoints between distinct candidate fractions, used to split outcomes."""
    vals = np.unique(np.round(np.asarray(candidates, dtype=float) / merge_tol)) * merge_tol
    return (vals[1:] + vals[:-1]) / 2.0


@dataclass
class ConvergenceRow:
    n: int
    majority_share: float
    majority_center: float  # mean of the majority cluster
    max_deviation: float  # max |fraction - theory| within the majority cluster
    std: float  # standard deviation within the majority cluster
    cluster_counts: list
    theory_share: float  # share of trials in the cluster containing ``theory``
    theory_max_deviation: float | None  # max |fraction - theory| within that cluster

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ConvergenceResult:
    theory: float
    candidates: dict
    edges: np.ndarray
    trials: TrialsResult
    rows: list


def convergence_experiment(config: ExperimentConfig, theory: float, candidates: Sequence[float] = ()) -> ConvergenceResult:
    """Simulate on every size and measure the distance of outcomes to ``theory``.

    Outcomes are first split into clusters at midpoints between ``theory`` and
    the other ``candidates`` (fractions at further joint roots); the deviation
    statistics then use the most populous cluster only. The same statistics
    are also reported for the cluster that contains ``theory``.
    """
    trials = run_trials(config)
    edges = cluster_edges([theory, *candidates])
    rows = []
    for n in config.n_grid:
        x = trials.fractions(n)
        label = np.searchsorted(edges, x)
        counts = np.bincount(label, minlength=edges.size + 1)
        major = x[label == int(np.argmax(counts))]
        home = x[label == int(np.searchsorted(edges, theory))]
        rows.append(
            ConvergenceRow(
                n=n,
                majority_share=float(major.size / x.size),
                majority_center=float(major.mean()),
                max_deviation=float(np.max(np.abs(major - theory))),
                std=float(major.std(ddof=1)) if major.size > 1 else 0.0,
                cluster_counts=counts.tolist(),
                theory_share=float(home.size / x.size),
                theory_max_deviation=float(np.max(np.abs(home - theory))) if home.size else None,
            )
        )
    cand = {"theory": theory, **{f"candidate_{i + 1}": float(c) for i, c in enumerate(candidates)}}
    return ConvergenceResult(theory, cand, edges, trials, rows)


# -- output -----------------------------------------------------------------------------


def csv_header(T: int) -> list:
    return ["n", "trial", "seed", "fraction", *[f"frac_type_{b + 1}" for b in range(T)], "importance_mass", "rounds", "ms"]


def write_trials_csv(records: Sequence[TrialRecord], T: int, path, header: Sequence[str] = ()) -> None:
    with Path(path).open("w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(csv_header(T))
        for r in records:
            w.writerow(
                [r.n, r.trial, r.seed, repr(r.fraction), *map(repr, r.per_type), repr(r.importance_mass), r.rounds, f"{r.ms:.3f}"]
            )
