"""Randomized experiment over trial initial conditions.

Each trial draws every covariate independently and uniformly from its two
arms. Both the covariate draws and the trial seed come from
``numpy.random.SeedSequence(master_seed, spawn_key=(trial_index, k))``
(``k=0`` for covariates, ``k=1`` for the trial seed), so a trial's result
depends only on ``(master_seed, trial_index)`` and never on scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import __version__
from .exceptions import ConfigurationError, DomainError
from .trial import DEFAULT_MAX_EPISODES, TrialConfig, run_trial

logger = logging.getLogger(__name__)

COVARIATES = (
    "design", "N", "alpha", "gamma", "egreedy",
    "asynchronous", "feedback", "num_actions", "decay",
)
OUTCOMES = ("bid2val", "vol", "episodes")
DATASET_COLUMNS = ("trial",) + COVARIATES + OUTCOMES + ("converged", "seed")

DEFAULT_ARMS = {
    "N": (2, 4),
    "alpha": (0.01, 0.1),
    "gamma": (0.0, 0.95),
    "egreedy": (0, 1),
    "design": (0, 1),
    "asynchronous": (0, 1),
    "feedback": (0, 1),
    "num_actions": (6, 11),
    "decay": (0.9999, 0.99995),
}
_INT_COLUMNS = {"trial", "design", "N", "egreedy", "asynchronous", "feedback",
                "num_actions", "episodes", "converged", "seed"}


def _check_arms(arms: dict) -> dict:
    missing = set(COVARIATES) - set(arms)
    if missing:
        raise ConfigurationError(f"arm table lacks {sorted(missing)}")
    extra = set(arms) - set(COVARIATES)
    if extra:
        raise ConfigurationError(f"unknown covariates in arm table: {sorted(extra)}")
    out = {}
    for name in COVARIATES:
        pair = tuple(arms[name])
        if len(pair) != 2:
            raise ConfigurationError(f"covariate {name} needs exactly two arms, got {pair}")
        out[name] = pair
    return out


@dataclass
class ExperimentConfig:
    num_trials: int = 427
    master_seed: int = 0
    max_episodes: int = DEFAULT_MAX_EPISODES
    arms: dict = field(default_factory=lambda: dict(DEFAULT_ARMS))
    output: str | None = None
    n_jobs: int = 1
    convergence: str = "winning_bid"

    def __post_init__(self):
        if int(self.num_trials) != self.num_trials or self.num_trials < 1:
            raise ConfigurationError(f"num_trials must be a positive integer, got {self.num_trials}")
        if self.max_episodes < 1:
            raise ConfigurationError("max_episodes must be >= 1")
        if self.n_jobs < 1:
            raise ConfigurationError("n_jobs must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigurationError("master_seed must be a non-negative 64-bit integer")
        self.arms = _check_arms(self.arms)

    @classmethod
    def from_json(cls, path, **overrides) -> ExperimentConfig:
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown keys in {path}: {sorted(unknown)}")
        if "arms" in raw:
            raw["arms"] = {**DEFAULT_ARMS, **raw["arms"]}
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arms"] = {k: list(v) for k, v in self.arms.items()}
        return d


@dataclass
class TrialRecord:
    trial: int
    design: int
    N: int
    alpha: float
    gamma: float
    egreedy: int
    asynchronous: int
    feedback: int
    num_actions: int
    decay: float
    bid2val: float = math.nan
    vol: float = math.nan
    episodes: int | None = None
    converged: int | None = None
    seed: int = 0
    status: str = "ok"

    def trial_config(self, max_episodes: int = DEFAULT_MAX_EPISODES,
                     convergence: str = "winning_bid") -> TrialConfig:
        return TrialConfig(
            n_bidders=int(self.N), alpha=float(self.alpha), gamma=float(self.gamma),
            egreedy=bool(self.egreedy), design=int(self.design),
            asynchronous=bool(self.asynchronous), feedback=bool(self.feedback),
            num_actions=int(self.num_actions), decay=float(self.decay),
            max_episodes=max_episodes, seed=int(self.seed), convergence=convergence,
        )

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class Dataset:
    records: list
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def to_frame(self, include_failed: bool = False):
        import pandas as pd

        rows = [
            {c: getattr(r, c) for c in DATASET_COLUMNS}
            for r in self.records
            if include_failed or r.ok
        ]
        return pd.DataFrame(rows, columns=list(DATASET_COLUMNS))

    def __eq__(self, other):
        if not isinstance(other, Dataset) or len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            for c in DATASET_COLUMNS:
                x, y = getattr(a, c), getattr(b, c)
                if x != y and not (isinstance(x, float) and isinstance(y, float)
                                   and math.isnan(x) and math.isnan(y)):
                    return False
        return True


def _seed_sequence(master_seed: int, trial_index: int, purpose: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(trial_index), purpose))


def derive_trial_seed(master_seed: int, trial_index: int) -> int:
    return int(_seed_sequence(master_seed, trial_index, 1).generate_state(1, np.uint64)[0])


def sample_trial_config(trial_index: int, master_seed: int, arms: dict | None = None) -> TrialRecord:
    """Draw one trial's covariates; returns a record with outcomes unset.

    Covariates are drawn in ``COVARIATES`` order, one fair coin each.
    """
    arms = _check_arms(arms if arms is not None else DEFAULT_ARMS)
    rng = np.random.default_rng(_seed_sequence(master_seed, trial_index, 0))
    picks = rng.integers(0, 2, size=len(COVARIATES))
    values = {name: arms[name][int(p)] for name, p in zip(COVARIATES, picks)}
    for name in ("design", "N", "egreedy", "asynchronous", "feedback", "num_actions"):
        values[name] = int(values[name])
    for name in ("alpha", "gamma", "decay"):
        values[name] = float(values[name])
    return TrialRecord(trial=int(trial_index), seed=derive_trial_seed(master_seed, trial_index), **values)


def _execute(args) -> TrialRecord:
    record, max_episodes, convergence = args
    try:
        out = run_trial(record.trial_config(max_episodes, convergence)).outcomes
    except Exception as exc:  # recorded, never retried
        logger.error("trial %d failed: %s", record.trial, exc)
        return replace(record, status=f"failed: {type(exc).__name__}: {exc}")
    return replace(
        record,
        bid2val=out.bid2val,
        vol=out.vol,
        episodes=out.episodes,
        converged=int(out.converged),
    )


def run_experiment(config: ExperimentConfig, progress=None) -> Dataset:
    """Run every trial and return the records in trial-index order.

    ``progress(done, total, elapsed_seconds)`` is called after each trial.
    When ``config.output`` is set the dataset and its metadata sidecar are
    written there; if the run is interrupted, finished trials go to
    ``<output>.partial.csv``.
    """
    start = time.perf_counter()
    jobs = [
        (sample_trial_config(i, config.master_seed, config.arms), config.max_episodes, config.convergence)
        for i in range(config.num_trials)
    ]
    records = []
    try:
        if config.n_jobs == 1:
            results = map(_execute, jobs)
            for rec in results:
                records.append(rec)
                _report(progress, len(records), len(jobs), start)
        else:
            with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
                for rec in pool.map(_execute, jobs):
                    records.append(rec)
                    _report(progress, len(records), len(jobs), start)
    except BaseException:
        if config.output and records:
            partial = Dataset(records, _metadata(config, start, partial=True))
            write_dataset(partial, str(config.output) + ".partial.csv")
            logger.error("experiment aborted after %d trials; partial results saved", len(records))
        raise

    ds = Dataset(records, _metadata(config, start))
    if config.output:
        write_dataset(ds, config.output)
    return ds


def _report(progress, done, total, start):
    elapsed = time.perf_counter() - start
    logger.info("trial %d/%d done (%.1fs elapsed)", done, total, elapsed)
    if progress is not None:
        progress(done, total, elapsed)


def _metadata(config: ExperimentConfig, start: float, partial: bool = False) -> dict:
    return {
        "master_seed": int(config.master_seed),
        "num_trials": int(config.num_trials),
        "max_episodes": int(config.max_episodes),
        "convergence": config.convergence,
        "arms": {k: list(v) for k, v in config.arms.items()},
        "version": __version__,
        "wall_time_seconds": round(time.perf_counter() - start, 3),
        "partial": partial,
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(int(value))


def metadata_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".meta.json")


def write_dataset(ds: Dataset, path) -> None:
    """CSV in ``DATASET_COLUMNS`` order plus a ``<path>.meta.json`` sidecar.

    Floats use ``repr`` so they read back exactly. Outcome cells of failed
    trials are left empty; their messages go to the sidecar.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for r in ds.records:
            w.writerow([_fmt(getattr(r, c)) for c in DATASET_COLUMNS])
    meta = dict(ds.metadata)
    meta["failures"] = {str(r.trial): r.status for r in ds.records if not r.ok}
    with open(metadata_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def read_dataset(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in DATASET_COLUMNS if c not in header]
        if missing:
            raise DomainError(f"dataset {path} lacks columns: {', '.join(missing)}", )
        records = []
        for row in reader:
            vals = {}
            for c in DATASET_COLUMNS:
                cell = row[c]
                if cell == "":
                    vals[c] = math.nan if c in ("bid2val", "vol") else None
                elif c in _INT_COLUMNS:
                    vals[c] = int(cell)
                else:
                    vals[c] = float(cell)
            failed = vals["episodes"] is None
            records.append(TrialRecord(**vals, status="failed" if failed else "ok"))
    meta = {}
    mp = metadata_path(path)
    if mp.exists():
        with open(mp) as fh:
            meta = json.load(fh)
        for idx, msg in meta.get("failures", {}).items():
            for r in records:
                if r.trial == int(idx):
                    r.status = msg
    return Dataset(records, meta)


class TrialSimulator(BaseEstimator, TransformerMixin):
    """Map rows of trial covariates to simulated outcomes.

    ``X`` is a DataFrame with the ``COVARIATES`` columns and optionally a
    ``seed`` column; without one, seeds derive from ``random_state`` and
    the row position. ``transform`` returns an ``(n, 3)`` array of
    ``bid2val, vol, episodes``.
    """

    def __init__(self, max_episodes=DEFAULT_MAX_EPISODES, convergence="winning_bid",
                 random_state=0, n_jobs=1):
        self.max_episodes = max_episodes
        self.convergence = convergence
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _records(self, X):
        import pandas as pd

        if not isinstance(X, pd.DataFrame):
            X = pd.DataFrame(np.asarray(X), columns=list(COVARIATES)[: np.asarray(X).shape[1]])
        missing = [c for c in COVARIATES if c not in X.columns]
        if missing:
            raise ConfigurationError(f"X lacks covariate columns: {missing}")
        recs = []
        for i, row in enumerate(X.itertuples(index=False)):
            d = row._asdict()
            seed = int(d["seed"]) if "seed" in d else derive_trial_seed(self.random_state, i)
            recs.append(TrialRecord(trial=i, seed=seed, **{c: d[c] for c in COVARIATES}))
        return recs

    def fit(self, X, y=None):
        recs = self._records(X)
        for r in recs:
            r.trial_config(self.max_episodes, self.convergence)
        self.n_features_in_ = len(COVARIATES)
        self.feature_names_out_ = np.array(OUTCOMES, dtype=object)
        return self

    def transform(self, X):
        jobs = [(r, self.max_episodes, self.convergence) for r in self._records(X)]
        if self.n_jobs == 1:
            done = [_execute(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=self.n_jobs) as pool:
                done = list(pool.map(_execute, jobs))
        return np.array([[r.bid2val, r.vol, np.nan if r.episodes is None else r.episodes]
                         for r in done], dtype=float)

    def get_feature_names_out(self, input_features=None):
        return np.array(OUTCOMES, dtype=object)


def default_output_dir() -> str:
    return os.environ.get("AUCTIONLAB_OUTPUT_DIR", ".")
