"""
hyperopt.py
Search over (p, lambda, sigma, alpha_leak, eta) at fixed n for the machine
with the smallest balanced error.

Two strategies share the same candidate stream:
  random    - eta log-uniform, everything else uniform over the ranges
  surrogate - a random warmup, then sequential refinement around the incumbent
              guided by a quadratic model of log(delta_e) over the unit cube
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.optimize import minimize
from sklearn.linear_model import Ridge
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import PolynomialFeatures

from dynamics import Normalizer, TimeSeries
from errors import BalancedRCError, InvalidParameterError
from objective import REPORT_COLUMNS, ErrorReport, prediction_error, sync_error
from reservoir import Hyperparams, MatrixSeeds, Provenance, TrainedMachine, train_machine
from seeding import derive_seed, substream

logger = logging.getLogger(__name__)

PARAM_NAMES = ("p", "spectral_radius", "sigma", "alpha_leak", "eta")
LOG_PARAMS = ("eta",)

DEFAULT_RANGES: Dict[str, Tuple[float, float]] = {
    "p": (0.0, 1.0),
    "spectral_radius": (0.0, 3.0),
    "sigma": (0.0, 3.0),
    "alpha_leak": (0.0, 1.0),
    "eta": (1e-10, 1e-2),
}

RANDOM = "random"
SURROGATE = "surrogate"


# ----------------------------
# Search space and settings
# ----------------------------
@dataclass(frozen=True)
class SearchSpace:
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_RANGES))
    n: int = 500
    d: int = 2
    trial_budget: int = 300
    beta: float = 10.0
    search_seed: int = 0

    def __post_init__(self):
        missing = set(PARAM_NAMES) - set(self.ranges)
        if missing:
            raise InvalidParameterError(f"search ranges missing: {sorted(missing)}")
        for name in PARAM_NAMES:
            lo, hi = self.ranges[name]
            if not lo < hi:
                raise InvalidParameterError(f"empty range for {name}: ({lo}, {hi})")
            if name in LOG_PARAMS and not lo > 0:
                raise InvalidParameterError(f"log-sampled range for {name} must be positive, got ({lo}, {hi})")
        if self.trial_budget < 1:
            raise InvalidParameterError(f"trial_budget must be >= 1, got {self.trial_budget}")

    def sample(self, rng: np.random.Generator) -> Hyperparams:
        values = {}
        for name in PARAM_NAMES:
            lo, hi = self.ranges[name]
            if name in LOG_PARAMS:
                values[name] = float(10 ** rng.uniform(math.log10(lo), math.log10(hi)))
            else:
                values[name] = float(rng.uniform(np.nextafter(lo, hi), hi))
        return Hyperparams(n=self.n, d=self.d, **values)

    def to_unit(self, hp: Hyperparams) -> np.ndarray:
        coords = []
        for name in PARAM_NAMES:
            lo, hi = self.ranges[name]
            v = getattr(hp, name)
            if name in LOG_PARAMS:
                lo, hi, v = math.log10(lo), math.log10(hi), math.log10(v)
            coords.append((v - lo) / (hi - lo))
        return np.array(coords)

    def from_unit(self, coords: np.ndarray) -> Hyperparams:
        values = {}
        for name, c in zip(PARAM_NAMES, np.clip(coords, 1e-9, 1 - 1e-9)):
            lo, hi = self.ranges[name]
            if name in LOG_PARAMS:
                values[name] = float(10 ** (math.log10(lo) + c * (math.log10(hi) - math.log10(lo))))
            else:
                values[name] = float(lo + c * (hi - lo))
        return Hyperparams(n=self.n, d=self.d, **values)

    def contains(self, hp: Hyperparams) -> bool:
        return all(self.ranges[name][0] < getattr(hp, name) <= self.ranges[name][1] for name in PARAM_NAMES)


@dataclass(frozen=True)
class EvaluationSettings:
    listen_length: int = 10
    tau: int = 10
    sync_realizations: int = 50
    validation_horizon: int = 1000


# ----------------------------
# Trials
# ----------------------------
@dataclass(frozen=True)
class TrialRecord:
    candidate_id: int
    hyperparams: Hyperparams
    report: ErrorReport
    seeds: MatrixSeeds
    wall_time: float = 0.0
    machine_path: str = ""

    def as_row(self) -> dict:
        row = self.report.as_row(self.candidate_id, self.hyperparams)
        row["wall_time"] = self.wall_time
        row["machine_path"] = self.machine_path
        return row


def evaluate_candidate(
    hp: Hyperparams,
    training: Sequence[TimeSeries],
    testing: Sequence[TimeSeries],
    beta: float,
    settings: EvaluationSettings,
    seeds: MatrixSeeds,
    sync_seed: int,
    candidate_id: int = 0,
) -> TrialRecord:
    """
    Builds and trains the machine, measures delta_e_s on the training data and
    delta_e_p on the testing data. A failed training is an infinite-error
    trial, never a crash.
    """
    started = time.perf_counter()
    try:
        machine = train_machine(hp, seeds, training, settings.listen_length, beta)
        d_s = sync_error(machine.matrices, hp.alpha_leak, training, settings.tau,
                         settings.sync_realizations, sync_seed)
        d_p = prediction_error(machine, testing, settings.listen_length, settings.validation_horizon)
        report = ErrorReport.build(d_p, d_s, beta, settings.sync_realizations)
    except BalancedRCError as exc:
        logger.warning("Candidate %d failed: %s", candidate_id, exc)
        report = ErrorReport.failed(beta, settings.sync_realizations)
    return TrialRecord(candidate_id, hp, report, seeds, time.perf_counter() - started)


@dataclass
class SearchResult:
    best: TrialRecord
    trials: List[TrialRecord]

    def trial_log(self) -> pd.DataFrame:
        rows = [t.as_row() for t in sorted(self.trials, key=lambda t: t.candidate_id)]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS + ["wall_time", "machine_path"])


def best_trial(trials: Sequence[TrialRecord]) -> TrialRecord:
    return min(trials, key=lambda t: (t.report.delta_e, t.candidate_id))


def _candidate(space: SearchSpace, candidate_id: int) -> Tuple[Hyperparams, MatrixSeeds, int]:
    hp = space.sample(substream(space.search_seed, "search", candidate_id))
    return hp, _candidate_seeds(space, candidate_id), derive_seed(space.search_seed, "sync", candidate_id)


def _candidate_seeds(space: SearchSpace, candidate_id: int) -> MatrixSeeds:
    return MatrixSeeds.derive(space.search_seed, candidate_id)


def _run_batch(candidates, training, testing, space, settings, workers) -> List[TrialRecord]:
    return Parallel(n_jobs=workers)(
        delayed(evaluate_candidate)(hp, training, testing, space.beta, settings, seeds, sync_seed, cid)
        for cid, (hp, seeds, sync_seed) in candidates
    )


# ----------------------------
# Surrogate refinement
# ----------------------------
class QuadraticSurrogate:
    """Full quadratic in the unit-cube coordinates, fitted to log(delta_e) of the best trials."""

    def __init__(self, space: SearchSpace, max_points: int = 42):
        self.space = space
        self.max_points = max_points
        self.model = make_pipeline(PolynomialFeatures(degree=2), Ridge(alpha=1e-6))

    def fit(self, trials: Sequence[TrialRecord]) -> bool:
        finite = [t for t in trials if math.isfinite(t.report.delta_e) and t.report.delta_e > 0]
        if len(finite) < len(PARAM_NAMES) + 2:
            return False
        finite = sorted(finite, key=lambda t: (t.report.delta_e, t.candidate_id))[: self.max_points]
        x = np.stack([self.space.to_unit(t.hyperparams) for t in finite])
        y = np.log([t.report.delta_e for t in finite])
        self.model.fit(x, y)
        return True

    def propose(self, center: np.ndarray, radius: float) -> np.ndarray:
        bounds = [(max(1e-6, c - radius), min(1 - 1e-6, c + radius)) for c in center]
        result = minimize(
            lambda z: float(self.model.predict(z[None, :])[0]),
            x0=np.clip(center, [b[0] for b in bounds], [b[1] for b in bounds]),
            method="L-BFGS-B",
            bounds=bounds,
        )
        return result.x


def search(
    space: SearchSpace,
    training: Sequence[TimeSeries],
    testing: Sequence[TimeSeries],
    strategy: str = RANDOM,
    settings: Optional[EvaluationSettings] = None,
    workers: int = 1,
) -> SearchResult:
    settings = settings or EvaluationSettings()
    if strategy not in (RANDOM, SURROGATE):
        raise InvalidParameterError(f"Unknown search strategy: {strategy}")

    warmup = space.trial_budget if strategy == RANDOM else min(space.trial_budget, max(20, space.trial_budget // 10))
    logger.info("Search (%s): %d trials, %d warmup, beta=%g", strategy, space.trial_budget, warmup, space.beta)
    trials = _run_batch(
        [(cid, _candidate(space, cid)) for cid in range(warmup)],
        training, testing, space, settings, workers,
    )

    radius = 0.25
    surrogate = QuadraticSurrogate(space)
    for cid in range(warmup, space.trial_budget):
        incumbent = best_trial(trials)
        center = space.to_unit(incumbent.hyperparams)
        rng = substream(space.search_seed, "search", cid)
        proposal = None
        if surrogate.fit(trials):
            proposal = surrogate.propose(center, radius)
            seen = np.stack([space.to_unit(t.hyperparams) for t in trials])
            if np.min(np.linalg.norm(seen - proposal, axis=1)) < 1e-6:
                proposal = None
        if proposal is None:
            proposal = np.clip(center + rng.normal(scale=radius, size=center.shape), 1e-6, 1 - 1e-6)
        hp = space.from_unit(proposal)
        record = evaluate_candidate(hp, training, testing, space.beta, settings,
                                    _candidate_seeds(space, cid), derive_seed(space.search_seed, "sync", cid), cid)
        trials.append(record)
        if record.report.delta_e < incumbent.report.delta_e:
            radius = min(radius * 1.5, 0.5)
        else:
            radius = max(radius * 0.7, 0.02)

    best = best_trial(trials)
    logger.info("Best candidate %d: delta_e=%.4g %s", best.candidate_id, best.report.delta_e, best.hyperparams.as_tuple())
    return SearchResult(best, trials)


def retrain_best(
    record: TrialRecord,
    training: Sequence[TimeSeries],
    listen_length: int,
    beta: float,
    provenance: Optional[Provenance] = None,
    normalizer: Optional[Normalizer] = None,
) -> TrainedMachine:
    """The trial's machine is fully determined by its hyperparameters and seeds, so rebuilding reproduces it."""
    return train_machine(record.hyperparams, record.seeds, training, listen_length, beta, provenance, normalizer)
