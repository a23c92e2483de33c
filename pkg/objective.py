"""
objective.py
Prediction error (delta_e_p), reservoir-synchronization error (delta_e_s) and
the balanced objective delta_e = delta_e_p + beta * delta_e_s.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from dynamics import TimeSeries
from errors import InvalidParameterError
from reservoir import (
    VALIDATION_STATES,
    Hyperparams,
    ReservoirMatrices,
    TrainedMachine,
    initial_states,
    listen,
    predict_closed_loop,
    reservoir_step,
)
from seeding import generator

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["candidate_id", "p", "lambda", "sigma", "alpha_leak", "eta",
                  "delta_e_p", "delta_e_s", "beta", "delta_e"]


@dataclass(frozen=True)
class ErrorReport:
    delta_e_p: float
    delta_e_s: float
    beta: float
    delta_e: float
    realizations: int

    @classmethod
    def build(cls, delta_e_p: float, delta_e_s: float, beta: float, realizations: int) -> "ErrorReport":
        return cls(delta_e_p, delta_e_s, beta, balanced_error(delta_e_p, delta_e_s, beta), realizations)

    @classmethod
    def failed(cls, beta: float, realizations: int = 0) -> "ErrorReport":
        return cls(math.inf, math.inf, beta, math.inf, realizations)

    def as_row(self, candidate_id: int, hp: Hyperparams) -> dict:
        p, lam, sigma, alpha, eta = hp.as_tuple()
        return {
            "candidate_id": candidate_id, "p": p, "lambda": lam, "sigma": sigma,
            "alpha_leak": alpha, "eta": eta, "delta_e_p": self.delta_e_p,
            "delta_e_s": self.delta_e_s, "beta": self.beta, "delta_e": self.delta_e,
        }


def balanced_error(delta_e_p: float, delta_e_s: float, beta: float) -> float:
    if delta_e_p < 0 or delta_e_s < 0:
        raise InvalidParameterError(f"errors must be >= 0, got ({delta_e_p}, {delta_e_s})")
    if not beta > 0:
        raise InvalidParameterError(f"beta must be > 0, got {beta}")
    return delta_e_p + beta * delta_e_s


def suggest_beta(delta_e_p_sample: float, delta_e_s_sample: float) -> float:
    """Ratio delta_e_p / delta_e_s rounded to one significant figure."""
    if delta_e_s_sample <= 0:
        raise InvalidParameterError("delta_e_s sample is zero; supply beta manually")
    if delta_e_p_sample <= 0:
        raise InvalidParameterError("delta_e_p sample must be > 0")
    ratio = delta_e_p_sample / delta_e_s_sample
    exponent = math.floor(math.log10(ratio))
    # snap first so ratios like 25.000000000000004 keep their digit
    ratio = round(ratio, 10 - exponent)
    leading = ratio / 10**exponent
    if abs(leading - round(leading)) < 1e-9 or abs(leading * 2 - round(leading * 2)) < 1e-9:
        # already on a one-significant-figure (or half-step) boundary
        return float(round(ratio, 10 - exponent))
    return float(round(ratio, -exponent))


# ----------------------------
# Prediction error
# ----------------------------
def trajectory_distance(truth: np.ndarray, predicted: np.ndarray) -> float:
    """Time average of the L2 distance between two (steps, d) arrays."""
    if len(predicted) == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(truth - predicted, axis=1)))


def prediction_error(
    machine: TrainedMachine,
    test_series: Sequence[TimeSeries],
    listen_length: int,
    horizon: int,
) -> float:
    """
    Per series: listen on the first l samples, run the closed loop for
    `horizon` steps and average the L2 distance to the truth. Series cut short
    by the overflow guard are compared over what they have.
    """
    errors: List[float] = []
    n = machine.hyperparams.n
    for j, series in enumerate(test_series):
        available = len(series) - listen_length
        if available < 1:
            logger.warning("Test series %d too short for listen length %d; skipped", j, listen_length)
            continue
        if available < horizon and not series.truncated:
            raise InvalidParameterError(
                f"test series {j} has {len(series)} samples, needs {listen_length + horizon}"
            )
        steps = min(horizon, available)
        init = initial_states(machine.matrices.seeds.init_state_seed, VALIDATION_STATES, j, n)
        state, _ = listen(machine.matrices, machine.hyperparams.alpha_leak, init,
                          series.head(listen_length - 1)) if listen_length > 1 else (init, None)
        predicted = predict_closed_loop(machine, state, series.samples[listen_length - 1], steps)
        truth = series.samples[listen_length : listen_length + len(predicted)]
        errors.append(trajectory_distance(truth, predicted.samples))
    if not errors:
        raise InvalidParameterError("no usable test series")
    return float(np.mean(errors))


# ----------------------------
# Synchronization error
# ----------------------------
def sync_error(
    matrices: ReservoirMatrices,
    alpha_leak: float,
    drive: Sequence[TimeSeries],
    tau: int,
    realizations: int,
    seed: int,
) -> float:
    """
    Mean over realizations of |r_tau - r'_tau| for two random initial states
    driven by the same tau-step window. Each realization picks its own window
    of the drive data from generator(seed, i), so realizations are independent
    of evaluation order.
    """
    if realizations < 1:
        raise InvalidParameterError(f"realizations must be >= 1, got {realizations}")
    if isinstance(drive, TimeSeries):
        drive = [drive]
    usable = [s for s in drive if len(s) >= tau]
    if not usable:
        raise InvalidParameterError(f"no drive series with at least tau={tau} samples")
    n = matrices.n
    distances = np.empty(realizations)
    for i in range(realizations):
        rng = generator(seed, i)
        first, second = rng.uniform(-1.0, 1.0, size=(2, n))
        series = usable[int(rng.integers(len(usable)))]
        start = int(rng.integers(len(series) - tau + 1))
        distances[i] = drive_pair(matrices, alpha_leak, first, second, series.samples[start : start + tau])
    return float(distances.sum() / realizations)


def drive_pair(
    matrices: ReservoirMatrices,
    alpha_leak: float,
    first: np.ndarray,
    second: np.ndarray,
    window: np.ndarray,
) -> float:
    """Distance between two reservoir copies after both consume the same input window."""
    pair = np.stack([first, second])
    for u in window:
        pair = reservoir_step(pair, u[None, :], matrices, alpha_leak)
    return float(np.linalg.norm(pair[0] - pair[1]))


# ----------------------------
# Anti-correlation study
# ----------------------------
def anticorrelation_study(
    evaluate: Callable[[int], Optional[ErrorReport]],
    count: int,
    beta: float,
) -> tuple[pd.DataFrame, float]:
    """
    Runs `evaluate(i)` for i in range(count) (each call draws its own random
    machine), ranks machines by delta_e under beta and returns the table and
    the Spearman rank correlation between delta_e_p and delta_e_s.
    """
    rows = []
    for i in range(count):
        report = evaluate(i)
        if report is None or not math.isfinite(report.delta_e):
            continue
        row = asdict(report)
        row["machine"] = i
        row["beta"] = beta
        row["delta_e"] = balanced_error(report.delta_e_p, report.delta_e_s, beta)
        rows.append(row)
    columns = ["machine", "delta_e_p", "delta_e_s", "beta", "delta_e", "realizations"]
    table = pd.DataFrame(rows, columns=columns).sort_values(["delta_e", "machine"]).reset_index(drop=True)
    correlation = float(spearmanr(table["delta_e_p"], table["delta_e_s"]).correlation) if len(table) > 2 else math.nan
    logger.info("Anti-correlation study: %d machines, Spearman rho = %.3f", len(table), correlation)
    return table, correlation
