import math

import numpy as np
import pytest

import experiment_config as ec
import main_logic
from basin import generate_dataset
from dynamics import TimeSeries
from errors import InvalidParameterError
from objective import (
    ErrorReport,
    anticorrelation_study,
    balanced_error,
    drive_pair,
    prediction_error,
    suggest_beta,
    sync_error,
    trajectory_distance,
)
from reservoir import MatrixSeeds, build_matrices
from seeding import generator


# ----------------------------
# Balanced objective
# ----------------------------
def test_balanced_error_examples():
    assert balanced_error(0.1, 0.01, 10) == pytest.approx(0.2)
    assert balanced_error(0.3, 0.0, 5) == 0.3


def test_balanced_error_monotone_in_beta():
    assert balanced_error(0.1, 0.02, 20) > balanced_error(0.1, 0.02, 10)


def test_balanced_error_rejects_bad_inputs():
    with pytest.raises(InvalidParameterError):
        balanced_error(-0.1, 0.01, 10)
    with pytest.raises(InvalidParameterError):
        balanced_error(0.1, 0.01, 0)


@pytest.mark.parametrize(
    "sample, expected",
    [((0.5, 0.05), 10), ((0.6, 0.02), 30), ((0.4, 0.016), 25), ((0.3, 0.03), 10)],
)
def test_suggest_beta(sample, expected):
    assert suggest_beta(*sample) == pytest.approx(expected)


def test_suggest_beta_needs_sync_sample():
    with pytest.raises(InvalidParameterError):
        suggest_beta(0.5, 0.0)


def test_failed_report_is_infinite():
    report = ErrorReport.failed(10.0)
    assert math.isinf(report.delta_e)
    built = ErrorReport.build(0.1, 0.01, 10.0, 50)
    assert built.delta_e == pytest.approx(0.2)


# ----------------------------
# Prediction error
# ----------------------------
def test_trajectory_distance_examples():
    assert trajectory_distance(np.zeros((5, 1)), np.ones((5, 1))) == 1.0
    same = np.arange(10.0).reshape(5, 2)
    assert trajectory_distance(same, same) == 0.0
    assert trajectory_distance(np.zeros((0, 2)), np.zeros((0, 2))) == 0.0


def test_prediction_error_finite_and_reproducible(small_machine, swing_dataset):
    first = prediction_error(small_machine, swing_dataset.testing, 10, 50)
    second = prediction_error(small_machine, swing_dataset.testing, 10, 50)
    assert math.isfinite(first) and first >= 0
    assert first == second


def test_prediction_error_horizon_too_long(small_machine, swing_dataset):
    with pytest.raises(InvalidParameterError):
        complete = [s for s in swing_dataset.testing if not s.truncated]
        prediction_error(small_machine, complete[:1], 10, 10_000)


# ----------------------------
# Synchronization error
# ----------------------------
def test_identical_states_stay_synchronized(small_hp):
    mat = build_matrices(small_hp, MatrixSeeds(1, 2, 3))
    state = generator(0).uniform(-1, 1, small_hp.n)
    window = generator(1).uniform(-1, 1, size=(10, 2))
    assert drive_pair(mat, small_hp.alpha_leak, state, state, window) == 0.0


def test_drive_pair_symmetric(small_hp):
    mat = build_matrices(small_hp, MatrixSeeds(1, 2, 3))
    a, b = generator(0).uniform(-1, 1, size=(2, small_hp.n))
    window = generator(1).uniform(-1, 1, size=(10, 2))
    assert drive_pair(mat, 0.6, a, b, window) == drive_pair(mat, 0.6, b, a, window)


def test_tau_zero_is_mean_initial_distance(small_hp):
    mat = build_matrices(small_hp, MatrixSeeds(1, 2, 3))
    drive = [TimeSeries(0.05, np.zeros((20, 2)))]
    measured = sync_error(mat, small_hp.alpha_leak, drive, 0, 5, seed=17)
    expected = []
    for i in range(5):
        a, b = generator(17, i).uniform(-1.0, 1.0, size=(2, small_hp.n))
        expected.append(np.linalg.norm(a - b))
    assert measured == pytest.approx(np.mean(expected))


def test_contractive_reservoir_synchronizes(reference_hp, swing_dataset):
    mat = build_matrices(reference_hp, MatrixSeeds.derive(0, 0))
    start = sync_error(mat, reference_hp.alpha_leak, swing_dataset.training, 0, 20, seed=4)
    after = sync_error(mat, reference_hp.alpha_leak, swing_dataset.training, 10, 20, seed=4)
    assert 0 <= after < 0.01 * start


@pytest.mark.parametrize("tau", [2, 5, 10])
def test_sync_error_shrinks_when_tau_doubles(reference_hp, swing_dataset, tau):
    mat = build_matrices(reference_hp, MatrixSeeds.derive(0, 1))
    once = sync_error(mat, reference_hp.alpha_leak, swing_dataset.training, tau, 20, seed=9)
    twice = sync_error(mat, reference_hp.alpha_leak, swing_dataset.training, 2 * tau, 20, seed=9)
    assert twice <= once


def test_sync_error_rejects_short_drive(small_hp):
    mat = build_matrices(small_hp, MatrixSeeds(1, 2, 3))
    with pytest.raises(InvalidParameterError):
        sync_error(mat, 0.5, [TimeSeries(0.05, np.zeros((3, 2)))], 10, 5, seed=0)
    with pytest.raises(InvalidParameterError):
        sync_error(mat, 0.5, [TimeSeries(0.05, np.zeros((30, 2)))], 10, 0, seed=0)


# ----------------------------
# Anti-correlation
# ----------------------------
def test_anticorrelation_study_ranks_and_correlates():
    def evaluate(i):
        if i == 3:
            return ErrorReport.failed(10.0)
        return ErrorReport.build(0.01 * (i + 1), 0.1 / (i + 1), 10.0, 5)

    table, rho = anticorrelation_study(evaluate, 8, beta=1.0)
    assert len(table) == 7
    assert 3 not in set(table["machine"])
    assert rho == pytest.approx(-1.0)
    assert list(table["delta_e"]) == sorted(table["delta_e"])


@pytest.mark.slow
def test_random_swing_machines_trade_prediction_for_synchronization():
    cfg = ec.reference_config("swing-D0.39")
    evaluate = main_logic._RandomMachineEvaluator(cfg, generate_dataset(ec.dataset_spec(cfg)))
    table, rho = anticorrelation_study(evaluate, 100, cfg.machine.beta)
    assert len(table) > 50
    assert rho < 0
