import math

import numpy as np
import pytest

from dynamics import TimeSeries
from errors import InvalidParameterError
from hyperopt import (
    DEFAULT_RANGES,
    RANDOM,
    SURROGATE,
    EvaluationSettings,
    SearchSpace,
    evaluate_candidate,
    retrain_best,
    search,
)
from reservoir import Hyperparams, MatrixSeeds
from seeding import generator

FAST = EvaluationSettings(listen_length=10, tau=10, sync_realizations=5, validation_horizon=50)


def _space(**overrides):
    values = dict(n=30, d=2, trial_budget=4, beta=10.0, search_seed=21)
    values.update(overrides)
    return SearchSpace(**values)


def _without_wall_time(result):
    return result.trial_log().drop(columns=["wall_time"])


# ----------------------------
# Search space
# ----------------------------
def test_samples_stay_in_ranges():
    space = _space()
    rng = generator(0)
    for _ in range(200):
        hp = space.sample(rng)
        assert space.contains(hp)
        assert hp.n == 30
        assert 1e-10 <= hp.eta <= 1e-2


def test_eta_is_log_uniform():
    space = _space()
    rng = generator(1)
    etas = np.array([space.sample(rng).eta for _ in range(2000)])
    below = np.mean(etas < 1e-6)
    assert 0.4 < below < 0.6


def test_unit_cube_round_trip():
    space = _space()
    hp = Hyperparams(p=0.48, spectral_radius=0.033, sigma=2.917, alpha_leak=0.574, eta=3.458e-4, n=30)
    again = space.from_unit(space.to_unit(hp))
    np.testing.assert_allclose(again.as_tuple(), hp.as_tuple(), rtol=1e-9)


def test_invalid_space():
    with pytest.raises(InvalidParameterError):
        _space(ranges=dict(DEFAULT_RANGES, sigma=(1.0, 1.0)))
    with pytest.raises(InvalidParameterError):
        _space(ranges=dict(DEFAULT_RANGES, eta=(0.0, 1e-2)))
    with pytest.raises(InvalidParameterError):
        _space(trial_budget=0)


# ----------------------------
# Candidate evaluation
# ----------------------------
def test_evaluate_candidate_is_reproducible(small_hp, swing_dataset):
    args = (small_hp, swing_dataset.training, swing_dataset.testing, 10.0, FAST, MatrixSeeds.derive(1, 0), 99)
    first = evaluate_candidate(*args)
    second = evaluate_candidate(*args)
    assert first.report == second.report
    assert math.isfinite(first.report.delta_e)
    assert first.report.delta_e == pytest.approx(first.report.delta_e_p + 10.0 * first.report.delta_e_s)


def test_failed_training_is_an_infinite_trial(small_hp):
    short = [TimeSeries(0.05, generator(3).uniform(-1, 1, size=(30, 2)))]
    exact = Hyperparams(**(small_hp.__dict__ | {"eta": 0.0}))
    record = evaluate_candidate(exact, short, short, 10.0, FAST, MatrixSeeds(1, 2, 3), 5, candidate_id=7)
    assert record.candidate_id == 7
    assert math.isinf(record.report.delta_e)


# ----------------------------
# Search
# ----------------------------
def test_budget_of_one_returns_that_trial(swing_dataset):
    result = search(_space(trial_budget=1), swing_dataset.training, swing_dataset.testing, RANDOM, FAST)
    assert len(result.trials) == 1
    assert result.best is result.trials[0]


def test_random_search_picks_minimum_and_is_reproducible(swing_dataset):
    first = search(_space(), swing_dataset.training, swing_dataset.testing, RANDOM, FAST)
    second = search(_space(), swing_dataset.training, swing_dataset.testing, RANDOM, FAST)
    assert first.best.report.delta_e == min(t.report.delta_e for t in first.trials)
    assert _without_wall_time(first).equals(_without_wall_time(second))
    log = first.trial_log()
    assert list(log["candidate_id"]) == [0, 1, 2, 3]
    assert set(log.columns) >= {"p", "lambda", "sigma", "alpha_leak", "eta", "delta_e_p", "delta_e_s", "delta_e"}


def test_surrogate_refines_the_random_warmup(swing_dataset):
    warmup = search(_space(trial_budget=20), swing_dataset.training, swing_dataset.testing, RANDOM, FAST)
    refined = search(_space(trial_budget=24), swing_dataset.training, swing_dataset.testing, SURROGATE, FAST)
    assert len(refined.trials) == 24
    assert refined.best.report.delta_e <= warmup.best.report.delta_e
    space = _space(trial_budget=24)
    assert all(space.contains(t.hyperparams) for t in refined.trials)


def test_unknown_strategy(swing_dataset):
    with pytest.raises(InvalidParameterError):
        search(_space(), swing_dataset.training, swing_dataset.testing, "grid", FAST)


def test_retrain_best_reproduces_the_trial_machine(swing_dataset):
    result = search(_space(trial_budget=2), swing_dataset.training, swing_dataset.testing, RANDOM, FAST)
    a = retrain_best(result.best, swing_dataset.training, 10, 10.0)
    b = retrain_best(result.best, swing_dataset.training, 10, 10.0)
    assert a.w_out.tobytes() == b.w_out.tobytes()
    assert a.hyperparams == result.best.hyperparams
