import math

import numpy as np
import pytest

import basin
import experiment_config as ec
from basin import (
    BasinExperiment,
    BasinMap,
    GridSpec,
    classify_batch,
    generate_dataset,
    ground_truth_basin,
    guide_length_sweep,
    hold_saturated,
    infer_basin,
    label_series,
    misclassification_boundary_distance,
    noise_sweep,
    sampling_sweep,
)
from dynamics import (
    SWING_LABELS,
    AsymptoticLabel,
    ChuaParams,
    DuffingParams,
    Normalizer,
    SwingParams,
    TimeSeries,
    integrate,
)
from errors import IntegrationError, InvalidParameterError, SamplingError
from experiment_table import ACCURACY_FLOOR, NOISE_SWEEP_AMPLITUDES
from helpers import small_swing_spec
from reservoir import Hyperparams, MatrixSeeds

SWING = SwingParams(0.4, 0.39, 0.7)
OP = AsymptoticLabel.OPERATING
POS = AsymptoticLabel.POSITIVE_DIVERGING
NEG = AsymptoticLabel.NEGATIVE_DIVERGING
UND = AsymptoticLabel.UNDECIDED


def _grid(res=(3, 3), ranges=((-3.0, 3.0), (-4.0, 2.0))):
    return GridSpec((0, 1), ranges, res, (0.0, 0.0), ("theta", "omega"))


# ----------------------------
# Datasets
# ----------------------------
def test_dataset_has_m_series_per_label(swing_dataset):
    assert len(swing_dataset.training) == 3
    assert len(swing_dataset.testing) == 3
    assert set(swing_dataset.training_labels) == set(SWING_LABELS)
    assert set(swing_dataset.testing_labels) == set(SWING_LABELS)
    assert all(len(s) <= 200 for s in swing_dataset.training + swing_dataset.testing)


def test_training_and_testing_draws_differ(swing_dataset):
    for ic in swing_dataset.training_ics:
        assert not any(np.array_equal(ic, other) for other in swing_dataset.testing_ics)


def test_dataset_is_normalized(swing_dataset):
    for s in swing_dataset.training + swing_dataset.testing:
        assert np.all(np.abs(s.samples) <= 1.0)


def test_labels_match_the_physical_trajectories(swing_dataset):
    for ic, label in zip(swing_dataset.training_ics, swing_dataset.training_labels):
        full = integrate(SWING, ic, 0.05, 999)
        assert label_series(SWING, full, 1000, 100) == label


def test_dataset_generation_is_deterministic(swing_dataset):
    again = generate_dataset(small_swing_spec())
    for a, b in zip(swing_dataset.training + swing_dataset.testing, again.training + again.testing):
        assert a.samples.tobytes() == b.samples.tobytes()
    assert again.training_labels == swing_dataset.training_labels


def test_invalid_dataset_specs():
    with pytest.raises(InvalidParameterError):
        small_swing_spec(m=0)
    with pytest.raises(InvalidParameterError):
        small_swing_spec(series_length=11)
    with pytest.raises(InvalidParameterError):
        small_swing_spec(system=ChuaParams())


def test_sampling_cap_reports_missing_label():
    with pytest.raises(SamplingError) as info:
        generate_dataset(small_swing_spec(m=2, sampling_cap=2))
    assert info.value.draws == 2
    assert info.value.label in {str(l) for l in SWING_LABELS}


def test_label_restriction(caplog):
    with caplog.at_level("WARNING"):
        data = generate_dataset(small_swing_spec(labels=(OP,)))
    assert data.training_labels == (OP,)
    assert "left out of training" in caplog.text


def test_total_points_split_evenly():
    spec = small_swing_spec(total_points=450)
    assert spec.points_per_series == 150
    data = generate_dataset(spec)
    assert all(len(s) == 150 for s in data.training if not s.truncated)


def test_guard_truncated_series_are_held_at_saturation():
    spec = small_swing_spec(system=SwingParams(0.4, 1.5, 0.7), labels=(POS,), series_length=600,
                            label_horizon=600)
    data = generate_dataset(spec)
    for s in data.training + data.testing:
        assert s.truncated
        assert len(s) == 600
        assert np.all(s.samples[-50:] == s.samples[-1])
        assert s.samples[-1, 1] > 0.99


def test_hold_saturated_leaves_complete_series_alone():
    complete = TimeSeries(0.05, np.zeros((5, 2)))
    assert hold_saturated(complete, 10) is complete
    cut = TimeSeries(0.05, np.array([[0.1, 0.2], [0.3, 0.9]]), truncated=True)
    held = hold_saturated(cut, 4)
    np.testing.assert_array_equal(held.samples, [[0.1, 0.2], [0.3, 0.9], [0.3, 0.9], [0.3, 0.9]])


def test_non_finite_draws_are_dropped(monkeypatch, caplog):
    real = basin.integrate
    calls = {"n": 0}

    def flaky(system, ic, dt, steps, noise_seed=None):
        calls["n"] += 1
        if calls["n"] <= 2:
            raise IntegrationError("Non-finite state in swing trajectory", step=3)
        return real(system, ic, dt, steps, noise_seed)

    monkeypatch.setattr(basin, "integrate", flaky)
    with caplog.at_level("WARNING"):
        data = generate_dataset(small_swing_spec())
    assert set(data.training_labels) == set(SWING_LABELS)
    assert caplog.text.count("dropped") == 2


def test_failed_draws_count_toward_sampling_cap(monkeypatch):
    def always_fails(system, ic, dt, steps, noise_seed=None):
        raise IntegrationError("Non-finite state in swing trajectory", step=1)

    monkeypatch.setattr(basin, "integrate", always_fails)
    with pytest.raises(SamplingError) as info:
        generate_dataset(small_swing_spec(sampling_cap=5))
    assert info.value.draws == 5


# ----------------------------
# Grids and maps
# ----------------------------
def test_grid_is_row_major_first_axis_outer():
    grid = _grid(res=(2, 3), ranges=((0.0, 1.0), (10.0, 12.0)))
    np.testing.assert_allclose(
        grid.coordinates(),
        [[0, 10], [0, 11], [0, 12], [1, 10], [1, 11], [1, 12]],
    )
    assert grid.size == 6


def test_grid_fills_remaining_coordinates_from_base():
    grid = GridSpec((0, 1), ((-1.0, 1.0), (-0.5, 0.5)), (2, 2), (0.0, 0.0, 0.25))
    ics = grid.initial_conditions()
    assert ics.shape == (4, 3)
    assert np.all(ics[:, 2] == 0.25)


def test_single_cell_grid():
    grid = _grid(res=(1, 1), ranges=((0.5, 0.5), (0.0, 0.0)))
    np.testing.assert_allclose(grid.initial_conditions(), [[0.5, 0.0]])


def test_invalid_grid():
    with pytest.raises(InvalidParameterError):
        _grid(res=(0, 3))
    with pytest.raises(InvalidParameterError):
        GridSpec((1, 1), ((0, 1), (0, 1)), (2, 2), (0.0, 0.0))


def test_accuracy_counts_undecided_as_wrong():
    grid = _grid(res=(1, 4))
    truth = (OP, OP, POS, UND)
    result = BasinMap(grid, truth, (OP, NEG, POS, UND))
    assert result.accuracy == 0.5
    assert BasinMap(grid, truth).accuracy == 1.0
    assert result.undecided_fraction() == 0.25


def test_classify_batch_physical_units():
    swing_rows = np.array([[[0.0, 0.0]], [[0.0, 1e4]], [[0.0, -1e4]], [[0.0, 1.0]], [[np.nan, np.nan]]])
    assert classify_batch(SWING, swing_rows) == [OP, POS, NEG, UND, UND]
    chua_rows = np.array([[[-1.0, 0, 0], [-0.5, 0, 0]], [[2.0, 0, 0], [0.1, 0, 0]]])
    assert classify_batch(ChuaParams(), chua_rows) == [AsymptoticLabel.ATTRACTOR_LEFT, AsymptoticLabel.ATTRACTOR_RIGHT]


def test_slow_diverging_training_series_reach_the_diverging_level():
    spec = small_swing_spec(system=SwingParams(0.4, 0.06, 0.7), labels=(POS,), series_length=1000,
                            label_horizon=1000)
    data = generate_dataset(spec)
    for s in data.training + data.testing:
        assert len(s) == 1000
        assert s.samples[-1, 1] > 0.99


def test_inverted_predictions_keep_their_swing_label():
    normalizer = Normalizer(("arctan", "arctan"))
    predicted = np.array([[[0.3, 0.995]], [[0.3, 0.985]], [[0.3, 0.005]], [[0.3, -0.995]], [[1.4, 1.3]]])
    assert classify_batch(SWING, normalizer.invert(predicted)) == [POS, UND, OP, NEG, POS]


# ----------------------------
# Ground truth
# ----------------------------
def test_ground_truth_matches_long_single_run():
    grid = _grid(res=(1, 1), ranges=((0.0, 0.0), (0.0, 0.0)))
    truth = ground_truth_basin(SWING, grid, 0.05, 1500)
    reference = label_series(SWING, integrate(SWING, (0.0, 0.0), 0.05, 2999), 3000, 1)
    assert truth.true_labels[0] == reference


def test_ground_truth_agrees_with_single_integrations():
    grid = _grid()
    truth = ground_truth_basin(SWING, grid, 0.05, 1000, chunk=4)
    for ic, label in zip(grid.initial_conditions(), truth.true_labels):
        assert label == label_series(SWING, integrate(SWING, ic, 0.05, 999), 1000, 1)


def test_ground_truth_ignores_noise():
    grid = _grid()
    plain = ground_truth_basin(SWING, grid, 0.05, 600)
    noisy = ground_truth_basin(SWING.with_noise(0.1), grid, 0.05, 600)
    assert plain.true_labels == noisy.true_labels


def test_chua_ground_truth_is_mirror_symmetric():
    grid = GridSpec((0, 1), ((-2.0, 2.0), (-0.5, 0.5)), (3, 3), (0.0, 0.0, 0.0), ("x", "y"))
    truth = ground_truth_basin(ChuaParams(), grid, 0.05, 2000, tail=500)
    mirror = {AsymptoticLabel.ATTRACTOR_LEFT: AsymptoticLabel.ATTRACTOR_RIGHT,
              AsymptoticLabel.ATTRACTOR_RIGHT: AsymptoticLabel.ATTRACTOR_LEFT, UND: UND}
    labels = truth.true_labels
    for cell, label in enumerate(labels):
        assert labels[grid.size - 1 - cell] == mirror[label]


def test_duffing_ground_truth_follows_the_drive_phase():
    grid = GridSpec((0, 1), ((-1.5, 1.5), (-1.5, 1.5)), (3, 3), (0.0, 0.0), ("x", "y"))
    duffing = DuffingParams()
    at_zero = ground_truth_basin(duffing, grid, 0.01, 2000, tail=100)
    half_period = ground_truth_basin(duffing, grid, 0.01, 2000, tail=100, t0=math.pi)
    mirror = {AsymptoticLabel.ATTRACTOR_LEFT: AsymptoticLabel.ATTRACTOR_RIGHT,
              AsymptoticLabel.ATTRACTOR_RIGHT: AsymptoticLabel.ATTRACTOR_LEFT, UND: UND}
    for cell, label in enumerate(at_zero.true_labels):
        assert half_period.true_labels[grid.size - 1 - cell] == mirror[label]


# ----------------------------
# Inference
# ----------------------------
def test_inference_is_independent_of_chunking(small_machine):
    grid = _grid()
    truth = ground_truth_basin(SWING, grid, 0.05, 1000)
    whole = infer_basin(small_machine, SWING, grid, 10, 200, truth=truth, chunk=9)
    pieces = infer_basin(small_machine, SWING, grid, 10, 200, truth=truth, chunk=2)
    assert whole.predicted_labels == pieces.predicted_labels
    assert 0.0 <= whole.accuracy <= 1.0
    assert whole.true_labels == truth.true_labels


def test_noisy_guiding_is_reproducible(small_machine):
    grid = _grid(res=(2, 2))
    noisy = SWING.with_noise(1e-3)
    a = infer_basin(small_machine, noisy, grid, 10, 100, noise_seed=8)
    b = infer_basin(small_machine, noisy, grid, 10, 100, noise_seed=8)
    assert a.predicted_labels == b.predicted_labels


def test_inference_argument_checks(small_machine):
    grid = _grid(res=(2, 2))
    with pytest.raises(InvalidParameterError):
        infer_basin(small_machine, SWING, grid, guide_length=1)
    with pytest.raises(InvalidParameterError):
        infer_basin(small_machine, SWING.with_noise(1e-3), grid)
    other = ground_truth_basin(SWING, _grid(res=(1, 1)), 0.05, 100)
    with pytest.raises(InvalidParameterError):
        infer_basin(small_machine, SWING, grid, truth=other)


def test_guide_length_sweep_rows(small_machine):
    grid = _grid(res=(2, 2))
    truth = ground_truth_basin(SWING, grid, 0.05, 600)
    table = guide_length_sweep(small_machine, SWING, grid, [5, 10], 100, 100, truth)
    assert list(table["l"]) == [5, 10]
    assert table["accuracy"].between(0, 1).all()


# ----------------------------
# Boundary distance
# ----------------------------
def _halves():
    grid = _grid(res=(4, 4))
    truth = tuple(OP if cell // 4 < 2 else POS for cell in range(16))
    return grid, truth


def test_boundary_distance_of_far_error():
    grid, truth = _halves()
    predicted = list(truth)
    predicted[0] = POS
    assert misclassification_boundary_distance(BasinMap(grid, truth, tuple(predicted))) == pytest.approx(1.0)


def test_boundary_distance_of_boundary_error():
    grid, truth = _halves()
    predicted = list(truth)
    predicted[5] = POS
    assert misclassification_boundary_distance(BasinMap(grid, truth, tuple(predicted))) == 0.0


def test_boundary_distance_edge_cases():
    grid, truth = _halves()
    assert misclassification_boundary_distance(BasinMap(grid, truth, truth)) == 0.0
    uniform = tuple(OP for _ in range(16))
    assert math.isnan(misclassification_boundary_distance(BasinMap(grid, uniform, (POS,) + uniform[1:])))


# ----------------------------
# Studies
# ----------------------------
def _experiment():
    return BasinExperiment(
        dataset=small_swing_spec(series_length=150),
        hyperparams=Hyperparams(p=0.5, spectral_radius=0.5, sigma=1.0, alpha_leak=0.6, eta=1e-4, n=30, d=2),
        beta=10.0,
        machine_seeds=MatrixSeeds.derive(2, 0),
        grid=_grid(res=(2, 2)),
        guide_length=10,
        horizon=100,
        grid_seed=4,
    )


def test_noise_sweep_table():
    experiment = _experiment()
    truth = ground_truth_basin(SWING, experiment.grid, 0.05, 600)
    table = noise_sweep(experiment, [0.0, 0.01], 1, truth, master_seed=3)
    assert list(table.columns) == ["D0", "mean_accuracy", "variance", "realizations_used", "realizations_failed"]
    assert list(table["D0"]) == [0.0, 0.01]
    assert (table["realizations_used"] + table["realizations_failed"] == 1).all()
    with pytest.raises(InvalidParameterError):
        noise_sweep(experiment, [], 1, truth, master_seed=3)


def test_sampling_sweep_table():
    experiment = _experiment()
    truth = ground_truth_basin(SWING, experiment.grid, 0.05, 600)
    table = sampling_sweep(experiment, [1], 1, truth, master_seed=3)
    assert list(table["m"]) == [1]
    assert table.loc[0, "realizations_used"] == 1


def test_realizations_draw_fresh_seeds():
    experiment = _experiment()
    a, b = experiment.realization(1, 0), experiment.realization(1, 1)
    assert a.dataset.seed != b.dataset.seed
    assert a.machine_seeds != b.machine_seeds
    assert a.grid_seed != b.grid_seed
    assert experiment.realization(1, 0) == a


def test_decided_labels_survive_a_doubled_horizon():
    grid = _grid(res=(6, 6))
    short = ground_truth_basin(SWING, grid, 0.05, 1500)
    doubled = ground_truth_basin(SWING, grid, 0.05, 3000)
    for a, b in zip(short.true_labels, doubled.true_labels):
        if a is not UND:
            assert b is a


# ----------------------------
# Reference experiments
# ----------------------------
def _reference_truth(cfg, resolution):
    d = cfg.dataset
    return ground_truth_basin(ec.build_system(cfg), ec.grid_spec(cfg, resolution), d.dt, d.label_horizon,
                              d.label_tail, workers=-1)


def _reference_maps(experiment_id, resolution, seeds=5):
    cfg = ec.reference_config(experiment_id)
    truth = _reference_truth(cfg, resolution)
    maps = [ec.basin_experiment(cfg, k, resolution).run(truth, workers=-1)[1] for k in range(seeds)]
    return truth, maps


def _everything_wrong(truth):
    return BasinMap(truth.grid, truth.true_labels, tuple(UND for _ in truth.true_labels))


@pytest.mark.slow
def test_swing_headline_accuracy():
    truth, maps = _reference_maps("swing-D0.39", (100, 100))
    best = max(maps, key=lambda m: m.accuracy)
    assert best.accuracy >= ACCURACY_FLOOR["swing-D0.39"]
    # misses sit along the basin boundaries
    assert misclassification_boundary_distance(best) < misclassification_boundary_distance(_everything_wrong(truth))


@pytest.mark.slow
def test_fewer_training_series_degrade_accuracy():
    _, full = _reference_maps("swing-D0.39", (100, 100))
    _, reduced = _reference_maps("swing-D0.39-reduced", (100, 100))
    assert max(m.accuracy for m in reduced) < max(m.accuracy for m in full)
    assert any(0.55 <= m.accuracy <= 0.85 for m in reduced)


@pytest.mark.slow
def test_small_training_noise_helps():
    cfg = ec.reference_config("swing-D0.39-reduced")
    truth = _reference_truth(cfg, (40, 40))
    table = noise_sweep(ec.basin_experiment(cfg, 0, (40, 40)), NOISE_SWEEP_AMPLITUDES, 10, truth,
                        master_seed=11, workers=-1)
    accuracy = dict(zip(table["D0"], table["mean_accuracy"]))
    assert accuracy[1e-5] > accuracy[0.0]
    peak = table["mean_accuracy"].idxmax()
    assert 0 < peak < len(table) - 1


@pytest.mark.slow
def test_fish_like_basins():
    _, clean = _reference_maps("swing-D0.06", (60, 60))
    _, noisy = _reference_maps("swing-D0.06-noisy", (60, 60))
    assert max(m.accuracy for m in clean) >= ACCURACY_FLOOR["swing-D0.06"]
    assert np.mean([m.accuracy for m in noisy]) > np.mean([m.accuracy for m in clean])


@pytest.mark.slow
@pytest.mark.parametrize("experiment_id", ["chua", "duffing"])
def test_chaotic_basin_accuracy(experiment_id):
    _, maps = _reference_maps(experiment_id, (40, 40))
    assert max(m.accuracy for m in maps) >= ACCURACY_FLOOR[experiment_id]
