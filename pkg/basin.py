"""
basin.py
Labeled datasets, grids of initial conditions, ground-truth basins by brute
force simulation, basin inference with a trained machine from short guiding
series, and the accuracy studies built on top (noise, guiding length, per-label
sampling).

Grid cells are numbered row-major with the first axis outer. Every per-cell
random draw is keyed by (seed, cell index), so maps do not depend on chunking
or worker scheduling.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.ndimage import distance_transform_edt

from dynamics import (
    ARCTAN,
    AsymptoticLabel,
    Normalizer,
    SystemParams,
    TimeSeries,
    classify_chaotic,
    classify_swing,
    classify_swing_values,
    classify_tail_means,
    integrate,
    integrate_batch,
    normalize,
)
from errors import BalancedRCError, IntegrationError, InvalidParameterError, SamplingError
from reservoir import (
    PREDICTION_STATES,
    Hyperparams,
    MatrixSeeds,
    Provenance,
    TrainedMachine,
    guide_and_predict,
    initial_states,
    train_machine,
)
from seeding import derive_seed, substream

logger = logging.getLogger(__name__)

SAMPLING_CAP = 10000
DEFAULT_CHUNK = 1000

TRAINING_SPLIT = 0
TESTING_SPLIT = 1


# =========================
# Labeling
# =========================
def _is_swing(system: SystemParams) -> bool:
    return system.kind == "swing"


def deterministic(system: SystemParams) -> SystemParams:
    """The noise-free version of a system; basins are defined for it."""
    return system.with_noise(0.0) if hasattr(system, "with_noise") else system


def label_steps(system: SystemParams, horizon: int) -> int:
    """Integration steps a label needs: swing reads sample horizon-1, chaotic systems run `horizon` steps."""
    return horizon - 1 if _is_swing(system) else horizon


def label_series(system: SystemParams, series: TimeSeries, horizon: int, tail: int) -> AsymptoticLabel:
    """Label of a physical-unit trajectory: swing on arctan(omega) at the horizon, chaotic on the tail mean of x."""
    if _is_swing(system):
        return classify_swing(normalize(series.head(horizon), ARCTAN), horizon)
    return classify_chaotic(series.head(horizon + 1), tail)


def classify_batch(system: SystemParams, physical: np.ndarray) -> List[AsymptoticLabel]:
    """
    physical: (N, K, d) trajectory ends in physical units. Swing rows are read
    at their last sample, chaotic rows through the mean of x over all K.
    Rows holding NaN come back Undecided.
    """
    if _is_swing(system):
        with np.errstate(invalid="ignore"):
            return classify_swing_values(2.0 * np.arctan(physical[:, -1, 1]) / np.pi)
    with np.errstate(invalid="ignore"):
        return classify_tail_means(physical[:, :, 0].mean(axis=1))


# =========================
# Datasets
# =========================
@dataclass(frozen=True)
class DatasetSpec:
    system: SystemParams
    ic_ranges: Tuple[Tuple[float, float], ...]
    m: int = 3
    series_length: int = 1500
    dt: float = 0.05
    listen: int = 10
    normalization: Tuple[str, ...] = (ARCTAN, ARCTAN)
    noise_amplitude: float = 0.0
    seed: int = 0
    sampling_cap: int = SAMPLING_CAP
    label_horizon: int = 1500
    label_tail: int = 100
    labels: Optional[Tuple[AsymptoticLabel, ...]] = None
    total_points: Optional[int] = None

    def __post_init__(self):
        if self.m < 1:
            raise InvalidParameterError(f"m must be >= 1, got {self.m}")
        if len(self.ic_ranges) != self.system.dim:
            raise InvalidParameterError(f"{len(self.ic_ranges)} ic ranges for a {self.system.dim}-dimensional system")
        for lo, hi in self.ic_ranges:
            if not lo <= hi:
                raise InvalidParameterError(f"bad ic range ({lo}, {hi})")
        if len(self.normalization) != self.system.dim:
            raise InvalidParameterError(f"{len(self.normalization)} normalization schemes for dimension {self.system.dim}")
        if self.series_length < self.listen + 2:
            raise InvalidParameterError(
                f"series_length {self.series_length} leaves no working pairs after listen {self.listen}"
            )
        if self.noise_amplitude > 0 and self.system.noise_index is None:
            raise InvalidParameterError(f"{self.system.kind} runs take no additive noise")
        if self.sampling_cap < 1:
            raise InvalidParameterError(f"sampling_cap must be >= 1, got {self.sampling_cap}")

    @property
    def noisy_system(self) -> SystemParams:
        return self.system.with_noise(self.noise_amplitude) if self.noise_amplitude > 0 else deterministic(self.system)

    @property
    def target_labels(self) -> Tuple[AsymptoticLabel, ...]:
        return tuple(self.labels) if self.labels else tuple(self.system.labels)

    @property
    def points_per_series(self) -> int:
        """Per-series length; a total_points value is split evenly over all series."""
        if self.total_points is None:
            return self.series_length
        count = self.m * len(self.target_labels)
        length = self.total_points // count
        if length < self.listen + 2:
            raise InvalidParameterError(f"total_points {self.total_points} too small for {count} series")
        return length


@dataclass(frozen=True, eq=False)
class Dataset:
    training: Tuple[TimeSeries, ...]
    testing: Tuple[TimeSeries, ...]
    normalizer: Normalizer
    training_labels: Tuple[AsymptoticLabel, ...]
    testing_labels: Tuple[AsymptoticLabel, ...]
    training_ics: np.ndarray
    testing_ics: np.ndarray
    seed: int = 0


def _draw_split(spec: DatasetSpec, split: int) -> Tuple[List[TimeSeries], List[AsymptoticLabel], List[np.ndarray]]:
    system = spec.noisy_system
    length = spec.points_per_series
    wanted = spec.target_labels
    steps = max(length - 1, label_steps(system, spec.label_horizon))
    lows = np.array([r[0] for r in spec.ic_ranges])
    highs = np.array([r[1] for r in spec.ic_ranges])

    kept: Dict[AsymptoticLabel, List[Tuple[TimeSeries, np.ndarray]]] = {label: [] for label in wanted}
    draws = 0
    while any(len(v) < spec.m for v in kept.values()):
        if draws >= spec.sampling_cap:
            missing = next(label for label, v in kept.items() if len(v) < spec.m)
            raise SamplingError(str(missing), draws)
        ic = substream(spec.seed, "data", split, draws).uniform(lows, highs)
        noise_seed = derive_seed(spec.seed, "noise", split, draws) if system.noise_amplitude > 0 else None
        draws += 1
        try:
            full = integrate(system, ic, spec.dt, steps, noise_seed)
        except IntegrationError as exc:
            logger.warning("Split %d draw %d at %s dropped: %s", split, draws - 1, np.round(ic, 4).tolist(), exc)
            continue
        label = label_series(system, full, spec.label_horizon, spec.label_tail)
        if label in kept and len(kept[label]) < spec.m:
            kept[label].append((full.head(length), ic))

    logger.debug("Split %d: %d draws for %d labels x %d series", split, draws, len(wanted), spec.m)
    series, labels, ics = [], [], []
    for label in wanted:
        for s, ic in kept[label]:
            series.append(s)
            labels.append(label)
            ics.append(ic)
    return series, labels, ics


def hold_saturated(series: TimeSeries, length: int) -> TimeSeries:
    """Extends a guard-truncated series to `length` samples by repeating its last sample."""
    if not series.truncated or len(series) >= length:
        return series
    tail = np.repeat(series.samples[-1:], length - len(series), axis=0)
    return series.with_samples(np.vstack([series.samples, tail]))


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """
    Rejection-samples initial conditions until every label has m series, for
    the training and the testing split from disjoint seed streams. Series are
    normalized with a normalizer fitted on the raw training series only.
    Swing series cut short by the overflow guard are held at their last
    normalized sample up to the full series length, where the arctan scale
    has already saturated.
    """
    missing = set(spec.system.labels) - set(spec.target_labels)
    if missing:
        logger.warning(
            "Dataset restricted to %s; coexisting states %s are left out of training",
            [str(l) for l in spec.target_labels], sorted(str(l) for l in missing),
        )
    raw_train, train_labels, train_ics = _draw_split(spec, TRAINING_SPLIT)
    raw_test, test_labels, test_ics = _draw_split(spec, TESTING_SPLIT)
    normalizer = Normalizer.fit(spec.normalization, raw_train)
    length = spec.points_per_series
    logger.info(
        "Dataset: %d training / %d testing series of %d points (%s, D0=%g)",
        len(raw_train), len(raw_test), spec.points_per_series, spec.system.kind, spec.noise_amplitude,
    )
    return Dataset(
        tuple(hold_saturated(normalize(s, normalizer), length) for s in raw_train),
        tuple(hold_saturated(normalize(s, normalizer), length) for s in raw_test),
        normalizer,
        tuple(train_labels),
        tuple(test_labels),
        np.array(train_ics),
        np.array(test_ics),
        spec.seed,
    )


# =========================
# Grids and basin maps
# =========================
@dataclass(frozen=True)
class GridSpec:
    """
    Two-dimensional slice of initial conditions. `base` holds every coordinate;
    the two axes overwrite theirs with evenly spaced values, ends included.
    """

    axes: Tuple[int, int]
    ranges: Tuple[Tuple[float, float], Tuple[float, float]]
    resolution: Tuple[int, int]
    base: Tuple[float, ...]
    names: Tuple[str, str] = ("", "")

    def __post_init__(self):
        if self.resolution[0] < 1 or self.resolution[1] < 1:
            raise InvalidParameterError(f"grid resolution must be positive, got {self.resolution}")
        if self.axes[0] == self.axes[1]:
            raise InvalidParameterError(f"grid axes must differ, got {self.axes}")
        for a in self.axes:
            if not 0 <= a < len(self.base):
                raise InvalidParameterError(f"grid axis {a} outside a {len(self.base)}-dimensional state")

    @property
    def size(self) -> int:
        return self.resolution[0] * self.resolution[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.resolution

    def axis_values(self, which: int) -> np.ndarray:
        lo, hi = self.ranges[which]
        return np.linspace(lo, hi, self.resolution[which])

    def coordinates(self) -> np.ndarray:
        """(size, 2) axis coordinates per cell in row-major order."""
        a, b = np.meshgrid(self.axis_values(0), self.axis_values(1), indexing="ij")
        return np.column_stack([a.ravel(), b.ravel()])

    def initial_conditions(self) -> np.ndarray:
        ics = np.tile(np.asarray(self.base, dtype=float), (self.size, 1))
        coords = self.coordinates()
        ics[:, self.axes[0]] = coords[:, 0]
        ics[:, self.axes[1]] = coords[:, 1]
        return ics

    @property
    def diagonal(self) -> float:
        """Grid diagonal in cell units."""
        return math.hypot(self.resolution[0] - 1, self.resolution[1] - 1)


@dataclass(frozen=True, eq=False)
class BasinMap:
    grid: GridSpec
    true_labels: Tuple[AsymptoticLabel, ...]
    predicted_labels: Optional[Tuple[AsymptoticLabel, ...]] = None
    config_digest: str = ""
    master_seed: int = 0

    def __post_init__(self):
        if len(self.true_labels) != self.grid.size:
            raise InvalidParameterError(f"{len(self.true_labels)} labels for a grid of {self.grid.size} cells")
        if self.predicted_labels is not None and len(self.predicted_labels) != self.grid.size:
            raise InvalidParameterError(f"{len(self.predicted_labels)} predictions for a grid of {self.grid.size} cells")

    @property
    def correct(self) -> np.ndarray:
        """Per-cell hit mask; Undecided never counts as a hit."""
        predicted = self.predicted_labels if self.predicted_labels is not None else self.true_labels
        return np.array([
            p == t and p != AsymptoticLabel.UNDECIDED for p, t in zip(predicted, self.true_labels)
        ])

    @property
    def accuracy(self) -> float:
        if self.predicted_labels is None:
            return 1.0
        return float(self.correct.mean())

    def undecided_fraction(self, predicted: bool = False) -> float:
        layer = self.predicted_labels if predicted else self.true_labels
        if layer is None:
            return 0.0
        return sum(l == AsymptoticLabel.UNDECIDED for l in layer) / len(layer)

    def layer(self, predicted: bool = False) -> np.ndarray:
        """Labels as a (res0, res1) array of strings."""
        source = self.predicted_labels if predicted else self.true_labels
        if source is None:
            raise InvalidParameterError("basin map has no predicted layer")
        return np.array([str(l) for l in source]).reshape(self.grid.shape)

    def label_counts(self, predicted: bool = False) -> Dict[str, int]:
        values, counts = np.unique(self.layer(predicted), return_counts=True)
        return {str(v): int(c) for v, c in zip(values, counts)}


def _chunks(size: int, chunk: int) -> List[Tuple[int, int]]:
    return [(start, min(start + chunk, size)) for start in range(0, size, chunk)]


# ----------------------------
# Ground truth
# ----------------------------
def _truth_chunk(
    system: SystemParams, ics: np.ndarray, dt: float, horizon: int, tail: int, t0: float
) -> List[AsymptoticLabel]:
    keep = 1 if _is_swing(system) else tail
    batch = integrate_batch(system, ics, dt, label_steps(system, horizon), keep_last=keep, t0=t0)
    return classify_batch(system, batch.samples)


def ground_truth_basin(
    system: SystemParams,
    grid: GridSpec,
    dt: float,
    horizon: int,
    tail: int = 100,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
    config_digest: str = "",
    master_seed: int = 0,
    t0: float = 0.0,
) -> BasinMap:
    """
    Labels every grid initial condition by simulating the noise-free system to
    the horizon. For the driven Duffing system `t0` fixes the drive phase the
    initial conditions are taken at.
    """
    if grid.size < 1:
        raise InvalidParameterError("grid is empty")
    system = deterministic(system)
    ics = grid.initial_conditions()
    parts = Parallel(n_jobs=workers)(
        delayed(_truth_chunk)(system, ics[a:b], dt, horizon, tail, t0) for a, b in _chunks(grid.size, chunk)
    )
    labels = tuple(label for part in parts for label in part)
    result = BasinMap(grid, labels, None, config_digest, master_seed)
    undecided = result.undecided_fraction()
    if undecided > 0:
        logger.warning("Ground truth: %.2f%% of %d cells Undecided", 100 * undecided, grid.size)
    logger.info("Ground truth %s on %dx%d grid: %s", system.kind, *grid.shape, result.label_counts())
    return result


# ----------------------------
# Inference
# ----------------------------
def _infer_chunk(
    machine: TrainedMachine,
    system: SystemParams,
    ics: np.ndarray,
    cells: np.ndarray,
    guide_length: int,
    horizon: int,
    tail: int,
    noise_seed: Optional[int],
) -> List[AsymptoticLabel]:
    noise_seeds = None
    if system.noise_index is not None and system.noise_amplitude > 0:
        noise_seeds = [derive_seed(noise_seed, "noise", int(c)) for c in cells]
    guiding = integrate_batch(system, ics, machine.dt, guide_length - 1, noise_seeds,
                              t0=machine.provenance.t0).samples
    if machine.normalizer is not None:
        guiding = machine.normalizer.apply(guiding)
    n = machine.hyperparams.n
    init = np.stack([initial_states(machine.matrices.seeds.init_state_seed, PREDICTION_STATES, int(c), n) for c in cells])
    keep = 1 if _is_swing(system) else tail
    out, flagged = guide_and_predict(machine, guiding, horizon, init, keep_last=keep)
    physical = machine.normalizer.invert(out) if machine.normalizer is not None else out
    physical[flagged] = np.nan
    return classify_batch(system, physical)


def infer_basin(
    machine: TrainedMachine,
    system: SystemParams,
    grid: GridSpec,
    guide_length: int = 10,
    horizon: int = 1500,
    tail: int = 100,
    truth: Optional[BasinMap] = None,
    noise_seed: Optional[int] = None,
    workers: int = 1,
    chunk: int = DEFAULT_CHUNK,
    config_digest: str = "",
    master_seed: int = 0,
) -> BasinMap:
    """
    For each cell: integrate the true system guide_length-1 steps from the
    cell's initial condition, normalize with the machine's frozen normalizer,
    listen, run the closed loop for `horizon` steps and classify the prediction
    with the ground-truth criteria. `system` carries noise when the guiding
    series should be noisy; then `noise_seed` keys the per-cell noise.
    Guides start at the machine's training start time, so a driven system is
    guided at the drive phase the machine was trained on.
    """
    if guide_length < 2:
        raise InvalidParameterError(f"guide_length must be >= 2, got {guide_length}")
    if horizon < 1:
        raise InvalidParameterError(f"horizon must be >= 1, got {horizon}")
    if system.noise_amplitude > 0 and noise_seed is None:
        raise InvalidParameterError("noisy guiding series need a noise_seed")
    if truth is not None and truth.grid != grid:
        raise InvalidParameterError("ground-truth map was computed on a different grid")

    ics = grid.initial_conditions()
    cells = np.arange(grid.size)
    parts = Parallel(n_jobs=workers)(
        delayed(_infer_chunk)(machine, system, ics[a:b], cells[a:b], guide_length, horizon, tail, noise_seed)
        for a, b in _chunks(grid.size, chunk)
    )
    predicted = tuple(label for part in parts for label in part)
    true_labels = truth.true_labels if truth is not None else tuple(AsymptoticLabel.UNDECIDED for _ in predicted)
    result = BasinMap(grid, true_labels, predicted, config_digest, master_seed)
    undecided = result.undecided_fraction(predicted=True)
    if undecided > 0:
        logger.warning("Inference: %.2f%% of cells Undecided", 100 * undecided)
    if truth is not None:
        logger.info("Basin accuracy %.4f on %dx%d grid (l=%d, horizon=%d)",
                    result.accuracy, *grid.shape, guide_length, horizon)
    return result


def misclassification_boundary_distance(basin_map: BasinMap) -> float:
    """
    Mean distance, in cells, from each misclassified cell to the nearest cell
    on a true basin boundary (a cell with a 4-neighbour of a different label).
    0.0 when nothing is misclassified, nan when the true map has no boundary.
    """
    wrong = ~basin_map.correct.reshape(basin_map.grid.shape)
    if not wrong.any():
        return 0.0
    truth = basin_map.layer()
    boundary = np.zeros(truth.shape, dtype=bool)
    vertical = truth[1:, :] != truth[:-1, :]
    horizontal = truth[:, 1:] != truth[:, :-1]
    boundary[1:, :] |= vertical
    boundary[:-1, :] |= vertical
    boundary[:, 1:] |= horizontal
    boundary[:, :-1] |= horizontal
    if not boundary.any():
        return math.nan
    distance = distance_transform_edt(~boundary)
    return float(distance[wrong].mean())


# =========================
# Experiments and studies
# =========================
@dataclass(frozen=True)
class BasinExperiment:
    """One dataset -> machine -> basin pipeline with fixed hyperparameters."""

    dataset: DatasetSpec
    hyperparams: Hyperparams
    beta: float
    machine_seeds: MatrixSeeds
    grid: GridSpec
    guide_length: int = 10
    horizon: int = 1500
    tail: int = 100
    noisy_guiding: bool = True
    grid_seed: int = 0
    provenance: Provenance = field(default_factory=Provenance)

    def guiding_system(self) -> SystemParams:
        return self.dataset.noisy_system if self.noisy_guiding else deterministic(self.dataset.system)

    def train(self, data: Dataset) -> TrainedMachine:
        return train_machine(
            self.hyperparams, self.machine_seeds, data.training, self.dataset.listen,
            self.beta, self.provenance, data.normalizer,
        )

    def run(self, truth: BasinMap, workers: int = 1) -> Tuple[TrainedMachine, BasinMap]:
        data = generate_dataset(self.dataset)
        machine = self.train(data)
        result = infer_basin(
            machine, self.guiding_system(), self.grid, self.guide_length, self.horizon, self.tail,
            truth, self.grid_seed, workers, config_digest=self.provenance.config_digest,
            master_seed=self.provenance.master_seed,
        )
        return machine, result

    def realization(self, master_seed: int, *keys: int) -> "BasinExperiment":
        """Same experiment with fresh data, matrices and guiding noise drawn from (master_seed, keys)."""
        return replace(
            self,
            dataset=replace(self.dataset, seed=derive_seed(master_seed, "data", *keys)),
            machine_seeds=MatrixSeeds.derive(master_seed, *keys),
            grid_seed=derive_seed(master_seed, "grid", *keys),
        )


def _accuracy_or_none(experiment: BasinExperiment, truth: BasinMap) -> Optional[float]:
    try:
        return experiment.run(truth)[1].accuracy
    except BalancedRCError as exc:
        logger.warning("Realization failed and is excluded: %s", exc)
        return None


def _summarize(key: str, rows: List[Tuple[float, List[Optional[float]]]]) -> pd.DataFrame:
    records = []
    for value, results in rows:
        used = [r for r in results if r is not None]
        records.append({
            key: value,
            "mean_accuracy": float(np.mean(used)) if used else math.nan,
            "variance": float(np.var(used)) if used else math.nan,
            "realizations_used": len(used),
            "realizations_failed": len(results) - len(used),
        })
    return pd.DataFrame(records, columns=[key, "mean_accuracy", "variance", "realizations_used", "realizations_failed"])


def noise_sweep(
    experiment: BasinExperiment,
    amplitudes: Sequence[float],
    realizations: int,
    truth: BasinMap,
    master_seed: int,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Accuracy against the training-noise amplitude D0. Each (amplitude,
    realization) pair regenerates noisy data, retrains and infers; failures
    are excluded from the mean and counted.
    """
    if not amplitudes:
        raise InvalidParameterError("noise sweep needs at least one amplitude")
    if realizations < 1:
        raise InvalidParameterError(f"realizations must be >= 1, got {realizations}")
    jobs = []
    for a, amplitude in enumerate(amplitudes):
        noisy = replace(experiment, dataset=replace(experiment.dataset, noise_amplitude=float(amplitude)))
        for r in range(realizations):
            jobs.append(noisy.realization(master_seed, a, r))
    results = Parallel(n_jobs=workers)(delayed(_accuracy_or_none)(job, truth) for job in jobs)
    rows = [(float(amp), results[a * realizations : (a + 1) * realizations]) for a, amp in enumerate(amplitudes)]
    table = _summarize("D0", rows)
    logger.info("Noise sweep:\n%s", table.to_string(index=False))
    return table


def sampling_sweep(
    experiment: BasinExperiment,
    ms: Sequence[int],
    realizations: int,
    truth: BasinMap,
    master_seed: int,
    workers: int = 1,
) -> pd.DataFrame:
    """Accuracy against the number of training series per label."""
    jobs = []
    for i, m in enumerate(ms):
        sized = replace(experiment, dataset=replace(experiment.dataset, m=int(m)))
        for r in range(realizations):
            jobs.append(sized.realization(master_seed, i, r))
    results = Parallel(n_jobs=workers)(delayed(_accuracy_or_none)(job, truth) for job in jobs)
    rows = [(int(m), results[i * realizations : (i + 1) * realizations]) for i, m in enumerate(ms)]
    return _summarize("m", rows)


def guide_length_sweep(
    machine: TrainedMachine,
    system: SystemParams,
    grid: GridSpec,
    lengths: Sequence[int],
    horizon: int,
    tail: int,
    truth: BasinMap,
    noise_seed: Optional[int] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """Accuracy of one machine against the guiding-series length l."""
    rows = []
    for length in lengths:
        result = infer_basin(machine, system, grid, int(length), horizon, tail, truth, noise_seed, workers)
        rows.append({"l": int(length), "accuracy": result.accuracy,
                     "undecided": result.undecided_fraction(predicted=True)})
    return pd.DataFrame(rows, columns=["l", "accuracy", "undecided"])
