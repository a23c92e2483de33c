# main_logic.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

import experiment_config as ec
from basin import (
    BasinMap,
    Dataset,
    generate_dataset,
    ground_truth_basin,
    guide_length_sweep,
    infer_basin,
    misclassification_boundary_distance,
    noise_sweep,
    sampling_sweep,
)
from dataset_io import read_basin_map, read_header, write_basin_map, write_dataset, write_pgm, write_table
from errors import BalancedRCError, ConfigError
from hyperopt import evaluate_candidate, retrain_best, search
from machine_store import load_machine, save_machine
from objective import ErrorReport, anticorrelation_study, prediction_error, sync_error
from reservoir import MatrixSeeds, TrainedMachine, train_machine
from report_builder import ReportBuilder
from seeding import derive_seed, substream

logger = logging.getLogger(__name__)


@dataclass
class StageResult:
    stage: str
    artifacts: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


# =========================
# Shared plumbing
# =========================
def _header(cfg: ec.ExperimentConfig, **extra) -> Dict[str, Any]:
    header = {
        "experiment_id": cfg.experiment_id,
        "config_digest": ec.config_digest(cfg),
        "master_seed": cfg.master_seed,
    }
    header.update(extra)
    return header


def _out(cfg: ec.ExperimentConfig, *parts: str) -> Path:
    path = ec.output_directory(cfg).joinpath(*parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _record_config(cfg: ec.ExperimentConfig) -> Path:
    return ec.save_config(cfg, _out(cfg, "config.yaml"))


def _dataset(cfg: ec.ExperimentConfig) -> Dataset:
    return generate_dataset(ec.dataset_spec(cfg))


def _ground_truth(cfg: ec.ExperimentConfig, resolution: Optional[Tuple[int, int]] = None) -> Tuple[BasinMap, Path]:
    """Ground truth for the config's grid, reused from disk when an earlier run wrote it for the same config."""
    grid = ec.grid_spec(cfg, resolution)
    path = _out(cfg, "basin", f"ground_truth_{grid.shape[0]}x{grid.shape[1]}.csv")
    digest = ec.config_digest(cfg)
    if path.exists() and read_header(path).get("config_digest") == digest:
        logger.info("Reusing ground truth %s", path)
        return read_basin_map(path), path
    d = cfg.dataset
    truth = ground_truth_basin(
        ec.build_system(cfg), grid, d.dt, d.label_horizon, d.label_tail,
        cfg.output.workers, cfg.grid.chunk, digest, cfg.master_seed,
    )
    write_basin_map(truth, path, _header(cfg, layer="ground_truth"))
    write_pgm(truth, path.with_suffix(".pgm"))
    return truth, path


def _train_all(cfg: ec.ExperimentConfig, data: Dataset) -> List[Tuple[MatrixSeeds, TrainedMachine]]:
    hp = ec.hyperparams(cfg)
    provenance = ec.provenance(cfg)
    machines = []
    for seeds in ec.machine_seeds(cfg):
        machine = train_machine(hp, seeds, data.training, cfg.dataset.listen, cfg.machine.beta,
                                provenance, data.normalizer)
        machines.append((seeds, machine))
    return machines


def _load_compatible_machine(cfg: ec.ExperimentConfig, machine_path: str) -> TrainedMachine:
    """Loads a machine file and rejects it when it cannot drive this config's system."""
    machine = load_machine(machine_path)
    problems = []
    system = ec.build_system(cfg)
    if machine.hyperparams.d != system.dim:
        problems.append(("machine.d", f"machine reads {machine.hyperparams.d} variables, {system.kind} has {system.dim}"))
    kind = machine.provenance.system_kind
    if kind and kind != cfg.system.kind:
        problems.append(("system.kind", f"machine was trained on {kind}, config runs {cfg.system.kind}"))
    if machine.dt != cfg.dataset.dt:
        problems.append(("dataset.dt", f"machine was trained at dt={machine.dt}, config uses {cfg.dataset.dt}"))
    schemes = tuple(machine.normalizer.schemes) if machine.normalizer is not None else None
    if schemes is not None and schemes != tuple(cfg.dataset.normalization):
        problems.append(("dataset.normalization",
                         f"machine normalizes with {list(schemes)}, config asks for {list(cfg.dataset.normalization)}"))
    if problems:
        raise ConfigError(problems, source=f"(machine {machine_path})")
    return machine


def _evaluate(cfg: ec.ExperimentConfig, machine: TrainedMachine, data: Dataset, key: int) -> ErrorReport:
    s = cfg.search
    d_p = prediction_error(machine, data.testing, cfg.dataset.listen, s.validation_horizon)
    d_s = sync_error(machine.matrices, machine.hyperparams.alpha_leak, data.training, s.tau,
                     s.sync_realizations, derive_seed(cfg.master_seed, "sync", key))
    return ErrorReport.build(d_p, d_s, cfg.machine.beta, s.sync_realizations)


# =========================
# Stages
# =========================
def run_gen_data(cfg: ec.ExperimentConfig) -> StageResult:
    data = _dataset(cfg)
    paths = write_dataset(data, ec.output_directory(cfg) / "data", _header(cfg))
    return StageResult("gen-data", [_record_config(cfg)] + paths,
                       {"training_series": len(data.training), "testing_series": len(data.testing)})


def run_search(cfg: ec.ExperimentConfig) -> StageResult:
    data = _dataset(cfg)
    space = ec.search_space(cfg)
    result = search(space, data.training, data.testing, cfg.search.strategy,
                    ec.evaluation_settings(cfg), cfg.output.workers)
    best = result.best
    machine = retrain_best(best, data.training, cfg.dataset.listen, cfg.machine.beta,
                           ec.provenance(cfg), data.normalizer)
    machine_path = save_machine(machine, _out(cfg, "machines", "best.json"))
    result.trials[result.trials.index(best)] = best = _with_path(best, machine_path)
    log_path = write_table(result.trial_log(), _out(cfg, "search", "trial_log.csv"),
                           _header(cfg, strategy=cfg.search.strategy, trial_budget=space.trial_budget))
    return StageResult(
        "search", [_record_config(cfg), log_path, machine_path],
        {"best_candidate": best.candidate_id, "best_delta_e": best.report.delta_e,
         "best_hyperparams": list(best.hyperparams.as_tuple()), "machine": str(machine_path)},
    )


def _with_path(record, path: Path):
    return replace(record, machine_path=str(path))


def run_train(cfg: ec.ExperimentConfig) -> StageResult:
    data = _dataset(cfg)
    artifacts = [_record_config(cfg)]
    rows = []
    for k, (seeds, machine) in enumerate(_train_all(cfg, data)):
        path = save_machine(machine, _out(cfg, "machines", f"machine-{k}.json"))
        artifacts.append(path)
        report = _evaluate(cfg, machine, data, k)
        row = report.as_row(k, machine.hyperparams)
        row["machine_path"] = str(path)
        rows.append(row)
    table = pd.DataFrame(rows)
    artifacts.append(write_table(table, _out(cfg, "machines", "train_report.csv"), _header(cfg)))
    return StageResult("train", artifacts, {"machines": len(rows), "best_delta_e": float(table["delta_e"].min())})


def run_ground_truth(cfg: ec.ExperimentConfig) -> StageResult:
    truth, path = _ground_truth(cfg)
    return StageResult("ground-truth", [_record_config(cfg), path, path.with_suffix(".pgm")],
                       {"undecided_fraction": truth.undecided_fraction(), "labels": truth.label_counts()})


def run_infer_basin(cfg: ec.ExperimentConfig, machine_path: Optional[str] = None) -> StageResult:
    if machine_path:
        machines = [(None, _load_compatible_machine(cfg, machine_path))]
    else:
        machines = _train_all(cfg, _dataset(cfg))
    truth, truth_path = _ground_truth(cfg)

    system = ec.dataset_spec(cfg).noisy_system if cfg.grid.noisy_guiding else ec.build_system(cfg)
    artifacts = [_record_config(cfg), truth_path]
    rows = []
    for k, (_, machine) in enumerate(machines):
        result = infer_basin(
            machine, system, truth.grid, cfg.prediction.guide_length, cfg.prediction.horizon,
            cfg.prediction.tail, truth, ec.grid_seed(cfg), cfg.output.workers, cfg.grid.chunk,
            ec.config_digest(cfg), cfg.master_seed,
        )
        path = _out(cfg, "basin", f"inferred-{k}.csv")
        artifacts.append(write_basin_map(result, path, _header(cfg, layer="inferred", machine=k)))
        artifacts.append(write_pgm(result, path.with_suffix(".pgm"), predicted=True))
        rows.append({
            "machine": k,
            "accuracy": result.accuracy,
            "undecided": result.undecided_fraction(predicted=True),
            "boundary_distance": misclassification_boundary_distance(result),
            "grid_diagonal": truth.grid.diagonal,
        })
    table = pd.DataFrame(rows)
    artifacts.append(write_table(table, _out(cfg, "basin", "accuracy.csv"), _header(cfg)))
    best = table.loc[table["accuracy"].idxmax()]
    return StageResult("infer-basin", artifacts,
                       {"best_accuracy": float(best["accuracy"]), "best_machine": int(best["machine"]),
                        "accuracies": [float(a) for a in table["accuracy"]]})


def run_sweep_noise(cfg: ec.ExperimentConfig) -> StageResult:
    resolution = cfg.noise_sweep.resolution
    truth, truth_path = _ground_truth(cfg, resolution)
    experiment = ec.basin_experiment(cfg, 0, resolution)
    table = noise_sweep(experiment, cfg.noise_sweep.amplitudes, cfg.noise_sweep.realizations, truth,
                        derive_seed(cfg.master_seed, "sweep"), cfg.output.workers)
    path = write_table(table, _out(cfg, "sweeps", "noise_sweep.csv"), _header(cfg))
    peak = table.loc[table["mean_accuracy"].idxmax()] if table["mean_accuracy"].notna().any() else None
    return StageResult("sweep-noise", [_record_config(cfg), truth_path, path],
                       {"peak_D0": None if peak is None else float(peak["D0"]),
                        "peak_accuracy": None if peak is None else float(peak["mean_accuracy"])})


def run_sweep_sampling(cfg: ec.ExperimentConfig) -> StageResult:
    resolution = cfg.noise_sweep.resolution
    truth, truth_path = _ground_truth(cfg, resolution)
    experiment = ec.basin_experiment(cfg, 0, resolution)
    table = sampling_sweep(experiment, cfg.noise_sweep.m_values, cfg.noise_sweep.realizations, truth,
                           derive_seed(cfg.master_seed, "sweep", 1), cfg.output.workers)
    path = write_table(table, _out(cfg, "sweeps", "sampling_sweep.csv"), _header(cfg))
    return StageResult("sweep-sampling", [_record_config(cfg), truth_path, path],
                       {"mean_accuracy": dict(zip(table["m"].tolist(), table["mean_accuracy"].tolist()))})


def run_sweep_guide(cfg: ec.ExperimentConfig, machine_path: Optional[str] = None) -> StageResult:
    machine = _load_compatible_machine(cfg, machine_path) if machine_path else _train_all(cfg, _dataset(cfg))[0][1]
    truth, truth_path = _ground_truth(cfg)
    system = ec.dataset_spec(cfg).noisy_system if cfg.grid.noisy_guiding else ec.build_system(cfg)
    table = guide_length_sweep(machine, system, truth.grid, cfg.prediction.guide_lengths, cfg.prediction.horizon,
                               cfg.prediction.tail, truth, ec.grid_seed(cfg), cfg.output.workers)
    path = write_table(table, _out(cfg, "sweeps", "guide_length_sweep.csv"), _header(cfg))
    return StageResult("sweep-guide", [_record_config(cfg), truth_path, path],
                       {"accuracy": dict(zip(table["l"].tolist(), table["accuracy"].tolist()))})


class _RandomMachineEvaluator:
    """Callable for the anti-correlation study: machine i gets random hyperparameters and matrices."""

    def __init__(self, cfg: ec.ExperimentConfig, data: Dataset):
        self.cfg = cfg
        self.data = data
        self.space = ec.search_space(cfg)
        self.settings = ec.evaluation_settings(cfg)
        self.seed = derive_seed(cfg.master_seed, "sweep", 2)

    def __call__(self, i: int) -> Optional[ErrorReport]:
        hp = self.space.sample(substream(self.seed, "search", i))
        record = evaluate_candidate(hp, self.data.training, self.data.testing, self.cfg.machine.beta, self.settings,
                                    MatrixSeeds.derive(self.seed, i), derive_seed(self.seed, "sync", i), i)
        return record.report


def run_anticorrelation(cfg: ec.ExperimentConfig, count: int = 100) -> StageResult:
    table, rho = anticorrelation_study(_RandomMachineEvaluator(cfg, _dataset(cfg)), count, cfg.machine.beta)
    path = write_table(table, _out(cfg, "sweeps", "anticorrelation.csv"), _header(cfg, spearman=rho))
    return StageResult("anticorrelation", [_record_config(cfg), path], {"spearman": rho, "machines": len(table)})


def run_report(cfg: ec.ExperimentConfig) -> StageResult:
    directory = ec.output_directory(cfg)
    try:
        path = ReportBuilder(directory).write(directory / "report.xlsx")
    except ValueError as exc:
        raise BalancedRCError(str(exc)) from exc
    return StageResult("report", [path], {})


STAGES = {
    "gen-data": run_gen_data,
    "search": run_search,
    "train": run_train,
    "ground-truth": run_ground_truth,
    "infer-basin": run_infer_basin,
    "sweep-noise": run_sweep_noise,
    "sweep-sampling": run_sweep_sampling,
    "sweep-guide": run_sweep_guide,
    "anticorrelation": run_anticorrelation,
    "report": run_report,
}

MACHINE_STAGES = {"infer-basin", "sweep-guide"}


def run_stage(stage: str, cfg: ec.ExperimentConfig, machine_path: Optional[str] = None) -> StageResult:
    if stage not in STAGES:
        raise BalancedRCError(f"Unknown stage: {stage}")
    logger.info("Stage %s for %s", stage, cfg.experiment_id)
    if stage in MACHINE_STAGES:
        return STAGES[stage](cfg, machine_path)
    return STAGES[stage](cfg)
