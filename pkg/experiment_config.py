from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

import experiment_table as table
from basin import BasinExperiment, DatasetSpec, GridSpec
from dynamics import AsymptoticLabel, SystemParams, make_system
from errors import ConfigError, InvalidParameterError
from hyperopt import DEFAULT_RANGES, EvaluationSettings, SearchSpace
from reservoir import Hyperparams, MatrixSeeds, Provenance
from seeding import derive_seed

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent / "configs"
OUTPUT_ROOT_ENV = "BALANCED_RC_OUTPUT_ROOT"


# ----------------------------
# OUTPUT SETTINGS
# ----------------------------
@dataclass(frozen=True)
class OutputSettings:
    """
    Where artifacts land when a config names no output directory.
    root: parent directory; each experiment writes into root/<experiment_id>
    """
    root: Path

    @staticmethod
    def from_env_or_defaults() -> "OutputSettings":
        return OutputSettings(root=Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")))


# ----------------------------
# SCHEMA
# ----------------------------
class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSection(_Section):
    kind: Literal["swing", "chua", "duffing"]
    params: Dict[str, float] = Field(default_factory=dict)


class DatasetSection(_Section):
    m: int = Field(3, ge=1)
    series_length: int = Field(1500, ge=3)
    dt: float = Field(0.05, gt=0)
    listen: int = Field(10, ge=1)
    ic_ranges: List[Tuple[float, float]]
    normalization: List[Literal["arctan", "minmax", "identity"]]
    noise_amplitude: float = Field(0.0, ge=0)
    sampling_cap: int = Field(10000, ge=1)
    label_horizon: int = Field(1500, ge=1)
    label_tail: int = Field(100, ge=1)
    labels: Optional[List[AsymptoticLabel]] = None
    total_points: Optional[int] = Field(None, ge=1)


class HyperparamsSection(_Section):
    p: float
    spectral_radius: float
    sigma: float
    alpha_leak: float
    eta: float


class MachineSection(_Section):
    n: int = Field(500, ge=1)
    hyperparams: Optional[HyperparamsSection] = None
    beta: float = Field(10.0, gt=0)
    machine_seeds: int = Field(1, ge=1)


class SearchSection(_Section):
    ranges: Dict[str, Tuple[float, float]] = Field(default_factory=lambda: dict(DEFAULT_RANGES))
    trial_budget: int = Field(300, ge=1)
    strategy: Literal["random", "surrogate"] = "random"
    tau: int = Field(10, ge=1)
    sync_realizations: int = Field(50, ge=1)
    validation_horizon: int = Field(1000, ge=1)


class GridSection(_Section):
    axes: Tuple[int, int] = (0, 1)
    ranges: Tuple[Tuple[float, float], Tuple[float, float]]
    resolution: Tuple[int, int] = (100, 100)
    base: List[float]
    names: Tuple[str, str] = ("", "")
    noisy_guiding: bool = True
    chunk: int = Field(1000, ge=1)


class PredictionSection(_Section):
    guide_length: int = Field(10, ge=2)
    horizon: int = Field(1500, ge=1)
    tail: int = Field(100, ge=1)
    guide_lengths: List[int] = Field(default_factory=lambda: [5, 10, 20, 40])


class NoiseSweepSection(_Section):
    amplitudes: List[float] = Field(default_factory=lambda: list(table.NOISE_SWEEP_AMPLITUDES))
    realizations: int = Field(10, ge=1)
    resolution: Optional[Tuple[int, int]] = None
    m_values: List[int] = Field(default_factory=lambda: [2, 3, 4])


class OutputSection(_Section):
    directory: Optional[str] = None
    workers: int = -1


class ExperimentConfig(_Section):
    experiment_id: str
    master_seed: int = Field(0, ge=0)
    system: SystemSection
    dataset: DatasetSection
    machine: MachineSection = Field(default_factory=MachineSection)
    search: SearchSection = Field(default_factory=SearchSection)
    grid: GridSection
    prediction: PredictionSection = Field(default_factory=PredictionSection)
    noise_sweep: NoiseSweepSection = Field(default_factory=NoiseSweepSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def _consistent_dimensions(self) -> "ExperimentConfig":
        try:
            system = make_system(self.system.kind, **self.system.params)
        except TypeError as exc:
            raise ValueError(f"system.params: {exc}") from exc
        dim = system.dim
        if len(self.dataset.ic_ranges) != dim:
            raise ValueError(f"dataset.ic_ranges has {len(self.dataset.ic_ranges)} entries for dimension {dim}")
        if len(self.dataset.normalization) != dim:
            raise ValueError(f"dataset.normalization has {len(self.dataset.normalization)} entries for dimension {dim}")
        if len(self.grid.base) != dim:
            raise ValueError(f"grid.base has {len(self.grid.base)} entries for dimension {dim}")
        if self.dataset.noise_amplitude > 0 and system.noise_index is None:
            raise ValueError(f"dataset.noise_amplitude must be 0 for {system.kind}")
        missing = set(DEFAULT_RANGES) - set(self.search.ranges)
        if missing:
            raise ValueError(f"search.ranges misses {sorted(missing)}")
        return self


# ----------------------------
# LOAD / DUMP
# ----------------------------
def _problems(exc: ValidationError) -> List[Tuple[str, str]]:
    return [(".".join(str(p) for p in err["loc"]) or "<root>", err["msg"]) for err in exc.errors()]


def validate_config(data: Dict[str, Any], source: str = "") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_problems(exc), source) from exc
    except InvalidParameterError as exc:
        raise ConfigError([("system.params", str(exc))], source) from exc


def apply_overrides(
    data: Dict[str, Any],
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    out: Optional[str] = None,
) -> Dict[str, Any]:
    data = json.loads(json.dumps(data))
    if seed is not None:
        data["master_seed"] = int(seed)
    output = data.setdefault("output", {})
    if workers is not None:
        output["workers"] = int(workers)
    if out is not None:
        output["directory"] = str(out)
    return data


def load_config(path: Union[str, Path], seed: Optional[int] = None, workers: Optional[int] = None,
                out: Optional[str] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([("<file>", f"config not found: {path}")], str(path))
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"not valid YAML: {exc}")], str(path)) from exc
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "config must be a mapping")], str(path))
    cfg = validate_config(apply_overrides(data, seed, workers, out), str(path))
    logger.info("Loaded config %s (%s, digest %s)", path, cfg.experiment_id, config_digest(cfg)[:12])
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return cfg.model_dump(mode="json")


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False, default_flow_style=None)


def save_config(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path


def config_digest(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical JSON form, output section excluded."""
    data = config_to_dict(cfg)
    data.pop("output", None)
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def output_directory(cfg: ExperimentConfig) -> Path:
    if cfg.output.directory:
        return Path(cfg.output.directory)
    return OutputSettings.from_env_or_defaults().root / cfg.experiment_id


# ----------------------------
# BUILDERS
# ----------------------------
def build_system(cfg: ExperimentConfig) -> SystemParams:
    return make_system(cfg.system.kind, **cfg.system.params)


def provenance(cfg: ExperimentConfig) -> Provenance:
    return Provenance(cfg.experiment_id, "", config_digest(cfg), cfg.master_seed, cfg.system.kind)


def dataset_spec(cfg: ExperimentConfig) -> DatasetSpec:
    d = cfg.dataset
    return DatasetSpec(
        system=build_system(cfg),
        ic_ranges=tuple(tuple(r) for r in d.ic_ranges),
        m=d.m,
        series_length=d.series_length,
        dt=d.dt,
        listen=d.listen,
        normalization=tuple(d.normalization),
        noise_amplitude=d.noise_amplitude,
        seed=derive_seed(cfg.master_seed, "data"),
        sampling_cap=d.sampling_cap,
        label_horizon=d.label_horizon,
        label_tail=d.label_tail,
        labels=tuple(d.labels) if d.labels else None,
        total_points=d.total_points,
    )


def hyperparams(cfg: ExperimentConfig) -> Hyperparams:
    if cfg.machine.hyperparams is None:
        raise ConfigError([("machine.hyperparams", "explicit hyperparameters required (run search first)")])
    try:
        return Hyperparams(n=cfg.machine.n, d=build_system(cfg).dim, **cfg.machine.hyperparams.model_dump())
    except InvalidParameterError as exc:
        raise ConfigError([("machine.hyperparams", str(exc))]) from exc


def machine_seeds(cfg: ExperimentConfig) -> List[MatrixSeeds]:
    return [MatrixSeeds.derive(cfg.master_seed, k) for k in range(cfg.machine.machine_seeds)]


def grid_spec(cfg: ExperimentConfig, resolution: Optional[Tuple[int, int]] = None) -> GridSpec:
    g = cfg.grid
    return GridSpec(tuple(g.axes), tuple(tuple(r) for r in g.ranges), tuple(resolution or g.resolution),
                    tuple(g.base), tuple(g.names))


def grid_seed(cfg: ExperimentConfig) -> int:
    return derive_seed(cfg.master_seed, "grid")


def search_space(cfg: ExperimentConfig) -> SearchSpace:
    return SearchSpace(
        ranges={k: tuple(v) for k, v in cfg.search.ranges.items()},
        n=cfg.machine.n,
        d=build_system(cfg).dim,
        trial_budget=cfg.search.trial_budget,
        beta=cfg.machine.beta,
        search_seed=derive_seed(cfg.master_seed, "search"),
    )


def evaluation_settings(cfg: ExperimentConfig) -> EvaluationSettings:
    return EvaluationSettings(cfg.dataset.listen, cfg.search.tau, cfg.search.sync_realizations,
                              cfg.search.validation_horizon)


def basin_experiment(cfg: ExperimentConfig, seed_index: int = 0,
                     resolution: Optional[Tuple[int, int]] = None) -> BasinExperiment:
    return BasinExperiment(
        dataset=dataset_spec(cfg),
        hyperparams=hyperparams(cfg),
        beta=cfg.machine.beta,
        machine_seeds=MatrixSeeds.derive(cfg.master_seed, seed_index),
        grid=grid_spec(cfg, resolution),
        guide_length=cfg.prediction.guide_length,
        horizon=cfg.prediction.horizon,
        tail=cfg.prediction.tail,
        noisy_guiding=cfg.grid.noisy_guiding,
        grid_seed=grid_seed(cfg),
        provenance=provenance(cfg),
    )


# ----------------------------
# REFERENCE CONFIGS
# ----------------------------
def reference_config(experiment_id: str, master_seed: int = 0) -> ExperimentConfig:
    """Config of a reference experiment built from experiment_table."""
    family = table.family_of(experiment_id)
    system = dict(table.SYSTEM_PARAMS[family])
    kind = system.pop("kind")
    _, m, length, dt, listen, noise = table.REFERENCE_DATA[experiment_id]
    guide, horizon, tail = table.REFERENCE_PREDICTION[experiment_id]
    axes, ranges, base, names = table.REFERENCE_GRIDS[kind]
    p, lam, sigma, alpha, eta = table.REFERENCE_HYPERPARAMS[experiment_id]
    label_horizon = length if kind == "swing" else horizon
    data = {
        "experiment_id": experiment_id,
        "master_seed": master_seed,
        "system": {"kind": kind, "params": system},
        "dataset": {
            "m": m,
            "series_length": length,
            "dt": dt,
            "listen": listen,
            "ic_ranges": [list(r) for r in table.REFERENCE_IC_RANGES[kind]],
            "normalization": list(table.REFERENCE_NORMALIZATION[kind]),
            "noise_amplitude": noise,
            "label_horizon": label_horizon,
            "label_tail": tail,
            "labels": list(table.REFERENCE_LABELS[experiment_id]) if experiment_id in table.REFERENCE_LABELS else None,
        },
        "machine": {
            "n": 500,
            "hyperparams": {"p": p, "spectral_radius": lam, "sigma": sigma, "alpha_leak": alpha, "eta": eta},
            "beta": table.REFERENCE_BETA[experiment_id],
            "machine_seeds": 5,
        },
        "search": {"trial_budget": 300 if kind == "swing" else 400},
        "grid": {"axes": list(axes), "ranges": [list(r) for r in ranges], "resolution": [100, 100],
                 "base": list(base), "names": list(names)},
        "prediction": {"guide_length": guide, "horizon": horizon, "tail": tail},
    }
    return validate_config(data, experiment_id)


def bundle_configs() -> Dict[str, Path]:
    """experiment_id -> bundled YAML path for every reference experiment."""
    return {eid: CONFIG_DIR / f"{eid}.yaml" for eid in table.REFERENCE_DATA}
