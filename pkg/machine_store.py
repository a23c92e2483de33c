"""
machine_store.py
Self-describing machine file: one JSON document with a format version,
hyperparameters, seeds, provenance, the frozen normalizer and the three
matrices as row-major float64 text (17 significant digits, exact round trip).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Union

import numpy as np

from dynamics import Normalizer
from errors import MachineFileError
from reservoir import Hyperparams, MatrixSeeds, Provenance, ReservoirMatrices, TrainedMachine

logger = logging.getLogger(__name__)

FORMAT_NAME = "balanced-rc-machine"
FORMAT_VERSION = 1


def _matrix_to_text(matrix: np.ndarray) -> dict:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    rows = [" ".join(f"{v:.17g}" for v in row) for row in matrix]
    return {"shape": list(matrix.shape), "rows": rows}


def _matrix_from_text(block: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in block["shape"])
        values = np.array([[float(v) for v in row.split()] for row in block["rows"]], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise MachineFileError(f"Malformed matrix block '{name}': {exc}") from exc
    if values.shape != shape:
        raise MachineFileError(f"Matrix '{name}' has shape {values.shape}, header says {shape}")
    return values


def machine_to_dict(machine: TrainedMachine) -> dict:
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "hyperparams": asdict(machine.hyperparams),
        "beta": machine.beta,
        "dt": machine.dt,
        "seeds": asdict(machine.matrices.seeds),
        "redraws": machine.matrices.redraws,
        "provenance": asdict(machine.provenance),
        "normalizer": machine.normalizer.to_dict() if machine.normalizer else None,
        "matrices": {
            "w_in": _matrix_to_text(machine.matrices.w_in),
            "adjacency": _matrix_to_text(machine.matrices.adjacency),
            "w_out": _matrix_to_text(machine.w_out),
        },
    }


def machine_from_dict(data: dict) -> TrainedMachine:
    if data.get("format") != FORMAT_NAME:
        raise MachineFileError(f"Not a machine file (format={data.get('format')!r})")
    if data.get("format_version") != FORMAT_VERSION:
        raise MachineFileError(f"Unsupported machine format version: {data.get('format_version')}")
    try:
        hp = Hyperparams(**data["hyperparams"])
        seeds = MatrixSeeds(**data["seeds"])
        blocks = data["matrices"]
        matrices = ReservoirMatrices(
            _matrix_from_text(blocks["w_in"], "w_in"),
            _matrix_from_text(blocks["adjacency"], "adjacency"),
            seeds,
            int(data.get("redraws", 0)),
        )
        w_out = _matrix_from_text(blocks["w_out"], "w_out")
        normalizer = Normalizer.from_dict(data["normalizer"]) if data.get("normalizer") else None
        return TrainedMachine(
            hp, matrices, w_out, float(data["beta"]), float(data["dt"]),
            Provenance(**data.get("provenance", {})), normalizer,
        )
    except (KeyError, TypeError) as exc:
        raise MachineFileError(f"Incomplete machine file: {exc}") from exc


def save_machine(machine: TrainedMachine, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(machine_to_dict(machine), indent=1, sort_keys=True), encoding="utf-8")
    logger.info("Machine written to %s", path)
    return path


def load_machine(path: Union[str, Path]) -> TrainedMachine:
    path = Path(path)
    if not path.exists():
        raise MachineFileError(f"Machine file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MachineFileError(f"Machine file {path} is not valid JSON: {exc}") from exc
    return machine_from_dict(data)
