"""
dataset_io.py
Reading and writing the tabular artifacts: datasets, basin maps, sweep tables
and trial logs as CSV, label layers as binary PGM images.

Every CSV starts with '# key: value' comment lines (values are JSON) naming
at least the config digest and master seed that produced it. Floats are
written with 17 significant digits so files round-trip exactly.
"""
from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from basin import BasinMap, Dataset, GridSpec
from dynamics import AsymptoticLabel, Normalizer, TimeSeries

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

# Fixed label -> gray mapping for PGM layers
LABEL_GRAY: Dict[AsymptoticLabel, int] = {
    AsymptoticLabel.OPERATING: 64,
    AsymptoticLabel.POSITIVE_DIVERGING: 255,
    AsymptoticLabel.NEGATIVE_DIVERGING: 160,
    AsymptoticLabel.ATTRACTOR_LEFT: 64,
    AsymptoticLabel.ATTRACTOR_RIGHT: 192,
    AsymptoticLabel.UNDECIDED: 0,
}

PathLike = Union[str, Path]


# ----------------------------
# Header comments
# ----------------------------
def write_table(df: pd.DataFrame, path: PathLike, header: Dict[str, object]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for key in sorted(header):
            handle.write(f"# {key}: {json.dumps(header[key], sort_keys=True)}\n")
        df.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %s (%d rows)", path, len(df))
    return path


def read_header(path: PathLike) -> Dict[str, object]:
    header: Dict[str, object] = {}
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            header[key] = json.loads(value) if value else None
    return header


def read_any_table(path: PathLike, sheet_name=0) -> pd.DataFrame:
    """
    Reads an artifact table into a DataFrame.
    - CSV: .csv (header comments skipped)
    - Excel: .xlsx, .xlsm
    """
    if not isinstance(path, (str, Path)) or str(path).strip() == "":
        raise ValueError("File path is empty or invalid.")
    ext = os.path.splitext(str(path))[1].lower()
    if ext in [".xlsx", ".xlsm"]:
        return pd.read_excel(path, sheet_name=sheet_name)
    if ext == ".csv":
        return pd.read_csv(path, comment="#", float_precision="round_trip")
    raise ValueError(f"Unsupported file type: {ext}")


# ----------------------------
# Datasets
# ----------------------------
def _series_frame(series: Tuple[TimeSeries, ...], labels: Tuple[AsymptoticLabel, ...], variables: List[str]) -> pd.DataFrame:
    blocks = []
    for i, (s, label) in enumerate(zip(series, labels)):
        block = pd.DataFrame(s.samples, columns=variables)
        block.insert(0, "step", np.arange(len(s)))
        block.insert(0, "label", str(label))
        block.insert(0, "series", i)
        block["truncated"] = int(s.truncated)
        blocks.append(block)
    return pd.concat(blocks, ignore_index=True)


def write_dataset(dataset: Dataset, directory: PathLike, header: Dict[str, object]) -> List[Path]:
    """training.csv and testing.csv in long format: series, label, step, <variables>, truncated."""
    directory = Path(directory)
    dt = dataset.training[0].dt
    variables = list(dataset.training[0].variables) or [f"v{i}" for i in range(dataset.training[0].dim)]
    common = dict(header, dt=dt, normalizer=dataset.normalizer.to_dict(), data_seed=dataset.seed)
    paths = []
    for name, series, labels, ics in (
        ("training", dataset.training, dataset.training_labels, dataset.training_ics),
        ("testing", dataset.testing, dataset.testing_labels, dataset.testing_ics),
    ):
        meta = dict(common, split=name, initial_conditions=np.asarray(ics).tolist())
        paths.append(write_table(_series_frame(series, labels, variables), directory / f"{name}.csv", meta))
    return paths


def read_dataset_split(path: PathLike) -> Tuple[List[TimeSeries], List[AsymptoticLabel], Normalizer, Dict[str, object]]:
    header = read_header(path)
    frame = read_any_table(path)
    variables = [c for c in frame.columns if c not in ("series", "label", "step", "truncated")]
    dt = float(header["dt"])
    series, labels = [], []
    for _, block in frame.groupby("series", sort=True):
        block = block.sort_values("step")
        series.append(TimeSeries(dt, block[variables].to_numpy(dtype=float), 0.0,
                                 bool(block["truncated"].iloc[0]), tuple(variables)))
        labels.append(AsymptoticLabel(block["label"].iloc[0]))
    return series, labels, Normalizer.from_dict(header["normalizer"]), header


def read_dataset(directory: PathLike) -> Dataset:
    directory = Path(directory)
    train, train_labels, normalizer, train_header = read_dataset_split(directory / "training.csv")
    test, test_labels, _, test_header = read_dataset_split(directory / "testing.csv")
    return Dataset(
        tuple(train), tuple(test), normalizer, tuple(train_labels), tuple(test_labels),
        np.array(train_header.get("initial_conditions", [])),
        np.array(test_header.get("initial_conditions", [])),
        int(train_header.get("data_seed", 0)),
    )


# ----------------------------
# Basin maps
# ----------------------------
def _grid_to_dict(grid: GridSpec) -> dict:
    return {
        "axes": list(grid.axes),
        "ranges": [list(r) for r in grid.ranges],
        "resolution": list(grid.resolution),
        "base": list(grid.base),
        "names": list(grid.names),
    }


def _grid_from_dict(data: dict) -> GridSpec:
    return GridSpec(
        tuple(data["axes"]),
        tuple(tuple(r) for r in data["ranges"]),
        tuple(data["resolution"]),
        tuple(data["base"]),
        tuple(data.get("names", ("", ""))),
    )


def basin_frame(basin_map: BasinMap) -> pd.DataFrame:
    coords = basin_map.grid.coordinates()
    names = [n or f"axis{i}" for i, n in enumerate(basin_map.grid.names)]
    frame = pd.DataFrame({
        names[0]: coords[:, 0],
        names[1]: coords[:, 1],
        "true_label": [str(l) for l in basin_map.true_labels],
    })
    if basin_map.predicted_labels is not None:
        frame["predicted_label"] = [str(l) for l in basin_map.predicted_labels]
    return frame


def write_basin_map(basin_map: BasinMap, path: PathLike, header: Dict[str, object] = None) -> Path:
    meta = dict(header or {})
    meta.update(
        config_digest=basin_map.config_digest,
        master_seed=basin_map.master_seed,
        grid=_grid_to_dict(basin_map.grid),
        undecided_true=basin_map.undecided_fraction(),
    )
    if basin_map.predicted_labels is not None:
        meta["accuracy"] = basin_map.accuracy
    return write_table(basin_frame(basin_map), path, meta)


def read_basin_map(path: PathLike) -> BasinMap:
    header = read_header(path)
    frame = read_any_table(path)
    predicted = None
    if "predicted_label" in frame.columns:
        predicted = tuple(AsymptoticLabel(v) for v in frame["predicted_label"])
    return BasinMap(
        _grid_from_dict(header["grid"]),
        tuple(AsymptoticLabel(v) for v in frame["true_label"]),
        predicted,
        str(header.get("config_digest", "")),
        int(header.get("master_seed", 0)),
    )


def write_pgm(basin_map: BasinMap, path: PathLike, predicted: bool = False) -> Path:
    """
    Binary PGM (P5, maxval 255) of one label layer. Image columns follow the
    first axis left to right, rows the second axis from its maximum at the top.
    """
    layer = basin_map.predicted_labels if predicted else basin_map.true_labels
    gray = np.array([LABEL_GRAY[AsymptoticLabel(l)] for l in layer], dtype=np.uint8)
    image = gray.reshape(basin_map.grid.shape).T[::-1]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = image.shape
    with open(path, "wb") as handle:
        handle.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        handle.write(np.ascontiguousarray(image).tobytes())
    return path


def read_pgm(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError(f"Not an 8-bit binary PGM: {path}")
    width, height = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: width * height], dtype=np.uint8).reshape(height, width)
