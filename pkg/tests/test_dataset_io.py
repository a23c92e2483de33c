import numpy as np
import pandas as pd
import pytest

from basin import BasinMap, GridSpec
from dataset_io import (
    LABEL_GRAY,
    read_any_table,
    read_basin_map,
    read_dataset,
    read_header,
    read_pgm,
    write_basin_map,
    write_dataset,
    write_pgm,
    write_table,
)
from dynamics import AsymptoticLabel

OP = AsymptoticLabel.OPERATING
POS = AsymptoticLabel.POSITIVE_DIVERGING
NEG = AsymptoticLabel.NEGATIVE_DIVERGING


def _map():
    grid = GridSpec((0, 1), ((-3.0, 3.0), (-4.0, 2.0)), (2, 3), (0.0, 0.0), ("theta", "omega"))
    truth = (OP, OP, POS, NEG, OP, POS)
    predicted = (OP, POS, POS, NEG, OP, AsymptoticLabel.UNDECIDED)
    return BasinMap(grid, truth, predicted, config_digest="abc123", master_seed=7)


def test_table_header_round_trip(tmp_path):
    df = pd.DataFrame({"a": [0.1, 1 / 3], "b": ["x", "y"]})
    path = write_table(df, tmp_path / "t.csv", {"config_digest": "d", "master_seed": 3, "nested": {"k": [1, 2]}})
    header = read_header(path)
    assert header == {"config_digest": "d", "master_seed": 3, "nested": {"k": [1, 2]}}
    back = read_any_table(path)
    assert back["a"].tolist() == [0.1, 1 / 3]
    assert back["b"].tolist() == ["x", "y"]


def test_unsupported_table_type(tmp_path):
    with pytest.raises(ValueError):
        read_any_table(tmp_path / "table.parquet")
    with pytest.raises(ValueError):
        read_any_table("")


def test_basin_map_round_trip(tmp_path):
    original = _map()
    path = write_basin_map(original, tmp_path / "basin" / "map.csv")
    loaded = read_basin_map(path)
    assert loaded.grid == original.grid
    assert loaded.true_labels == original.true_labels
    assert loaded.predicted_labels == original.predicted_labels
    assert loaded.config_digest == "abc123" and loaded.master_seed == 7
    header = read_header(path)
    assert header["accuracy"] == pytest.approx(original.accuracy)
    frame = read_any_table(path)
    assert list(frame.columns) == ["theta", "omega", "true_label", "predicted_label"]


def test_basin_map_files_are_byte_identical(tmp_path):
    a = write_basin_map(_map(), tmp_path / "a.csv")
    b = write_basin_map(_map(), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_pgm_layout(tmp_path):
    basin_map = _map()
    image = read_pgm(write_pgm(basin_map, tmp_path / "truth.pgm"))
    assert image.shape == (3, 2)
    # bottom-left pixel is the first cell, top-left the last cell of the first row
    assert image[-1, 0] == LABEL_GRAY[OP]
    assert image[0, 0] == LABEL_GRAY[POS]
    assert image[0, 1] == LABEL_GRAY[POS]
    predicted = read_pgm(write_pgm(basin_map, tmp_path / "pred.pgm", predicted=True))
    assert predicted[0, 1] == LABEL_GRAY[AsymptoticLabel.UNDECIDED]


def test_dataset_round_trip(swing_dataset, tmp_path):
    write_dataset(swing_dataset, tmp_path / "data", {"config_digest": "d", "master_seed": 1})
    loaded = read_dataset(tmp_path / "data")
    assert loaded.training_labels == swing_dataset.training_labels
    assert loaded.testing_labels == swing_dataset.testing_labels
    assert loaded.normalizer == swing_dataset.normalizer
    np.testing.assert_array_equal(loaded.training_ics, swing_dataset.training_ics)
    for a, b in zip(loaded.training + loaded.testing, swing_dataset.training + swing_dataset.testing):
        assert a.samples.tobytes() == b.samples.tobytes()
        assert a.truncated == b.truncated
        assert a.dt == b.dt


def test_dataset_header_names_the_split(swing_dataset, tmp_path):
    training, testing = write_dataset(swing_dataset, tmp_path, {"config_digest": "d", "master_seed": 1})
    assert read_header(training)["split"] == "training"
    assert read_header(testing)["split"] == "testing"
    assert read_header(training)["config_digest"] == "d"
