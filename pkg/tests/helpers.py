from basin import DatasetSpec
from dynamics import SwingParams

SWING_RANGES = ((-3.0, 3.0), (-4.0, 2.0))


def small_swing_spec(**overrides) -> DatasetSpec:
    """Three-label swing dataset small enough for unit tests."""
    values = dict(
        system=SwingParams(0.4, 0.39, 0.7),
        ic_ranges=SWING_RANGES,
        m=1,
        series_length=200,
        dt=0.05,
        listen=10,
        seed=3,
        label_horizon=1000,
    )
    values.update(overrides)
    return DatasetSpec(**values)
