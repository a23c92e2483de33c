### reference experiments: constants shared by the bundled configs and the tests

# system parameters per experiment family
SYSTEM_PARAMS = {
    "swing-D0.39": {"kind": "swing", "input_power": 0.4, "damping": 0.39, "state_damping": 0.7},
    "swing-D0.06": {"kind": "swing", "input_power": 0.4, "damping": 0.06, "state_damping": 0.7},
    "chua": {"kind": "chua", "c1": 15.6, "c2": 1.0, "c3": 33.0, "m0": -8.0 / 7.0, "m1": -5.0 / 7.0},
    "duffing": {"kind": "duffing", "dissipation": 0.5, "drive_amplitude": 0.38, "drive_frequency": 1.0},
}

# optimal (p, lambda, sigma, alpha_leak, eta) found for each experiment
REFERENCE_HYPERPARAMS = {
    "swing-D0.39": (0.480, 0.033, 2.917, 0.574, 3.458e-4),
    "swing-D0.39-reduced": (0.804, 0.852, 2.690, 0.965, 1.552e-4),
    "swing-D0.39-noisy": (0.404, 0.752, 2.637, 0.738, 8.341e-4),
    "swing-D0.06": (0.758, 0.046, 1.689, 0.586, 6.91e-5),
    "swing-D0.06-noisy": (0.854, 0.086, 2.401, 0.489, 9.161e-5),
    "chua": (0.7691, 0.300, 2.763, 0.424, 1.1e-3),
    "duffing": (0.995, 0.501, 0.607, 0.631, 1.9e-3),
}

# balancing weight beta
REFERENCE_BETA = {
    "swing-D0.39": 10.0,
    "swing-D0.39-reduced": 15.0,
    "swing-D0.39-noisy": 12.0,
    "swing-D0.06": 30.0,
    "swing-D0.06-noisy": 30.0,
    "chua": 20.0,
    "duffing": 25.0,
}

# Experiment: (family, m, series_length, dt, train listen, D0)
REFERENCE_DATA = {
    "swing-D0.39": ("swing-D0.39", 3, 1500, 0.05, 10, 0.0),
    "swing-D0.39-reduced": ("swing-D0.39", 2, 1500, 0.05, 10, 0.0),
    "swing-D0.39-noisy": ("swing-D0.39", 2, 1500, 0.05, 10, 1e-5),
    "swing-D0.06": ("swing-D0.06", 5, 1000, 0.05, 10, 0.0),
    "swing-D0.06-noisy": ("swing-D0.06", 5, 1000, 0.05, 10, 1e-2),
    "chua": ("chua", 5, 3000, 0.05, 20, 0.0),
    "duffing": ("duffing", 5, 300, 0.01, 20, 0.0),
}

# Experiment: (guide length, closed-loop horizon, classification tail)
REFERENCE_PREDICTION = {
    "swing-D0.39": (10, 1500, 1),
    "swing-D0.39-reduced": (10, 1500, 1),
    "swing-D0.39-noisy": (10, 1500, 1),
    "swing-D0.06": (10, 2000, 1),
    "swing-D0.06-noisy": (10, 2000, 1),
    "chua": (10, 10000, 1000),
    "duffing": (10, 10000, 100),
}

# default basin windows: (axes, ranges, base state, axis names)
REFERENCE_GRIDS = {
    "swing": ((0, 1), ((-3.0, 3.0), (-4.0, 2.0)), (0.0, 0.0), ("theta", "omega")),
    "chua": ((0, 1), ((-3.0, 3.0), (-1.0, 1.0)), (0.0, 0.0, 0.0), ("x", "y")),
    "duffing": ((0, 1), ((-2.0, 2.0), (-2.0, 2.0)), (0.0, 0.0), ("x", "y")),
}

# initial-condition sampling ranges per family
REFERENCE_IC_RANGES = {
    "swing": ((-3.0, 3.0), (-4.0, 2.0)),
    "chua": ((-3.0, 3.0), (-1.0, 1.0), (-3.0, 3.0)),
    "duffing": ((-2.0, 2.0), (-2.0, 2.0)),
}

# normalization schemes per family (Chua keeps y unscaled)
REFERENCE_NORMALIZATION = {
    "swing": ("arctan", "arctan"),
    "chua": ("minmax", "identity", "minmax"),
    "duffing": ("minmax", "minmax"),
}

NOISE_SWEEP_AMPLITUDES = (0.0, 1e-5, 1e-4, 1e-3, 2e-3, 1e-2, 1e-1)

# published headline accuracies, kept as targets
TARGET_ACCURACY = {
    "swing-D0.39": 0.967,
    "swing-D0.39-reduced": 0.70,
    "swing-D0.39-noisy": 0.85,
    "swing-D0.06": 0.91,
    "swing-D0.06-noisy": 0.96,
    "chua": 0.96,
    "duffing": 0.95,
}

# acceptance floors used by the runbooks
ACCURACY_FLOOR = {
    "swing-D0.39": 0.90,
    "swing-D0.06": 0.85,
    "chua": 0.90,
    "duffing": 0.90,
}


def family_of(experiment_id: str) -> str:
    if experiment_id not in REFERENCE_DATA:
        raise ValueError(f"Unknown reference experiment: {experiment_id}")
    return REFERENCE_DATA[experiment_id][0]


# experiments whose system has fewer coexisting states than its family's label set
REFERENCE_LABELS = {
    "swing-D0.06": ("Operating", "PositiveDiverging"),
    "swing-D0.06-noisy": ("Operating", "PositiveDiverging"),
}
