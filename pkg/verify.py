"""
verify.py
Numerical checks run by the `verify` subcommand: ridge readout against a
least-squares oracle, spectral-radius rescaling against a dense eigensolver,
RK4 convergence order, Chua odd symmetry, reservoir-state boundedness under
fuzzed inputs, and seed determinism.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import pandas as pd

from basin import DatasetSpec, generate_dataset
from dynamics import ChuaParams, SwingParams, integrate
from reservoir import Hyperparams, MatrixSeeds, build_matrices, reservoir_step, train_readout
from seeding import generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


def check_ridge(seed: int = 0, n: int = 20, length: int = 50, d: int = 2, eta: float = 1e-3) -> CheckResult:
    rng = generator(seed, 1)
    states = rng.standard_normal((n, length))
    targets = rng.standard_normal((d, length))
    w_out = train_readout(states, targets, eta)
    augmented = np.vstack([states.T, math.sqrt(eta) * np.eye(n)])
    rhs = np.vstack([targets.T, np.zeros((n, d))])
    oracle = np.linalg.lstsq(augmented, rhs, rcond=None)[0].T
    rel = float(np.linalg.norm(w_out - oracle) / np.linalg.norm(oracle))
    return CheckResult("ridge_vs_lstsq", rel <= 1e-8, rel, 1e-8, f"n={n}, L={length}, eta={eta}")


def check_spectral_radius(seed: int = 0, n: int = 60, target: float = 0.9) -> CheckResult:
    hp = Hyperparams(p=0.5, spectral_radius=target, sigma=1.0, alpha_leak=0.5, eta=1e-4, n=n, d=2)
    mat = build_matrices(hp, MatrixSeeds.derive(seed, 0))
    measured = float(np.max(np.abs(np.linalg.eigvals(mat.adjacency))))
    err = abs(measured - target)
    return CheckResult("spectral_radius", err <= 1e-6, err, 1e-6, f"eigvals radius {measured:.10f}")


def rk4_order(dts: Tuple[float, ...] = (0.1, 0.05, 0.025), horizon: float = 5.0, oracle_dt: float = 1e-4) -> float:
    system = SwingParams(0.4, 0.39, 0.7)
    ic = (0.5, 0.3)
    reference = integrate(system, ic, oracle_dt, int(round(horizon / oracle_dt))).samples[-1]
    errors = [np.linalg.norm(integrate(system, ic, dt, int(round(horizon / dt))).samples[-1] - reference) for dt in dts]
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
    return float(min(orders))


def check_rk4_order() -> CheckResult:
    order = rk4_order()
    return CheckResult("rk4_order", order >= 3.5, order, 3.5, "smooth swing trajectory, T=5")


def check_chua_symmetry(seed: int = 0, steps: int = 3000) -> CheckResult:
    ic = generator(seed, 2).uniform(-1.0, 1.0, size=3)
    system = ChuaParams()
    forward = integrate(system, ic, 0.05, steps).samples
    mirrored = integrate(system, -ic, 0.05, steps).samples
    err = float(np.max(np.abs(forward + mirrored)))
    return CheckResult("chua_odd_symmetry", err <= 1e-9, err, 1e-9, f"{steps} steps")


def check_boundedness(seed: int = 0, updates: int = 1_000_000, n: int = 50, batch: int = 1000) -> CheckResult:
    """Leaky tanh updates from states in [-1, 1] never leave [-1, 1], whatever the input."""
    hp = Hyperparams(p=0.5, spectral_radius=2.5, sigma=3.0, alpha_leak=0.7, eta=1e-4, n=n, d=2)
    mat = build_matrices(hp, MatrixSeeds.derive(seed, 1))
    rng = generator(seed, 3)
    state = rng.uniform(-1.0, 1.0, size=(batch, n))
    worst = float(np.max(np.abs(state)))
    for _ in range(updates // batch):
        u = rng.standard_normal((batch, 2)) * 100.0
        state = reservoir_step(state, u, mat, hp.alpha_leak)
        worst = max(worst, float(np.max(np.abs(state))))
    return CheckResult("state_boundedness", worst <= 1.0, worst, 1.0, f"{updates} updates")


def check_determinism(seed: int = 0) -> CheckResult:
    spec = DatasetSpec(
        system=SwingParams(0.4, 0.39, 0.7),
        ic_ranges=((-3.0, 3.0), (-4.0, 2.0)),
        m=1,
        series_length=200,
        listen=10,
        seed=seed,
        label_horizon=1000,
    )
    first, second = generate_dataset(spec), generate_dataset(spec)
    same_data = all(
        a.samples.tobytes() == b.samples.tobytes()
        for a, b in zip(first.training + first.testing, second.training + second.testing)
    )
    hp = Hyperparams(p=0.5, spectral_radius=0.9, sigma=1.0, alpha_leak=0.5, eta=1e-4, n=40, d=2)
    seeds = MatrixSeeds.derive(seed, 0)
    m1, m2 = build_matrices(hp, seeds), build_matrices(hp, seeds)
    same_matrices = m1.adjacency.tobytes() == m2.adjacency.tobytes() and m1.w_in.tobytes() == m2.w_in.tobytes()
    ok = same_data and same_matrices
    return CheckResult("determinism", ok, float(ok), 1.0, f"datasets={same_data}, matrices={same_matrices}")


CHECKS: List[Callable[[], CheckResult]] = [
    check_ridge,
    check_spectral_radius,
    check_rk4_order,
    check_chua_symmetry,
    check_boundedness,
    check_determinism,
]


def run_all() -> List[CheckResult]:
    results = []
    for check in CHECKS:
        try:
            result = check()
        except Exception as exc:  # a crashing check is a failed check
            result = CheckResult(check.__name__.removeprefix("check_"), False, math.nan, math.nan, repr(exc))
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, "%-18s %s value=%.3g threshold=%.3g %s", result.name,
                   "ok" if result.passed else "FAILED", result.value, result.threshold, result.detail)
        results.append(result)
    return results


def results_frame(results: List[CheckResult]) -> pd.DataFrame:
    return pd.DataFrame([r.__dict__ for r in results])
