"""
dynamics.py
Target systems (generalized swing model, Chua circuit, driven Duffing
oscillator), fixed-step RK4 integration with optional additive noise on the
swing frequency, asymptotic-state classification and normalization.

Vector fields act on the last axis, so one call advances a single state of
shape (d,) or a batch of shape (N, d).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import IntegrationError, InvalidParameterError, NormalizationError
from seeding import generator

logger = logging.getLogger(__name__)

VectorField = Callable[[np.ndarray, float], np.ndarray]

# |omega| beyond this is treated as divergence; omega' has saturated past 0.99 long before.
OVERFLOW_GUARD = 1e6
OPERATING_TOL = 1e-2
DIVERGING_LEVEL = 0.99


# =========================
# Asymptotic labels
# =========================
class AsymptoticLabel(str, Enum):
    OPERATING = "Operating"
    POSITIVE_DIVERGING = "PositiveDiverging"
    NEGATIVE_DIVERGING = "NegativeDiverging"
    ATTRACTOR_LEFT = "AttractorLeft"
    ATTRACTOR_RIGHT = "AttractorRight"
    UNDECIDED = "Undecided"

    def __str__(self) -> str:
        return self.value


SWING_LABELS = (
    AsymptoticLabel.OPERATING,
    AsymptoticLabel.POSITIVE_DIVERGING,
    AsymptoticLabel.NEGATIVE_DIVERGING,
)
CHAOTIC_LABELS = (AsymptoticLabel.ATTRACTOR_LEFT, AsymptoticLabel.ATTRACTOR_RIGHT)


# =========================
# System parameters
# =========================
@dataclass(frozen=True)
class SwingParams:
    """Generalized swing model with state-dependent damping alpha*cos(theta) - D."""

    input_power: float = 0.4
    damping: float = 0.39
    state_damping: float = 0.7
    noise_amplitude: float = 0.0

    kind: ClassVar[str] = "swing"
    variables: ClassVar[Tuple[str, ...]] = ("theta", "omega")
    labels: ClassVar[Tuple[AsymptoticLabel, ...]] = SWING_LABELS
    noise_index: ClassVar[Optional[int]] = 1
    guard_index: ClassVar[Optional[int]] = 1

    def __post_init__(self):
        if not self.input_power > 0:
            raise InvalidParameterError(f"input_power must be > 0, got {self.input_power}")
        if not self.damping > 0:
            raise InvalidParameterError(f"damping must be > 0, got {self.damping}")
        if not self.state_damping > 0:
            raise InvalidParameterError(f"state_damping must be > 0, got {self.state_damping}")
        if not self.noise_amplitude >= 0:
            raise InvalidParameterError(f"noise_amplitude must be >= 0, got {self.noise_amplitude}")

    @property
    def dim(self) -> int:
        return 2

    def rhs(self, state: np.ndarray, t: float) -> np.ndarray:
        theta = state[..., 0]
        omega = state[..., 1]
        d_omega = (
            self.input_power
            - np.sin(theta)
            - (self.state_damping * np.cos(theta) - self.damping) * omega
        )
        return np.stack([omega, d_omega], axis=-1)

    def with_noise(self, amplitude: float) -> "SwingParams":
        return SwingParams(self.input_power, self.damping, self.state_damping, amplitude)


@dataclass(frozen=True)
class ChuaParams:
    c1: float = 15.6
    c2: float = 1.0
    c3: float = 33.0
    m0: float = -8.0 / 7.0
    m1: float = -5.0 / 7.0

    kind: ClassVar[str] = "chua"
    variables: ClassVar[Tuple[str, ...]] = ("x", "y", "z")
    labels: ClassVar[Tuple[AsymptoticLabel, ...]] = CHAOTIC_LABELS
    noise_index: ClassVar[Optional[int]] = None
    guard_index: ClassVar[Optional[int]] = None
    noise_amplitude: ClassVar[float] = 0.0

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "m0", "m1"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameterError(f"{name} must be finite, got {getattr(self, name)}")

    @property
    def dim(self) -> int:
        return 3

    def g(self, x: np.ndarray) -> np.ndarray:
        return self.m1 * x + 0.5 * (self.m0 - self.m1) * (np.abs(x + 1.0) - np.abs(x - 1.0))

    def rhs(self, state: np.ndarray, t: float) -> np.ndarray:
        x = state[..., 0]
        y = state[..., 1]
        z = state[..., 2]
        return np.stack(
            [
                self.c1 * (y - x - self.g(x)),
                self.c2 * (x - y + z),
                -self.c3 * y,
            ],
            axis=-1,
        )


@dataclass(frozen=True)
class DuffingParams:
    """Driven double-well Duffing oscillator. The drive phase is carried by t (runs start at t0 = 0)."""

    dissipation: float = 0.5
    drive_amplitude: float = 0.38
    drive_frequency: float = 1.0

    kind: ClassVar[str] = "duffing"
    variables: ClassVar[Tuple[str, ...]] = ("x", "y")
    labels: ClassVar[Tuple[AsymptoticLabel, ...]] = CHAOTIC_LABELS
    noise_index: ClassVar[Optional[int]] = None
    guard_index: ClassVar[Optional[int]] = None
    noise_amplitude: ClassVar[float] = 0.0

    def __post_init__(self):
        if not self.dissipation > 0:
            raise InvalidParameterError(f"dissipation must be > 0, got {self.dissipation}")
        if not self.drive_amplitude >= 0:
            raise InvalidParameterError(f"drive_amplitude must be >= 0, got {self.drive_amplitude}")
        if not self.drive_frequency > 0:
            raise InvalidParameterError(f"drive_frequency must be > 0, got {self.drive_frequency}")

    @property
    def dim(self) -> int:
        return 2

    def rhs(self, state: np.ndarray, t: float) -> np.ndarray:
        x = state[..., 0]
        y = state[..., 1]
        dy = -self.dissipation * y + x - x**3 + self.drive_amplitude * np.sin(self.drive_frequency * t)
        return np.stack([y, dy], axis=-1)


SystemParams = Union[SwingParams, ChuaParams, DuffingParams]

SYSTEMS: Dict[str, type] = {
    "swing": SwingParams,
    "chua": ChuaParams,
    "duffing": DuffingParams,
}


def make_system(kind: str, **params) -> SystemParams:
    if kind not in SYSTEMS:
        raise InvalidParameterError(f"Unknown system kind: {kind}")
    return SYSTEMS[kind](**params)


# =========================
# Time series
# =========================
@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled trajectory; samples has shape (length, d) and is read-only."""

    dt: float
    samples: np.ndarray
    t0: float = 0.0
    truncated: bool = False
    variables: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples.reshape(-1, 1)
        if samples.ndim != 2:
            raise InvalidParameterError(f"samples must be 2-D (length, d), got shape {samples.shape}")
        if not self.dt > 0:
            raise InvalidParameterError(f"dt must be > 0, got {self.dt}")
        if self.variables and len(self.variables) != samples.shape[1]:
            raise InvalidParameterError(
                f"{len(self.variables)} variable names for dimension {samples.shape[1]}"
            )
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    def head(self, count: int) -> "TimeSeries":
        return TimeSeries(self.dt, self.samples[:count], self.t0, self.truncated and count >= len(self), self.variables)

    def window(self, start: int, stop: int) -> "TimeSeries":
        return TimeSeries(self.dt, self.samples[start:stop], self.t0 + start * self.dt, False, self.variables)

    def with_samples(self, samples: np.ndarray) -> "TimeSeries":
        return TimeSeries(self.dt, samples, self.t0, self.truncated, self.variables)


# =========================
# Integration
# =========================
def rk4_step(rhs: VectorField, state: np.ndarray, t: float, dt: float) -> np.ndarray:
    k1 = rhs(state, t)
    k2 = rhs(state + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(state + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(state + dt * k3, t + dt)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _noise_increments(system: SystemParams, dt: float, steps: int, noise_seed: Optional[int]) -> Optional[np.ndarray]:
    """D0*sqrt(dt)*N(0,1) per step, or None for deterministic runs."""
    if system.noise_index is None or system.noise_amplitude == 0:
        return None
    if noise_seed is None:
        raise InvalidParameterError("noise_amplitude > 0 requires a noise_seed")
    return system.noise_amplitude * math.sqrt(dt) * generator(noise_seed).standard_normal(steps)


def integrate(
    system: SystemParams,
    ic: Sequence[float],
    dt: float,
    steps: int,
    noise_seed: Optional[int] = None,
    t0: float = 0.0,
) -> TimeSeries:
    """
    Integrates `steps` RK4 steps from `ic` and returns steps+1 samples.
    Noise (swing only) uses Euler-Maruyama splitting: a deterministic RK4 step,
    then D0*sqrt(dt)*N(0,1) added to omega.
    Swing runs whose |omega| passes the overflow guard stop early and come back truncated.
    """
    if steps < 1:
        raise InvalidParameterError(f"steps must be >= 1, got {steps}")
    state = np.asarray(ic, dtype=float).copy()
    if state.shape != (system.dim,):
        raise InvalidParameterError(f"ic has shape {state.shape}, expected ({system.dim},)")
    noise = _noise_increments(system, dt, steps, noise_seed)

    samples = np.empty((steps + 1, system.dim))
    samples[0] = state
    t = t0
    for k in range(steps):
        state = rk4_step(system.rhs, state, t, dt)
        if noise is not None:
            state[system.noise_index] += noise[k]
        t = t0 + (k + 1) * dt
        guard = system.guard_index
        if guard is not None and not (abs(state[guard]) <= OVERFLOW_GUARD):
            if np.all(np.isfinite(state)):
                samples[k + 1] = state
                return TimeSeries(dt, samples[: k + 2], t0, True, system.variables)
            return TimeSeries(dt, samples[: k + 1], t0, True, system.variables)
        if not np.all(np.isfinite(state)):
            raise IntegrationError(f"Non-finite state in {system.kind} trajectory", step=k + 1)
        samples[k + 1] = state
    return TimeSeries(dt, samples, t0, False, system.variables)


@dataclass(frozen=True, eq=False)
class BatchTrajectories:
    """
    Result of integrate_batch.
    samples: (N, K, d), the last K samples (all steps+1 when K was not limited).
    diverged: rows stopped by the overflow guard (their state is frozen afterwards).
    failed: rows that went non-finite without a guard; their samples are NaN.
    """

    samples: np.ndarray
    diverged: np.ndarray
    failed: np.ndarray


def integrate_batch(
    system: SystemParams,
    ics: np.ndarray,
    dt: float,
    steps: int,
    noise_seeds: Optional[Sequence[int]] = None,
    keep_last: Optional[int] = None,
    t0: float = 0.0,
) -> BatchTrajectories:
    """
    Integrates many initial conditions at once. Row i with noise uses
    generator(noise_seeds[i]) exactly as integrate() would, so the two agree
    sample for sample.
    """
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    count = ics.shape[0]
    total = steps + 1
    keep = total if keep_last is None else min(int(keep_last), total)
    first_kept = total - keep

    noisy = system.noise_index is not None and system.noise_amplitude > 0
    if noisy:
        if noise_seeds is None or len(noise_seeds) != count:
            raise InvalidParameterError("noisy batch integration needs one noise seed per row")
        noise = np.stack([_noise_increments(system, dt, steps, s) for s in noise_seeds])

    out = np.empty((count, keep, system.dim))
    state = ics.copy()
    active = np.ones(count, dtype=bool)
    diverged = np.zeros(count, dtype=bool)
    failed = np.zeros(count, dtype=bool)
    if first_kept == 0:
        out[:, 0] = state

    guard = system.guard_index
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            t = t0 + k * dt
            nxt = rk4_step(system.rhs, state[active], t, dt)
            if noisy:
                nxt[:, system.noise_index] += noise[active, k]
            rows = np.flatnonzero(active)
            finite = np.all(np.isfinite(nxt), axis=1)
            if guard is not None:
                tripped = ~(np.abs(nxt[:, guard]) <= OVERFLOW_GUARD)
                keep_state = tripped & finite
                state[rows[keep_state]] = nxt[keep_state]
                diverged[rows[tripped]] = True
                active[rows[tripped]] = False
                ok = ~tripped
            else:
                bad = ~finite
                if bad.any():
                    failed[rows[bad]] = True
                    active[rows[bad]] = False
                    state[rows[bad]] = np.nan
                ok = finite
            state[rows[ok]] = nxt[ok]
            index = k + 1 - first_kept
            if index >= 0:
                out[:, index] = state
            if not active.any():
                # every row is frozen: the rest of the window repeats the final state
                out[:, max(index + 1, 0) :] = state[:, None, :]
                break

    if failed.any():
        logger.warning("%d of %d %s trajectories went non-finite", int(failed.sum()), count, system.kind)
    return BatchTrajectories(out, diverged, failed)


# =========================
# Classification
# =========================
def classify_swing_values(omega_prime: np.ndarray) -> List[AsymptoticLabel]:
    """Labels from normalized omega' at the horizon."""
    labels = []
    for w in np.atleast_1d(omega_prime):
        if abs(w) < OPERATING_TOL:
            labels.append(AsymptoticLabel.OPERATING)
        elif w > DIVERGING_LEVEL:
            labels.append(AsymptoticLabel.POSITIVE_DIVERGING)
        elif w < -DIVERGING_LEVEL:
            labels.append(AsymptoticLabel.NEGATIVE_DIVERGING)
        else:
            labels.append(AsymptoticLabel.UNDECIDED)
    return labels


def classify_swing(series: TimeSeries, horizon: int) -> AsymptoticLabel:
    """
    series holds normalized (theta', omega'). Reads omega' at the horizon, or at
    the last sample of a series the overflow guard cut short.
    """
    if len(series) == 0:
        return AsymptoticLabel.UNDECIDED
    if len(series) < horizon and not series.truncated:
        raise InvalidParameterError(f"series of length {len(series)} does not cover horizon {horizon}")
    index = min(horizon, len(series)) - 1
    return classify_swing_values(series.samples[index, 1])[0]


def classify_tail_means(means: np.ndarray) -> List[AsymptoticLabel]:
    labels = []
    for m in np.atleast_1d(means):
        if not np.isfinite(m) or m == 0:
            labels.append(AsymptoticLabel.UNDECIDED)
        elif m < 0:
            labels.append(AsymptoticLabel.ATTRACTOR_LEFT)
        else:
            labels.append(AsymptoticLabel.ATTRACTOR_RIGHT)
    return labels


def classify_chaotic(series: TimeSeries, tail: int) -> AsymptoticLabel:
    """Sign of the mean of x over the last `tail` samples (x in physical units)."""
    if tail < 1 or len(series) < tail:
        raise InvalidParameterError(f"series of length {len(series)} shorter than tail {tail}")
    return classify_tail_means(series.samples[-tail:, 0].mean())[0]


# =========================
# Normalization
# =========================
ARCTAN = "arctan"
MINMAX = "minmax"
IDENTITY = "identity"
_SCHEMES = (ARCTAN, MINMAX, IDENTITY)


@dataclass(frozen=True)
class Normalizer:
    """
    Per-variable schemes. minmax bounds are fixed from training data and frozen
    afterwards; prediction-time data never rescales them.
    """

    schemes: Tuple[str, ...]
    lower: Tuple[float, ...] = ()
    upper: Tuple[float, ...] = ()

    def __post_init__(self):
        for s in self.schemes:
            if s not in _SCHEMES:
                raise NormalizationError(f"Unknown normalization scheme: {s}")
        if MINMAX in self.schemes:
            if len(self.lower) != len(self.schemes) or len(self.upper) != len(self.schemes):
                raise NormalizationError("minmax normalization requires per-variable bounds")
            for i, s in enumerate(self.schemes):
                if s == MINMAX and not self.upper[i] > self.lower[i]:
                    raise NormalizationError(
                        f"zero-width minmax bounds for variable {i}: [{self.lower[i]}, {self.upper[i]}]"
                    )

    @classmethod
    def fit(cls, schemes: Sequence[str], training: Sequence[TimeSeries]) -> "Normalizer":
        schemes = tuple(schemes)
        if MINMAX not in schemes:
            return cls(schemes)
        pooled = np.concatenate([s.samples for s in training], axis=0)
        lower = tuple(float(v) for v in pooled.min(axis=0))
        upper = tuple(float(v) for v in pooled.max(axis=0))
        return cls(schemes, lower, upper)

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        out = values.copy()
        for i, s in enumerate(self.schemes):
            if s == ARCTAN:
                out[..., i] = 2.0 * np.arctan(values[..., i]) / np.pi
            elif s == MINMAX:
                lo, hi = self.lower[i], self.upper[i]
                out[..., i] = 2.0 * (values[..., i] - lo) / (hi - lo) - 1.0
        return out

    def invert(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        out = values.copy()
        for i, s in enumerate(self.schemes):
            if s == ARCTAN:
                out[..., i] = np.tan(0.5 * np.pi * np.clip(values[..., i], -1.0, 1.0))
            elif s == MINMAX:
                lo, hi = self.lower[i], self.upper[i]
                out[..., i] = lo + 0.5 * (values[..., i] + 1.0) * (hi - lo)
        return out

    def to_dict(self) -> dict:
        return {"schemes": list(self.schemes), "lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, data: dict) -> "Normalizer":
        return cls(tuple(data["schemes"]), tuple(data.get("lower", ())), tuple(data.get("upper", ())))


def normalize(series: TimeSeries, scheme: Union[Normalizer, str]) -> TimeSeries:
    if isinstance(scheme, str):
        if scheme == MINMAX:
            raise NormalizationError("minmax needs fitted bounds; pass a fitted Normalizer")
        scheme = Normalizer((scheme,) * series.dim)
    if len(scheme.schemes) != series.dim:
        raise NormalizationError(f"{len(scheme.schemes)} schemes for a {series.dim}-dimensional series")
    return series.with_samples(scheme.apply(series.samples))
