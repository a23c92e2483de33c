"""
reservoir.py
Echo-state reservoir: matrices, leaky-tanh update, odd/even readout
transform, listening (open loop), ridge readout and closed-loop prediction.

State arrays put the node axis last, so every update accepts one state of
shape (n,) or a batch of shape (N, n).
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from dynamics import Normalizer, TimeSeries
from errors import InvalidParameterError, ReadoutError, SpectralRadiusError
from seeding import derive_seed, generator

logger = logging.getLogger(__name__)

CLOSED_LOOP_CLAMP = 1.5
POWER_TOL = 1e-10
MAX_REDRAWS = 100

# spawn-key purposes for initial reservoir states drawn from init_state_seed
TRAIN_STATES = 0
VALIDATION_STATES = 1
PREDICTION_STATES = 2


# ----------------------------
# Hyperparameters and seeds
# ----------------------------
@dataclass(frozen=True)
class Hyperparams:
    p: float
    spectral_radius: float
    sigma: float
    alpha_leak: float
    eta: float
    n: int = 500
    d: int = 2

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise InvalidParameterError(f"n and d must be >= 1, got n={self.n}, d={self.d}")
        if not 0 < self.p < 1:
            raise InvalidParameterError(f"p must lie in (0, 1), got {self.p}")
        if not self.spectral_radius > 0:
            raise InvalidParameterError(f"spectral_radius must be > 0, got {self.spectral_radius}")
        if not self.sigma > 0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.alpha_leak <= 1:
            raise InvalidParameterError(f"alpha_leak must lie in (0, 1], got {self.alpha_leak}")
        # eta = 0 is accepted as an explicit exact-fit override; searches keep eta > 0
        if not self.eta >= 0:
            raise InvalidParameterError(f"eta must be >= 0, got {self.eta}")

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        """(p, lambda, sigma, alpha, eta) in the order the experiments quote them."""
        return (self.p, self.spectral_radius, self.sigma, self.alpha_leak, self.eta)

    @classmethod
    def from_tuple(cls, values: Sequence[float], n: int = 500, d: int = 2) -> "Hyperparams":
        p, lam, sigma, alpha, eta = values
        return cls(float(p), float(lam), float(sigma), float(alpha), float(eta), int(n), int(d))


@dataclass(frozen=True)
class MatrixSeeds:
    input_seed: int
    adjacency_seed: int
    init_state_seed: int

    @classmethod
    def derive(cls, master_seed: int, *keys: int) -> "MatrixSeeds":
        return cls(
            derive_seed(master_seed, "matrices", 0, *keys),
            derive_seed(master_seed, "matrices", 1, *keys),
            derive_seed(master_seed, "init", *keys),
        )


@dataclass(frozen=True, eq=False)
class ReservoirMatrices:
    w_in: np.ndarray
    adjacency: np.ndarray
    seeds: MatrixSeeds
    redraws: int = 0

    def __post_init__(self):
        for name in ("w_in", "adjacency"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n) or self.w_in.shape[0] != n:
            raise InvalidParameterError(
                f"inconsistent shapes: adjacency {self.adjacency.shape}, w_in {self.w_in.shape}"
            )

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def d(self) -> int:
        return self.w_in.shape[1]


# ----------------------------
# Spectral radius
# ----------------------------
def spectral_radius(matrix: np.ndarray, tol: float = POWER_TOL, max_iter: Optional[int] = None) -> float:
    """
    Power iteration from the all-ones vector. Each iteration takes two products
    and fits z = a*y + b*x; the larger root modulus of mu^2 - a*mu - b covers
    both a dominant real eigenvalue and a dominant complex pair.
    """
    matrix = np.asarray(matrix, dtype=float)
    n = matrix.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    x = np.ones(n) / np.sqrt(n)
    previous = None
    for iteration in range(1, max_iter + 1):
        y = matrix @ x
        y_norm = np.linalg.norm(y)
        if y_norm == 0:
            return 0.0
        z = matrix @ y
        along = float(x @ y)
        if np.linalg.norm(y - along * x) <= 1e-12 * y_norm:
            estimate = abs(along)
        else:
            (a, b), *_ = np.linalg.lstsq(np.column_stack([y, x]), z, rcond=None)
            estimate = float(np.max(np.abs(np.roots([1.0, -a, -b]))))
        if previous is not None and abs(estimate - previous) <= tol * max(estimate, np.finfo(float).tiny):
            return estimate
        z_norm = np.linalg.norm(z)
        if z_norm == 0:
            return estimate
        x = z / z_norm
        previous = estimate
    raise SpectralRadiusError(
        f"power iteration did not converge in {max_iter} iterations (last estimate {previous})",
        iterations=max_iter,
    )


def rescale_to_spectral_radius(matrix: np.ndarray, target: float) -> np.ndarray:
    rho = spectral_radius(matrix)
    if rho == 0:
        raise SpectralRadiusError("cannot rescale a matrix with zero spectral radius", iterations=0)
    return np.asarray(matrix, dtype=float) * (target / rho)


# ----------------------------
# Construction
# ----------------------------
def build_matrices(hp: Hyperparams, seeds: MatrixSeeds) -> ReservoirMatrices:
    """
    W_in uniform on [-sigma, sigma]; A Erdos-Renyi with edge probability p and
    weights uniform on [-1, 1], rescaled to spectral radius lambda. Draws with
    zero spectral radius are redrawn from the next adjacency substream.
    """
    w_in = generator(seeds.input_seed).uniform(-hp.sigma, hp.sigma, size=(hp.n, hp.d))
    for attempt in range(MAX_REDRAWS):
        rng = generator(seeds.adjacency_seed, attempt)
        mask = rng.random((hp.n, hp.n)) < hp.p
        weights = rng.uniform(-1.0, 1.0, size=(hp.n, hp.n))
        adjacency = np.where(mask, weights, 0.0)
        rho = spectral_radius(adjacency)
        if rho > 0:
            adjacency *= hp.spectral_radius / rho
            logger.debug(
                "Built reservoir n=%d p=%.3f density=%.3f rho=%.4g->%.4g (redraws=%d)",
                hp.n, hp.p, mask.mean(), rho, hp.spectral_radius, attempt,
            )
            return ReservoirMatrices(w_in, adjacency, seeds, attempt)
        logger.debug("Adjacency draw %d has zero spectral radius, redrawing", attempt)
    raise SpectralRadiusError(f"no adjacency draw with nonzero spectral radius in {MAX_REDRAWS} attempts", 0)


def initial_states(init_state_seed: int, purpose: int, index: int, n: int, count: Optional[int] = None) -> np.ndarray:
    """Fresh reservoir state(s) uniform on [-1, 1]^n for a given purpose and item index."""
    shape = (n,) if count is None else (count, n)
    return generator(init_state_seed, purpose, index).uniform(-1.0, 1.0, size=shape)


# ----------------------------
# Update and transform
# ----------------------------
def reservoir_step(state: np.ndarray, u: np.ndarray, mat: ReservoirMatrices, alpha_leak: float) -> np.ndarray:
    """r(t+dt) = (1 - alpha) r(t) + alpha tanh(A r(t) + W_in u(t))."""
    drive = state @ mat.adjacency.T + u @ mat.w_in.T
    return (1.0 - alpha_leak) * state + alpha_leak * np.tanh(drive)


def state_transform(state: np.ndarray) -> np.ndarray:
    """Odd nodes (1-based) copied, even nodes squared."""
    out = np.array(state, dtype=float, copy=True)
    out[..., 1::2] = out[..., 1::2] ** 2
    return out


def listen(
    mat: ReservoirMatrices,
    alpha_leak: float,
    init: np.ndarray,
    drive: TimeSeries,
) -> Tuple[np.ndarray, np.ndarray]:
    """Open-loop drive. Returns the final state and the (len(drive), n) history of states."""
    if len(drive) < 1:
        raise InvalidParameterError("drive must contain at least one sample")
    if drive.dim != mat.d:
        raise InvalidParameterError(f"drive dimension {drive.dim} does not match reservoir input {mat.d}")
    state = np.asarray(init, dtype=float)
    history = np.empty((len(drive), mat.n))
    for k, u in enumerate(drive.samples):
        state = reservoir_step(state, u, mat, alpha_leak)
        history[k] = state
    return state, history


def listen_batch(mat: ReservoirMatrices, alpha_leak: float, init: np.ndarray, drives: np.ndarray) -> np.ndarray:
    """Open-loop drive of N reservoir copies; drives has shape (N, steps, d). Returns (N, n)."""
    state = np.asarray(init, dtype=float)
    for k in range(drives.shape[1]):
        state = reservoir_step(state, drives[:, k], mat, alpha_leak)
    return state


# ----------------------------
# Readout
# ----------------------------
def train_readout(states: np.ndarray, targets: np.ndarray, eta: float) -> np.ndarray:
    """W_out = U V^T (V V^T + eta I)^-1, with V (n x L) transformed states and U (d x L) targets."""
    states = np.asarray(states, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if states.ndim != 2 or targets.ndim != 2 or states.shape[1] != targets.shape[1] or states.shape[1] < 1:
        raise InvalidParameterError(f"incompatible shapes V {states.shape}, U {targets.shape}")
    n = states.shape[0]
    gram = states @ states.T
    gram[np.diag_indices(n)] += eta
    rhs = states @ targets.T
    if eta == 0 and np.linalg.matrix_rank(states) < n:
        raise ReadoutError("eta = 0 with rank-deficient state matrix: ridge system is singular")
    try:
        solution = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except np.linalg.LinAlgError:
        try:
            solution = scipy.linalg.solve(gram, rhs, assume_a="sym")
        except np.linalg.LinAlgError as exc:
            raise ReadoutError(f"ridge system is singular (eta={eta})") from exc
    logger.debug("Readout solved: n=%d, L=%d, eta=%.3g", n, states.shape[1], eta)
    return solution.T


def readout_residual(w_out: np.ndarray, states: np.ndarray, targets: np.ndarray, eta: float) -> float:
    """Relative residual of W (V V^T + eta I) = U V^T, scaled by the sizes of its terms."""
    gram = states @ states.T + eta * np.eye(states.shape[0])
    rhs = targets @ states.T
    residual = np.linalg.norm(w_out @ gram - rhs)
    scale = np.linalg.norm(w_out) * np.linalg.norm(gram) + np.linalg.norm(rhs)
    return float(residual / scale) if scale > 0 else float(residual)


# ----------------------------
# Trained machine
# ----------------------------
@dataclass(frozen=True)
class Provenance:
    experiment_id: str = ""
    data_digest: str = ""
    config_digest: str = ""
    master_seed: int = 0
    system_kind: str = ""
    # start time of the training series; guides for driven systems start here too
    t0: float = 0.0


@dataclass(frozen=True, eq=False)
class TrainedMachine:
    hyperparams: Hyperparams
    matrices: ReservoirMatrices
    w_out: np.ndarray
    beta: float
    dt: float
    provenance: Provenance = field(default_factory=Provenance)
    normalizer: Optional[Normalizer] = None

    def __post_init__(self):
        w_out = np.array(self.w_out, dtype=float)
        if w_out.shape != (self.hyperparams.d, self.hyperparams.n):
            raise InvalidParameterError(f"w_out has shape {w_out.shape}, expected ({self.hyperparams.d}, {self.hyperparams.n})")
        w_out.setflags(write=False)
        object.__setattr__(self, "w_out", w_out)

    def output(self, state: np.ndarray) -> np.ndarray:
        return state_transform(state) @ self.w_out.T


def data_digest(series: Sequence[TimeSeries]) -> str:
    h = hashlib.sha256()
    for s in series:
        h.update(np.ascontiguousarray(s.samples, dtype="<f8").tobytes())
        h.update(repr((len(s), s.dt)).encode())
    return h.hexdigest()


def collect_training_states(
    mat: ReservoirMatrices,
    alpha_leak: float,
    training: Sequence[TimeSeries],
    listen_length: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Builds V (n x L) and U (d x L) over all training series. Each series starts
    from its own random reservoir state; the state after consuming u_k is
    paired with u_{k+1}. The first pair kept is the state after
    `listen_length` inputs with u_{listen_length}, the same warm-up the
    closed loop gets from a guiding series of that length.
    """
    skip = max(listen_length - 1, 0)
    v_blocks: List[np.ndarray] = []
    u_blocks: List[np.ndarray] = []
    for i, series in enumerate(training):
        if len(series) <= skip + 1:
            logger.warning("Training series %d has %d samples, too short for listen length %d; skipped",
                           i, len(series), listen_length)
            continue
        init = initial_states(mat.seeds.init_state_seed, TRAIN_STATES, i, mat.n)
        _, history = listen(mat, alpha_leak, init, series.head(len(series) - 1))
        v_blocks.append(state_transform(history[skip:]))
        u_blocks.append(series.samples[skip + 1 :])
    if not v_blocks:
        raise InvalidParameterError("no training series long enough for the listen length")
    return np.concatenate(v_blocks).T, np.concatenate(u_blocks).T


def train_machine(
    hp: Hyperparams,
    seeds: MatrixSeeds,
    training: Sequence[TimeSeries],
    listen_length: int,
    beta: float,
    provenance: Optional[Provenance] = None,
    normalizer: Optional[Normalizer] = None,
    matrices: Optional[ReservoirMatrices] = None,
) -> TrainedMachine:
    phases = {s.t0 for s in training}
    if len(phases) > 1:
        raise InvalidParameterError(f"training series start at different times {sorted(phases)}")
    mat = matrices if matrices is not None else build_matrices(hp, seeds)
    states, targets = collect_training_states(mat, hp.alpha_leak, training, listen_length)
    w_out = train_readout(states, targets, hp.eta)
    provenance = replace(provenance or Provenance(), t0=float(training[0].t0))
    if not provenance.data_digest:
        provenance = replace(provenance, data_digest=data_digest(training))
    logger.info("Trained machine %s on %d pairs", hp.as_tuple(), states.shape[1])
    return TrainedMachine(hp, mat, w_out, beta, training[0].dt, provenance, normalizer)


# ----------------------------
# Closed loop
# ----------------------------
def predict_closed_loop(
    machine: TrainedMachine,
    seed_state: np.ndarray,
    last_output: np.ndarray,
    steps: int,
    t0: float = 0.0,
) -> TimeSeries:
    """
    Autonomous run: the readout v(t+dt) = W_out r~(t+dt) is fed back as the
    next input. Outputs are clamped to [-1.5, 1.5]; a non-finite output ends
    the run and the series comes back truncated.
    """
    mat = machine.matrices
    alpha = machine.hyperparams.alpha_leak
    state = np.asarray(seed_state, dtype=float)
    u = np.asarray(last_output, dtype=float)
    out = np.empty((steps, mat.d))
    for k in range(steps):
        state = reservoir_step(state, u, mat, alpha)
        v = machine.output(state)
        if not np.all(np.isfinite(v)):
            logger.warning("Closed loop went non-finite at step %d; prediction truncated", k)
            return TimeSeries(machine.dt, out[:k], t0, True)
        u = np.clip(v, -CLOSED_LOOP_CLAMP, CLOSED_LOOP_CLAMP)
        out[k] = u
    return TimeSeries(machine.dt, out, t0, False)


def predict_closed_loop_batch(
    machine: TrainedMachine,
    seed_states: np.ndarray,
    last_outputs: np.ndarray,
    steps: int,
    keep_last: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    N closed loops in lock step. Returns the last `keep_last` outputs (N, K, d)
    and a flag per row that went non-finite (those rows hold NaN).
    """
    mat = machine.matrices
    alpha = machine.hyperparams.alpha_leak
    keep = steps if keep_last is None else min(int(keep_last), steps)
    first_kept = steps - keep
    state = np.asarray(seed_states, dtype=float)
    u = np.asarray(last_outputs, dtype=float)
    out = np.empty((state.shape[0], keep, mat.d))
    flagged = np.zeros(state.shape[0], dtype=bool)
    with np.errstate(invalid="ignore", over="ignore"):
        for k in range(steps):
            state = reservoir_step(state, u, mat, alpha)
            v = machine.output(state)
            bad = ~np.all(np.isfinite(v), axis=1)
            if bad.any():
                flagged |= bad
                v[bad] = np.nan
            u = np.clip(v, -CLOSED_LOOP_CLAMP, CLOSED_LOOP_CLAMP)
            if k >= first_kept:
                out[:, k - first_kept] = u
    if flagged.any():
        logger.warning("%d of %d closed-loop predictions went non-finite", int(flagged.sum()), len(flagged))
    return out, flagged


def guide_and_predict(
    machine: TrainedMachine,
    guiding: np.ndarray,
    steps: int,
    init_states: np.ndarray,
    keep_last: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    guiding: (N, l, d) normalized guiding series. The first l-1 samples are
    listened to; the last one is the first closed-loop input, so the first
    prediction estimates sample l.
    """
    alpha = machine.hyperparams.alpha_leak
    states = listen_batch(machine.matrices, alpha, init_states, guiding[:, :-1])
    return predict_closed_loop_batch(machine, states, guiding[:, -1], steps, keep_last)
