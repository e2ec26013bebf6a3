"""Drift-diffusion equation for continuously monitored charge.

Under diffusive monitoring the accumulated charge is continuous, and the
charge-resolved state obeys a drift-diffusion equation with operator
coefficients: each node of a uniform charge grid carries an unnormalized
density matrix, drift comes from a superoperator built out of the
monitored channels, and diffusion is a scalar set by the channel weights.
Central differences turn this into a block-tridiagonal generator; nodes
beyond the grid are held at zero, which implements absorption, and the
rate of total-weight loss is the first-passage density.

Threshold semantics: a threshold at charge c puts the zeroed ghost node
exactly at c, so the last live node sits at c - delta.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.sparse

from .analysis import FptResult
from .errors import ConfigError, ConvergenceError, ModelError, PhysicsError
from .operators import (
    LindbladModel,
    build_liouvillian,
    left_multiplier,
    right_multiplier,
    steady_state,
    trace_functional,
    validate_density_matrix,
    vectorize,
)
from .propagation import absorption_horizon_guess, propagate_uniform

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 0.01
PECLET_LIMIT = 2.0
EDGE_MASS_TOLERANCE = 1e-12
WEIGHT_EXCESS_TOLERANCE = 1e-6
TRACE_DENSITY_ABORT = 1e-9
TIME_STEP_FACTOR = 0.002
MAX_GRID_POINTS = 200_000
MAX_WIDEN_ROUNDS = 12
MAX_HORIZON_DOUBLINGS = 12
ALIGNMENT_TOL = 1e-9


@dataclass(frozen=True)
class ChargeGrid:
    """Uniform charge grid on [lower, upper] with zeroed ghosts outside."""

    lower: float
    upper: float
    delta: float

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise ConfigError("grid spacing must be positive and finite")
        if not (self.lower < 0.0 < self.upper):
            raise ConfigError(
                f"grid [{self.lower}, {self.upper}] must straddle charge 0"
            )
        for name, edge in (("lower", self.lower), ("upper", self.upper)):
            ratio = edge / self.delta
            if abs(ratio - round(ratio)) > ALIGNMENT_TOL * max(1.0, abs(ratio)):
                raise ConfigError(
                    f"{name} edge {edge} is not a multiple of the spacing "
                    f"{self.delta}, so charge 0 would fall between nodes"
                )
        object.__setattr__(self, "lower", round(self.lower / self.delta) * self.delta)
        object.__setattr__(self, "upper", round(self.upper / self.delta) * self.delta)

    @property
    def nnodes(self) -> int:
        return int(round((self.upper - self.lower) / self.delta)) + 1

    @property
    def nodes(self) -> np.ndarray:
        return self.lower + self.delta * np.arange(self.nnodes)

    @property
    def zero_index(self) -> int:
        return int(round(-self.lower / self.delta))

    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights over the nodes."""
        w = np.full(self.nnodes, self.delta)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def index(self, charge: float) -> int:
        ratio = (charge - self.lower) / self.delta
        i = int(round(ratio))
        if abs(ratio - i) > 1e-6 or not 0 <= i < self.nnodes:
            raise ValueError(f"charge {charge} is not a grid node")
        return i


@dataclass(frozen=True)
class DriftSuperoperator:
    """Operator-valued drift and scalar diffusion of the charge equation."""

    matrix: np.ndarray
    diffusion: float


def build_drift_superoperator(model: LindbladModel) -> DriftSuperoperator:
    """Weighted sum of (A rho + rho A') over monitored channels, with the
    squared weights accumulating into the scalar diffusion constant."""
    model.require_channels()
    if not model.monitored:
        raise ModelError("diffusive monitoring needs at least one monitored channel")
    d = model.dim
    kmat = np.zeros((d * d, d * d), dtype=complex)
    kdiff = 0.0
    for ch in model.monitored:
        a = ch.rotated_operator()
        kmat += ch.weight * (left_multiplier(a) + right_multiplier(a.conj().T))
        kdiff += ch.weight**2
    kmat.setflags(write=False)
    return DriftSuperoperator(kmat, float(kdiff))


@dataclass(frozen=True)
class FokkerPlanckGenerator:
    """Block-tridiagonal generator of the discretized charge equation."""

    model: LindbladModel
    grid: ChargeGrid
    dim: int
    matrix: scipy.sparse.csr_matrix
    survival_vector: np.ndarray
    flux_vector: np.ndarray
    drift: DriftSuperoperator
    reflecting: bool = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def peclet_number(drift: DriftSuperoperator, delta: float) -> float:
    return float(np.linalg.norm(drift.matrix, 2)) * delta / drift.diffusion


def build_fokker_planck_generator(
    model: LindbladModel, grid: ChargeGrid, *, reflecting: bool = False
) -> FokkerPlanckGenerator:
    """Assemble the central-difference generator on a charge grid.

    Per node: the full dissipative generator, minus drift toward larger
    charge at first-difference order, plus scalar diffusion at second
    order.  Ghost nodes outside the grid are zero, so edge stencils lose
    weight; that loss is the first-passage flux.  With ``reflecting`` the
    edge rows are modified to conserve the trapezoidal total weight
    exactly, which isolates integrator error in conservation tests.
    """
    drift = build_drift_superoperator(model)
    pe = peclet_number(drift, grid.delta)
    if pe > PECLET_LIMIT:
        warnings.warn(
            f"drift dominates diffusion on this grid (cell ratio {pe:.2f} > "
            f"{PECLET_LIMIT:g}); central differences may oscillate, refine "
            "the charge spacing",
            RuntimeWarning,
            stacklevel=2,
        )
    d = model.dim
    m = grid.nnodes
    dn = grid.delta
    eye = np.eye(d * d, dtype=complex)
    liou = build_liouvillian(model)
    diag = liou - (drift.diffusion / dn**2) * eye
    up = -drift.matrix / (2 * dn) + (drift.diffusion / (2 * dn**2)) * eye
    down = drift.matrix / (2 * dn) + (drift.diffusion / (2 * dn**2)) * eye
    shift_up = scipy.sparse.eye(m, k=1, format="csr")
    shift_down = scipy.sparse.eye(m, k=-1, format="csr")
    matrix = (
        scipy.sparse.kron(scipy.sparse.identity(m), diag, format="csr")
        + scipy.sparse.kron(shift_up, up, format="csr")
        + scipy.sparse.kron(shift_down, down, format="csr")
    )
    if reflecting:
        def cell(i, j):
            e = scipy.sparse.coo_matrix(([1.0], ([i], [j])), shape=(m, m))
            return e
        matrix = (
            matrix
            + scipy.sparse.kron(cell(0, 0), -drift.matrix / dn, format="csr")
            + scipy.sparse.kron(cell(0, 1), up, format="csr")
            + scipy.sparse.kron(cell(m - 1, m - 1), drift.matrix / dn, format="csr")
            + scipy.sparse.kron(cell(m - 1, m - 2), down, format="csr")
        )
    matrix = matrix.tocsr()
    survival = np.kron(grid.weights(), trace_functional(d)).astype(complex)
    flux = -(matrix.T @ survival)
    return FokkerPlanckGenerator(
        model, grid, d, matrix, survival, flux, drift, reflecting
    )


@dataclass
class DiffusionState:
    """Node-resolved state of the discretized charge equation."""

    grid: ChargeGrid
    dim: int
    data: np.ndarray
    time: float = 0.0

    @classmethod
    def initial(cls, grid: ChargeGrid, rho0: np.ndarray) -> "DiffusionState":
        """All charge mass on the node at 0, scaled to unit trapezoid weight."""
        rho0 = validate_density_matrix(rho0)
        d = rho0.shape[0]
        data = np.zeros(grid.nnodes * d * d, dtype=complex)
        i = grid.zero_index
        data[i * d * d : (i + 1) * d * d] = vectorize(rho0) / grid.delta
        return cls(grid, d, data, 0.0)

    def node_matrix(self, charge: float) -> np.ndarray:
        d = self.dim
        i = self.grid.index(charge)
        return self.data[i * d * d : (i + 1) * d * d].reshape((d, d), order="F")

    def node_traces(self) -> np.ndarray:
        d = self.dim
        blocks = self.data.reshape((self.grid.nnodes, d, d))
        # stacking order inside each block is irrelevant for the trace
        return np.einsum("nii->n", blocks).real

    def survival(self) -> float:
        return float(self.grid.weights() @ self.node_traces())

    def total_state(self) -> np.ndarray:
        """Trapezoid-weighted sum of all nodes: the unconditional state."""
        d = self.dim
        # C-order block views are transposes of the column-stacked matrices
        blocks = self.data.reshape((self.grid.nnodes, d, d))
        w = self.grid.weights()
        return np.tensordot(w, blocks, axes=(0, 0)).T.copy()


def conditioned_charge_distribution(state: DiffusionState) -> tuple[np.ndarray, np.ndarray]:
    """Node charges and densities of the survivors, normalized to unit
    trapezoidal integral."""
    traces = state.node_traces()
    low = traces.min()
    if low < -TRACE_DENSITY_ABORT:
        raise PhysicsError(f"node density {low:.3e} is below the abort threshold")
    traces = np.clip(traces, 0.0, None)
    total = float(state.grid.weights() @ traces)
    if total <= 0:
        raise PhysicsError("no surviving weight to condition on")
    return state.grid.nodes, traces / total


def evolve(
    generator: FokkerPlanckGenerator, state: DiffusionState, t: float, method: str = "auto"
) -> DiffusionState:
    """Propagate a node-resolved state forward by t."""
    if t < 0:
        raise ConfigError("evolution time must be non-negative")
    if state.grid != generator.grid or state.dim != generator.dim:
        raise ConfigError("state and generator live on different grids")
    if t == 0.0:
        return DiffusionState(state.grid, state.dim, state.data.copy(), state.time)
    last = None
    for _, x in propagate_uniform(
        generator.matrix, state.data, np.array([0.0, t]),
        method=method, prefer_implicit=True,
    ):
        last = x
    return DiffusionState(state.grid, state.dim, last, state.time + t)


def fpt_density(generator: FokkerPlanckGenerator, state: DiffusionState) -> float:
    """Instantaneous rate of weight loss through the grid edges."""
    return float(np.real(generator.flux_vector @ state.data))


@dataclass
class DiffusionFptSolution:
    """Chronology of a diffusive first-passage run."""

    result: FptResult
    grid: ChargeGrid
    final_state: DiffusionState
    edge_mass_peak: tuple[float, float]
    dt: float
    snapshots: tuple[DiffusionState, ...] = ()

    @property
    def times(self) -> np.ndarray:
        return self.result.times

    def conditioned_final_distribution(self) -> tuple[np.ndarray, np.ndarray]:
        return conditioned_charge_distribution(self.final_state)


def _evolve_series(
    generator: FokkerPlanckGenerator,
    initial: DiffusionState,
    times: np.ndarray,
    method: str,
    substep: float | None,
    keep_states: int,
) -> DiffusionFptSolution:
    d = generator.dim
    grid = generator.grid
    m = grid.nnodes
    w = grid.weights()
    num = times.size
    surv = np.empty(num)
    dens = np.empty(num)
    lo_peak = 0.0
    hi_peak = 0.0
    keep_at = set()
    if keep_states > 1:
        keep_at = set(np.linspace(0, num - 1, keep_states).round().astype(int))
    snapshots = []
    final = None
    for i, x in propagate_uniform(
        generator.matrix, initial.data, times,
        method=method, substep=substep, prefer_implicit=True,
    ):
        blocks = x.reshape((m, d, d))
        traces = np.einsum("nii->n", blocks).real
        surv[i] = w @ traces
        dens[i] = np.real(generator.flux_vector @ x)
        lo_peak = max(lo_peak, grid.delta * traces[0])
        hi_peak = max(hi_peak, grid.delta * traces[-1])
        if i in keep_at:
            snapshots.append(DiffusionState(grid, d, x.copy(), float(times[i])))
        if i == num - 1:
            final = x
    if dens.min() < -1e-10:
        raise PhysicsError(f"negative absorption rate {dens.min():.3e}")
    if surv.max() > 1.0 + WEIGHT_EXCESS_TOLERANCE:
        raise PhysicsError(f"total weight grew to {surv.max():.8f}")
    if np.diff(surv).max(initial=-1.0) > 1e-10:
        raise PhysicsError("survival grew along the grid beyond roundoff")
    dens = np.clip(dens, 0.0, None)
    surv = np.minimum.accumulate(np.clip(surv, 0.0, 1.0))
    result = FptResult(times, dens, surv, "deterministic-diffusion")
    final_state = DiffusionState(grid, d, final, float(times[-1]))
    return DiffusionFptSolution(
        result, grid, final_state, (lo_peak, hi_peak),
        float(times[1] - times[0]), tuple(snapshots),
    )


def default_time_grid(
    model: LindbladModel,
    drift: DriftSuperoperator,
    horizon: float,
    dt: float | None,
    nearest_threshold: float | None = None,
    max_points: int = MAX_GRID_POINTS,
) -> np.ndarray:
    """Uniform output grid sized from the fastest of the dissipative,
    drift, and diffusion scales.

    A threshold close to the starting charge makes absorption spike at
    times of order distance squared over the diffusion constant, so the
    default step also resolves that scale.
    """
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    if dt is None:
        scale = max(
            model.rate_scale(),
            drift.diffusion,
            float(np.linalg.norm(drift.matrix, 2)),
        )
        dt = TIME_STEP_FACTOR / scale
        if nearest_threshold is not None:
            dt = min(dt, TIME_STEP_FACTOR * nearest_threshold**2 / drift.diffusion)
    if dt <= 0:
        raise ConfigError("dt must be positive")
    num = max(2, int(math.ceil(horizon / dt)) + 1)
    if num > max_points:
        logger.debug(
            "capping time grid at %d points (dt %.3g -> %.3g)",
            max_points, dt, horizon / (max_points - 1),
        )
        num = max_points
    return np.linspace(0.0, horizon, num)


def mean_charge_path(
    model: LindbladModel, rho0: np.ndarray, times: np.ndarray
) -> np.ndarray:
    """Unconditional mean charge versus time.

    The ensemble average of the charge increment is the weighted sum of
    channel expectation currents, so the mean path follows from the plain
    dissipative evolution, with no grid involved.
    """
    liou = build_liouvillian(model)
    functional = np.zeros(model.dim**2, dtype=complex)
    for ch in model.monitored:
        a = ch.rotated_operator()
        functional += ch.weight * vectorize((a + a.conj().T).T)
    rates = np.empty(times.size)
    for i, x in propagate_uniform(liou, vectorize(rho0), times, method="dense"):
        rates[i] = np.real(functional @ x)
    return scipy.integrate.cumulative_trapezoid(rates, times, initial=0.0)


def _round_to(value: float, delta: float, direction: int) -> float:
    steps = value / delta
    steps = math.floor(steps) if direction < 0 else math.ceil(steps)
    return steps * delta


def _auto_grid(
    model: LindbladModel,
    drift: DriftSuperoperator,
    rho0: np.ndarray,
    threshold: float | None,
    lower_threshold: float | None,
    delta: float | None,
    horizon: float,
) -> ChargeGrid:
    """Grid guess: thresholds place hard edges one node inside the ghost;
    open sides follow the unconditional mean path plus a diffusive margin."""
    probe = np.linspace(0.0, horizon, 200)
    mean = mean_charge_path(model, rho0, probe)
    margin = 8.0 * math.sqrt(drift.diffusion * horizon) + 1.0
    hi_guess = float(mean.max()) + margin
    lo_guess = float(mean.min()) - margin
    if delta is None:
        span_hi = threshold if threshold is not None else hi_guess
        span_lo = lower_threshold if lower_threshold is not None else lo_guess
        delta = DEFAULT_RESOLUTION * min(1.0, span_hi - span_lo)
    if threshold is not None:
        # snap the spacing so the ghost node lands exactly on the threshold
        delta = threshold / max(2, round(threshold / delta))
    elif lower_threshold is not None:
        delta = -lower_threshold / max(2, round(-lower_threshold / delta))
    if threshold is not None and lower_threshold is not None:
        ratio = -lower_threshold / delta
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, abs(ratio)):
            raise ConfigError(
                f"thresholds {lower_threshold} and {threshold} do not share "
                f"a grid of spacing {delta:g}; pass delta or grid explicitly"
            )
    upper = threshold - delta if threshold is not None else _round_to(hi_guess, delta, +1)
    lower = lower_threshold + delta if lower_threshold is not None else _round_to(lo_guess, delta, -1)
    upper = max(upper, delta)
    lower = min(lower, -delta)
    return ChargeGrid(lower, upper, delta)


def _widened(grid: ChargeGrid, grow_lower: bool, grow_upper: bool) -> ChargeGrid:
    lower, upper = grid.lower, grid.upper
    if grow_lower:
        lower = _round_to(2.0 * lower - 1.0, grid.delta, -1)
    if grow_upper:
        upper = _round_to(2.0 * upper + 1.0, grid.delta, +1)
    return ChargeGrid(lower, upper, grid.delta)


def solve_diffusion_fpt(
    model: LindbladModel,
    *,
    threshold: float | None = None,
    lower_threshold: float | None = None,
    grid: ChargeGrid | None = None,
    delta: float | None = None,
    initial: np.ndarray | str = "steady",
    horizon: float = 10.0,
    dt: float | None = None,
    method: str = "auto",
    substep: float | None = None,
    edge_tolerance: float = EDGE_MASS_TOLERANCE,
    auto_tail: bool = False,
    tail_epsilon: float = 1e-6,
    max_horizon: float | None = None,
    max_grid_points: int = MAX_GRID_POINTS,
    keep_states: int = 0,
) -> DiffusionFptSolution:
    """Solve the absorbing charge drift-diffusion problem.

    Thresholds are real charges; each one pins its side of the grid with
    the zeroed ghost node exactly on the threshold.  Open sides start from
    the unconditional mean path plus a diffusive margin and are widened
    until the edge mass stays below ``edge_tolerance`` over the horizon.
    ``auto_tail`` doubles the horizon until survival drops under
    ``tail_epsilon``; distributions that never fully absorb will hit the
    horizon cap instead, so leave it off for conditioned studies.
    """
    model.require_channels()
    drift = build_drift_superoperator(model)
    if isinstance(initial, str):
        if initial != "steady":
            raise ConfigError(f"unknown initial state spec {initial!r}")
        rho0 = steady_state(build_liouvillian(model))
    else:
        rho0 = validate_density_matrix(initial)
    if grid is not None and (threshold is not None or lower_threshold is not None):
        raise ConfigError("pass either an explicit grid or thresholds, not both")
    if threshold is not None and threshold <= 0:
        raise ConfigError("upper threshold must be positive")
    if lower_threshold is not None and lower_threshold >= 0:
        raise ConfigError("lower threshold must be negative")

    horizon = float(horizon)
    cap = max_horizon if max_horizon is not None else horizon * 2.0**MAX_HORIZON_DOUBLINGS
    if grid is not None:
        work, lower_open, upper_open = grid, False, False
        near = min(work.upper + work.delta, -work.lower + work.delta)
    else:
        work = _auto_grid(model, drift, rho0, threshold, lower_threshold, delta, horizon)
        lower_open = lower_threshold is None
        upper_open = threshold is None
        near = min(
            threshold if threshold is not None else math.inf,
            -lower_threshold if lower_threshold is not None else math.inf,
        )
        if not math.isfinite(near):
            near = None
    if auto_tail:
        probe = build_fokker_planck_generator(model, work)
        guess = absorption_horizon_guess(
            probe.matrix,
            probe.survival_vector,
            DiffusionState.initial(work, rho0).data,
        )
        if guess is not None and guess > horizon:
            horizon = float(min(guess, cap))
            logger.debug("resolvent tail estimate sets the horizon to %.4g", horizon)

    for _ in range(MAX_HORIZON_DOUBLINGS + 1):
        times = default_time_grid(
            model, drift, horizon, dt, nearest_threshold=near, max_points=max_grid_points
        )
        solution = None
        for _ in range(MAX_WIDEN_ROUNDS):
            generator = build_fokker_planck_generator(model, work)
            state0 = DiffusionState.initial(work, rho0)
            solution = _evolve_series(generator, state0, times, method, substep, keep_states)
            lo_peak, hi_peak = solution.edge_mass_peak
            grow_lower = lower_open and lo_peak > edge_tolerance
            grow_upper = upper_open and hi_peak > edge_tolerance
            if not grow_lower and not grow_upper:
                break
            wider = _widened(work, grow_lower, grow_upper)
            logger.debug(
                "widening charge grid [%g, %g] -> [%g, %g]",
                work.lower, work.upper, wider.lower, wider.upper,
            )
            work = wider
        else:
            raise ConvergenceError(
                "open charge grid failed to satisfy the edge-mass tolerance "
                f"{edge_tolerance:g} after {MAX_WIDEN_ROUNDS} widenings"
            )
        if not auto_tail or solution.result.survival[-1] < tail_epsilon:
            return solution
        if horizon * 2 > cap:
            raise ConvergenceError(
                f"survival is {solution.result.survival[-1]:.3e} at the horizon "
                f"cap {cap:g}; absorption may be incomplete by construction"
            )
        horizon *= 2.0
    raise ConvergenceError("horizon extension failed to converge the tail")
