"""Charge-resolved master equation for jump unravellings.

The joint state of system and counted charge is a stack of unnormalized
density matrices rho_N, one per charge cell N in a finite window [a, b].
Charge moves when a monitored channel fires; anything that would land
outside the window is absorbed, and the absorption rate is the
first-passage-time density for leaving the window.

Threshold semantics: a user threshold ``n`` means "the first time the
charge reaches n", realized by the window edge b = n - 1 (symmetrically
a = n + 1 for a lower threshold).  One-sided thresholds keep the open side
wide enough that the edge cell stays numerically unoccupied.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .analysis import FptResult
from .errors import ConfigError, ConvergenceError, ModelError, PhysicsError
from .operators import (
    LindbladModel,
    build_jump_super,
    build_no_jump,
    trace_functional,
    steady_state,
    build_liouvillian,
    validate_density_matrix,
    vectorize,
)
from .propagation import absorption_horizon_guess, evolve_to, propagate_uniform

logger = logging.getLogger(__name__)

EDGE_TOLERANCE = 1e-12
TRACE_CLIP_ABORT = 1e-9
MAX_WIDEN_ROUNDS = 24
MAX_HORIZON_DOUBLINGS = 16


@dataclass(frozen=True)
class ChargeWindow:
    """Inclusive integer charge window [lower, upper] containing 0."""

    lower: int
    upper: int

    def __post_init__(self):
        if not (isinstance(self.lower, (int, np.integer)) and isinstance(self.upper, (int, np.integer))):
            raise ConfigError("window edges must be integers")
        object.__setattr__(self, "lower", int(self.lower))
        object.__setattr__(self, "upper", int(self.upper))
        if not (self.lower <= 0 <= self.upper):
            raise ConfigError(f"window [{self.lower}, {self.upper}] must contain 0")
        if self.lower >= self.upper:
            raise ConfigError("window must contain at least two cells")

    @property
    def ncells(self) -> int:
        return self.upper - self.lower + 1

    @property
    def charges(self) -> np.ndarray:
        return np.arange(self.lower, self.upper + 1)

    def index(self, charge: int) -> int:
        if not self.lower <= charge <= self.upper:
            raise ValueError(f"charge {charge} outside window [{self.lower}, {self.upper}]")
        return charge - self.lower


def _clip_trace(value: float, what: str) -> float:
    if value >= 0.0:
        return value
    if value < -TRACE_CLIP_ABORT:
        raise PhysicsError(f"{what} is {value:.3e}, below the abort threshold")
    logger.debug("clipping negative %s %.3e to zero", what, value)
    return 0.0


@dataclass
class ChargeResolvedJumpState:
    """Stacked charge-resolved state at one instant."""

    window: ChargeWindow
    dim: int
    data: np.ndarray
    time: float = 0.0

    @classmethod
    def initial(cls, window: ChargeWindow, rho0: np.ndarray) -> "ChargeResolvedJumpState":
        rho0 = validate_density_matrix(rho0)
        d = rho0.shape[0]
        data = np.zeros(window.ncells * d * d, dtype=complex)
        i = window.index(0)
        data[i * d * d : (i + 1) * d * d] = vectorize(rho0)
        return cls(window, d, data, 0.0)

    def block(self, charge: int) -> np.ndarray:
        d = self.dim
        i = self.window.index(charge)
        return self.data[i * d * d : (i + 1) * d * d].reshape((d, d), order="F")

    def cell_traces(self) -> np.ndarray:
        d = self.dim
        blocks = self.data.reshape((self.window.ncells, d, d))
        # stacking order inside each block is irrelevant for the trace
        return np.einsum("nii->n", blocks).real

    def survival(self) -> float:
        return float(np.sum(self.cell_traces()))

    def charge_distribution(self) -> dict[int, float]:
        """Map N -> probability, with tiny negative traces clipped to zero."""
        traces = self.cell_traces()
        return {
            int(n): _clip_trace(float(p), f"charge-cell probability at N={n}")
            for n, p in zip(self.window.charges, traces)
        }

    def total_state(self) -> np.ndarray:
        """Sum of all charge blocks: the surviving unconditional state."""
        d = self.dim
        # C-order block views are transposes of the column-stacked matrices
        blocks = self.data.reshape((self.window.ncells, d, d))
        return blocks.sum(axis=0).T.copy()


@dataclass(frozen=True)
class JumpBlockGenerator:
    """Sparse generator of the charge-resolved dynamics on a window."""

    model: LindbladModel
    window: ChargeWindow
    dim: int
    matrix: scipy.sparse.csr_matrix
    survival_vector: np.ndarray
    flux_vector: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _require_integer_weight(channel) -> int:
    w = channel.weight
    if abs(w - round(w)) > 1e-12 or round(w) == 0:
        raise ModelError(
            f"jump engine needs nonzero integer channel weights, got {w!r}"
        )
    return int(round(w))


def build_block_generator(model: LindbladModel, window: ChargeWindow) -> JumpBlockGenerator:
    """Assemble the block generator for a charge window.

    Diagonal blocks carry the no-jump generator plus the sharp jumps of any
    silent channel; the block in row N, column N - nu_k carries the sharp
    jump of monitored channel k.  Jumps that would leave the window are
    dropped from the generator, and their rates accumulate in the flux
    functional that evaluates the first-passage density.
    """
    model.require_channels()
    d = model.dim
    n_cells = window.ncells
    diag = build_no_jump(model)
    for ch in model.silent:
        diag = diag + build_jump_super(ch)
    rows: list[list] = [[None] * n_cells for _ in range(n_cells)]
    for i in range(n_cells):
        rows[i][i] = scipy.sparse.csr_matrix(diag)
    flux = np.zeros(n_cells * d * d, dtype=complex)
    tr = trace_functional(d)
    charges = window.charges
    for ch in model.monitored:
        nu = _require_integer_weight(ch)
        jump = scipy.sparse.csr_matrix(build_jump_super(ch))
        gram = ch.operator.conj().T @ ch.operator
        # tr(M rho) as a row functional on vec(rho): vec(M.T)
        gram_row = vectorize(gram.T)
        for i, charge in enumerate(charges):
            source = charge - nu
            if window.lower <= source <= window.upper:
                j = window.index(source)
                if rows[i][j] is None:
                    rows[i][j] = jump.copy()
                else:
                    rows[i][j] = rows[i][j] + jump
        for i, charge in enumerate(charges):
            if not window.lower <= charge + nu <= window.upper:
                flux[i * d * d : (i + 1) * d * d] += gram_row
    matrix = scipy.sparse.bmat(rows, format="csr")
    survival = np.tile(tr, n_cells)
    return JumpBlockGenerator(model, window, d, matrix, survival, flux)


def evolve(
    generator: JumpBlockGenerator, state: ChargeResolvedJumpState, t: float
) -> ChargeResolvedJumpState:
    """Propagate a charge-resolved state forward by t via the exponential map."""
    if t < 0:
        raise ConfigError("evolution time must be non-negative")
    if state.window != generator.window or state.dim != generator.dim:
        raise ConfigError("state and generator live on different windows")
    data = evolve_to(generator.matrix, state.data, t)
    return ChargeResolvedJumpState(state.window, state.dim, data, state.time + t)


def fpt_density(generator: JumpBlockGenerator, state: ChargeResolvedJumpState) -> float:
    """Instantaneous rate of absorption through the window edges."""
    return float(np.real(generator.flux_vector @ state.data))


def survival(state: ChargeResolvedJumpState) -> float:
    return state.survival()


@dataclass
class JumpFptSolution:
    """Full chronology of a windowed charge-resolved run."""

    result: FptResult
    window: ChargeWindow
    cell_probabilities: np.ndarray
    final_state: ChargeResolvedJumpState
    dt: float

    @property
    def times(self) -> np.ndarray:
        return self.result.times


def _evolve_series(
    generator: JumpBlockGenerator,
    initial: ChargeResolvedJumpState,
    times: np.ndarray,
    method: str,
) -> JumpFptSolution:
    d = generator.dim
    n_cells = generator.window.ncells
    num = times.size
    surv = np.empty(num)
    dens = np.empty(num)
    cells = np.empty((num, n_cells))
    final = None
    for i, x in propagate_uniform(generator.matrix, initial.data, times, method=method):
        blocks = x.reshape((n_cells, d, d))
        traces = np.einsum("nii->n", blocks).real
        cells[i] = traces
        surv[i] = traces.sum()
        dens[i] = np.real(generator.flux_vector @ x)
        if i == num - 1:
            final = x
    if dens.min() < -1e-10:
        raise PhysicsError(f"negative absorption rate {dens.min():.3e}")
    if np.diff(surv).max(initial=-1.0) > 1e-10:
        raise PhysicsError("survival grew along the grid beyond roundoff")
    dens = np.clip(dens, 0.0, None)
    surv = np.minimum.accumulate(np.clip(surv, 0.0, 1.0))
    result = FptResult(times, dens, surv, "deterministic-jump")
    final_state = ChargeResolvedJumpState(
        generator.window, d, final, float(times[-1])
    )
    return JumpFptSolution(result, generator.window, cells, final_state, float(times[1] - times[0]))


DEFAULT_STEP_FACTOR = 0.002
MAX_GRID_POINTS = 200_000


def default_time_grid(
    model: LindbladModel,
    horizon: float,
    dt: float | None,
    max_points: int = MAX_GRID_POINTS,
) -> np.ndarray:
    """Uniform output grid; the default step keeps the trapezoidal
    absorbed-mass bookkeeping inside its 1e-6 budget.

    For very long horizons the step is coarsened so the grid never
    exceeds ``max_points``; the bookkeeping check still applies, so a
    horizon too long for the requested accuracy fails loudly.
    """
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    if dt is None:
        scale = model.rate_scale()
        if scale <= 0:
            raise ModelError("model has no dynamics to set a time step from")
        dt = DEFAULT_STEP_FACTOR / scale
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


def _initial_window(
    model: LindbladModel,
    threshold: int | None,
    lower_threshold: int | None,
    horizon: float,
) -> tuple[ChargeWindow, bool, bool]:
    """First window guess plus flags marking which sides are open."""
    if threshold is not None:
        threshold = int(threshold)
        if threshold < 1:
            raise ConfigError("upper threshold must be a positive integer")
    if lower_threshold is not None:
        lower_threshold = int(lower_threshold)
        if lower_threshold > -1:
            raise ConfigError("lower threshold must be a negative integer")
    rate = sum(float(np.linalg.norm(ch.operator, 2)) ** 2 for ch in model.monitored)
    max_step = max((abs(int(round(ch.weight))) for ch in model.monitored), default=1)
    spread = int(math.ceil(2.0 * math.sqrt(max(rate * horizon, 1.0)))) * max_step + 2 * max_step
    upper_open = threshold is None
    lower_open = lower_threshold is None
    upper = spread if upper_open else threshold - 1
    lower = -spread if lower_open else lower_threshold + 1
    # only open sides may be adjusted to keep the window legal
    if upper_open:
        upper = max(upper, lower + 1, 1)
    if lower_open:
        lower = min(lower, upper - 1, -1)
    return ChargeWindow(lower, upper), lower_open, upper_open


def preview_window(
    model: LindbladModel,
    threshold: int | None = None,
    lower_threshold: int | None = None,
    horizon: float = 10.0,
) -> tuple[ChargeWindow, bool, bool]:
    """Window a solve would start from, plus which sides stay adjustable."""
    window, lower_open, upper_open = _initial_window(
        model, threshold, lower_threshold, horizon
    )
    return window, lower_open, upper_open


def solve_jump_fpt(
    model: LindbladModel,
    *,
    threshold: int | None = None,
    lower_threshold: int | None = None,
    window: ChargeWindow | None = None,
    initial: np.ndarray | str = "steady",
    horizon: float = 10.0,
    dt: float | None = None,
    method: str = "auto",
    edge_tolerance: float = EDGE_TOLERANCE,
    auto_tail: bool = False,
    tail_epsilon: float = 1e-6,
    max_horizon: float | None = None,
    max_grid_points: int = MAX_GRID_POINTS,
) -> JumpFptSolution:
    """Solve the windowed charge-resolved dynamics and return its chronology.

    Open window sides (no threshold given) are widened until the edge cell
    occupancy stays below ``edge_tolerance`` over the whole horizon.  With
    ``auto_tail`` the horizon doubles until the survival drops below
    ``tail_epsilon``, so that moments are well defined afterwards; the
    widened window is kept across extensions, and the output step coarsens
    once ``max_grid_points`` would be exceeded.
    """
    model.require_channels()
    if isinstance(initial, str):
        if initial != "steady":
            raise ConfigError(f"unknown initial state spec {initial!r}")
        rho0 = steady_state(build_liouvillian(model))
    else:
        rho0 = validate_density_matrix(initial)
    if window is not None and (threshold is not None or lower_threshold is not None):
        raise ConfigError("pass either an explicit window or thresholds, not both")

    horizon = float(horizon)
    cap = max_horizon if max_horizon is not None else horizon * 2.0**MAX_HORIZON_DOUBLINGS

    if window is not None:
        win, lower_open, upper_open = window, False, False
    else:
        win, lower_open, upper_open = _initial_window(
            model, threshold, lower_threshold, horizon
        )
    if auto_tail:
        probe = build_block_generator(model, win)
        guess = absorption_horizon_guess(
            probe.matrix,
            probe.survival_vector,
            ChargeResolvedJumpState.initial(win, rho0).data,
        )
        if guess is not None and guess > horizon:
            horizon = float(min(guess, cap))
            logger.debug("resolvent tail estimate sets the horizon to %.4g", horizon)
    for _ in range(MAX_HORIZON_DOUBLINGS + 1):
        times = default_time_grid(model, horizon, dt, max_points=max_grid_points)
        solution = None
        for _ in range(MAX_WIDEN_ROUNDS):
            generator = build_block_generator(model, win)
            state0 = ChargeResolvedJumpState.initial(win, rho0)
            solution = _evolve_series(generator, state0, times, method)
            grow_lower = (
                lower_open
                and solution.cell_probabilities[:, 0].max() > edge_tolerance
            )
            grow_upper = (
                upper_open
                and solution.cell_probabilities[:, -1].max() > edge_tolerance
            )
            if not grow_lower and not grow_upper:
                break
            new_lower = win.lower * 2 if grow_lower else win.lower
            new_upper = win.upper * 2 if grow_upper else win.upper
            if grow_lower and win.lower == 0:
                new_lower = -4
            if grow_upper and win.upper == 0:
                new_upper = 4
            logger.debug(
                "widening charge window [%d, %d] -> [%d, %d]",
                win.lower, win.upper, new_lower, new_upper,
            )
            win = ChargeWindow(new_lower, new_upper)
        else:
            raise ConvergenceError(
                "open charge window failed to satisfy the edge-occupancy "
                f"tolerance {edge_tolerance:g} after {MAX_WIDEN_ROUNDS} widenings"
            )
        if not auto_tail or solution.result.survival[-1] < tail_epsilon:
            return solution
        if horizon * 2 > cap:
            raise ConvergenceError(
                f"survival is {solution.result.survival[-1]:.3e} at the horizon "
                f"cap {cap:g}; the threshold may be unreachable"
            )
        horizon *= 2.0
    raise ConvergenceError("horizon extension failed to converge the tail")
