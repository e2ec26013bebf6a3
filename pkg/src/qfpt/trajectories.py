"""Stochastic trajectory oracle for both monitoring schemes.

Ensembles of conditional evolutions with accumulated charge and first-hit
detection, used as statistical ground truth for the deterministic
engines.  Jump monitoring samples at most one jump per step against the
instantaneous channel rates; diffusive monitoring advances the state by
the measurement-operator factorization of the first-order update, with
one Wiener increment per monitored channel and the charge fed by the
quadrature expectations plus the same increments.  The factorized form
agrees with the plain explicit step to first order in dt but keeps the
state positive by construction, so the eigenvalue clamp stays a safety
net instead of firing on ordinary near-pure excursions.

Each trajectory draws from its own generator seeded by ensemble seed XOR
trajectory index, in fixed-size blocks, so results are bit-identical no
matter how the ensemble is executed or ordered.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import FptResult
from .errors import ConfigError, ModelError, PhysicsError
from .models import LindbladModel
from .operators import steady_state, build_liouvillian, validate_density_matrix

logger = logging.getLogger(__name__)

JUMP_STEP_WARN = 0.05
JUMP_STEP_ABORT = 0.2
DEFAULT_STEP_BUDGET = 0.01
RNG_BLOCK = 1024
SEED_MASK = 0xFFFFFFFFFFFFFFFF
REPAIR_FRACTION_ABORT = 1e-3
PSD_CLAMP_TOL = 1e-10
PATH_SAMPLES = 256


@dataclass(frozen=True)
class TrajectoryConfig:
    """Ensemble description shared by both unravellings."""

    model: LindbladModel
    unravelling: str
    ntraj: int
    horizon: float
    dt: float | None = None
    seed: int = 0
    initial: np.ndarray | str = "steady"
    threshold: float | None = None
    lower_threshold: float | None = None
    keep_paths: bool = True
    index_offset: int = 0

    def __post_init__(self):
        if self.unravelling not in ("jump", "diffusion"):
            raise ConfigError(f"unknown unravelling {self.unravelling!r}")
        if self.ntraj < 1:
            raise ConfigError("need at least one trajectory")
        if self.index_offset < 0:
            raise ConfigError("index offset must be nonnegative")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed <= SEED_MASK):
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.model.require_channels()
        if self.unravelling == "jump":
            for ch in self.model.monitored:
                w = ch.weight
                if abs(w - round(w)) > 1e-12 or round(w) == 0:
                    raise ModelError(
                        f"jump trajectories need nonzero integer weights, got {w!r}"
                    )
            if self.threshold is not None and int(self.threshold) < 1:
                raise ConfigError("upper threshold must be a positive integer")
            if self.lower_threshold is not None and int(self.lower_threshold) > -1:
                raise ConfigError("lower threshold must be a negative integer")
        else:
            if self.threshold is not None and self.threshold <= 0:
                raise ConfigError("upper threshold must be positive")
            if self.lower_threshold is not None and self.lower_threshold >= 0:
                raise ConfigError("lower threshold must be negative")

    def initial_matrix(self) -> np.ndarray:
        if isinstance(self.initial, str):
            if self.initial != "steady":
                raise ConfigError(f"unknown initial state spec {self.initial!r}")
            return steady_state(build_liouvillian(self.model))
        return validate_density_matrix(self.initial)

    def resolve_step(self) -> tuple[float, int]:
        """Effective step and step count; the step divides the horizon."""
        model = self.model
        jump_bound = max(
            (float(np.linalg.norm(ch.operator.conj().T @ ch.operator, 2)) for ch in model.channels),
            default=0.0,
        )
        if self.dt is None:
            scale = max(model.rate_scale(), jump_bound)
            if self.unravelling == "diffusion":
                scale = max(scale, sum(ch.weight**2 for ch in model.monitored))
            if scale <= 0:
                raise ModelError("model has no dynamics to set a time step from")
            dt = DEFAULT_STEP_BUDGET / scale
        else:
            dt = self.dt
        nsteps = max(1, int(math.ceil(self.horizon / dt - 1e-12)))
        dt = self.horizon / nsteps
        if self.unravelling == "jump" and jump_bound > 0:
            budget = dt * jump_bound
            if budget >= JUMP_STEP_ABORT:
                raise ConfigError(
                    f"dt*max jump rate = {budget:.3f} breaks the one-jump-per-step "
                    f"approximation (limit {JUMP_STEP_ABORT})"
                )
            if budget >= JUMP_STEP_WARN:
                warnings.warn(
                    f"dt*max jump rate = {budget:.3f}; jump statistics may be "
                    "biased, reduce the step",
                    RuntimeWarning,
                    stacklevel=2,
                )
        return dt, nsteps


@dataclass
class TrajectoryEnsemble:
    """Batched per-trajectory outcomes of one simulation run."""

    config: TrajectoryConfig
    dt: float
    hit_times: np.ndarray
    censored: np.ndarray
    final_charges: np.ndarray
    final_states: np.ndarray
    path_times: np.ndarray
    paths: np.ndarray
    jump_counts: np.ndarray | None = None
    positivity_repairs: int = 0
    # per-trajectory update slots actually executed, so merging parts sums it
    steps_total: int = 0

    @property
    def ntraj(self) -> int:
        return self.hit_times.size

    def absorbed_times(self) -> np.ndarray:
        return self.hit_times[~self.censored]

    def censored_fraction(self) -> float:
        return float(self.censored.mean())

    def mean_state(self) -> np.ndarray:
        return self.final_states.mean(axis=0)


def _trajectory_rngs(
    seed: int, ntraj: int, offset: int = 0
) -> list[np.random.Generator]:
    return [
        np.random.default_rng((seed ^ (offset + i)) & SEED_MASK)
        for i in range(ntraj)
    ]


def _path_stride(nsteps: int) -> int:
    return max(1, nsteps // PATH_SAMPLES)


def _batch_traces(rho: np.ndarray) -> np.ndarray:
    return np.einsum("nii->n", rho).real


def _renormalize(rho: np.ndarray, what: str) -> np.ndarray:
    tr = _batch_traces(rho)
    if tr.size and tr.min() < 1e-12:
        raise PhysicsError(f"{what}: conditional state norm collapsed")
    return rho / tr[:, None, None]


def simulate_jump(config: TrajectoryConfig) -> TrajectoryEnsemble:
    """Jump unravelling with charge counting and first-hit detection."""
    if config.unravelling != "jump":
        raise ConfigError("config is not a jump-unravelling config")
    model = config.model
    dt, nsteps = config.resolve_step()
    d = model.dim
    n = config.ntraj
    rho0 = config.initial_matrix()
    channels = model.channels
    ops = np.stack([ch.operator for ch in channels])
    grams = np.stack([ch.operator.conj().T @ ch.operator for ch in channels])
    nu = np.array([
        int(round(ch.weight)) if ch.monitored else 0 for ch in channels
    ])
    h_eff = model.hamiltonian - 0.5j * np.sum(grams, axis=0)
    upper = None if config.threshold is None else int(config.threshold)
    lower = None if config.lower_threshold is None else int(config.lower_threshold)

    rho = np.broadcast_to(rho0, (n, d, d)).copy()
    charge = np.zeros(n, dtype=np.int64)
    hit = np.full(n, np.nan)
    alive = np.ones(n, dtype=bool)
    counts = np.zeros((n, len(channels)), dtype=np.int64)
    step_slots = 0
    rngs = _trajectory_rngs(config.seed, n, config.index_offset)

    stride = _path_stride(nsteps)
    path_times = [0.0]
    paths = [charge.copy()] if config.keep_paths else None

    u_buf = np.empty((n, RNG_BLOCK))
    for block_start in range(0, nsteps, RNG_BLOCK):
        block = min(RNG_BLOCK, nsteps - block_start)
        if alive.any():
            for i in np.flatnonzero(alive):
                u_buf[i, :block] = rngs[i].random(block)
        for s in range(block):
            step = block_start + s
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            sub = rho[idx]
            step_slots += idx.size
            rates = np.einsum("kab,nba->nk", grams, sub).real
            prob = np.clip(dt * rates, 0.0, None)
            cum = np.cumsum(prob, axis=1)
            u = u_buf[idx, s]
            jumped = u < cum[:, -1]
            flavor = np.argmax(u[:, None] < cum, axis=1)

            stay = idx[~jumped]
            if stay.size:
                r = rho[stay]
                r = r - 1j * dt * (h_eff @ r - r @ h_eff.conj().T)
                rho[stay] = _renormalize(r, "no-jump update")
            for k in range(len(channels)):
                sel = idx[jumped & (flavor == k)]
                if sel.size == 0:
                    continue
                r = ops[k] @ rho[sel] @ ops[k].conj().T
                rho[sel] = _renormalize(r, "jump update")
                charge[sel] += nu[k]
                counts[sel, k] += 1

            crossed = np.zeros(idx.size, dtype=bool)
            if upper is not None:
                crossed |= charge[idx] >= upper
            if lower is not None:
                crossed |= charge[idx] <= lower
            if crossed.any():
                done = idx[crossed]
                hit[done] = (step + 1) * dt
                alive[done] = False
            if config.keep_paths and (step + 1) % stride == 0:
                path_times.append((step + 1) * dt)
                paths.append(charge.copy())
        if not alive.any():
            break

    censored = np.isnan(hit)
    if config.keep_paths:
        path_arr = np.stack(paths, axis=1)
        time_arr = np.array(path_times)
    else:
        path_arr = np.zeros((n, 0), dtype=np.int64)
        time_arr = np.zeros(0)
    return TrajectoryEnsemble(
        config, dt, hit, censored, charge.astype(float), rho,
        time_arr, path_arr, counts, 0, step_slots,
    )


def _psd_repair(rho: np.ndarray, where: np.ndarray) -> int:
    """Clamp negative eigenvalues on the flagged states, in place."""
    bad = np.flatnonzero(where)
    for i in bad:
        vals, vecs = np.linalg.eigh(rho[i])
        vals = np.clip(vals, 0.0, None)
        total = vals.sum()
        if total < 1e-12:
            raise PhysicsError("positivity repair removed all state weight")
        rho[i] = (vecs * vals) @ vecs.conj().T / total
    return bad.size


def _min_eig_floor(rho: np.ndarray) -> np.ndarray:
    """Smallest eigenvalue per state; closed form for qubits."""
    d = rho.shape[-1]
    if d == 1:
        return rho[:, 0, 0].real
    if d == 2:
        half = 0.5 * (rho[:, 0, 0] + rho[:, 1, 1]).real
        det = (
            rho[:, 0, 0] * rho[:, 1, 1] - rho[:, 0, 1] * rho[:, 1, 0]
        ).real
        gap = np.sqrt(np.clip(half**2 - det, 0.0, None))
        return half - gap
    return np.linalg.eigvalsh(rho)[:, 0]


def simulate_diffusion(config: TrajectoryConfig) -> TrajectoryEnsemble:
    """Diffusive unravelling with integrated charge and hit interpolation."""
    if config.unravelling != "diffusion":
        raise ConfigError("config is not a diffusion-unravelling config")
    model = config.model
    dt, nsteps = config.resolve_step()
    sq = math.sqrt(dt)
    d = model.dim
    n = config.ntraj
    rho0 = config.initial_matrix()
    if not model.monitored:
        raise ModelError("diffusive monitoring needs at least one monitored channel")
    mons = model.monitored
    a_ops = np.stack([ch.rotated_operator() for ch in mons])
    nu = np.array([ch.weight for ch in mons])
    gram_total = sum(ch.operator.conj().T @ ch.operator for ch in model.channels)
    silent_ops = [ch.operator for ch in model.channels if not ch.monitored]
    stem = np.eye(d) - dt * (1j * model.hamiltonian + 0.5 * gram_total)
    upper = config.threshold
    lower = config.lower_threshold

    rho = np.broadcast_to(rho0, (n, d, d)).copy()
    charge = np.zeros(n)
    hit = np.full(n, np.nan)
    alive = np.ones(n, dtype=bool)
    repairs = 0
    step_slots = 0
    rngs = _trajectory_rngs(config.seed, n, config.index_offset)

    stride = _path_stride(nsteps)
    path_times = [0.0]
    paths = [charge.copy()] if config.keep_paths else None

    nmon = len(mons)
    w_buf = np.empty((n, RNG_BLOCK, nmon))
    for block_start in range(0, nsteps, RNG_BLOCK):
        block = min(RNG_BLOCK, nsteps - block_start)
        if alive.any():
            for i in np.flatnonzero(alive):
                w_buf[i, :block] = rngs[i].standard_normal((block, nmon))
        for s in range(block):
            step = block_start + s
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            sub = rho[idx]
            dw = sq * w_buf[idx, s, :]
            xs = 2.0 * np.einsum("kab,nba->nk", a_ops, sub).real
            dy = xs * dt + dw
            kraus = stem + np.einsum("nk,kab->nab", dy, a_ops)
            new = kraus @ sub @ np.conj(np.transpose(kraus, (0, 2, 1)))
            for op in silent_ops:
                new = new + dt * (op @ sub @ op.conj().T)
            new = 0.5 * (new + np.conj(np.transpose(new, (0, 2, 1))))
            new = _renormalize(new, "diffusive update")
            floor = _min_eig_floor(new)
            need = floor < -PSD_CLAMP_TOL
            if need.any():
                repairs += _psd_repair(new, need)
            rho[idx] = new
            step_slots += idx.size

            old_charge = charge[idx]
            new_charge = old_charge + dy @ nu
            charge[idx] = new_charge

            crossed = np.zeros(idx.size, dtype=bool)
            target = np.empty(idx.size)
            if upper is not None:
                up = new_charge >= upper
                crossed |= up
                target[up] = upper
            if lower is not None:
                lo = new_charge <= lower
                crossed |= lo
                target[lo] = lower
            if crossed.any():
                done = idx[crossed]
                frac = (target[crossed] - old_charge[crossed]) / (
                    new_charge[crossed] - old_charge[crossed]
                )
                hit[done] = step * dt + np.clip(frac, 0.0, 1.0) * dt
                alive[done] = False
            if config.keep_paths and (step + 1) % stride == 0:
                path_times.append((step + 1) * dt)
                paths.append(charge.copy())
        if not alive.any():
            break

    if step_slots and repairs / step_slots > REPAIR_FRACTION_ABORT:
        raise PhysicsError(
            f"positivity repairs on {repairs} of {step_slots} updates "
            f"(> {REPAIR_FRACTION_ABORT:.1%}); reduce the step size"
        )
    censored = np.isnan(hit)
    if config.keep_paths:
        path_arr = np.stack(paths, axis=1)
        time_arr = np.array(path_times)
    else:
        path_arr = np.zeros((n, 0))
        time_arr = np.zeros(0)
    return TrajectoryEnsemble(
        config, dt, hit, censored, charge, rho,
        time_arr, path_arr, None, repairs, step_slots,
    )


def simulate(config: TrajectoryConfig) -> TrajectoryEnsemble:
    if config.unravelling == "jump":
        return simulate_jump(config)
    return simulate_diffusion(config)


def partition_config(config: TrajectoryConfig, batches: int) -> list[TrajectoryConfig]:
    """Split an ensemble into contiguous index blocks for parallel execution.

    Each block keeps the per-trajectory generator streams of the full run,
    so simulating the blocks separately and merging reproduces the single
    run bit for bit.  Paths are dropped; merging them is not supported.
    """
    if batches < 1:
        raise ConfigError("need at least one batch")
    batches = min(batches, config.ntraj)
    base, extra = divmod(config.ntraj, batches)
    parts = []
    offset = config.index_offset
    for i in range(batches):
        size = base + (1 if i < extra else 0)
        parts.append(
            replace(config, ntraj=size, index_offset=offset, keep_paths=False)
        )
        offset += size
    return parts


def merge_ensembles(parts) -> TrajectoryEnsemble:
    """Concatenate contiguous batches back into one ensemble."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to merge")
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    expected = first.config.index_offset
    for part in parts:
        if part.config.keep_paths:
            raise ConfigError("merging kept paths is not supported")
        if part.config.index_offset != expected:
            raise ConfigError("batches are not contiguous in trajectory index")
        if part.dt != first.dt:
            raise ConfigError("batches disagree on the resolved time step")
        expected += part.config.ntraj
    total = sum(p.config.ntraj for p in parts)
    config = replace(first.config, ntraj=total)
    counts = None
    if first.jump_counts is not None:
        counts = np.concatenate([p.jump_counts for p in parts])
    return TrajectoryEnsemble(
        config,
        first.dt,
        np.concatenate([p.hit_times for p in parts]),
        np.concatenate([p.censored for p in parts]),
        np.concatenate([p.final_charges for p in parts]),
        np.concatenate([p.final_states for p in parts]),
        first.path_times,
        first.paths,
        counts,
        sum(p.positivity_repairs for p in parts),
        sum(p.steps_total for p in parts),
    )


@dataclass(frozen=True)
class EmpiricalFpt:
    """Histogram summary of an ensemble's hit times."""

    bin_edges: np.ndarray
    density: np.ndarray
    censored_mass: float
    nabsorbed: int
    hit_times: np.ndarray = field(repr=False)

    def to_result(self) -> FptResult:
        """Unconditional density sampled on left bin edges, with survival."""
        edges = self.bin_edges
        ntraj = self.hit_times.size
        counts, _ = np.histogram(self.hit_times[np.isfinite(self.hit_times)], bins=edges)
        dens = counts / (ntraj * np.diff(edges))
        surv = 1.0 - np.concatenate([[0], np.cumsum(counts)]) / ntraj
        return FptResult(edges, np.concatenate([dens, [0.0]]), surv, "monte-carlo")


def fpt_histogram(ensemble: TrajectoryEnsemble, bins: int | np.ndarray = 50) -> EmpiricalFpt:
    """Density over absorbed trajectories plus the censored mass."""
    hits = ensemble.absorbed_times()
    horizon = ensemble.config.horizon
    if isinstance(bins, (int, np.integer)):
        edges = np.linspace(0.0, horizon, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    if hits.size:
        counts, _ = np.histogram(hits, bins=edges)
        dens = counts / (hits.size * np.diff(edges))
    else:
        dens = np.zeros(edges.size - 1)
    return EmpiricalFpt(
        edges, dens, ensemble.censored_fraction(), hits.size, ensemble.hit_times,
    )
