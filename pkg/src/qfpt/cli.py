"""Command line front end for the first-passage engines.

Subcommands
-----------
``fpt-jump``
    Deterministic hit-time distribution for counting-type monitoring.
``fpt-diffusion``
    Deterministic hit-time distribution for diffusive monitoring, plus
    the final charge distribution conditioned on survival.
``trajectories``
    Monte Carlo ensemble for either unravelling.
``kur-scan``
    Precision bounds and violation flags over a drive-amplitude range.
``validate``
    Dry-run configuration report without executing a solve.

Artifacts land in ``--outdir`` (default: ``$QFPT_OUTDIR`` or the current
directory).  Every run writes a ``manifest.json`` with the configuration
echo, library versions, and wall time; CSV bodies are deterministic
functions of the configuration (identical configuration, identical
bytes) and each embeds the configuration hash.

Exit codes: 0 success, 2 configuration or model error, 3 convergence
failure, 4 physics assertion (for example a quantum bound violation).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from .analysis import format_float, integrate_moments, write_series_csv
from .diffusion import (
    DEFAULT_RESOLUTION,
    PECLET_LIMIT,
    ChargeGrid,
    build_drift_superoperator,
    peclet_number,
    solve_diffusion_fpt,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateKernelError,
    PhysicsError,
)
from .jumps import (
    DEFAULT_STEP_FACTOR,
    MAX_GRID_POINTS,
    ChargeWindow,
    preview_window,
    solve_jump_fpt,
)
from .kur import kur_scan
from .models import BUILTIN_PARAMS, builtin_model, load_model, model_payload
from .operators import build_liouvillian, steady_state
from .trajectories import (
    TrajectoryConfig,
    fpt_histogram,
    merge_ensembles,
    partition_config,
    simulate,
)

try:
    from importlib.metadata import version as _dist_version

    PACKAGE_VERSION = _dist_version("qfpt")
except Exception:  # pragma: no cover - not installed
    PACKAGE_VERSION = "unknown"

OUTDIR_ENV = "QFPT_OUTDIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_PHYSICS = 4


def parse_range(spec: str) -> np.ndarray:
    """Parse ``lo:hi:count`` into a linearly spaced grid."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError(f"range {spec!r} is not of the form lo:hi:count")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError as exc:
        raise ConfigError(f"range {spec!r} has a non-numeric part") from exc
    if count < 1:
        raise ConfigError("range count must be at least 1")
    if count == 1 and hi != lo:
        raise ConfigError("a single-point range needs lo == hi")
    return np.linspace(lo, hi, count)


def parse_window(spec: str) -> ChargeWindow:
    """Parse ``lo:hi`` into an explicit integer charge window."""
    parts = spec.split(":")
    if len(parts) != 2:
        raise ConfigError(f"window {spec!r} is not of the form lo:hi")
    try:
        lo, hi = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"window {spec!r} has a non-integer bound") from exc
    return ChargeWindow(lo, hi)


def parse_grid(spec: str, delta: float | None) -> ChargeGrid:
    """Parse ``lo:hi`` plus a node spacing into an explicit charge grid."""
    parts = spec.split(":")
    if len(parts) != 2:
        raise ConfigError(f"grid {spec!r} is not of the form lo:hi")
    if delta is None:
        raise ConfigError("an explicit --grid needs --delta as well")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise ConfigError(f"grid {spec!r} has a non-numeric bound") from exc
    return ChargeGrid(lo, hi, delta)


def parse_start(spec: str, dim: int):
    """Initial state selector: steady | maximally-mixed | basis:K."""
    if spec == "steady":
        return "steady"
    if spec == "maximally-mixed":
        return np.eye(dim, dtype=complex) / dim
    if spec.startswith("basis:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigError(f"bad basis index in {spec!r}") from exc
        if not 0 <= k < dim:
            raise ConfigError(f"basis index {k} outside 0..{dim - 1}")
        rho = np.zeros((dim, dim), dtype=complex)
        rho[k, k] = 1.0
        return rho
    raise ConfigError(
        f"unknown start spec {spec!r}; use steady, maximally-mixed or basis:K"
    )


def resolve_model(args):
    """Model from --model or --builtin, enforcing mutual exclusion."""
    builtin_values = {
        key: getattr(args, key)
        for key in ("gamma", "omega", "nbar")
        if getattr(args, key, None) is not None
    }
    if args.model is not None:
        if args.builtin is not None:
            raise ConfigError("--model and --builtin are mutually exclusive")
        if builtin_values:
            raise ConfigError(
                "--gamma/--omega/--nbar apply only to --builtin models"
            )
        return load_model(args.model)
    if args.builtin is None:
        raise ConfigError("pass either --model FILE or --builtin NAME")
    return builtin_model(args.builtin, **builtin_values)


def config_hash(payload: dict) -> str:
    """Stable hash of the physics configuration (not the plumbing)."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def resolve_outdir(args) -> Path:
    outdir = args.outdir or os.environ.get(OUTDIR_ENV) or "."
    path = Path(outdir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_payload(command: str, args, model) -> dict:
    """Configuration echo used for hashing and the manifest."""
    skip = {"model", "builtin", "gamma", "omega", "nbar", "outdir", "workers", "func"}
    payload = {
        "command": command,
        "model": model_payload(model),
    }
    for key, value in sorted(vars(args).items()):
        if key in skip or key == "command":
            continue
        payload[key] = value
    return payload


def write_rows_csv(path: Path, header: list[str], rows, chash: str) -> None:
    """Generic deterministic CSV with the configuration hash embedded."""
    lines = [f"# config_hash={chash}", ",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, bool):
                cells.append("1" if cell else "0")
            elif isinstance(cell, float):
                cells.append(format_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def write_manifest(
    outdir: Path,
    payload: dict,
    chash: str,
    artifacts: list[str],
    wall_time: float,
    results: dict | None = None,
) -> None:
    manifest = {
        "config": payload,
        "config_hash": chash,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "qfpt": PACKAGE_VERSION,
        },
        "artifacts": artifacts,
        "wall_time_s": wall_time,
    }
    if results:
        manifest["results"] = results
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"
    )


def conditional_moment_summary(result) -> dict:
    """Moments conditioned on absorption, for the manifest."""
    moments = integrate_moments(result, require_tail=False)
    return {
        "absorbed_probability": moments.absorbed_probability,
        "mean_fpt": moments.mean,
        "var_fpt": moments.variance,
        "snr": moments.snr,
        "horizon": float(result.times[-1]),
    }


def run_fpt_jump(args) -> int:
    model = resolve_model(args)
    start = parse_start(args.start, model.dim)
    window = parse_window(args.window) if args.window else None
    if window is None and args.threshold is None and args.lower_threshold is None:
        raise ConfigError(
            "a first-passage run needs --threshold, --lower-threshold or --window"
        )
    t0 = time.perf_counter()
    solution = solve_jump_fpt(
        model,
        threshold=args.threshold,
        lower_threshold=args.lower_threshold,
        window=window,
        initial=start,
        horizon=args.horizon,
        dt=args.dt,
        auto_tail=args.auto_tail,
        tail_epsilon=args.tail_epsilon,
    )
    payload = run_payload("fpt-jump", args, model)
    chash = config_hash(payload)
    outdir = resolve_outdir(args)
    write_series_csv(outdir / "fpt_jump.csv", solution.result, config_hash=chash)
    results = conditional_moment_summary(solution.result)
    results["window"] = [solution.window.lower, solution.window.upper]
    write_manifest(
        outdir, payload, chash, ["fpt_jump.csv"], time.perf_counter() - t0, results
    )
    print(
        f"fpt-jump: wrote {outdir / 'fpt_jump.csv'} "
        f"(absorbed {results['absorbed_probability']:.6f}, "
        f"window [{solution.window.lower}, {solution.window.upper}])"
    )
    return EXIT_OK


def run_fpt_diffusion(args) -> int:
    model = resolve_model(args)
    start = parse_start(args.start, model.dim)
    grid = parse_grid(args.grid, args.delta) if args.grid else None
    if grid is None and args.threshold is None and args.lower_threshold is None:
        raise ConfigError(
            "a first-passage run needs --threshold, --lower-threshold or --grid"
        )
    t0 = time.perf_counter()
    solution = solve_diffusion_fpt(
        model,
        threshold=args.threshold,
        lower_threshold=args.lower_threshold,
        grid=grid,
        delta=args.delta if grid is None else None,
        initial=start,
        horizon=args.horizon,
        dt=args.dt,
        auto_tail=args.auto_tail,
        tail_epsilon=args.tail_epsilon,
    )
    payload = run_payload("fpt-diffusion", args, model)
    chash = config_hash(payload)
    outdir = resolve_outdir(args)
    artifacts = ["fpt_diffusion.csv"]
    write_series_csv(outdir / "fpt_diffusion.csv", solution.result, config_hash=chash)
    surviving = float(solution.result.survival[-1])
    if surviving > 1e-9:
        nodes, dens = solution.conditioned_final_distribution()
        write_rows_csv(
            outdir / "final_distribution.csv",
            ["N", "density"],
            zip(nodes.tolist(), dens.tolist()),
            chash,
        )
        artifacts.append("final_distribution.csv")
    results = conditional_moment_summary(solution.result)
    results["grid"] = [solution.grid.lower, solution.grid.upper]
    results["delta"] = solution.grid.delta
    write_manifest(
        outdir, payload, chash, artifacts, time.perf_counter() - t0, results
    )
    print(
        f"fpt-diffusion: wrote {', '.join(str(outdir / a) for a in artifacts)} "
        f"(absorbed {results['absorbed_probability']:.6f})"
    )
    return EXIT_OK


def run_trajectories(args) -> int:
    model = resolve_model(args)
    start = parse_start(args.start, model.dim)
    config = TrajectoryConfig(
        model,
        args.unravelling,
        ntraj=args.ntraj,
        horizon=args.horizon,
        dt=args.dt,
        seed=args.seed,
        initial=start,
        threshold=args.threshold,
        lower_threshold=args.lower_threshold,
        keep_paths=False,
    )
    t0 = time.perf_counter()
    if args.workers > 1:
        parts = partition_config(config, args.workers)
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            ensemble = merge_ensembles(list(pool.map(simulate, parts)))
    else:
        ensemble = simulate(config)
    payload = run_payload("trajectories", args, model)
    chash = config_hash(payload)
    outdir = resolve_outdir(args)
    rows = (
        (i, float(t), bool(c), float(q))
        for i, (t, c, q) in enumerate(
            zip(ensemble.hit_times, ensemble.censored, ensemble.final_charges)
        )
    )
    write_rows_csv(
        outdir / "trajectories.csv",
        ["trajectory", "hit_time", "censored", "final_charge"],
        rows,
        chash,
    )
    artifacts = ["trajectories.csv"]
    empirical = fpt_histogram(ensemble, bins=args.bins)
    if empirical.nabsorbed > 0:
        write_series_csv(
            outdir / "fpt_mc.csv", empirical.to_result(), config_hash=chash
        )
        artifacts.append("fpt_mc.csv")
    results = {
        "ntraj": ensemble.ntraj,
        "absorbed": int(ensemble.ntraj - ensemble.censored.sum()),
        "censored_fraction": ensemble.censored_fraction(),
        "dt": ensemble.dt,
        "positivity_repairs": ensemble.positivity_repairs,
    }
    if empirical.nabsorbed > 0:
        hits = ensemble.absorbed_times()
        results["mean_hit_time"] = float(hits.mean())
    write_manifest(
        outdir, payload, chash, artifacts, time.perf_counter() - t0, results
    )
    print(
        f"trajectories: wrote {', '.join(str(outdir / a) for a in artifacts)} "
        f"(absorbed {results['absorbed']}/{ensemble.ntraj})"
    )
    return EXIT_OK


KUR_COLUMNS = [
    "omega",
    "gamma",
    "nbar",
    "activity",
    "quantum_correction",
    "mean_fpt",
    "var_fpt",
    "snr",
    "classical_bound",
    "quantum_bound",
    "classical_violated",
    "quantum_violated",
    "absorbed_probability",
    "horizon",
    "status",
]


def run_kur_scan(args) -> int:
    omegas = parse_range(args.omega_range)
    if args.gamma is not None and args.gamma <= 0:
        raise ConfigError("gamma must be positive")
    gamma = args.gamma if args.gamma is not None else 1.0
    nbar = args.nbar if args.nbar is not None else 0.0
    if nbar < 0:
        raise ConfigError("nbar must be nonnegative")
    t0 = time.perf_counter()
    reports = kur_scan(
        omegas,
        gamma=gamma,
        nbar=nbar,
        threshold=args.threshold,
        horizon=args.horizon,
        dt=args.dt,
        workers=args.workers,
    )
    payload = {
        "command": "kur-scan",
        "omega_range": args.omega_range,
        "gamma": gamma,
        "nbar": nbar,
        "threshold": args.threshold,
        "horizon": args.horizon,
        "dt": args.dt,
    }
    chash = config_hash(payload)
    outdir = resolve_outdir(args)
    rows = [
        [getattr(r, col) for col in KUR_COLUMNS]
        for r in reports
    ]
    write_rows_csv(outdir / "kur_scan.csv", KUR_COLUMNS, rows, chash)
    failed = [r for r in reports if r.status != "ok"]
    classical = [r for r in reports if r.status == "ok" and r.classical_violated]
    quantum = [r for r in reports if r.status == "ok" and r.quantum_violated]
    results = {
        "points": len(reports),
        "failed": len(failed),
        "classical_violations": len(classical),
        "quantum_violations": len(quantum),
    }
    write_manifest(
        outdir, payload, chash, ["kur_scan.csv"], time.perf_counter() - t0, results
    )
    print(
        f"kur-scan: wrote {outdir / 'kur_scan.csv'} "
        f"({len(reports)} points, {len(classical)} classical violations, "
        f"{len(failed)} failed)"
    )
    if failed and len(failed) == len(reports):
        raise ConvergenceError("every scan point failed to converge")
    if failed:
        print(f"warning: {len(failed)} scan points failed; see the status column",
              file=sys.stderr)
    if quantum:
        worst = max(quantum, key=lambda r: r.snr - r.quantum_bound)
        print(
            "physics assertion failed: SNR exceeds the quantum bound at "
            f"omega={worst.omega:g} (snr={worst.snr:.6g} > "
            f"bound={worst.quantum_bound:.6g})",
            file=sys.stderr,
        )
        return EXIT_PHYSICS
    return EXIT_OK


def run_validate(args) -> int:
    model = resolve_model(args)
    lines = [f"model: dim {model.dim}, {len(model.channels)} channels "
             f"({len(model.monitored)} monitored)"]
    lines.append("hamiltonian: Hermitian")
    generator = build_liouvillian(model)
    try:
        steady_state(generator)
    except DegenerateKernelError as exc:
        lines.append(f"steady state: NOT unique ({exc})")
        print("\n".join(lines))
        return EXIT_CONVERGENCE
    lines.append("steady state: unique")

    if np.abs(model.hamiltonian).max() == 0.0:
        lines.append("note: incoherent regime: Q=0 expected")

    integer_weights = model.monitored and all(
        abs(ch.weight - round(ch.weight)) < 1e-12 and round(ch.weight) != 0
        for ch in model.monitored
    )
    horizon = args.horizon
    if integer_weights:
        threshold = None
        if args.threshold is not None:
            rounded = round(args.threshold)
            if abs(args.threshold - rounded) < 1e-12 and rounded >= 1:
                threshold = int(rounded)
        window, lower_open, upper_open = preview_window(
            model, threshold, None, horizon
        )
        sides = (
            f"lower {'auto' if lower_open else 'fixed'}, "
            f"upper {'auto' if upper_open else 'fixed'}"
        )
        lines.append(
            f"jump window preview: [{window.lower}, {window.upper}] ({sides}), "
            f"{window.ncells * model.dim**2} coupled components"
        )
        scale = model.rate_scale()
        dt = DEFAULT_STEP_FACTOR / scale
        npoints = int(np.ceil(horizon / dt)) + 1
        if npoints > MAX_GRID_POINTS:
            capped = horizon / (MAX_GRID_POINTS - 1)
            lines.append(
                f"warning: default jump step {dt:.3g} would need {npoints} grid "
                f"points; capped at {MAX_GRID_POINTS} (step {capped:.3g})"
            )
        else:
            lines.append(f"default jump step: {dt:.3g} ({npoints} grid points)")

    if model.monitored:
        drift = build_drift_superoperator(model)
        if drift.diffusion > 0:
            delta = args.delta if args.delta is not None else DEFAULT_RESOLUTION
            pe = peclet_number(drift, delta)
            if pe > PECLET_LIMIT:
                lines.append(
                    f"warning: Peclet number {pe:.3g} at delta {delta:g} exceeds "
                    f"{PECLET_LIMIT:g}; refine --delta for a stable diffusion grid"
                )
            else:
                lines.append(f"diffusion grid: Peclet number {pe:.3g} at delta {delta:g}")

    print("\n".join(lines))
    return EXIT_OK


def _add_model_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--model", help="model description file (JSON)")
    group.add_argument(
        "--builtin",
        choices=sorted(BUILTIN_PARAMS),
        help="named built-in model",
    )
    group.add_argument("--gamma", type=float, help="builtin decay rate")
    group.add_argument("--omega", type=float, help="builtin drive amplitude")
    group.add_argument("--nbar", type=float, help="builtin thermal occupation")


def _add_output_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--outdir",
        help=f"artifact directory (default: ${OUTDIR_ENV} or the current directory)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qfpt",
        description="First-passage-time engines for monitored open quantum systems",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    jump = sub.add_parser("fpt-jump", help="deterministic counting-monitor FPT")
    _add_model_arguments(jump)
    _add_output_arguments(jump)
    jump.add_argument("--threshold", type=int, help="absorbing count (positive)")
    jump.add_argument(
        "--lower-threshold", type=int, help="absorbing count (negative)"
    )
    jump.add_argument("--window", help="explicit charge window lo:hi")
    jump.add_argument("--start", default="steady", help="initial state")
    jump.add_argument("--horizon", type=float, default=10.0)
    jump.add_argument("--dt", type=float, help="output time step")
    jump.add_argument(
        "--auto-tail", action="store_true",
        help="extend the horizon until the tail converges",
    )
    jump.add_argument("--tail-epsilon", type=float, default=1e-6)
    jump.set_defaults(func=run_fpt_jump)

    diff = sub.add_parser("fpt-diffusion", help="deterministic diffusive-monitor FPT")
    _add_model_arguments(diff)
    _add_output_arguments(diff)
    diff.add_argument("--threshold", type=float, help="absorbing charge (positive)")
    diff.add_argument(
        "--lower-threshold", type=float, help="absorbing charge (negative)"
    )
    diff.add_argument("--grid", help="explicit charge grid lo:hi (needs --delta)")
    diff.add_argument("--delta", type=float, help="charge node spacing")
    diff.add_argument("--start", default="steady", help="initial state")
    diff.add_argument("--horizon", type=float, default=10.0)
    diff.add_argument("--dt", type=float, help="output time step")
    diff.add_argument(
        "--auto-tail", action="store_true",
        help="extend the horizon until the tail converges",
    )
    diff.add_argument("--tail-epsilon", type=float, default=1e-6)
    diff.set_defaults(func=run_fpt_diffusion)

    traj = sub.add_parser("trajectories", help="Monte Carlo trajectory ensemble")
    _add_model_arguments(traj)
    _add_output_arguments(traj)
    traj.add_argument(
        "--unravelling", choices=("jump", "diffusion"), required=True
    )
    traj.add_argument("--ntraj", type=int, default=1000)
    traj.add_argument("--seed", type=int, default=0)
    traj.add_argument("--threshold", type=float)
    traj.add_argument("--lower-threshold", type=float)
    traj.add_argument("--start", default="steady", help="initial state")
    traj.add_argument("--horizon", type=float, default=10.0)
    traj.add_argument("--dt", type=float, help="integration step")
    traj.add_argument("--bins", type=int, default=50, help="histogram bins")
    traj.add_argument("--workers", type=int, default=1)
    traj.set_defaults(func=run_trajectories)

    scan = sub.add_parser("kur-scan", help="precision bounds over a drive range")
    _add_model_arguments(scan)
    _add_output_arguments(scan)
    scan.add_argument(
        "--omega-range", required=True, help="drive grid lo:hi:count (linear)"
    )
    scan.add_argument("--threshold", type=int, default=5)
    scan.add_argument("--horizon", type=float, default=50.0)
    scan.add_argument("--dt", type=float, help="output time step per point")
    scan.add_argument("--workers", type=int, default=1)
    scan.set_defaults(func=run_kur_scan)

    val = sub.add_parser("validate", help="dry-run configuration checks")
    _add_model_arguments(val)
    val.add_argument("--threshold", type=float, help="threshold to preview")
    val.add_argument("--delta", type=float, help="charge node spacing to check")
    val.add_argument("--horizon", type=float, default=10.0)
    val.set_defaults(func=run_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "kur-scan":
        if args.builtin not in (None, "thermal-qubit"):
            print("error: kur-scan supports only the thermal-qubit builtin",
                  file=sys.stderr)
            return EXIT_CONFIG
        if args.model is not None:
            print("error: kur-scan scans the thermal-qubit builtin; --model is "
                  "not supported", file=sys.stderr)
            return EXIT_CONFIG
        if args.omega is not None:
            print("error: kur-scan takes --omega-range, not --omega",
                  file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except PhysicsError as exc:
        print(f"physics assertion failed: {exc}", file=sys.stderr)
        return EXIT_PHYSICS


if __name__ == "__main__":
    sys.exit(main())
