"""First-passage-time distributions for continuously monitored open
quantum systems.

The package evolves charge-resolved density matrices with absorbing
boundaries, for both counting-type (jump) and diffusive (homodyne-like)
monitoring, and provides a Monte Carlo trajectory oracle plus
kinetic-uncertainty analysis of the resulting hit-time statistics.
"""

from .analysis import (
    FptMoments,
    FptResult,
    integrate_moments,
    ks_distance,
    write_series_csv,
)
from .diffusion import (
    ChargeGrid,
    DiffusionFptSolution,
    DiffusionState,
    build_drift_superoperator,
    build_fokker_planck_generator,
    conditioned_charge_distribution,
    mean_charge_path,
    peclet_number,
    solve_diffusion_fpt,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateKernelError,
    ModelError,
    PhysicsError,
    QfptError,
    TailNotConvergedError,
)
from .jumps import (
    ChargeResolvedJumpState,
    ChargeWindow,
    JumpBlockGenerator,
    JumpFptSolution,
    build_block_generator,
    preview_window,
    solve_jump_fpt,
)
from .kur import (
    KurReport,
    dynamical_activity,
    kur_point,
    kur_scan,
    quantum_correction,
    qubit_activity,
    qubit_quantum_correction,
)
from .models import (
    builtin_model,
    decay_qubit,
    drifted_charge,
    homodyne_qubit,
    load_model,
    model_payload,
    save_model,
    thermal_qubit,
    wiener_charge,
)
from .operators import (
    JumpChannel,
    LindbladModel,
    build_liouvillian,
    build_split_generators,
    drazin_inverse,
    steady_state,
    validate_density_matrix,
)
from .trajectories import (
    EmpiricalFpt,
    TrajectoryConfig,
    TrajectoryEnsemble,
    fpt_histogram,
    merge_ensembles,
    partition_config,
    simulate,
    simulate_diffusion,
    simulate_jump,
)

__all__ = [
    "ChargeGrid",
    "ChargeResolvedJumpState",
    "ChargeWindow",
    "ConfigError",
    "ConvergenceError",
    "DegenerateKernelError",
    "DiffusionFptSolution",
    "DiffusionState",
    "EmpiricalFpt",
    "FptMoments",
    "FptResult",
    "JumpBlockGenerator",
    "JumpChannel",
    "JumpFptSolution",
    "KurReport",
    "LindbladModel",
    "ModelError",
    "PhysicsError",
    "QfptError",
    "TailNotConvergedError",
    "TrajectoryConfig",
    "TrajectoryEnsemble",
    "build_block_generator",
    "build_drift_superoperator",
    "build_fokker_planck_generator",
    "build_liouvillian",
    "build_split_generators",
    "builtin_model",
    "conditioned_charge_distribution",
    "decay_qubit",
    "drazin_inverse",
    "drifted_charge",
    "dynamical_activity",
    "fpt_histogram",
    "homodyne_qubit",
    "integrate_moments",
    "ks_distance",
    "kur_point",
    "kur_scan",
    "load_model",
    "mean_charge_path",
    "merge_ensembles",
    "model_payload",
    "partition_config",
    "peclet_number",
    "preview_window",
    "qubit_activity",
    "qubit_quantum_correction",
    "quantum_correction",
    "save_model",
    "simulate",
    "simulate_diffusion",
    "simulate_jump",
    "solve_diffusion_fpt",
    "solve_jump_fpt",
    "steady_state",
    "thermal_qubit",
    "validate_density_matrix",
    "wiener_charge",
    "write_series_csv",
]
