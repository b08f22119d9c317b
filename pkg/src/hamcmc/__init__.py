"""Hamiltonian Monte Carlo: integrators, sampling kernels, scaling analysis and targets."""

from .analysis import (
    DiagnosticsReport,
    ScalingResult,
    acceptance_from_mu,
    autocorrelation,
    empirical_delta_stats,
    integrated_autocorrelation,
    optimal_acceptance,
    scaling_cost,
    summarize,
    tune_scale,
)
from .integrators import (
    DIVERGENCE_THRESHOLD,
    SplitScheme,
    Trajectory,
    euler_step,
    leapfrog_step,
    leapfrog_trajectory,
    modified_euler_step,
    split_trajectory,
    stability_eigenvalues,
    tempered_trajectory,
)
from .model import (
    CanonicalDensity,
    KineticSpec,
    NonFiniteEnergyError,
    PhaseState,
    TargetDensity,
    hamiltonian,
    sample_momentum,
)
from .samplers import (
    KERNELS,
    ChainRecord,
    Shortcut,
    TrajectoryPlan,
    ghmc_iteration,
    hmc_iteration,
    langevin_iteration,
    run_chain,
    rwm_iteration,
    windowed_hmc_iteration,
)
from .targets import (
    FIGURE_TARGETS,
    GaussianTarget,
    MixtureTarget,
    ReplicatedTarget,
    apply_linear_transform,
    make_figure_targets,
)

__version__ = "0.1.0"
