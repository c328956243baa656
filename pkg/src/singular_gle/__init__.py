"""Multi-particle generalized Langevin dynamics with singular repulsion and
exponential-sum memory kernels."""

from .config import RunConfig, parse_config, parse_text
from .dynamics import (
    CutoffSpec,
    Model,
    OverdampedState,
    PhaseState,
    SimParams,
    Trajectory,
    coupled_small_mass_pair,
    duhamel_reconstruct_z,
    lift_initial_condition,
    simulate_gle,
    simulate_overdamped,
    step_gle,
    step_gle_truncated,
    step_overdamped,
    step_overdamped_truncated,
)
from .errors import *  # noqa: F401,F403
from .experiments import (
    gibbs_marginal_test,
    gibbs_quadrature,
    lemma_a1_check,
    lemma_a2_check,
    sliced_w1,
    small_mass_sweep,
    wasserstein_decay,
)
from .kernels import KernelSpec, fluctuation_dissipation_check, kernel_eval, sample_stationary_aux
from .lyapunov import LyapunovParams, drift_scan, drift_search, generator_apply, hamiltonian_N
from .potentials import ConfiningPotential, SingularPotential, verify_structure

__version__ = "0.1.0"
