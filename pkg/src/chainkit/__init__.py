"""Countable-state Markov chains: simulation, truncated laws, exits, stationarity and drift certificates."""

from .distribution import SparseDistribution, as_state, total_variation
from .exit import Domain, ExitStatistics, exit_density_ct, exit_joint_dt, exit_marginals_minimal, gambler_oracle
from .lyapunov import Certificate, CertificateReport, check_certificate, minimal_hitting_functional
from .minimal import ConvergenceError, minimal_solution
from .model import (
    CONTINUOUS,
    DISCRETE,
    ChainModel,
    JumpDecomposition,
    ModelError,
    build_model,
    dump_model,
    explicit_model,
    from_matrix,
    jump_decomposition,
    load_model,
)
from .simulate import empirical_distribution, sample_ensemble, sample_path_ct, sample_path_dt
from .stationary import ErgodicReport, ergodic_distributions, ergodic_via_regeneration, stationary_residual
from .structure import ClassDecomposition, Truncation, classify, hitting_probabilities
from .transient import (
    SolverBudgetError,
    TruncationResult,
    fir_bir_oracle,
    fsp_adaptive,
    fsp_ct,
    fsp_dt,
    law_exact_dt,
    skeleton_matrix,
)

__version__ = "0.1.0"
