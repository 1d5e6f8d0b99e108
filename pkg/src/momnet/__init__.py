"""Method-of-moments recovery of sparse first-layer weights of feedforward networks."""

from .errors import (
    ConfigurationError,
    MomnetError,
    NumericError,
    RankDeficientError,
    SolverError,
)
from .model import (
    ActivationKind,
    FirstLayerPrior,
    NetworkSpec,
    build_network,
    forward_expected,
    generate_first_layer,
    input_jacobian,
    sample_label,
)
from .evaluation import learn_second_layer, match_rows, principal_angles, project_inputs
from .moments import (
    MomentMatrix,
    check_nondegeneracy,
    derivative_moment,
    estimate_moment,
    population_moment_factors,
)
from .recovery import L1Problem, RecoveryConfig, brute_force_sparsest, recover_first_layer, solve_l1
from .scores import Gaussian, GaussianMixture, StandardNormal

__version__ = "0.1.0"
