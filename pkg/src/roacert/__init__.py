"""Stability certification and region-of-attraction estimation for
discrete-time feedback loops with feed-forward neural-network controllers.

The library certifies local asymptotic stability by solving linear matrix
inequalities that combine a quadratic Lyapunov function with local sector
constraints on the activation functions, optionally refined with hard
integral quadratic constraints (IQCs) for plant perturbations and for
activation slope restrictions.  Certificates are ellipsoidal
inner-approximations of the region of attraction, validated by simulation.
"""

from roacert.nn import (
    Activation,
    NeuralNetwork,
    NnLft,
    Equilibrium,
    build_lft,
    propagate_equilibrium,
    verify_equilibrium,
)
from roacert.bounds import (
    ActivationBounds,
    ScalarNonlinearity,
    propagate_bounds,
    local_sector,
    local_slope,
    bound_scalar_nonlinearity,
)
from roacert.iqc import (
    IqcFilter,
    MultiplierSet,
    IqcBlock,
    ExtendedSystem,
    off_by_one_iqc,
    norm_bounded_lti_iqc,
    static_sector_iqc,
    extend_system,
)
from roacert.lmi import (
    LtiPlant,
    UncertainPlant,
    LmiProblem,
    sector_quadratic_form,
    assemble_nominal,
    assemble_robust,
    sweep_delta_v,
)
from roacert.sdp import (
    ConicProgram,
    RoaCertificate,
    lower,
    solve,
    verify_certificate,
)

__version__ = "0.1.0"
