"""liblab: symbolic and Monte Carlo laboratory for unitary Brownian motion
and the matrix liberation process."""

__version__ = "0.1.0"

from .algebra import (
    NCPoly,
    TensorNCPoly,
    adjoint,
    d_lib,
    d_u,
    delta_lib,
    delta_u,
    lift_u,
    multiply,
    pi_t,
    sharp_apply,
    theta,
    u,
    ut,
    v,
    x,
    xl,
    y_coord,
    y_inv,
)
from .cond_expect import (
    DriftSpec,
    cond_expect_past,
    mc_cond_expect,
    projected_gradient,
    ubm_word_moment,
)
from .expressions import parse_poly
from .moments import (
    burgers_residual,
    semicircle_cauchy,
    semicircle_density,
    semicircle_moment,
    ubm_moment,
)
from .oracles import EmpiricalOracle, Sigma0FrBMOracle, Sigma0LibOracle, TableOracle
from .rate import (
    DistanceCorpus,
    girsanov_exponent,
    rate_of_potential,
    rate_term,
    tracial_distance,
)
from .sim import (
    DriftConfig,
    SimConfig,
    TraceEstimate,
    UnitaryPathEnsemble,
    XSpec,
    eval_trace_estimate,
    eval_trace_poly,
    eval_word_trace,
    liberation_snapshot,
    load_ensemble,
    resolvent_trace,
    sample_hermitian_increment,
    save_ensemble,
    simulate_paths,
    step_ubm,
    stochastic_integral_b,
)
from .trace_poly import TracePoly
