"""Winding of complex Gaussian stationary processes: exact mean and variance
formulas, Monte Carlo simulation and statistical checks."""

from .spectral import (
    BUILTIN_NAMES,
    CovarianceEval,
    DegenerateMeasureError,
    InvariantError,
    SpectralDensity,
    SpectralMeasure,
    builtin,
    covariance,
    covariance_derivative,
    measure_from_json,
    measure_to_json,
    moment_condition,
    nondegeneracy_margin,
    quadrature_covariance,
    total_mass,
)
from .theory import (
    KernelProfile,
    VarianceCurve,
    asymptotic_slope,
    boundary_term,
    kernel_K,
    kernel_Ktilde,
    kernel_KtildeStar,
    kernel_profile,
    mean_winding,
    ratio_cov_oracle,
    singular_set,
    variance_curve,
    variance_via_K,
    variance_via_Ktilde,
)
from .simulate import (
    FrequencyGrid,
    TrigSumProcess,
    WindingError,
    WindingSample,
    discretize,
    empirical_covariance,
    evaluate,
    sample_process,
    winding,
    wind_paths,
)
from .stats import (
    CLTReport,
    GrowthFit,
    MCReport,
    SimulationError,
    clt_test,
    compare,
    growth_exponent,
    linear_lower_bound_check,
    mc_winding,
    subquadratic_check,
)

__version__ = "0.1.0"
