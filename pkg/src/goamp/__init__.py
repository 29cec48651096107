"""Receiver, state evolution and achievable-rate analysis for clipped
generalized linear systems over unitarily-invariant channels."""

__version__ = "0.1.0"

from .channel import ChannelOperator, ChannelSpectrum, build_spectrum, spectral_lmmse_terms
from .denoisers import (
    BoxMinusError,
    InputPrior,
    ScalarPosterior,
    box_minus,
    circle_minus,
    gaussian_prior_mmse,
    qpsk_posterior,
    qpsk_se,
)
from .nonlinearity import ClipSpec, clip, clip_complex, declip_posterior, psi_se_hat, psi_se_quad
from .receiver import (
    Trajectory,
    empirical_orthogonality,
    generate_instance,
    lmmse_solve,
    run_goamp,
    run_ii_goamp,
)
from .state_evolution import (
    SeState,
    SeSystem,
    TransferCurve,
    breve_gamma,
    gamma_check,
    gamma_check_zero,
    gamma_se_analytic,
    inner_fixed_point,
    gamma_tilde,
    ld_curve,
    se_fixed_point,
    se_step,
    se_trajectory,
)
from .rate_analysis import (
    LinearizedClipModel,
    RateResult,
    bussgang_alpha,
    linearized_clip_model,
    max_rate,
    mrc_rate,
    rate_with_code,
    tunnel_check,
)
from .code_transfer import (
    DegreeDistribution,
    biawgn_threshold_db,
    bundled_distribution,
    ga_de_curve,
    ga_de_fixed_point,
    parse_distribution,
    threshold_search,
)
