"""Quantitative-rectifiability diagnostics on discretized space-time surfaces.

Pipeline: synthesize or ingest a Surface, build its parabolic dyadic tree,
compute beta numbers and Carleson diagnostics, run the corona decomposition
into coherent stopping-time regimes, extend each regime to a Lip(1,1/2)
graph by Whitney extension, and certify the graph's regularity through the
half-order time derivative.
"""

from .metric import (
    ADRReport,
    MeasureEstimate,
    MeasureKind,
    SpaceTimePoint,
    Surface,
    check_adr,
    d_p,
    estimate_hausdorff_p,
    estimate_slicewise,
    parabolic_ball,
)
from .lattice import Cube, DyadicTree, build_tree, dilate, small_boundary_profile
from .planes import (
    BetaRecord,
    CarlesonReport,
    TPlane,
    beta_2,
    beta_inf,
    bbeta_inf,
    carleson_norm,
    compute_beta_records,
    fit_t_plane_l2,
    fit_t_plane_sup,
    gamma,
    plane_angle,
    spanning_points,
)
from .corona import (
    CoronaParams,
    CoronaResult,
    Regime,
    build_bilateral_regimes,
    build_regimes,
    classify_cubes,
    packing_constant,
)
from .whitney import (
    GraphField,
    StoppingField,
    WhitneyFamily,
    approximation_audit,
    assemble_psi,
    stopping_distances,
    whitney_cubes,
)
from .regularity import (
    GridFunction,
    LPFilterBank,
    RegularityReport,
    calderon_identity_check,
    certify_regular,
    half_t_derivative_fourier,
    half_t_derivative_kernel,
    hat_gamma,
    hat_nu,
    parabolic_bmo,
)
from .surfaces import GroundTruth, SurfaceSpec, synthesize

__version__ = "0.1.0"
