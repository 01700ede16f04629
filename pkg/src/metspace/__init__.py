"""Metric fields on grid charts: extended distance, geodesics, smoothing,
path distances, Laplacians, heat flow and explicit constructions."""

import os as _os

# cap BLAS threads before numpy loads
_threads = _os.environ.get("METSPACE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import *  # noqa: E402,F401,F403
from .fields import (  # noqa: E402
    EllField,
    GridChart,
    MetricField,
    ScalarField,
    build_field,
    conformal_field,
    constant_field,
)
from .geometry import distance, distance_comparability_check, distance_map, graph_metric, measure, pullback_metric  # noqa: E402
from .operators import (  # noqa: E402
    assemble_laplacian,
    divform_to_metric,
    heat_run,
    lp_norm,
    norm_preservation_bounds,
    operator_correspondence_check,
    poincare_measure,
    varadhan_estimate,
)
from .rmf import read_field, write_field  # noqa: E402
from .space import (  # noqa: E402
    act,
    cauchy_limit,
    closeness_constant,
    dl,
    dl_exhaustion,
    geodesic,
    midpoint,
    smooth_approx,
    transport_B,
)

__version__ = "0.1.0"
