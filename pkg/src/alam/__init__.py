"""Piecewise-constant A-free fields for differential inclusions.

Cone algebra for constant-coefficient first-order operators, laminate hulls
and envelopes, strip-laminate patterns pasted into square covers, and
numerical checks of the resulting fields.
"""
import os as _os

_threads = _os.environ.get("ALAM_THREADS")
if _threads:
    # must happen before numpy loads its BLAS
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import *  # noqa: E402,F401,F403
from .operator import (  # noqa: E402
    Operator, builtin_operator, cone_contains, cone_mask, cone_sample, constant_rank_check,
    rotate_operator, symbol_matrix, v_lambda,
)
from .geometry import (  # noqa: E402
    Cell, PiecewiseConstantField, Square, UNIT_SQUARE, area_fractions, interfaces,
    l1_distance, place_pattern, vitali_cover,
)
from .hull import (  # noqa: E402
    GridFunction, HullCloud, hull_iterate, hull_member, lambda_envelope, star_shaped_check,
    star_shaped_shrink,
)
from .laminate import (  # noqa: E402
    InclusionProblem, certificate_sequence, find_roots_along_cone, lemma1_construct,
    level_set_from_dict, refinement_sequence, relaxation_step, solve_cn, solve_multi_level,
    solve_one_level,
)
from .verify import (  # noqa: E402
    check_jumps, dist_integral, energy, field_report, lsc_smoke, relaxation_certificate,
    seeded_bumps, weak_residual, weak_star_gap,
)

__version__ = "0.1.0"
