"""Weighted-residual operator flows on finite-dimensional Hilbert spaces."""

from ._backend import NAME as BACKEND
from .errors import *  # noqa: F401,F403
from .frames import (
    AtomSystem,
    FrameAtom,
    branch_atoms,
    extract_atoms,
    frame_operator,
    parseval_defect,
    span_defect,
    verify_frame,
)
from .measures import MeasureSpec, TransitionDist, cylinder_weight, is_dead, transition
from .operators import (
    ProjectionFamily,
    PsdOperator,
    dissipated,
    energy_support_basis,
    leakage_alpha,
    make_family,
    validate_projection,
    validate_psd,
    wr_update,
)
from .sampler import (
    BranchSample,
    LevelStats,
    conditional_supermartingale_check,
    energy_balance_report,
    enumerate_level,
    expectation_profile,
    extinction_stats,
    sample_branch,
    sample_branches,
)
from .tree import (
    TreeCache,
    branch_telescoping_defect,
    child_dissipations,
    format_word,
    node_dissipation,
    node_residual,
    parse_word,
)

__version__ = "0.1.0"
