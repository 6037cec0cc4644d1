from distreach.sdp.backends import (
    BACKENDS,
    INFEASIBLE,
    LIMIT,
    NUMERICAL,
    OPTIMAL,
    BackendResult,
    ClarabelBackend,
    CvxoptBackend,
    LmiProblem,
    make_backend,
)
from distreach.sdp.facet import (
    FacetSdp,
    SolveReport,
    SolverSettings,
    VariableLayout,
    assemble_facet_sdp,
    solve_facet,
)

__all__ = [
    "BACKENDS", "INFEASIBLE", "LIMIT", "NUMERICAL", "OPTIMAL", "BackendResult", "ClarabelBackend",
    "CvxoptBackend", "LmiProblem", "make_backend", "FacetSdp", "SolveReport", "SolverSettings",
    "VariableLayout", "assemble_facet_sdp", "solve_facet",
]
