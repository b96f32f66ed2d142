"""Numerical fragmentation of area-preserving surface maps.

The package builds area-preserving maps as composable evaluator objects,
measures C0 displacement with certified bounds, computes transport
obstructions by polyline quadrature, equalizes densities with divergence
flows, extends small maps from subsurfaces, and fragments a small map
into pieces supported in the disks of a cover.
"""

__version__ = "0.1.0"

from .errors import Frag2dError
from .extension import (
    extend_annulus,
    extend_disk,
    extend_rectangle,
    smooth_extend,
)
from .geometry_core import (
    Annulus,
    Curve,
    Disk,
    FlatTorus,
    GluedTorus,
    NormReport,
    SamplingPlan,
    c0_norm,
    c0_norm_report,
    crossing_arc,
    horizontal_circle,
    signed_area_between,
    winding_class,
)
from .maps import (
    AreaMap,
    AreaReport,
    Hamiltonian,
    alexander_isotopy,
    compose,
    dehn_twist,
    hamiltonian_flow,
    identity_map,
    invert,
    shear_psi_epsilon,
    verify_area,
)
from .moser import (
    Density,
    SkeletonLine,
    moser_equalize,
    pullback_density,
    pullback_residual,
    skeleton_adjust,
    square_area_adjust,
    strip_adjust,
    strip_psi1,
)
from .obstructions import (
    annulus_flux,
    edge_obstruction,
    isotopy_flux,
    loop_obstruction_sum,
)
from .profiles import DropProfile, PlateauBump, StepProfile

__all__ = [
    "Density",
    "SkeletonLine",
    "annulus_flux",
    "edge_obstruction",
    "isotopy_flux",
    "loop_obstruction_sum",
    "moser_equalize",
    "pullback_density",
    "pullback_residual",
    "skeleton_adjust",
    "square_area_adjust",
    "strip_adjust",
    "strip_psi1",
    "extend_annulus",
    "extend_disk",
    "extend_rectangle",
    "smooth_extend",
    "Annulus",
    "AreaMap",
    "AreaReport",
    "Hamiltonian",
    "alexander_isotopy",
    "compose",
    "dehn_twist",
    "hamiltonian_flow",
    "identity_map",
    "invert",
    "shear_psi_epsilon",
    "verify_area",
    "Curve",
    "Disk",
    "DropProfile",
    "FlatTorus",
    "Frag2dError",
    "GluedTorus",
    "NormReport",
    "PlateauBump",
    "SamplingPlan",
    "StepProfile",
    "c0_norm",
    "c0_norm_report",
    "crossing_arc",
    "horizontal_circle",
    "signed_area_between",
    "winding_class",
    "__version__",
]
