"""Typed failure modes raised by the library.

Every exception carries enough context in its message to reproduce the
failing call; callers that want to branch on failure kind should catch
the specific class, not the base.
"""

from __future__ import annotations


class Frag2dError(Exception):
    """Base class for all library-specific failures."""


class HomotopyClassMismatch(Frag2dError):
    """Curves or maps compared across different homotopy classes."""


class LiftWindowExceeded(Frag2dError):
    """A lift left the window it was required to stay inside."""


class MapEvaluationError(Frag2dError):
    """A map evaluator returned non-finite or malformed output."""


class LiftAmbiguity(Frag2dError):
    """Displacement too close to half a period to pick a lift."""


class FlowDiverged(Frag2dError):
    """ODE flow integration failed to converge or blew up."""


class ProfileInvalid(Frag2dError):
    """Profile function violates its normalization or support contract."""


class BadCylinder(Frag2dError):
    """Cylinder block parameters are inconsistent or degenerate."""


class SupportNotCompact(Frag2dError):
    """Claimed support region does not actually contain the motion."""


class InverseNotFound(Frag2dError):
    """Newton inversion failed to locate a preimage."""


class MassMismatch(Frag2dError):
    """Total masses of the two densities disagree beyond tolerance."""


class FaceMassMismatch(Frag2dError):
    """Per-face mass mismatch exceeds what equalization can absorb."""


class DegenerateDensity(Frag2dError):
    """Density touches zero or is non-finite on the working grid."""


class RatioOutOfRange(Frag2dError):
    """Per-square area ratio violates the admissibility bound."""


class TubeTooThin(Frag2dError):
    """Requested tube width too small for the working resolution."""


class GraphRestrictionViolated(Frag2dError):
    """Image curve is not a graph over the base circle."""


class TooLarge(Frag2dError):
    """Input map moves points too far for the requested extension."""


class RangeExceeded(Frag2dError):
    """A value left the interval on which a construction is defined."""


class ObstructionUndefined(Frag2dError):
    """Obstruction requested for an arc or map where it has no meaning."""


class AreaConditionFailed(Frag2dError):
    """Enclosed-area hypothesis of an extension lemma fails."""


class EndConditionFailed(Frag2dError):
    """Map is not the identity near the ends where required."""


class CoverOverlap(Frag2dError):
    """Cover sets overlap where the construction needs disjointness."""


class ObstructionInconsistent(Frag2dError):
    """Edge obstructions violate the loop-sum consistency relation."""


class SupportLeak(Frag2dError):
    """A fragment moves points outside its assigned cover set."""


class RegroupFailed(Frag2dError):
    """Support-regrouping pass could not certify containment."""
