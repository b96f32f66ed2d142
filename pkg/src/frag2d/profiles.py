"""Scalar ramp and bump profiles.

Everything downstream that shears, blends, or corrects is driven by a
one-dimensional profile.  The classes here expose exact values for the
maximal slope and the integral, so norm and flux budgets never rely on
sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProfileInvalid

_MAX_SLOPE = {"cubic": 1.5, "quintic": 1.875, "cosine": 2.0}


def _ramp01(u: np.ndarray, kind: str) -> np.ndarray:
    """Monotone 0 -> 1 ramp on [0, 1], clamped outside."""
    u = np.clip(u, 0.0, 1.0)
    if kind == "cubic":
        return u * u * (3.0 - 2.0 * u)
    if kind == "quintic":
        return u ** 3 * (u * (6.0 * u - 15.0) + 10.0)
    if kind == "cosine":
        return u - np.sin(2.0 * np.pi * u) / (2.0 * np.pi)
    raise ProfileInvalid(f"unknown profile kind {kind!r}")


def _ramp01_d(u: np.ndarray, kind: str) -> np.ndarray:
    inside = (u > 0.0) & (u < 1.0)
    uc = np.clip(u, 0.0, 1.0)
    if kind == "cubic":
        d = 6.0 * uc * (1.0 - uc)
    elif kind == "quintic":
        d = 30.0 * (uc * (1.0 - uc)) ** 2
    elif kind == "cosine":
        d = 1.0 - np.cos(2.0 * np.pi * uc)
    else:
        raise ProfileInvalid(f"unknown profile kind {kind!r}")
    return np.where(inside, d, 0.0)


def _shape(y, out):
    if np.ndim(y) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class StepProfile:
    """C^1 monotone step: 0 for y <= lo, 1 for y >= hi.

    The derivative is compactly supported in (lo, hi) and its exact sup is
    ``max_deriv``.  ``kind`` selects the ramp shape; the cosine ramp has a
    derivative vanishing to second order at both ends.
    """

    lo: float
    hi: float
    kind: str = "cubic"

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ProfileInvalid("step endpoints must be finite")
        if self.hi <= self.lo:
            raise ProfileInvalid(f"step needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.kind not in _MAX_SLOPE:
            raise ProfileInvalid(f"unknown profile kind {self.kind!r}")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def max_deriv(self) -> float:
        """Exact sup of the derivative."""
        return _MAX_SLOPE[self.kind] / self.width

    def value(self, y):
        u = (np.asarray(y, dtype=float) - self.lo) / self.width
        return _shape(y, _ramp01(u, self.kind))

    def deriv(self, y):
        u = (np.asarray(y, dtype=float) - self.lo) / self.width
        return _shape(y, _ramp01_d(u, self.kind) / self.width)

    def reversed(self) -> "StepProfile":
        """Step going 1 -> 0 over the same interval, as a DropProfile."""
        return DropProfile(self.lo, self.hi, self.kind)


@dataclass(frozen=True)
class DropProfile:
    """Complement of StepProfile: 1 for y <= lo, 0 for y >= hi."""

    lo: float
    hi: float
    kind: str = "cubic"

    def __post_init__(self):
        StepProfile(self.lo, self.hi, self.kind)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def max_deriv(self) -> float:
        return _MAX_SLOPE[self.kind] / self.width

    def value(self, y):
        u = (np.asarray(y, dtype=float) - self.lo) / self.width
        return _shape(y, 1.0 - _ramp01(u, self.kind))

    def deriv(self, y):
        u = (np.asarray(y, dtype=float) - self.lo) / self.width
        return _shape(y, -_ramp01_d(u, self.kind) / self.width)


@dataclass(frozen=True)
class PlateauBump:
    """Compactly supported plateau: 0 outside [lo, hi], 1 on the plateau.

    Ramps of width ``ramp`` connect the plateau [lo + ramp, hi - ramp] to
    zero at both ends.  All three ramp kinds are symmetric, so the exact
    integral is (hi - lo) - ramp.
    """

    lo: float
    hi: float
    ramp: float
    kind: str = "cubic"

    def __post_init__(self):
        if self.ramp <= 0.0:
            raise ProfileInvalid(f"ramp width must be positive, got {self.ramp}")
        if self.hi - self.lo < 2.0 * self.ramp:
            raise ProfileInvalid(
                f"plateau bump on [{self.lo}, {self.hi}] cannot fit "
                f"two ramps of width {self.ramp}"
            )
        if self.kind not in _MAX_SLOPE:
            raise ProfileInvalid(f"unknown profile kind {self.kind!r}")

    @property
    def max_deriv(self) -> float:
        return _MAX_SLOPE[self.kind] / self.ramp

    @property
    def mass(self) -> float:
        """Exact integral of the profile."""
        return (self.hi - self.lo) - self.ramp

    def value(self, y):
        ya = np.asarray(y, dtype=float)
        up = _ramp01((ya - self.lo) / self.ramp, self.kind)
        down = _ramp01((self.hi - ya) / self.ramp, self.kind)
        return _shape(y, np.minimum(up, down))

    def deriv(self, y):
        ya = np.asarray(y, dtype=float)
        u1 = (ya - self.lo) / self.ramp
        u2 = (self.hi - ya) / self.ramp
        rising = ya < 0.5 * (self.lo + self.hi)
        d = np.where(
            rising,
            _ramp01_d(u1, self.kind) / self.ramp,
            -_ramp01_d(u2, self.kind) / self.ramp,
        )
        return _shape(y, d)


def smoothstep(u):
    """Cubic 0 -> 1 ramp on [0, 1], clamped outside."""
    out = _ramp01(np.asarray(u, dtype=float), "cubic")
    return _shape(u, out)


def smoothstep_d(u):
    out = _ramp01_d(np.asarray(u, dtype=float), "cubic")
    return _shape(u, out)
