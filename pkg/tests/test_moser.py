"""Density transport: 1d fiber maps, box flows, strip/square/skeleton passes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frag2d.errors import (
    DegenerateDensity,
    FaceMassMismatch,
    FlowDiverged,
    MassMismatch,
    RatioOutOfRange,
    TubeTooThin,
)
from frag2d.geometry_core import Annulus
from frag2d.maps import shear_psi_epsilon
from frag2d.moser import (
    Density,
    SkeletonLine,
    fiber_equalize_1d,
    moser_equalize,
    pullback_density,
    pullback_residual,
    skeleton_adjust,
    square_area_adjust,
    strip_adjust,
    strip_psi1,
)
from frag2d.profiles import PlateauBump

RNG = np.random.default_rng(20260818)
CH = Annulus(halfwidth=1.0, period_x=1.0)
BOX = (0.0, 1.0, 0.0, 0.5)

# Transport against g2(y) = 1 + a sin(2 pi y / H) from a uniform g1 solves
# the cumulative-mass equation T + a (H / 2 pi) (1 - cos(2 pi T / H)) = y.
# Frozen from an independent bracketing root-finder at H = 0.5, a = 0.3.
TRANSPORT_ORACLE = {
    0.1: 0.0870777093428018,
    0.25: 0.2058365556666968,
    0.4: 0.37660960801435,
}
FIBER_H = 0.5
FIBER_A = 0.3


def fiber_target(y):
    return 1.0 + FIBER_A * np.sin(2.0 * np.pi * np.asarray(y) / FIBER_H)


def displacement(m, pts):
    img = m.evaluate(pts)
    return float(np.max(np.hypot(img[:, 0] - pts[:, 0], img[:, 1] - pts[:, 1])))


def sine_density(amp, shape=(65, 65)):
    """Mass-neutral wiggle vanishing on the top and bottom box edges."""

    def fn(p):
        return 1.0 + amp * np.sin(2 * np.pi * p[:, 0]) * np.sin(4 * np.pi * p[:, 1]) ** 2

    return Density.from_function(CH, BOX, fn, shape=shape, name=f"wiggle{amp:g}")


# ---------------------------------------------------------------------------
# grid densities


class TestDensity:
    def test_constant_mass_is_box_area(self):
        w = Density.constant(CH, BOX, shape=(65, 65))
        assert w.total_mass == pytest.approx(0.5, abs=1e-14)
        assert w.shape == (65, 65)

    def test_from_function_hits_grid_nodes(self):
        def fn(p):
            return 2.0 + np.sin(2 * np.pi * p[:, 0]) * p[:, 1]

        w = Density.from_function(CH, BOX, fn, shape=(33, 17))
        xs = np.linspace(0.0, 1.0, 33)
        ys = np.linspace(0.0, 0.5, 17)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        want = fn(np.column_stack([gx.ravel(), gy.ravel()])).reshape(33, 17)
        assert np.max(np.abs(w.values - want)) == 0.0

    def test_evaluation_wraps_full_period(self):
        w = sine_density(0.2)
        pts = RNG.uniform([0.0, 0.05], [1.0, 0.45], size=(200, 2))
        shifted = pts + np.array([1.0, 0.0])
        assert np.max(np.abs(w(shifted) - w(pts))) < 1e-12

    def test_scaling_scales_mass(self):
        w = Density.constant(CH, BOX, value=2.0)
        assert w.scaled(0.25).total_mass == pytest.approx(0.25, rel=1e-14)

    def test_rejects_nonpositive_values(self):
        with pytest.raises(DegenerateDensity, match="positive"):
            Density(CH, BOX, np.zeros((9, 9)))
        vals = np.ones((9, 9))
        vals[4, 4] = -0.3
        with pytest.raises(DegenerateDensity, match="positive"):
            Density(CH, BOX, vals)

    def test_rejects_nonfinite_values(self):
        vals = np.ones((9, 9))
        vals[2, 7] = np.nan
        with pytest.raises(DegenerateDensity, match="finite"):
            Density(CH, BOX, vals)

    def test_rejects_degenerate_grid(self):
        with pytest.raises(ValueError, match="2x2"):
            Density(CH, BOX, np.ones((1, 5)))

    def test_separable_axis_detection(self):
        ys = Density.from_function(CH, BOX, lambda p: 1.0 + 0.2 * p[:, 1])
        xo = Density.from_function(
            CH, BOX, lambda p: 1.5 + 0.2 * np.sin(2 * np.pi * p[:, 0])
        )
        assert ys.separable_axis() == "y"
        assert xo.separable_axis() == "x"
        assert sine_density(0.1).separable_axis() is None


# ---------------------------------------------------------------------------
# 1d cumulative-mass transport


class TestFiberTransport:
    def build(self, a=FIBER_A, n=2049):
        coords = np.linspace(0.0, FIBER_H, n)
        g1 = np.ones_like(coords)
        g2 = 1.0 + a * np.sin(2.0 * np.pi * coords / FIBER_H)
        return coords, fiber_equalize_1d(coords, g1, g2)

    def test_matches_frozen_roots(self):
        _, (T, _, _) = self.build()
        for y, want in TRANSPORT_ORACLE.items():
            assert float(T(y)) == pytest.approx(want, abs=1e-6)

    def test_transport_equation_holds(self):
        # T'(y) g2(T(y)) = g1(y), checked with a centered difference on T
        _, (T, _, _) = self.build()
        ys = RNG.uniform(0.02, 0.48, size=400)
        h = 1e-6
        tp = (T(ys + h) - T(ys - h)) / (2 * h)
        assert np.max(np.abs(tp * fiber_target(T(ys)) - 1.0)) < 1e-5

    def test_reported_derivative_agrees(self):
        _, (T, Tp, _) = self.build()
        ys = RNG.uniform(0.02, 0.48, size=400)
        assert np.max(np.abs(Tp(ys) * fiber_target(T(ys)) - 1.0)) < 1e-5

    def test_fixes_interval_ends(self):
        _, (T, _, Tinv) = self.build()
        assert abs(float(T(0.0))) < 1e-14
        assert abs(float(T(FIBER_H)) - FIBER_H) < 1e-12
        assert abs(float(Tinv(0.0))) < 1e-14
        assert abs(float(Tinv(FIBER_H)) - FIBER_H) < 1e-12

    def test_inverse_roundtrip(self):
        _, (T, _, Tinv) = self.build()
        ys = RNG.uniform(0.0, FIBER_H, size=500)
        assert np.max(np.abs(Tinv(T(ys)) - ys)) < 1e-8

    @given(st.floats(min_value=-0.7, max_value=0.7))
    @settings(max_examples=30, deadline=None)
    def test_transport_monotone_for_any_amplitude(self, a):
        coords = np.linspace(0.0, FIBER_H, 513)
        g2 = 1.0 + a * np.sin(2.0 * np.pi * coords / FIBER_H)
        T, _, _ = fiber_equalize_1d(coords, np.ones_like(coords), g2)
        ys = np.linspace(0.0, FIBER_H, 257)
        vals = T(ys)
        assert np.all(np.diff(vals) > -1e-12)
        assert abs(float(vals[0])) < 1e-14
        assert abs(float(vals[-1]) - FIBER_H) < 1e-12

    def test_mass_mismatch_rejected(self):
        coords = np.linspace(0.0, FIBER_H, 257)
        with pytest.raises(MassMismatch, match="masses differ"):
            fiber_equalize_1d(coords, np.ones_like(coords),
                              np.full_like(coords, 1.05))

    def test_nonpositive_density_rejected(self):
        coords = np.linspace(0.0, FIBER_H, 257)
        g2 = 1.0 + 1.5 * np.sin(2.0 * np.pi * coords / FIBER_H)
        with pytest.raises(DegenerateDensity):
            fiber_equalize_1d(coords, np.ones_like(coords), g2)


# ---------------------------------------------------------------------------
# density equalization on the box


class TestEqualize:
    def test_equal_densities_give_identity(self):
        w = sine_density(0.1)
        f = moser_equalize(w, w)
        pts = RNG.uniform([0.0, 0.0], [1.0, 0.5], size=(300, 2))
        assert displacement(f, pts) == 0.0
        assert f.report["sweeps"] == 0
        assert f.report["c0_norm"] == 0.0
        assert f.report["residual"] == 0.0

    def test_fiberwise_case_matches_frozen_transport(self):
        w1 = Density.constant(CH, BOX, shape=(65, 65))
        w2 = Density.from_function(
            CH, BOX, lambda p: fiber_target(p[:, 1]), shape=(65, 65)
        )
        f = moser_equalize(w1, w2)
        for y, want in TRANSPORT_ORACLE.items():
            img = f.evaluate(np.array([[0.3, y]]))
            assert img[0, 1] == pytest.approx(want, abs=1e-6)
            assert img[0, 0] == 0.3  # fiber transport leaves x alone
        ends = f.evaluate(np.array([[0.2, 0.0], [0.7, 0.5]]))
        assert abs(ends[0, 1]) < 1e-14
        assert abs(ends[1, 1] - 0.5) < 1e-12
        assert pullback_residual(f, w1, w2) < 2e-6
        assert f.report["sweeps"] == 1

    def test_two_dimensional_equalize(self):
        w1 = Density.constant(CH, BOX, shape=(65, 65))
        w2 = sine_density(0.1)
        f = moser_equalize(w1, w2, flow_steps=48)
        assert f.report["residual"] < 1e-4
        assert pullback_residual(f, w1, w2) < 5e-4
        # the flow field vanishes on the horizontal edges by construction
        xs = np.linspace(0.0, 1.0, 97)
        for y in (0.0, 0.5):
            edge = np.column_stack([xs, np.full_like(xs, y)])
            assert displacement(f, edge) < 1e-12
        outside = np.column_stack([xs, np.full_like(xs, 0.75)])
        assert displacement(f, outside) == 0.0

    def test_norm_scales_linearly_with_defect(self):
        norms = {}
        for amp in (0.2, 0.1, 0.05):
            w1 = Density.constant(CH, BOX, shape=(49, 49))
            f = moser_equalize(w1, sine_density(amp, shape=(49, 49)),
                               target=2e-3, flow_steps=32)
            norms[amp] = f.report["c0_norm"]
        assert 1.6 < norms[0.2] / norms[0.1] < 2.4
        assert 1.6 < norms[0.1] / norms[0.05] < 2.4

    def test_total_mass_mismatch_rejected(self):
        w1 = Density.constant(CH, BOX)
        with pytest.raises(MassMismatch, match="total masses"):
            moser_equalize(w1, Density.constant(CH, BOX, value=1.05))

    def test_grid_mismatch_rejected(self):
        w1 = Density.constant(CH, BOX, shape=(65, 65))
        w2 = Density.constant(CH, BOX, shape=(33, 33))
        with pytest.raises(ValueError, match="share a grid"):
            moser_equalize(w1, w2)

    def test_boundary_disagreement_rejected(self):
        w1 = Density.constant(CH, BOX, shape=(49, 49))
        w2 = Density.from_function(
            CH, BOX,
            lambda p: 1.0 + 0.1 * np.sin(2 * np.pi * p[:, 0]) * np.cos(4 * np.pi * p[:, 1]),
            shape=(49, 49),
        )
        with pytest.raises(ValueError, match="boundary"):
            moser_equalize(w1, w2)

    def test_unreachable_target_raises(self):
        w1 = Density.constant(CH, BOX, shape=(49, 49))
        w2 = sine_density(0.1, shape=(49, 49))
        with pytest.raises(FlowDiverged, match="stalled"):
            moser_equalize(w1, w2, target=1e-16, max_sweeps=1, flow_steps=32)

    def test_per_face_equalize_pins_the_skeleton(self):
        faces = [(0.0, 0.5, 0.0, 0.25), (0.5, 1.0, 0.0, 0.25),
                 (0.0, 0.5, 0.25, 0.5), (0.5, 1.0, 0.25, 0.5)]

        def fn(p):
            inside = (p[:, 0] <= 0.5) & (p[:, 1] <= 0.25)
            return 1.0 + 0.12 * np.sin(4 * np.pi * p[:, 0]) * np.sin(
                8 * np.pi * p[:, 1]) ** 2 * inside

        w1 = Density.constant(CH, BOX, shape=(65, 65))
        w2 = Density.from_function(CH, BOX, fn, shape=(65, 65))
        f = moser_equalize(w1, w2, fixed_skeleton=faces, flow_steps=40)
        assert f.report["faces"] == 1
        assert f.report["residual"] < 1e-4
        # shared face edges and untouched faces stay pointwise fixed
        ys = np.linspace(0.0, 0.5, 41)
        edge = np.column_stack([np.full_like(ys, 0.5), ys])
        assert displacement(f, edge) == 0.0
        far = RNG.uniform([0.55, 0.27], [0.95, 0.48], size=(200, 2))
        assert displacement(f, far) == 0.0
        near = RNG.uniform([0.1, 0.05], [0.4, 0.2], size=(200, 2))
        assert displacement(f, near) > 1e-5

    def test_per_face_mass_mismatch_rejected(self):
        faces = [(0.0, 0.5, 0.0, 0.25), (0.5, 1.0, 0.0, 0.25),
                 (0.0, 0.5, 0.25, 0.5), (0.5, 1.0, 0.25, 0.5)]

        def fn(p):
            # globally neutral, but moves mass between the two lower faces
            return 1.0 + 0.1 * np.sin(2 * np.pi * p[:, 0]) * np.sin(
                8 * np.pi * p[:, 1]) ** 2

        w1 = Density.constant(CH, BOX, shape=(65, 65))
        w2 = Density.from_function(CH, BOX, fn, shape=(65, 65))
        with pytest.raises(FaceMassMismatch):
            moser_equalize(w1, w2, fixed_skeleton=faces)


# ---------------------------------------------------------------------------
# strip maps


class TestStripPrimitive:
    def const_chi(self, c=0.3, delta=0.1):
        def chi(pts):
            t = pts[:, 1]
            return np.where((t >= 0.0) & (t <= delta), c, 0.0)

        return chi

    def test_matches_closed_form(self):
        # constant chi integrates to z + c min(z, delta) above the floor
        c, d = 0.3, 0.1
        m = strip_psi1(self.const_chi(c, d), d, CH)
        zs = np.array([0.02, 0.05, 0.1, 0.2, 0.45])
        pts = np.column_stack([np.full_like(zs, 0.37), zs])
        img = m.evaluate(pts)
        want = zs + c * np.minimum(zs, d)
        assert np.max(np.abs(img[:, 1] - want)) < 1e-10
        assert np.max(np.abs(img[:, 0] - 0.37)) == 0.0

    def test_identity_below_floor(self):
        m = strip_psi1(self.const_chi(), 0.1, CH)
        pts = RNG.uniform([0.0, -0.9], [1.0, 0.0], size=(200, 2))
        assert displacement(m, pts) == 0.0

    def test_jacobian_is_one_plus_chi(self):
        c, d = 0.3, 0.1
        m = strip_psi1(self.const_chi(c, d), d, CH)
        h = 1e-6
        inside = np.column_stack([RNG.uniform(0, 1, 50),
                                  RNG.uniform(0.01, 0.09, 50)])
        above = np.column_stack([RNG.uniform(0, 1, 50),
                                 RNG.uniform(0.15, 0.4, 50)])
        for pts, want in ((inside, 1.0 + c), (above, 1.0)):
            up = pts + np.array([0.0, h])
            dn = pts - np.array([0.0, h])
            det = (m.evaluate(up)[:, 1] - m.evaluate(dn)[:, 1]) / (2 * h)
            assert np.max(np.abs(det - want)) < 1e-6

    def test_inverse_roundtrip(self):
        m = strip_psi1(self.const_chi(), 0.1, CH)
        pts = RNG.uniform([0.0, -0.2], [1.0, 0.45], size=(400, 2))
        back = m.inverse(m.evaluate(pts))
        assert np.max(np.abs(back - pts)) < 1e-12

    def test_degenerate_chi_rejected(self):
        def chi(pts):
            t = pts[:, 1]
            return np.where((t >= 0.0) & (t <= 0.1), -1.2, 0.0)

        with pytest.raises(DegenerateDensity):
            strip_psi1(chi, 0.1, CH)


BUMP_PLUS = PlateauBump(0.1, 0.4, ramp=0.1)
BUMP_MINUS = PlateauBump(0.6, 0.9, ramp=0.1)


def strip_chi(delta, amp=0.4):
    """Mass-neutral band perturbation: a positive and a negative plateau."""

    def chi(pts):
        t = pts[:, 1]
        band = (t >= 0.0) & (t <= delta)
        return amp * (BUMP_PLUS.value(pts[:, 0]) - BUMP_MINUS.value(pts[:, 0])) * band

    return chi


@pytest.fixture(scope="module")
def strip_family():
    knobs = dict(n_grid=257, flow_steps=32, equalize_shape=(97, 97))
    return {d: strip_adjust(strip_chi(d), d, CH, **knobs)
            for d in (0.1, 0.05, 0.025)}


class TestStripAdjust:
    def test_norm_is_proportional_to_band_height(self, strip_family):
        ratios = {d: m.report["c0_norm"] / d for d, m in strip_family.items()}
        vals = list(ratios.values())
        assert max(vals) / min(vals) < 2.0
        assert max(vals) < 1.0

    def test_norms_decrease_with_band_height(self, strip_family):
        norms = [strip_family[d].report["c0_norm"] for d in (0.1, 0.05, 0.025)]
        assert norms[0] > norms[1] > norms[2]

    def test_residual_meets_target(self, strip_family):
        for m in strip_family.values():
            assert m.report["equalize_residual"] < 2e-4

    def test_identity_outside_spread_band(self, strip_family):
        below = RNG.uniform([0.0, -0.8], [1.0, -0.001], size=(300, 2))
        above = RNG.uniform([0.0, 0.501], [1.0, 0.95], size=(300, 2))
        for m in strip_family.values():
            assert displacement(m, below) < 1e-12
            assert displacement(m, above) < 1e-12

    def test_inverse_roundtrip(self, strip_family):
        m = strip_family[0.1]
        pts = RNG.uniform([0.0, 0.02], [1.0, 0.48], size=(150, 2))
        back = m.inverse(m.evaluate(pts))
        assert np.max(np.abs(back - pts)) < 1e-6

    def test_unbalanced_chi_rejected(self):
        def chi(pts):
            t = pts[:, 1]
            band = (t >= 0.0) & (t <= 0.1)
            return 0.4 * BUMP_PLUS.value(pts[:, 0]) * band

        with pytest.raises(MassMismatch, match="mass-neutral"):
            strip_adjust(chi, 0.1, CH)

    def test_chi_leaking_past_band_rejected(self):
        def chi(pts):
            return 0.4 * (BUMP_PLUS.value(pts[:, 0]) - BUMP_MINUS.value(pts[:, 0]))

        with pytest.raises(ValueError, match="outside the declared band"):
            strip_adjust(chi, 0.1, CH)

    def test_degenerate_band_density_rejected(self):
        def chi(pts):
            t = pts[:, 1]
            return np.where((t >= 0.0) & (t <= 0.1), -1.2, 0.0)

        with pytest.raises(DegenerateDensity):
            strip_adjust(chi, 0.1, CH)

    def test_band_too_tall_for_spread_rejected(self):
        with pytest.raises(ValueError, match="too large"):
            strip_adjust(strip_chi(0.45), 0.45, CH)

    def test_short_spread_band_rejected(self):
        with pytest.raises(ValueError, match="at least 1/2"):
            strip_adjust(strip_chi(0.05), 0.05, CH, spread_top=0.3)


# ---------------------------------------------------------------------------
# per-square area correction


class TestSquareAdjust:
    BAND_BOX = (0.0, 1.0, 0.0, 0.25)

    def test_matches_frozen_square_ratios(self):
        # the density lives on the tiling lattice, where the trapezoid
        # sums of sin^2 close exactly: every square carries mass
        # side^2 (1 + a/4), so each ratio offset is exactly a/4 = 0.03
        def fn(p):
            return 1.0 + 0.12 * np.sin(2 * np.pi * p[:, 0]) ** 2 * np.sin(
                2 * np.pi * p[:, 1]) ** 2

        omega = Density.from_function(CH, self.BAND_BOX, fn, shape=(65, 17))
        rho, h2 = square_area_adjust(omega, (0.0, 0.25), 0.25,
                                     target=2e-4, flow_steps=40)
        assert h2.report["A"] == pytest.approx(0.03, abs=1e-10)
        assert h2.report["squares"] == 4
        for t in h2.report["t"]:
            assert t == pytest.approx(0.03, abs=1e-10)
        assert 1.7 < h2.report["E2"] < 1.9
        assert h2.report["residual"] < 2e-4
        # corrected density: mass matches, square edges stay at 1
        assert rho.total_mass == pytest.approx(0.25 * 1.03, abs=1e-12)
        assert np.all(rho.values[::16, :] == 1.0)
        assert np.all(rho.values[:, ::16] == 1.0)
        # the square skeleton is pointwise fixed
        ys = np.linspace(0.0, 0.25, 21)
        for x in (0.0, 0.25, 0.5, 0.75):
            edge = np.column_stack([np.full_like(ys, x), ys])
            assert displacement(h2, edge) == 0.0

    def test_uniform_density_needs_no_correction(self):
        # only resampling noise survives, orders below any real ratio
        omega = Density.constant(CH, self.BAND_BOX, shape=(65, 17))
        rho, h2 = square_area_adjust(omega, (0.0, 0.25), 0.25)
        assert h2.report["A"] < 1e-12
        assert np.max(np.abs(rho.values - 1.0)) < 1e-12
        pts = RNG.uniform([0.0, 0.0], [1.0, 0.25], size=(200, 2))
        assert displacement(h2, pts) == 0.0

    def test_area_preserving_shear_needs_no_correction(self):
        # pullback of the reference under an exact shear is the reference
        # up to finite-difference rounding, so the correction is nil
        psi = shear_psi_epsilon(0.02, chart=CH)
        base = Density.constant(CH, self.BAND_BOX, shape=(65, 17))
        pb = pullback_density(psi, base)
        rho, h2 = square_area_adjust(pb, (0.0, 0.25), 0.25)
        assert h2.report["A"] < 1e-9
        assert h2.report["c0_norm"] < 1e-9

    def test_ratio_beyond_bump_capacity_rejected(self):
        def fn(p):
            return 1.0 + 2.5 * np.sin(2 * np.pi * p[:, 0]) ** 2 * np.sin(
                2 * np.pi * p[:, 1]) ** 2

        omega = Density.from_function(CH, self.BAND_BOX, fn, shape=(65, 17))
        with pytest.raises(RatioOutOfRange, match="bump height"):
            square_area_adjust(omega, (0.0, 0.25), 0.25)

    def test_ratio_above_one_rejected(self):
        def fn(p):
            return 1.0 + 4.2 * np.sin(2 * np.pi * p[:, 0]) ** 2 * np.sin(
                2 * np.pi * p[:, 1]) ** 2

        omega = Density.from_function(CH, self.BAND_BOX, fn, shape=(65, 17))
        with pytest.raises(RatioOutOfRange, match=">= 1"):
            square_area_adjust(omega, (0.0, 0.25), 0.25)

    def test_side_must_tile_period(self):
        omega = Density.constant(CH, self.BAND_BOX, shape=(65, 17))
        with pytest.raises(ValueError, match="tile the period"):
            square_area_adjust(omega, (0.0, 0.25), 0.3)

    def test_side_must_tile_band_height(self):
        omega = Density.constant(CH, self.BAND_BOX, shape=(65, 17))
        with pytest.raises(ValueError, match="tile the band height"):
            square_area_adjust(omega, (0.0, 0.2), 0.25)

    def test_band_must_sit_inside_grid(self):
        omega = Density.constant(CH, self.BAND_BOX, shape=(65, 17))
        with pytest.raises(ValueError, match="exceeds"):
            square_area_adjust(omega, (0.0, 0.5), 0.25)


# ---------------------------------------------------------------------------
# skeleton tubes


class TestSkeletonAdjust:
    def line_density(self, amp=0.1):
        return Density.from_function(
            CH, BOX, lambda p: 1.0 + amp * np.cos(2 * np.pi * p[:, 0]),
            shape=(65, 65), name="ridge",
        )

    def test_single_line_matches_stretch_formula(self):
        # one pass on one line is a pure transverse stretch: the offset is
        # (lam - 1) s (1 - (s/w)^2)^3 with lam the reciprocal density
        omega = self.line_density()
        line = SkeletonLine("h", 0.25, 0.0, 1.0, closed=True)
        w = 0.2
        f = skeleton_adjust(omega, [line], bound=0.02, tube_width=w)
        assert f.report["passes"] == 1
        assert f.report["residual"] < 1e-6
        n = 5121  # node count for this extent and width
        for k in (511, 1777, 3583):
            x = k / n
            lam = 1.0 / float(omega(np.array([[x, 0.25]]))[0])
            for s in (-0.15, -0.07, 0.06, 0.13):
                img = f.evaluate(np.array([[x, 0.25 + s]]))
                want = (lam - 1.0) * s * (1.0 - (s / w) ** 2) ** 3
                assert img[0, 1] - (0.25 + s) == pytest.approx(want, abs=1e-10)
                assert img[0, 0] == x

    def test_uniform_density_gives_identity(self):
        omega = Density.constant(CH, BOX, shape=(65, 65))
        line = SkeletonLine("h", 0.25, 0.0, 1.0, closed=True)
        f = skeleton_adjust(omega, [line], bound=0.02)
        assert f.report["passes"] == 0
        pts = RNG.uniform([0.0, 0.0], [1.0, 0.5], size=(200, 2))
        assert displacement(f, pts) == 0.0

    def grid_setup(self):
        def fn(p):
            return 1.0 + 0.08 * np.sin(2 * np.pi * p[:, 0]) * np.cos(
                np.pi * (p[:, 1] - 0.15) / 0.2)

        omega = Density.from_function(CH, BOX, fn, shape=(65, 65), name="grid")
        skeleton = [
            SkeletonLine("h", 0.15, 0.0, 1.0, closed=True),
            SkeletonLine("h", 0.35, 0.0, 1.0, closed=True),
            SkeletonLine("v", 0.25, 0.15, 0.35),
            SkeletonLine("v", 0.75, 0.15, 0.35),
        ]
        return omega, skeleton

    def test_grid_pullback_is_uniform_on_every_line(self):
        omega, skeleton = self.grid_setup()
        f = skeleton_adjust(omega, skeleton, bound=0.05)
        w = f.report["tube_width"]
        assert w == pytest.approx(0.08, abs=1e-12)
        assert f.report["residual"] < 1e-6
        assert f.report["c0_norm"] <= 0.05
        h = 3e-4 * w
        for line in skeleton:
            ls = RNG.uniform(line.lo, line.hi, size=400)
            if line.axis == "h":
                pts = np.column_stack([ls, np.full_like(ls, line.pos)])
            else:
                pts = np.column_stack([np.full_like(ls, line.pos), ls])
            det = self.central_det(f, pts, h)
            vals = det * omega(f.evaluate(pts))
            assert np.max(np.abs(vals - 1.0)) < 1e-6

    @staticmethod
    def central_det(f, pts, h):
        ex = np.array([h, 0.0])
        ey = np.array([0.0, h])
        fxp, fxm = f.evaluate(pts + ex), f.evaluate(pts - ex)
        fyp, fym = f.evaluate(pts + ey), f.evaluate(pts - ey)
        return ((fxp[:, 0] - fxm[:, 0]) * (fyp[:, 1] - fym[:, 1])
                - (fyp[:, 0] - fym[:, 0]) * (fxp[:, 1] - fxm[:, 1])) / (4 * h * h)

    def test_grid_fixes_lines_and_crossings_exactly(self):
        omega, skeleton = self.grid_setup()
        f = skeleton_adjust(omega, skeleton, bound=0.05)
        xs = np.linspace(0.0, 1.0, 101)
        for pos in (0.15, 0.35):
            pts = np.column_stack([xs, np.full_like(xs, pos)])
            assert displacement(f, pts) == 0.0
        crossings = np.array([[0.25, 0.15], [0.75, 0.15],
                              [0.25, 0.35], [0.75, 0.35]])
        assert displacement(f, crossings) == 0.0

    def test_grid_correction_is_local_to_the_tubes(self):
        omega, skeleton = self.grid_setup()
        f = skeleton_adjust(omega, skeleton, bound=0.05)
        far = np.column_stack([RNG.uniform(0, 1, 300),
                               RNG.uniform(0.44, 0.5, 300)])
        assert displacement(f, far) == 0.0

    def test_one_sided_tube_leaves_other_side_fixed(self):
        omega = self.line_density()
        line = SkeletonLine("h", 0.25, 0.0, 1.0, closed=True, side=-1)
        w = 0.15
        f = skeleton_adjust(omega, [line], bound=0.02, tube_width=w)
        above = np.column_stack([RNG.uniform(0, 1, 300),
                                 RNG.uniform(0.2501, 0.49, 300)])
        assert displacement(f, above) == 0.0
        below = np.column_stack([RNG.uniform(0, 1, 300),
                                 RNG.uniform(0.15, 0.24, 300)])
        assert displacement(f, below) > 1e-4
        # the line residual, measured with a one-sided transverse stencil
        h = 3e-4 * w
        xs = RNG.uniform(0.0, 1.0, 400)
        pts = np.column_stack([xs, np.full_like(xs, 0.25)])
        ey = np.array([0.0, h])
        ex = np.array([h, 0.0])
        base = f.evaluate(pts)
        in1 = f.evaluate(pts - ey)
        in2 = f.evaluate(pts - 2 * ey)
        dtr = (4 * in1 - 3 * base - in2) / (-2 * h)
        dlg = (f.evaluate(pts + ex) - f.evaluate(pts - ex)) / (2 * h)
        det = dlg[:, 0] * dtr[:, 1] - dtr[:, 0] * dlg[:, 1]
        assert np.max(np.abs(det * omega(base) - 1.0)) < 1e-6

    def test_norm_bound_enforced(self):
        omega = self.line_density()
        line = SkeletonLine("h", 0.25, 0.0, 1.0, closed=True)
        with pytest.raises(TubeTooThin, match="over the requested bound"):
            skeleton_adjust(omega, [line], bound=1e-9, tube_width=0.2)

    def test_unreachable_target_raises(self):
        omega = self.line_density()
        line = SkeletonLine("h", 0.25, 0.0, 1.0, closed=True)
        with pytest.raises(TubeTooThin, match="stalled"):
            skeleton_adjust(omega, [line], bound=0.02, tube_width=0.2,
                            target=1e-15, max_passes=2)

    def test_zero_width_tube_rejected(self):
        omega = self.line_density()
        line = SkeletonLine("h", 0.25, 0.0, 1.0, closed=True)
        with pytest.raises(TubeTooThin, match="no room"):
            skeleton_adjust(omega, [line], bound=0.02, tube_width=0.0)

    def test_bound_must_be_positive(self):
        omega = self.line_density()
        line = SkeletonLine("h", 0.25, 0.0, 1.0, closed=True)
        with pytest.raises(ValueError, match="positive"):
            skeleton_adjust(omega, [line], bound=0.0)

    def test_closed_line_needs_periodic_axis(self):
        omega = Density.from_function(
            CH, BOX, lambda p: 1.0 + 0.1 * np.cos(4 * np.pi * p[:, 1]),
            shape=(65, 65),
        )
        line = SkeletonLine("v", 0.3, 0.0, 0.5, closed=True)
        with pytest.raises(ValueError, match="non-periodic"):
            skeleton_adjust(omega, [line], bound=0.05)

    def test_empty_skeleton_is_identity(self):
        omega = self.line_density()
        f = skeleton_adjust(omega, [], bound=0.02)
        assert f.report["passes"] == 0
        pts = RNG.uniform([0.0, 0.0], [1.0, 0.5], size=(100, 2))
        assert displacement(f, pts) == 0.0
