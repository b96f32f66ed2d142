"""Map algebra: evaluators, flows, inverses, area verification."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frag2d.errors import (
    BadCylinder,
    FlowDiverged,
    InverseNotFound,
    MapEvaluationError,
    ProfileInvalid,
    SupportNotCompact,
)
from frag2d.geometry_core import (
    Annulus,
    Band,
    DiskRegion,
    FlatTorus,
    GluedTorus,
    SamplingPlan,
    c0_norm,
    c0_norm_report,
)
from frag2d.maps import (
    AreaMap,
    Hamiltonian,
    KinkCircle,
    alexander_isotopy,
    band_shear,
    compose,
    dehn_twist,
    hamiltonian_flow,
    identity_map,
    invert,
    shear_psi_epsilon,
    verify_area,
)
from frag2d.profiles import PlateauBump, StepProfile

RNG = np.random.default_rng(20260818)


def random_points(n, lo=-0.4, hi=0.4, rng=RNG):
    return rng.uniform(lo, hi, size=(n, 2))


def radial_twist(chart, cx, cy, r0, strength, declared_factor=1.1):
    """Exact area-preserving rotation-by-profile inside a disk.

    The angular advance alpha(r) ramps smoothly down to zero at r0; in
    polar coordinates about the center the Jacobian is triangular, so the
    map preserves area exactly.  Declared support carries a margin so a
    boundary ring is exactly fixed.
    """
    prof = PlateauBump(-r0, r0, ramp=0.5 * r0)

    def alpha(r):
        return strength * prof.value(r)

    c = np.array([cx, cy])

    def make(sign):
        def ev(pts):
            d = pts - c
            r = np.hypot(d[:, 0], d[:, 1])
            a = sign * alpha(r)
            ca, sa = np.cos(a), np.sin(a)
            out = pts.copy()
            out[:, 0] = c[0] + ca * d[:, 0] - sa * d[:, 1]
            out[:, 1] = c[1] + sa * d[:, 0] + ca * d[:, 1]
            return out

        return ev

    return AreaMap(
        chart=chart,
        fwd=make(1.0),
        inv=make(-1.0),
        name=f"radial_twist({strength:g})",
        support=DiskRegion(cx, cy, declared_factor * r0, chart),
        kinks=(KinkCircle(cx, cy, r0), KinkCircle(cx, cy, 0.5 * r0)),
    )


# ---------------------------------------------------------------------------
# shears


class TestShear:
    def test_composition_law_exact(self):
        prof = StepProfile(-1.0, 1.0)
        a, b = 0.07, -0.031
        pa = shear_psi_epsilon(a, prof)
        pb = shear_psi_epsilon(b, prof)
        pab = shear_psi_epsilon(a + b, prof)
        pts = random_points(500, -0.9, 0.9)
        lhs = compose([pa, pb]).evaluate(pts)
        rhs = pab.evaluate(pts)
        assert np.max(np.abs(lhs - rhs)) < 1e-14

    @given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
    @settings(max_examples=30, deadline=None)
    def test_composition_law_property(self, a, b):
        prof = StepProfile(-1.0, 1.0)
        pts = np.array([[0.1, -0.3], [0.7, 0.55], [0.0, 0.0]])
        lhs = shear_psi_epsilon(b, prof).evaluate(pts)
        lhs = shear_psi_epsilon(a, prof).evaluate(lhs)
        rhs = shear_psi_epsilon(a + b, prof).evaluate(pts)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_norm_equals_eps_times_peak_slope(self):
        # cubic ramp over [-1, 1]: peak derivative 1.5 / 2 = 0.75 at y = 0
        m = shear_psi_epsilon(0.1)
        rep = c0_norm_report(m, plan=SamplingPlan(33, 129, mode="lattice"))
        assert abs(rep.value - 0.075) < 1e-12

    def test_inverse_roundtrip(self):
        m = shear_psi_epsilon(0.05)
        pts = random_points(200, -0.95, 0.95)
        assert np.max(np.abs(m.inverse(m.evaluate(pts)) - pts)) < 1e-14

    def test_profile_validation(self):
        with pytest.raises(ProfileInvalid):
            shear_psi_epsilon(0.1, StepProfile(-2.0, 0.5))
        with pytest.raises(ProfileInvalid):
            shear_psi_epsilon(0.1, StepProfile(0.5, 1.5))

    def test_support_is_ramp_band(self):
        prof = StepProfile(-0.25, 0.25)
        m = shear_psi_epsilon(0.1, prof)
        assert isinstance(m.support, Band)
        outside = np.array([[0.3, 0.5], [0.8, -0.7]])
        assert np.max(np.abs(m.evaluate(outside) - outside)) == 0.0


class TestVerifyArea:
    def test_exact_shear_det_residual(self):
        m = shear_psi_epsilon(0.1)
        rep = verify_area(m, n=64)
        assert rep.max_det_residual < 1e-10
        assert rep.max_cell_residual < 1e-9

    def test_exact_twist_det_residual(self):
        gt = GluedTorus(1.0, 4.0)
        m = dehn_twist(gt, 1, +1)
        rep = verify_area(m, n=64)
        assert rep.max_det_residual < 1e-10

    def test_composite_exact_det_residual(self):
        gt = GluedTorus(1.0, 4.0)
        m = compose([dehn_twist(gt, 1, +1), dehn_twist(gt, 3, -1)])
        rep = verify_area(m, n=64)
        assert rep.max_det_residual < 1e-9

    def test_non_preserving_map_is_flagged(self):
        ann = Annulus(1.0)
        bad = AreaMap(
            chart=ann,
            fwd=lambda p: np.column_stack([p[:, 0], 1.05 * p[:, 1]]),
            inv=lambda p: np.column_stack([p[:, 0], p[:, 1] / 1.05]),
            name="stretch",
        )
        rep = verify_area(bad, n=32)
        assert rep.max_det_residual > 0.04
        assert rep.max_cell_residual > 0.04

    def test_radial_twist_exact_measure(self):
        tor = FlatTorus()
        m = radial_twist(tor, 0.5, 0.5, 0.2, 0.8)
        rep = verify_area(m, n=64, cells=64)
        # smooth away from the declared kink rings, which are skipped
        assert rep.skipped > 0
        assert rep.max_det_residual < 2e-6
        # corner-quad transport is a first-order integral check; on this
        # strongly curved twist it only bounds gross mass errors, and the
        # bound tightens as the cell grid refines
        coarse = verify_area(m, n=8, cells=16).max_cell_residual
        assert rep.max_cell_residual < 0.1
        assert rep.max_cell_residual < 0.5 * coarse


# ---------------------------------------------------------------------------
# Dehn twists on the glued torus


class TestDehnTwist:
    def setup_method(self):
        self.gt = GluedTorus(1.0, 4.0)

    def test_bad_cylinder(self):
        with pytest.raises(BadCylinder):
            dehn_twist(self.gt, 2, +1)
        with pytest.raises(BadCylinder):
            dehn_twist(self.gt, 1, 0)

    def test_twist_untwist(self):
        t = dehn_twist(self.gt, 1, +1)
        pts = RNG.uniform(0, 1, size=(300, 2)) * np.array([1.0, self.gt.total_height])
        assert np.max(np.abs(t.inverse(t.evaluate(pts)) - pts)) < 1e-14

    def test_displacement_profile(self):
        t = dehn_twist(self.gt, 1, +1)
        lo, hi, _ = self.gt.blocks[0]
        below = np.array([[0.5, lo]])
        above = np.array([[0.5, hi + 0.1]])
        assert np.allclose(t.evaluate(below), below)
        moved = t.evaluate(above)
        assert abs(moved[0, 0] - above[0, 0] - 1.0) < 1e-14

    def test_seam_continuity_on_torus(self):
        t = dehn_twist(self.gt, 1, +1)
        L = self.gt.total_height
        a = t.evaluate(np.array([[0.5, L - 1e-9]]))[0]
        b = t.evaluate(np.array([[0.5, L + 1e-9]]))[0]
        dx = a[0] - (b[0] - 0.0)
        # displacements 1 and 0 agree modulo the x-period
        assert abs(abs(dx) - 1.0) < 1e-6 or abs(dx) < 1e-6


# ---------------------------------------------------------------------------
# Hamiltonian flows


def sinsin_hamiltonian(amp):
    two_pi = 2 * math.pi

    def val(t, pts):
        return amp * np.sin(two_pi * pts[:, 0]) * np.sin(two_pi * pts[:, 1])

    def grad(t, pts):
        sx = np.sin(two_pi * pts[:, 0])
        cx = np.cos(two_pi * pts[:, 0])
        sy = np.sin(two_pi * pts[:, 1])
        cy = np.cos(two_pi * pts[:, 1])
        return amp * two_pi * np.column_stack([cx * sy, sx * cy])

    return Hamiltonian(value=val, grad=grad)


class TestFlow:
    def test_steps_floor(self):
        with pytest.raises(ValueError):
            hamiltonian_flow(sinsin_hamiltonian(1e-3), FlatTorus(), steps=8)

    def test_sinsin_jacobian_residual(self):
        # implicit midpoint is symplectic, so the discrete time-one map is
        # area-preserving up to fixed-point and finite-difference error
        tor = FlatTorus()
        m = hamiltonian_flow(sinsin_hamiltonian(1e-3), tor, steps=1000)
        rep = verify_area(m, n=128)
        assert rep.max_det_residual < 1e-6

    def test_step_halving_order(self):
        tor = FlatTorus()
        H = sinsin_hamiltonian(0.05)
        pts = RNG.uniform(0, 1, size=(400, 2))
        images = {}
        for steps in (16, 32, 64):
            images[steps] = hamiltonian_flow(H, tor, steps=steps).evaluate(pts)
        d1 = np.max(np.abs(images[16] - images[32]))
        d2 = np.max(np.abs(images[32] - images[64]))
        order = math.log2(d1 / d2)
        assert order > 1.9
        assert order < 2.3

    def test_backward_flow_inverts(self):
        tor = FlatTorus()
        m = hamiltonian_flow(sinsin_hamiltonian(0.02), tor, steps=32)
        pts = RNG.uniform(0, 1, size=(300, 2))
        assert np.max(np.abs(m.inverse(m.evaluate(pts)) - pts)) < 1e-12

    def test_support_short_circuit(self):
        tor = FlatTorus()
        disk = DiskRegion(0.5, 0.5, 0.2, tor)
        prof = PlateauBump(-0.2, 0.2, ramp=0.08)

        def val(t, pts):
            d = np.hypot(pts[:, 0] - 0.5, pts[:, 1] - 0.5)
            return 0.01 * prof.value(d)

        H = Hamiltonian(value=val, support=disk)
        m = hamiltonian_flow(H, tor, steps=16)
        outside = np.array([[0.9, 0.9], [0.1, 0.5], [0.5, 0.95]])
        assert np.max(np.abs(m.evaluate(outside) - outside)) == 0.0
        inside = np.array([[0.65, 0.55]])  # on the ramp, where the field acts
        assert np.max(np.abs(m.evaluate(inside) - inside)) > 1e-5

    def test_flow_diverged_on_bad_field(self):
        tor = FlatTorus()

        def val(t, pts):
            return np.full(pts.shape[0], np.nan)

        with pytest.raises((FlowDiverged, MapEvaluationError)):
            m = hamiltonian_flow(Hamiltonian(value=val), tor, steps=16)
            m.evaluate(np.array([[0.5, 0.5]]))


# ---------------------------------------------------------------------------
# composition and inversion algebra


class TestAlgebra:
    def test_compose_order_rightmost_first(self):
        ann = Annulus(1.0)
        shift = AreaMap(
            chart=ann,
            fwd=lambda p: p + np.array([0.25, 0.0]),
            inv=lambda p: p - np.array([0.25, 0.0]),
            name="shift",
        )
        double = AreaMap(
            chart=ann,
            fwd=lambda p: np.column_stack([2 * p[:, 0], 0.5 * p[:, 1]]),
            inv=lambda p: np.column_stack([0.5 * p[:, 0], 2 * p[:, 1]]),
            name="squeeze",
        )
        pts = np.array([[0.1, 0.4]])
        # compose([double, shift]) applies shift first
        got = compose([double, shift]).evaluate(pts)
        want = double.evaluate(shift.evaluate(pts))
        assert np.allclose(got, want)
        assert abs(got[0, 0] - 0.7) < 1e-15

    def test_invert_compose_identity(self):
        prof = StepProfile(-0.5, 0.5, kind="quintic")
        f = shear_psi_epsilon(0.08, prof)
        g = hamiltonian_flow(sinsin_hamiltonian(0.01), Annulus(1.0), steps=16)
        fg = compose([f, g])
        fg_inv = invert(fg)
        alt = compose([invert(g), invert(f)])
        pts = random_points(1000, -0.45, 0.45)
        a = fg_inv.evaluate(pts)
        b = alt.evaluate(pts)
        assert np.max(np.abs(a - b)) < 1e-10
        assert np.max(np.abs(fg.evaluate(a) - pts)) < 1e-10

    def test_identity_map_norm_zero(self):
        ann = Annulus(1.0)
        assert c0_norm(identity_map(ann), ann) == 0.0

    def test_restricted_to_band(self):
        ann = Annulus(1.0)
        prof = StepProfile(-0.25, 0.25)
        m = shear_psi_epsilon(0.1, prof)
        r = m.restricted_to(Band(-0.3, 0.3, "y", ann))
        pts = np.array([[0.1, 0.0], [0.2, 0.8], [0.9, -0.9]])
        got = r.evaluate(pts)
        assert got[0, 0] != pts[0, 0]
        assert np.all(got[1:] == pts[1:])

    def test_newton_inverse_matches_analytic(self):
        ann = Annulus(1.0)
        base = shear_psi_epsilon(0.07)
        blind = AreaMap(chart=ann, fwd=base.fwd, inv=None, name="blind")
        pts = random_points(300, -0.8, 0.8)
        got = blind.inverse(pts)
        want = base.inverse(pts)
        assert np.max(np.abs(got - want)) < 1e-10

    def test_newton_failure_raises(self):
        ann = Annulus(1.0)
        squash = AreaMap(
            chart=ann,
            fwd=lambda p: np.column_stack([p[:, 0], 0.4 * np.tanh(p[:, 1])]),
            inv=None,
            name="squash",
        )
        with pytest.raises(InverseNotFound):
            squash.inverse(np.array([[0.0, 0.9]]))

    def test_evaluate_rejects_nonfinite(self):
        ann = Annulus(1.0)
        bad = AreaMap(chart=ann, fwd=lambda p: p * np.nan, name="nan")
        with pytest.raises(MapEvaluationError):
            bad.evaluate(np.array([[0.0, 0.0]]))

    def test_describe_tree(self):
        m = compose([shear_psi_epsilon(0.1), shear_psi_epsilon(-0.1)])
        d = m.describe()
        assert d["provenance"]["kind"] == "composite"
        assert len(d["children"]) == 2


# ---------------------------------------------------------------------------
# Alexander rescaling


class TestAlexander:
    def setup_method(self):
        self.tor = FlatTorus()
        self.psi = radial_twist(self.tor, 0.5, 0.5, 0.2, 1.2)
        self.disk = DiskRegion(0.5, 0.5, 0.25, self.tor)

    def test_s_one_is_psi(self):
        fam = alexander_isotopy(self.psi, 1.0, self.disk)
        pts = 0.5 + random_points(400, -0.24, 0.24)
        assert np.max(np.abs(fam.evaluate(pts) - self.psi.evaluate(pts))) < 1e-12

    def test_support_shrinks(self):
        fam = alexander_isotopy(self.psi, 0.4, self.disk)
        theta = np.linspace(0, 2 * math.pi, 64)
        ring = 0.5 + 0.12 * np.column_stack([np.cos(theta), np.sin(theta)])
        assert np.max(np.abs(fam.evaluate(ring) - ring)) == 0.0
        assert isinstance(fam.support, DiskRegion)
        assert abs(fam.support.r - 0.1) < 1e-15

    def test_norm_never_exceeds_base(self):
        base_norm = c0_norm(self.psi, self.tor, SamplingPlan(256, 256))
        worst = 0.0
        for s in (0.15, 0.3, 0.5, 0.75, 1.0):
            fam = alexander_isotopy(self.psi, s, self.disk)
            worst = max(worst, c0_norm(fam, self.tor, SamplingPlan(256, 256)))
        assert worst <= base_norm + 1e-9

    def test_continuity_in_s(self):
        pts = 0.5 + random_points(500, -0.2, 0.2)
        prev = None
        for s in np.linspace(0.2, 1.0, 17):
            cur = alexander_isotopy(self.psi, float(s), self.disk).evaluate(pts)
            if prev is not None:
                assert np.max(np.abs(cur - prev)) < 0.1
            prev = cur

    def test_scale_validation(self):
        with pytest.raises(ValueError):
            alexander_isotopy(self.psi, 0.0, self.disk)
        with pytest.raises(ValueError):
            alexander_isotopy(self.psi, 1.5, self.disk)

    def test_support_not_compact(self):
        tight = DiskRegion(0.5, 0.5, 0.15, self.tor)
        with pytest.raises(SupportNotCompact):
            alexander_isotopy(self.psi, 0.5, tight)

    def test_needs_disk_support(self):
        m = shear_psi_epsilon(0.1)
        with pytest.raises(SupportNotCompact):
            alexander_isotopy(m, 0.5)

    def test_wrapped_disk_on_torus(self):
        psi = radial_twist(self.tor, 0.02, 0.5, 0.15, 0.9)
        disk = DiskRegion(0.02, 0.5, 0.18, self.tor)
        fam = alexander_isotopy(psi, 0.6, disk)
        p = np.array([[0.97, 0.52]])  # wraps across x = 0 toward the center
        moved = fam.evaluate(p)
        assert np.max(np.abs(moved - p)) > 1e-6
        assert np.max(np.abs(fam.inverse(moved) - p)) < 1e-12
