import numpy as np
import pytest

from convoylat.controller import Gains
from convoylat.stability import (BOUNDARY, MPH_TO_MPS, STABLE, UNSTABLE,
                                 CharPoly, GridMismatchError, GridSpec,
                                 SpeedProfile, assemble_A, char_coeffs,
                                 check_time_varying_speed, hurwitz,
                                 intersect_regions, routh_classify,
                                 stab_region)
from convoylat.vehicle_model import mkz_actuator, mkz_params

PARAMS = mkz_params()
ACT = mkz_actuator()
DESIGN_SPEEDS = [v * MPH_TO_MPS for v in (10, 20, 30, 40, 50, 60, 67)]


class TestCharCoeffs:
    def test_zero_gains_zero_tail(self):
        # A1 and A0 vanish with the gains: root of multiplicity 2 at s = 0
        poly = char_coeffs(PARAMS, ACT, Gains(ke=0.0, ktheta=0.0, komega=0.0),
                           30.0)
        assert poly.coeffs[6] == 0.0  # A0
        assert poly.coeffs[5] == 0.0  # A1
        assert np.sort(np.abs(poly.roots()))[1] < 1e-9

    def test_a0_single_term(self):
        poly = char_coeffs(PARAMS, ACT, Gains(), 30.0)
        want = PARAMS.c_f * PARAMS.c_r * (PARAMS.a + PARAMS.b) * 0.06
        assert poly.coeffs[6] == pytest.approx(want, rel=1e-12)

    def test_leading_coefficient(self):
        poly = char_coeffs(PARAMS, ACT, Gains(), 20.0)
        assert poly.coeffs[0] == pytest.approx(
            PARAMS.i_z * PARAMS.m / ACT.omega_n ** 2, rel=1e-12)

    def test_roots_match_state_matrix_eigenvalues(self):
        # master cross-check between the printed coefficients and the
        # assembled closed loop
        rng = np.random.default_rng(123)
        for _ in range(100):
            p = mkz_params()
            p.m *= rng.uniform(0.7, 1.3)
            p.i_z *= rng.uniform(0.7, 1.3)
            p.c_f *= rng.uniform(0.5, 1.5)
            p.c_r *= rng.uniform(0.5, 1.5)
            gains = Gains(ke=rng.uniform(0.0, 0.3), ktheta=rng.uniform(0.0, 2.0),
                          komega=rng.uniform(0.0, 0.3))
            v0 = rng.uniform(5.0, 35.0)
            poly = char_coeffs(p, ACT, gains, v0)
            roots = np.sort_complex(poly.roots())
            eigs = np.sort_complex(
                assemble_A(p, ACT, gains, 1.0 / v0).eigenvalues())
            np.testing.assert_allclose(roots, eigs, atol=1e-6)

    def test_speed_floor(self):
        with pytest.raises(ValueError):
            char_coeffs(PARAMS, ACT, Gains(), 0.2)


class TestHurwitz:
    def test_binomial_stable(self):
        coeffs = np.poly([-1.0] * 6)
        assert hurwitz(CharPoly(coeffs)) == STABLE

    def test_zero_a0_boundary(self):
        coeffs = np.poly([-1, -2, -3, -4, -5, 0.0])
        assert hurwitz(CharPoly(coeffs)) == BOUNDARY

    def test_unstable_root(self):
        coeffs = np.poly([-1, -2, -3, -4, -5, +0.5])
        assert hurwitz(CharPoly(coeffs)) == UNSTABLE

    def test_agrees_with_eigenvalue_classification(self):
        rng = np.random.default_rng(77)
        checked = 0
        for _ in range(1000):
            # random degree-6 polynomial via random root placement
            roots = []
            while len(roots) < 6:
                if len(roots) <= 4 and rng.random() < 0.5:
                    re = rng.uniform(-3.0, 1.0)
                    im = rng.uniform(0.1, 3.0)
                    roots += [complex(re, im), complex(re, -im)]
                else:
                    roots.append(complex(rng.uniform(-3.0, 1.0), 0.0))
            coeffs = np.real(np.poly(roots))
            max_re = max(r.real for r in roots)
            if abs(max_re) < 1e-3:
                continue  # too close to the boundary for a fair comparison
            label = hurwitz(CharPoly(coeffs))
            if label == BOUNDARY:
                continue  # tolerance-triggered; eigenvalues decide nothing
            want = STABLE if max_re < 0.0 else UNSTABLE
            assert label == want
            checked += 1
        assert checked > 700

    def test_never_stable_with_nonpositive_coefficient(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            coeffs = rng.uniform(0.1, 2.0, size=7)
            k = rng.integers(1, 7)
            coeffs[k] = -abs(coeffs[k]) if rng.random() < 0.5 else 0.0
            assert hurwitz(CharPoly(coeffs)) != STABLE

    def test_vectorized_shape(self):
        coeffs = np.stack([np.poly([-1.0] * 6),
                           np.poly([-1, -2, -3, -4, -5, 0.5])])
        codes = routh_classify(coeffs)
        assert codes.tolist() == [1, 0]


SMALL_GRID = GridSpec(ke=(0.0, 0.12, 13), ktheta=(0.0, 1.2, 13),
                      komega=(0.0, 0.16, 9))


class TestStabRegion:
    def test_default_gains_stable_at_30(self):
        region = stab_region(PARAMS, ACT, 30.0, SMALL_GRID)
        assert region.classify(Gains()) == STABLE

    def test_ke_zero_plane_boundary(self):
        region = stab_region(PARAMS, ACT, 30.0, SMALL_GRID)
        assert np.all(region.classes[0, :, :] != 1)
        assert region.analytic_boundary_ke == 0.0

    def test_negative_ke_unstable(self):
        grid = GridSpec(ke=(-0.05, -0.05, 1), ktheta=(0.0, 1.2, 7),
                        komega=(0.0, 0.16, 5))
        region = stab_region(PARAMS, ACT, 30.0, grid, mark_flips=False)
        assert np.all(region.classes != 1)
        # necessary condition: A0 < 0; eigenvalue oracle confirms
        eigs = assemble_A(PARAMS, ACT, Gains(ke=-0.05), 1.0 / 30.0).eigenvalues()
        assert eigs.real.max() > 0.0

    def test_intersection_identity_and_inclusion(self):
        regions = [stab_region(PARAMS, ACT, v, SMALL_GRID)
                   for v in DESIGN_SPEEDS[:3]]
        single = intersect_regions(regions[:1])
        assert np.array_equal(single.classes, regions[0].classes)
        inter = intersect_regions(regions)
        stable = inter.stable_mask()
        for r in regions:
            assert np.all(~stable | r.stable_mask())  # subset of each input

    def test_default_gains_in_intersection_over_design_speeds(self):
        regions = [stab_region(PARAMS, ACT, v, SMALL_GRID)
                   for v in DESIGN_SPEEDS]
        inter = intersect_regions(regions)
        assert inter.classify(Gains()) == STABLE

    def test_grid_mismatch(self):
        a = stab_region(PARAMS, ACT, 30.0, SMALL_GRID)
        b = stab_region(PARAMS, ACT, 20.0,
                        GridSpec(ke=(0.0, 0.1, 5), ktheta=(0.0, 1.0, 5),
                                 komega=(0.0, 0.1, 5)))
        with pytest.raises(GridMismatchError):
            intersect_regions([a, b])

    def test_refinement_keeps_interior_stable_points(self):
        coarse_spec = GridSpec(ke=(0.0, 0.12, 13), ktheta=(0.0, 1.2, 13),
                               komega=(0.0, 0.16, 9))
        fine_spec = GridSpec(ke=(0.0, 0.12, 25), ktheta=(0.0, 1.2, 25),
                             komega=(0.0, 0.16, 17))
        coarse = stab_region(PARAMS, ACT, 30.0, coarse_spec)
        fine = stab_region(PARAMS, ACT, 30.0, fine_spec)
        stable = coarse.stable_mask()
        interior = np.zeros_like(stable)
        interior[2:-2, 2:-2, 2:-2] = True
        for axis in range(3):
            for shift in (-2, -1, 1, 2):
                interior &= np.roll(stable, shift, axis=axis)
        idx = np.argwhere(stable & interior)
        assert len(idx) > 0
        for i, j, k in idx:
            assert fine.classes[2 * i, 2 * j, 2 * k] == 1


class TestClosedLoopMatrix:
    def test_affine_in_gamma(self):
        clm = assemble_A(PARAMS, ACT, Gains(), 1.0 / 30.0)
        g1, g2 = 1.0 / 25.0, 1.0 / 12.0
        mid = clm.at(0.5 * (g1 + g2))
        np.testing.assert_allclose(0.5 * (clm.at(g1) + clm.at(g2)), mid,
                                   atol=1e-15)
        np.testing.assert_allclose(clm.at(g1) - clm.at(0.0),
                                   g1 * clm.a_slope, atol=1e-15)

    def test_stable_at_30(self):
        clm = assemble_A(PARAMS, ACT, Gains(), 1.0 / 30.0)
        assert clm.eigenvalues().real.max() < 0.0

    def test_zero_ke_gives_zero_eigenvalue(self):
        clm = assemble_A(PARAMS, ACT, Gains(ke=0.0), 1.0 / 30.0)
        assert np.abs(clm.eigenvalues()).min() < 1e-8

    def test_gamma_domain(self):
        with pytest.raises(ValueError):
            assemble_A(PARAMS, ACT, Gains(), 5.0)


def test_coefficients_quadratic_in_inverse_speed():
    gammas = np.linspace(1.0 / 30.0, 1.0 / 5.0, 5)
    coeffs = np.array([char_coeffs(PARAMS, ACT, Gains(), 1.0 / g).coeffs
                       for g in gammas])
    for j in range(7):
        fit = np.polynomial.polynomial.polyfit(gammas, coeffs[:, j], 2)
        recon = np.polynomial.polynomial.polyval(gammas, fit)
        scale = max(np.abs(coeffs[:, j]).max(), 1.0)
        assert np.abs(recon - coeffs[:, j]).max() / scale < 1e-9


class TestSpeedProfile:
    def test_constant_profile(self):
        p = SpeedProfile(np.linspace(0, 10, 101), np.full(101, 30.0))
        assert p.accel_energy() == pytest.approx(0.0, abs=1e-20)

    def test_ramp_energy(self):
        t = np.linspace(0.0, 20.0, 2001)
        vx = np.clip(20.0 + 1.0 * t, None, 30.0)
        p = SpeedProfile(t, vx)
        assert p.accel_energy() == pytest.approx(10.0, abs=0.05)

    def test_validation(self):
        with pytest.raises(ValueError):
            SpeedProfile(np.array([0.0, 1.0, 3.0]), np.array([10.0, 10, 10]))
        with pytest.raises(ValueError):
            SpeedProfile(np.array([0.0, 1.0]), np.array([0.5, 10.0]))


class TestTimeVaryingSpeedCheck:
    def test_ramp_report(self):
        t = np.linspace(0.0, 20.0, 2001)
        vx = np.clip(20.0 + t, None, 30.0)
        profile = SpeedProfile(t, vx)
        grid = np.linspace(1.0 / 30.0, 1.0 / 4.47, 60)
        report = check_time_varying_speed(profile, PARAMS, ACT, Gains(),
                                    sigma=0.05, gamma_grid=grid)
        assert report.eig_margin_ok
        assert report.max_real_eig <= -0.05
        assert report.accel_energy == pytest.approx(10.0, abs=0.05)
        assert report.accel_energy_ok and report.bounded_ok
        assert report.all_ok

    def test_profile_outside_grid_rejected(self):
        profile = SpeedProfile(np.linspace(0, 5, 51), np.full(51, 3.0))
        with pytest.raises(ValueError):
            check_time_varying_speed(profile, PARAMS, ACT, Gains(),
                               gamma_grid=np.linspace(1 / 30, 1 / 10, 10))
