"""Trajectory, gauge profiles, quadrature, normalizations, and the coupling
matrices against independent quadrature oracles (scipy.integrate.quad)."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import fixed_quad, quad
from scipy.special import spherical_jn

from casimir_sphere.cavity import (
    GaugeProfile,
    Trajectory,
    builtin_gauge,
    coupling_dirichlet,
    coupling_neumann,
    export_couplings_csv,
    mode_normalization,
    panel_quad,
    trajectory_eval,
)
from casimir_sphere.errors import DomainError, InvariantError
from casimir_sphere.specfun import default_table

NEUMANN_NORM_1_1 = 4.259255392079808148868123262502906660032  # radial-norm oracle


# ----------------------------------------------------------------------
# independent mode functions for the quadrature oracles (scipy only)
# ----------------------------------------------------------------------

def _dirichlet_mode(ell, z):
    """Radial mode xi -> j_l(z xi) with the signed 1/j_l'(z) normalization."""
    cn = 1.0 / spherical_jn(ell, z, derivative=True)
    return lambda xi: math.sqrt(2.0) * cn * spherical_jn(ell, z * xi)


def _neumann_mode(ell, kap):
    ll1 = ell * (ell + 1)
    cn = 1.0 / (spherical_jn(ell, kap) * math.sqrt(1.0 - ll1 / kap**2))
    return lambda xi: math.sqrt(2.0) * cn * spherical_jn(ell, kap * xi)


def overlap_quadrature(bc, ell, zp, zn, mode_p, mode_n):
    """a <d_a psi_p, psi_n> at a = 1 by adaptive quadrature (defining integral)."""
    def d_a_mode(xi):
        # d/da [a^{-3/2} u(z r / a)] at a=1, xi = r
        h = 1e-6
        up = (1 + h) ** -1.5 * mode_p(xi / (1 + h))
        dn = (1 - h) ** -1.5 * mode_p(xi / (1 - h))
        return (up - dn) / (2 * h)

    val, err = quad(lambda xi: xi * xi * d_a_mode(xi) * mode_n(xi), 0.0, 1.0,
                    epsabs=1e-11, epsrel=1e-11, limit=400)
    return val


class TestTrajectory:
    def test_static_outside_motion(self):
        traj = Trajectory.pure_sine(2.0, 0.01, 3.0, 10.0)
        assert trajectory_eval(traj, -1.0) == (2.0, 0.0, 0.0, 0.0)
        a, ad, lam, lamd = trajectory_eval(traj, traj.t_f + 5.0)
        assert (a, ad, lam, lamd) == (2.0, 0.0, 0.0, 0.0)

    def test_pure_sine_initial_velocity(self):
        a0, eps, Om = 1.0, 0.01, 5.0
        traj = Trajectory.pure_sine(a0, eps, Om, 20.0)
        _, ad, _, _ = trajectory_eval(traj, 1e-12)
        assert ad == pytest.approx(eps * a0 * Om, rel=1e-6)

    def test_snapping_to_whole_periods(self):
        Om = 3.7
        traj = Trajectory.pure_sine(1.0, 0.01, Om, 10.0)
        periods = traj.t_f / (2 * math.pi / Om)
        assert periods == pytest.approx(round(periods), abs=1e-12)
        a, ad, _, _ = traj.kinematics(traj.t_f + 1e-15)
        assert a == 1.0 and ad == 0.0

    def test_windowed_smooth_start(self):
        traj = Trajectory.windowed_sine(1.0, 0.01, 4.0, 30.0, 2)
        a, ad, add, _ = traj.kinematics(1e-13)
        assert ad == pytest.approx(0.0, abs=1e-12)
        assert add == pytest.approx(0.0, abs=1e-10)

    def test_windowed_preserves_drive_integral(self):
        # time integral of the window equals the requested flat-top duration
        Om = 4.0
        flat = 30 * 2 * math.pi / Om
        traj = Trajectory.windowed_sine(1.0, 0.01, Om, flat, 3)
        ts = np.linspace(0, traj.t_f, 200001)
        w = traj._window(ts[(ts > 0) & (ts < traj.t_f)])[0]
        integral = np.trapezoid(w, dx=ts[1] - ts[0])
        assert integral == pytest.approx(flat, rel=1e-6)

    def test_large_amplitude_warns(self):
        with pytest.warns(UserWarning):
            Trajectory.pure_sine(1.0, 0.2, 1.0, 10.0)

    @settings(max_examples=40, deadline=None)
    @given(t=st.floats(0.01, 0.95))
    def test_kinematics_consistent_with_finite_differences(self, t):
        traj = Trajectory.windowed_sine(1.0, 0.02, 7.0, 4.0, 1)
        tt = t * traj.t_f
        h = 1e-6
        a_m = traj.kinematics(tt - h)[0]
        a_p = traj.kinematics(tt + h)[0]
        _, ad, add, _ = traj.kinematics(tt)
        assert ad == pytest.approx((a_p - a_m) / (2 * h), abs=1e-7)
        assert add == pytest.approx(
            (a_p - 2 * traj.kinematics(tt)[0] + a_m) / h**2, abs=2e-3)


class TestGauge:
    def test_builtin_endpoints(self):
        for name in ("parabola", "cubic"):
            v = builtin_gauge(name)
            assert abs(v.value(1.0)) <= 1e-10
            assert abs(v.deriv(1.0) + 1.0) <= 1e-10

    def test_user_profile_numeric_derivatives(self):
        # no analytic derivatives supplied: finite differences kick in
        g = GaugeProfile("user", v=lambda x: 0.5 * (1 - x * x))
        assert g.deriv(0.5) == pytest.approx(-0.5, abs=1e-9)
        assert g.deriv2(0.5) == pytest.approx(-1.0, abs=1e-7)

    def test_bad_profile_rejected(self):
        with pytest.raises(InvariantError):
            GaugeProfile("bad", v=lambda x: 1.0 - x * x)  # v'(1) = -2

    def test_unknown_name(self):
        with pytest.raises(DomainError):
            builtin_gauge("linear")


class TestPanelQuad:
    def test_oscillatory_against_scipy(self):
        f = lambda x: np.cos(37.0 * x) * x * x
        ref = quad(lambda x: math.cos(37.0 * x) * x * x, 0, 1, epsabs=1e-13)[0]
        assert panel_quad(f, 0, 1, osc_scale=37.0, tol=1e-12) == pytest.approx(ref, abs=1e-11)

    def test_smooth_polynomial_exact(self):
        assert panel_quad(lambda x: x**5, 0, 1, tol=1e-13) == pytest.approx(1 / 6, abs=1e-13)


class TestDirichletCoupling:
    def test_l0_worked_entry(self):
        # j_{0k} = k pi substituted into the closed form: g_{12} = -4/3
        cs = coupling_dirichlet(0, 4)
        assert cs.g[0, 1] == pytest.approx(-4.0 / 3.0, rel=1e-14)

    def test_antisymmetry_zero_diagonal(self):
        cs = coupling_dirichlet(2, 7)
        assert np.all(np.diag(cs.g) == 0.0)
        assert np.max(np.abs(cs.g + cs.g.T)) == 0.0

    def test_quadrature_oracle_l1(self):
        # the closed form as stored equals the defining mode-derivative overlap,
        # with the derivative acting on the column (projected-row) index
        ell, P = 1, 6
        cs = coupling_dirichlet(ell, P)
        tab = default_table()
        z = tab.zeros("dirichlet", ell, P)
        for p in range(P):
            for n in range(P):
                if p == n:
                    continue
                ov = overlap_quadrature(
                    "dirichlet", ell, z[n], z[p],
                    _dirichlet_mode(ell, z[n]), _dirichlet_mode(ell, z[p]))
                assert abs(ov - cs.g[p, n]) <= 1e-8


class TestNeumannCoupling:
    def test_l0_diagonal_is_one(self):
        cs = coupling_neumann(0, 4)
        assert np.allclose(np.diag(cs.g), 1.0, atol=1e-15)

    def test_offdiagonal_quadrature_oracle_l1(self):
        # stored closed form = half the mode-derivative overlap off the diagonal,
        # with the derivative acting on the row index
        ell, P = 1, 5
        cs = coupling_neumann(ell, P)
        tab = default_table()
        kap = tab.zeros("neumann", ell, P)
        for p in range(P):
            for n in range(P):
                if p == n:
                    continue
                ov = overlap_quadrature(
                    "neumann", ell, kap[p], kap[n],
                    _neumann_mode(ell, kap[p]), _neumann_mode(ell, kap[n]))
                assert abs(0.5 * ov - cs.g[p, n]) <= 1e-8

    def test_diagonal_closed_form_and_norm_integral(self):
        ell, P = 1, 5
        cs = coupling_neumann(ell, P)
        tab = default_table()
        kap = tab.zeros("neumann", ell, P)
        ll1 = ell * (ell + 1)
        for p in range(P):
            assert cs.g[p, p] == pytest.approx(kap[p] ** 2 / (kap[p] ** 2 - ll1), abs=1e-12)
            # diagonal = boundary intensity over the radial norm integral
            nrm = quad(lambda xi: xi * xi * spherical_jn(ell, kap[p] * xi) ** 2,
                       0, 1, epsabs=1e-13, limit=300)[0]
            assert cs.g[p, p] == pytest.approx(
                spherical_jn(ell, kap[p]) ** 2 / (2 * nrm), abs=1e-8)

    def test_s_step_halving_oracle(self):
        # independent fixed-order integrator at two resolutions
        ell, P = 1, 4
        cs = coupling_neumann(ell, P)
        tab = default_table()
        kap = tab.zeros("neumann", ell, P)
        gauge = builtin_gauge("parabola")
        for (p, n) in ((0, 1), (1, 3), (2, 2)):
            mp, mn = _neumann_mode(ell, kap[p]), _neumann_mode(ell, kap[n])
            f = lambda xi: xi * xi * gauge.value(xi) * np.vectorize(mp)(xi) * np.vectorize(mn)(xi)
            coarse = sum(fixed_quad(f, i / 8, (i + 1) / 8, n=24)[0] for i in range(8))
            fine = sum(fixed_quad(f, i / 16, (i + 1) / 16, n=24)[0] for i in range(16))
            assert abs(fine - coarse) < 1e-9
            assert abs(cs.s[p, n] - fine) <= 1e-9

    def test_entry_decay_with_band_distance(self):
        cs = coupling_neumann(1, 10)
        for p in range(4):
            assert abs(cs.s[p, p + 5]) < abs(cs.s[p, p + 1])
            assert abs(cs.eta[p, p + 5]) < abs(cs.eta[p, p + 1])

    def test_gauge_identity_for_growth_rate(self):
        # eta_pp + kappa^2 s_pp = -2 kappa^2/(kappa^2 - l(l+1)) for any valid gauge
        for gname in ("parabola", "cubic"):
            cs = coupling_neumann(1, 3, builtin_gauge(gname))
            kap = default_table().zeros("neumann", 1, 3)
            for p in range(3):
                got = cs.eta[p, p] + kap[p] ** 2 * cs.s[p, p]
                want = -2 * kap[p] ** 2 / (kap[p] ** 2 - 2.0)
                assert got == pytest.approx(want, rel=1e-9)


class TestNormalization:
    def test_dirichlet_l0_analytic(self):
        # 1/|j0'(pi)| * sqrt(2) = sqrt(2) * pi
        assert mode_normalization("TE", 0, 1, 1.0) == pytest.approx(
            math.sqrt(2.0) * math.pi, rel=1e-12)

    def test_radius_scaling(self):
        c1 = mode_normalization("TE", 1, 2, 1.0)
        c2 = mode_normalization("TE", 1, 2, 2.0)
        assert c2 == pytest.approx(c1 * 2.0 ** -1.5, rel=1e-13)

    def test_neumann_oracle_value(self):
        assert mode_normalization("TM", 1, 1, 1.0) == pytest.approx(
            NEUMANN_NORM_1_1, rel=1e-12)

    @pytest.mark.parametrize("bc,ell,k", [("TE", 1, 1), ("TE", 2, 3), ("TM", 1, 1), ("TM", 2, 2)])
    def test_norm_integral_is_one(self, bc, ell, k):
        a = 1.3
        C = mode_normalization(bc, ell, k, a)
        tab = default_table()
        z = tab.dirichlet(ell, k) if bc == "TE" else tab.neumann(ell, k)
        val = quad(lambda r: r * r * (C * spherical_jn(ell, z * r / a)) ** 2,
                   0, a, epsabs=1e-12, limit=300)[0]
        assert val == pytest.approx(1.0, abs=1e-10)


def test_csv_export_format():
    cs = coupling_neumann(1, 2)
    buf = io.StringIO()
    export_couplings_csv(cs, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "bc,ell,P,matrix,p,n,value"
    assert lines[1].startswith("neumann,1,2,g,1,1,")
    # g, s, eta blocks: 3 * P^2 rows
    assert len(lines) == 1 + 3 * 4
