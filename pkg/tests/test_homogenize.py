"""Boundary-data lift, auxiliary heat problem, correction terms and the
direct-vs-homogenized equivalence."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hydrostat.mesh import GridSpec
from hydrostat.fields import PhysParams, State, depth_average, norm_l2
from hydrostat.stepper import StepConfig
from hydrostat.homogenize import (BoundaryForcing, CompatibilityError,
                                  DirectForcing, HomogenizedForcing,
                                  LiftProfile, TstarSeries, a_tau, b_term,
                                  correction_terms, equivalence_run, f_tau,
                                  g_tau, lift, solve_Tstar, unlift)


def _grid(nx=12, ny=12, nz=8, Lx=1.0, Ly=1.0, h=1.0):
    return GridSpec(Lx=Lx, Ly=Ly, h=h, nx=nx, ny=ny, nz=nz)


def _window(x, L):
    return np.sin(np.pi * x / L) ** 2


def _compatible_forcing(grid, times, amp_tau=0.1, amp_ts=0.2):
    """Stress vanishing quadratically at the side walls (resolved by the
    wall extrapolation at nx >= 16); side temperature with a z profile that
    is flat at the basin edges."""
    K = len(times)
    wx = _window(grid.xc, grid.Lx).reshape(-1, 1)
    wy = _window(grid.yc, grid.Ly).reshape(1, -1)
    g = 1.0 + 0.5 * np.sin(2.0 * np.pi * np.asarray(times) / max(times[-1], 1e-9))
    tau = np.zeros((K, 2, grid.nx, grid.ny))
    tau[:, 0] = amp_tau * g[:, None, None] * (wx * wy)
    tau[:, 1] = 0.5 * amp_tau * g[:, None, None] * (wx * wy)
    cz = np.cos(np.pi * (grid.zc + grid.h) / grid.h)
    wyz = _window(grid.yc, grid.Ly).reshape(-1, 1) * cz
    wxz = _window(grid.xc, grid.Lx).reshape(-1, 1) * cz
    ts = {
        "x_lo": amp_ts * g[:, None, None] * wyz,
        "x_hi": 0.5 * amp_ts * g[:, None, None] * wyz,
        "y_lo": amp_ts * g[:, None, None] * wxz,
        "y_hi": 0.25 * amp_ts * g[:, None, None] * wxz,
    }
    return BoundaryForcing(np.asarray(times, dtype=float), tau, ts)


def _zero_forcing(grid, times):
    K = len(times)
    return BoundaryForcing(
        np.asarray(times, dtype=float),
        np.zeros((K, 2, grid.nx, grid.ny)),
        {"x_lo": np.zeros((K, grid.ny, grid.nz)),
         "x_hi": np.zeros((K, grid.ny, grid.nz)),
         "y_lo": np.zeros((K, grid.nx, grid.nz)),
         "y_hi": np.zeros((K, grid.nx, grid.nz))})


class TestLiftProfile:
    def test_center_values_have_zero_mean(self):
        grid = _grid(nz=9, h=0.7)
        prof = LiftProfile.build(grid)
        assert abs(prof.P_c.mean()) < 1e-16 * grid.h ** 2

    def test_interface_endpoints(self):
        grid = _grid(nz=8, h=0.7)
        prof = LiftProfile.build(grid)
        assert prof.P_i[0] == pytest.approx(-grid.h ** 2 / 6.0, rel=1e-15)
        assert prof.P_i[-1] == pytest.approx(grid.h ** 2 / 3.0, rel=1e-15)

    def test_center_differences_recover_the_slope(self):
        # (P[k+1] - P[k]) / dz equals z+h at the interface between them, so
        # the lifted field carries the prescribed surface derivative exactly
        grid = _grid(nz=11, h=0.6)
        prof = LiftProfile.build(grid)
        got = (prof.P_c[1:] - prof.P_c[:-1]) / grid.dz
        expect = grid.zi[1:-1] + grid.h
        assert_allclose(got, expect, rtol=0, atol=1e-13)

    def test_cubic_and_quartic_profiles(self):
        grid = _grid(nz=6, h=0.9)
        prof = LiftProfile.build(grid)
        s = grid.zc + grid.h
        assert_allclose(prof.Q_c, s ** 3 - grid.h ** 2 * s, rtol=1e-14)
        assert_allclose(prof.R_c, s ** 4 - grid.h ** 2 * s ** 2, rtol=1e-14)
        assert_allclose(prof.zph_c, s, rtol=1e-15)


class TestLift:
    def test_round_trip(self):
        grid = _grid()
        rng = np.random.default_rng(1)
        v = rng.standard_normal((2,) + grid.shape())
        tau = rng.standard_normal((2, grid.nx, grid.ny))
        back = unlift(lift(v, tau, 0.8, grid), tau, 0.8, grid)
        assert_allclose(back, v, rtol=0, atol=1e-15 * np.max(np.abs(v)))

    def test_preserves_depth_average(self):
        grid = _grid()
        rng = np.random.default_rng(2)
        v = rng.standard_normal((2,) + grid.shape())
        tau = rng.standard_normal((2, grid.nx, grid.ny))
        V = lift(v, tau, 1.0, grid)
        assert_allclose(depth_average(V, grid), depth_average(v, grid),
                        rtol=0, atol=1e-14 * np.max(np.abs(v)))

    def test_surface_derivative_of_lift(self):
        # the added profile has d/dz = (z+h), so interface differences of the
        # lift alone reproduce (alpha_v/h) tau (z_i + h) exactly
        grid = _grid()
        tau = np.ones((2, grid.nx, grid.ny))
        zero = np.zeros((2,) + grid.shape())
        V = lift(zero, tau, 0.5, grid)
        dc = (V[..., 1:] - V[..., :-1]) / grid.dz
        expect = 0.5 / grid.h * (grid.zi[1:-1] + grid.h)
        assert_allclose(dc, np.broadcast_to(expect, dc.shape), rtol=0, atol=1e-13)

    def test_zero_stress_is_identity(self):
        grid = _grid()
        rng = np.random.default_rng(3)
        v = rng.standard_normal((2,) + grid.shape())
        assert np.array_equal(lift(v, np.zeros((2, grid.nx, grid.ny)), 1.0, grid), v)


class TestBoundaryForcing:
    def test_needs_three_samples(self):
        grid = _grid()
        with pytest.raises(CompatibilityError, match="3 time samples"):
            _zero_forcing(grid, [0.0, 1.0])

    def test_needs_increasing_times(self):
        grid = _grid()
        with pytest.raises(CompatibilityError, match="increase"):
            _zero_forcing(grid, [0.0, 0.5, 0.5])

    def test_compatible_data_validates(self):
        grid = _grid(nx=16, ny=16)
        bf = _compatible_forcing(grid, [0.0, 0.5, 1.0])
        bf.validate(grid, PhysParams(alpha_T=0.5, alpha_v=1.0))

    def test_wall_stress_rejected(self):
        grid = _grid()
        bf = _zero_forcing(grid, [0.0, 0.5, 1.0])
        bf.tau += 1.0
        with pytest.raises(CompatibilityError, match="side walls"):
            bf.validate(grid, PhysParams(alpha_v=1.0))
        bf.validate(grid, PhysParams(alpha_v=0.0))  # checks keyed to alpha

    def test_edge_heating_rejected(self):
        grid = _grid()
        bf = _zero_forcing(grid, [0.0, 0.5, 1.0])
        for key in bf.ts:
            bf.ts[key] += np.arange(grid.nz)
        with pytest.raises(CompatibilityError, match="basin edges"):
            bf.validate(grid, PhysParams(alpha_T=0.5))
        bf.validate(grid, PhysParams(alpha_T=0.0))

    def test_linear_series_interpolation(self):
        grid = _grid(nx=4, ny=4, nz=3)
        times = np.array([0.0, 0.4, 1.0])
        base = np.ones((2, grid.nx, grid.ny))
        tau = np.stack([(1.0 + 2.0 * t) * base for t in times])
        ts = {k: np.zeros((3,) + ((grid.ny, grid.nz) if k[0] == "x" else (grid.nx, grid.nz)))
              for k in ("x_lo", "x_hi", "y_lo", "y_hi")}
        bf = BoundaryForcing(times, tau, ts)
        assert_allclose(bf.tau_at(0.7), (1.0 + 1.4) * base, rtol=1e-14)
        assert_allclose(bf.dtau_at(0.2), 2.0 * base, rtol=1e-13)
        # queries outside the sampled window clamp to the ends
        assert_allclose(bf.tau_at(-5.0), bf.tau_at(0.0), rtol=1e-15)
        assert_allclose(bf.tau_at(9.0), bf.tau_at(1.0), rtol=1e-15)

    def test_direct_forcing_exposes_data(self):
        grid = _grid(nx=16, ny=16)
        bf = _compatible_forcing(grid, [0.0, 0.5, 1.0])
        params = PhysParams(alpha_T=0.5, alpha_v=0.8)
        fc = DirectForcing(bf, params)
        assert_allclose(fc.top_flux(0.3), -0.8 * bf.tau_at(0.3), rtol=1e-14)
        faces = fc.ts_faces(0.3)
        assert faces["x"][0].shape == (grid.ny, grid.nz)
        assert faces["y"][1].shape == (grid.nx, grid.nz)


class TestSolveTstar:
    def test_zero_exchange_keeps_zero(self):
        grid = _grid(nx=6, ny=6, nz=4)
        bf = _compatible_forcing(grid, [0.0, 0.5, 1.0])
        out = solve_Tstar(bf, PhysParams(alpha_T=0.0), grid, 1.0, 8)
        assert np.all(out.fields == 0.0)
        assert len(out.times) == 9

    def test_zero_data_keeps_zero(self):
        grid = _grid(nx=6, ny=6, nz=4)
        bf = _zero_forcing(grid, [0.0, 0.5, 1.0])
        out = solve_Tstar(bf, PhysParams(alpha_T=0.7), grid, 1.0, 8)
        assert np.all(out.fields == 0.0)

    def test_constant_data_relaxes_to_that_constant(self):
        grid = GridSpec(Lx=1, Ly=1, h=0.8, nx=8, ny=8, nz=4)
        times = np.array([0.0, 1.0, 2.0])
        c = 1.3
        ts = {"x_lo": np.full((3, 8, 4), c), "x_hi": np.full((3, 8, 4), c),
              "y_lo": np.full((3, 8, 4), c), "y_hi": np.full((3, 8, 4), c)}
        bf = BoundaryForcing(times, np.zeros((3, 2, 8, 8)), ts)
        out = solve_Tstar(bf, PhysParams(alpha_T=2.0), grid, 2.0, 40)
        errs = [norm_l2(out.fields[j] - c, grid) for j in range(41)]
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 0.02 * errs[0]

    def test_series_time_interpolation(self):
        times = np.linspace(0.0, 1.0, 5)
        fields = np.stack([t * np.ones((2, 2, 2)) for t in times])
        ser = TstarSeries(times, fields)
        assert_allclose(ser.at(0.3), 0.3 * np.ones((2, 2, 2)), rtol=1e-14)
        assert_allclose(ser.ddt_at(0.6), np.ones((2, 2, 2)), rtol=1e-13)


class TestCorrectionTerms:
    def test_all_vanish_without_forcing(self):
        grid = _grid(nx=8, ny=8, nz=5)
        rng = np.random.default_rng(4)
        V = rng.standard_normal((2,) + grid.shape())
        Tcal = rng.standard_normal(grid.shape())
        zero2 = np.zeros((2, grid.nx, grid.ny))
        zero3 = np.zeros(grid.shape())
        terms = correction_terms(V, Tcal, zero2, zero2, zero3, zero3,
                                 PhysParams(alpha_T=0.5, alpha_v=1.0, f=1.0), grid)
        for name, arr in terms.items():
            assert np.all(arr == 0.0), name

    def test_momentum_source_interior_closed_form(self):
        # constant stress, constant T*: away from the side walls only the
        # rotation profile and the vertical-viscosity column survive
        grid = _grid(nx=12, ny=12, nz=6)
        prof = LiftProfile.build(grid)
        params = PhysParams(Re1=3.0, Re2=2.0, f=2.0, alpha_v=0.8)
        tau = np.stack([np.full((grid.nx, grid.ny), 0.4),
                        np.zeros((grid.nx, grid.ny))])
        dtau = np.zeros_like(tau)
        Ts = np.zeros(grid.shape())
        out = f_tau(tau, dtau, Ts, params, grid, prof)
        sl = np.s_[3:-3, 3:-3, :]
        av, h = params.alpha_v, grid.h
        expect0 = -(av / (params.Re2 * h)) * 0.4 * np.ones(grid.nz)
        expect1 = (av / h) * prof.P_c * params.f * 0.4
        assert_allclose(out[0][sl], np.broadcast_to(expect0, out[0][sl].shape),
                        rtol=0, atol=1e-14)
        assert_allclose(out[1][sl], np.broadcast_to(expect1, out[1][sl].shape),
                        rtol=0, atol=1e-14)

    def test_temperature_source_needs_tstar(self):
        grid = _grid(nx=8, ny=8, nz=5)
        prof = LiftProfile.build(grid)
        rng = np.random.default_rng(5)
        tau = rng.standard_normal((2, grid.nx, grid.ny))
        out = g_tau(tau, np.zeros(grid.shape()), np.zeros(grid.shape()),
                    PhysParams(alpha_T=0.5, alpha_v=1.0, eps=0.01), grid, prof)
        assert np.all(out == 0.0)

    def test_transport_corrections_linear_in_their_fields(self):
        grid = _grid(nx=8, ny=8, nz=5)
        prof = LiftProfile.build(grid)
        params = PhysParams(alpha_T=0.3, alpha_v=0.9)
        rng = np.random.default_rng(6)
        V = rng.standard_normal((2,) + grid.shape())
        tau = rng.standard_normal((2, grid.nx, grid.ny))
        a1 = a_tau(V, tau, params, grid, prof)
        a2 = a_tau(2.0 * V, tau, params, grid, prof)
        assert_allclose(a2, 2.0 * a1, rtol=1e-12)
        Tcal = rng.standard_normal(grid.shape())
        Ts = rng.standard_normal(grid.shape())
        b1 = b_term(V, Tcal, tau, Ts, params, grid, prof)
        b2 = b_term(V, 3.0 * Tcal, tau, 3.0 * Ts, params, grid, prof)
        b3 = b_term(V, np.zeros_like(Tcal), tau, np.zeros_like(Ts), params, grid, prof)
        assert_allclose(b2, 3.0 * b1, rtol=1e-11, atol=1e-13)
        assert np.all(b3 == 0.0)


class TestEquivalence:
    def test_zero_forcing_branches_are_identical(self):
        grid = _grid(nx=8, ny=8, nz=4)
        rng = np.random.default_rng(7)
        v0 = 0.1 * rng.standard_normal((2,) + grid.shape())
        T0 = 0.1 * rng.standard_normal(grid.shape())
        bf = _zero_forcing(grid, [0.0, 0.05, 0.1])
        params = PhysParams(Re1=5.0, Re2=5.0, R_T=5.0, f=1.0,
                            alpha_T=0.5, alpha_v=1.0)
        out = equivalence_run(v0, T0, bf, params, grid,
                              StepConfig(dt_max=5e-3), 0.02, n_star=8)
        assert out["rel_v"] == 0.0
        assert out["rel_T"] == 0.0

    def test_forced_branches_agree_to_discretization(self):
        grid = _grid(nx=16, ny=16, nz=8)
        rng = np.random.default_rng(8)
        v0 = 0.05 * rng.standard_normal((2,) + grid.shape())
        T0 = 0.05 * rng.standard_normal(grid.shape())
        times = np.linspace(0.0, 0.06, 4)
        bf = _compatible_forcing(grid, times, amp_tau=0.05, amp_ts=0.1)
        params = PhysParams(Re1=5.0, Re2=5.0, R_T=5.0, f=1.0,
                            alpha_T=0.5, alpha_v=1.0)
        out = equivalence_run(v0, T0, bf, params, grid,
                              StepConfig(dt_max=2e-3), 0.06, n_star=60)
        assert out["rel_v"] < 0.08
        assert out["rel_T"] < 0.08
        assert out["state_direct"].t == pytest.approx(0.06)
        assert out["state_homogenized"].t == pytest.approx(0.06)

    def test_incompatible_forcing_refused(self):
        grid = _grid(nx=8, ny=8, nz=4)
        bf = _zero_forcing(grid, [0.0, 0.5, 1.0])
        bf.tau += 1.0
        with pytest.raises(CompatibilityError):
            equivalence_run(np.zeros((2,) + grid.shape()), np.zeros(grid.shape()),
                            bf, PhysParams(alpha_v=1.0), grid,
                            StepConfig(dt_max=1e-3), 0.01)

    def test_homogenized_sources_vanish_without_forcing(self):
        grid = _grid(nx=6, ny=6, nz=4)
        bf = _zero_forcing(grid, [0.0, 0.5, 1.0])
        params = PhysParams(alpha_T=0.4, alpha_v=1.0)
        tstar = solve_Tstar(bf, params, grid, 1.0, 4)
        fc = HomogenizedForcing(bf, tstar, params, grid)
        rng = np.random.default_rng(9)
        st = State.zeros(grid)
        st.v = rng.standard_normal((2,) + grid.shape())
        st.T = rng.standard_normal(grid.shape())
        sv, sT = fc.sources(st, grid, params)
        assert np.all(sv == 0.0)
        assert np.all(sT == 0.0)
