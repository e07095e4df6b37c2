"""Boundary-forcing homogenization: lift the wind stress into the interior
and absorb side heating into an auxiliary heat problem.

With P(z) = (z+h)^2/2 - h^2/6 (depth mean zero) the change of variables

    V = v + (alpha_v/h) P(z) tau(x,y,t),      Tcal = T - T*

turns the surface-flux condition d/dz v = -alpha_v tau and the side
condition d/dn T = alpha_T (T_s - T) into homogeneous ones, at the price of
interior correction terms a_tau(V), b(V,Tcal) on the left and source fields
F_tau, G_tau on the right. T* solves the plain heat equation with the
original side data and zero initial state. The equivalence of the direct
and homogenized runs (up to discretization error) is a verification target,
not an assumption.

Cell-center profile values carry the analytic P with its discrete mean
removed, so lifting never perturbs the depth average; interface values stay
analytic (P(0) = h^2/3 at the surface).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import (DIRICHLET0, GridSpec, check_finite, ddx, ddy, dz_interfaces,
                   dzz_centers, interface_to_center, laplacian_h, robin,
                   vertical_cumint)
from .fields import PhysParams, State, norm_l2
from .dynamics import Forcing, baroclinic_grad, temperature_bc


class CompatibilityError(ValueError):
    """Forcing data violates the side/edge compatibility requirements."""


@dataclass(frozen=True)
class LiftProfile:
    """Precomputed vertical profiles of the lifting transform."""

    P_c: np.ndarray        # (nz,), mean-removed quadratic at centers
    P_i: np.ndarray        # (nz+1,), analytic quadratic at interfaces
    Q_c: np.ndarray        # (nz,), (z+h)^3 - h^2 (z+h)
    R_c: np.ndarray        # (nz,), (z+h)^4 - h^2 (z+h)^2
    zph_c: np.ndarray      # (nz,), z+h at centers (the d/dz of P)

    @classmethod
    def build(cls, grid: GridSpec) -> "LiftProfile":
        h = grid.h
        s_c = grid.zc + h
        s_i = grid.zi + h
        P_c = 0.5 * s_c ** 2 - h ** 2 / 6.0
        P_c = P_c - P_c.mean()
        return cls(P_c=P_c,
                   P_i=0.5 * s_i ** 2 - h ** 2 / 6.0,
                   Q_c=s_c ** 3 - h ** 2 * s_c,
                   R_c=s_c ** 4 - h ** 2 * s_c ** 2,
                   zph_c=s_c)


def lift(v: np.ndarray, tau: np.ndarray, alpha_v: float, grid: GridSpec,
         prof: LiftProfile | None = None) -> np.ndarray:
    """V = v + (alpha_v/h) P(z) tau; preserves the depth average exactly."""
    check_finite(v, "lift v")
    if prof is None:
        prof = LiftProfile.build(grid)
    return v + (alpha_v / grid.h) * tau[..., None] * prof.P_c


def unlift(V: np.ndarray, tau: np.ndarray, alpha_v: float, grid: GridSpec,
           prof: LiftProfile | None = None) -> np.ndarray:
    """Exact inverse of lift on the same profile."""
    check_finite(V, "unlift V")
    if prof is None:
        prof = LiftProfile.build(grid)
    return V - (alpha_v / grid.h) * tau[..., None] * prof.P_c


def _extrap_face(a0: np.ndarray, a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    """Quadratic extrapolation from the first three cell layers to the wall."""
    return 1.875 * a0 - 1.25 * a1 + 0.375 * a2


@dataclass
class BoundaryForcing:
    """Time samples of the wind stress and side temperature.

    tau: (K, 2, nx, ny) at cell centers; ts: dict of wall-face arrays
    'x_lo','x_hi' -> (K, ny, nz) and 'y_lo','y_hi' -> (K, nx, nz). At least
    three samples so d/dt is defined by centered differences.
    """

    times: np.ndarray
    tau: np.ndarray
    ts: dict

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) < 3:
            raise CompatibilityError("forcing needs at least 3 time samples for d/dt")
        if np.any(np.diff(self.times) <= 0):
            raise CompatibilityError("forcing sample times must increase")
        self._dtau = _series_derivative(self.times, self.tau)

    def validate(self, grid: GridSpec, params: PhysParams) -> None:
        """Side/edge compatibility: tau vanishes on the wall when alpha_v > 0,
        d/dz T_s vanishes at the top and bottom edges when alpha_T > 0."""
        if params.alpha_v > 0.0:
            scale = float(np.abs(self.tau).max()) + 1e-300
            w = [
                _extrap_face(self.tau[:, :, 0], self.tau[:, :, 1], self.tau[:, :, 2]),
                _extrap_face(self.tau[:, :, -1], self.tau[:, :, -2], self.tau[:, :, -3]),
                _extrap_face(self.tau[:, :, :, 0], self.tau[:, :, :, 1], self.tau[:, :, :, 2]),
                _extrap_face(self.tau[:, :, :, -1], self.tau[:, :, :, -2], self.tau[:, :, :, -3]),
            ]
            worst = max(float(np.abs(x).max()) for x in w)
            if worst > 0.01 * scale:
                raise CompatibilityError(
                    f"tau does not vanish on the side walls (|tau_wall| ~ {worst:.3e})")
        if params.alpha_T > 0.0:
            scale = max(float(np.abs(f).max()) for f in self.ts.values()) + 1e-300
            dz = grid.dz
            worst = 0.0
            for f in self.ts.values():
                lo = (-2.0 * f[..., 0] + 3.0 * f[..., 1] - f[..., 2]) / dz
                hi = (2.0 * f[..., -1] - 3.0 * f[..., -2] + f[..., -3]) / dz
                worst = max(worst, float(np.abs(lo).max()), float(np.abs(hi).max()))
            if worst > 0.25 * scale / grid.h:
                raise CompatibilityError(
                    f"d/dz T_s does not vanish at the basin edges (~ {worst:.3e})")

    def tau_at(self, t: float) -> np.ndarray:
        return _interp_series(self.times, self.tau, t)

    def dtau_at(self, t: float) -> np.ndarray:
        return _interp_series(self.times, self._dtau, t)

    def ts_at(self, t: float) -> dict:
        return {
            "x": (_interp_series(self.times, self.ts["x_lo"], t),
                  _interp_series(self.times, self.ts["x_hi"], t)),
            "y": (_interp_series(self.times, self.ts["y_lo"], t),
                  _interp_series(self.times, self.ts["y_hi"], t)),
        }


def _interp_series(times: np.ndarray, arr: np.ndarray, t: float) -> np.ndarray:
    t = float(np.clip(t, times[0], times[-1]))
    j = int(np.searchsorted(times, t, side="right") - 1)
    j = min(max(j, 0), len(times) - 2)
    w = (t - times[j]) / (times[j + 1] - times[j])
    return (1.0 - w) * arr[j] + w * arr[j + 1]


def _series_derivative(times: np.ndarray, arr: np.ndarray) -> np.ndarray:
    """Centered differences at interior samples, one-sided at the ends."""
    out = np.empty_like(arr)
    t = times.reshape((-1,) + (1,) * (arr.ndim - 1))
    out[1:-1] = (arr[2:] - arr[:-2]) / (t[2:] - t[:-2])
    out[0] = (arr[1] - arr[0]) / (t[1] - t[0])
    out[-1] = (arr[-1] - arr[-2]) / (t[-1] - t[-2])
    return out


class DirectForcing(Forcing):
    """Branch A: data enters through the boundary closures."""

    def __init__(self, bf: BoundaryForcing, params: PhysParams):
        self.bf = bf
        self.alpha_v = params.alpha_v

    def ts_faces(self, t: float):
        return self.bf.ts_at(t)

    def top_flux(self, t: float):
        return -self.alpha_v * self.bf.tau_at(t)


@dataclass
class TstarSeries:
    """Auxiliary heat-problem snapshots on a uniform timebase."""

    times: np.ndarray
    fields: np.ndarray    # (K, nx, ny, nz)

    def at(self, t: float) -> np.ndarray:
        return _interp_series(self.times, self.fields, t)

    def ddt_at(self, t: float) -> np.ndarray:
        if not hasattr(self, "_deriv"):
            self._deriv = _series_derivative(self.times, self.fields)
        return _interp_series(self.times, self._deriv, t)


def _robin_rhs_lift(ts_faces: dict, alpha: float, grid: GridSpec) -> np.ndarray:
    """Inhomogeneous part of the robin ghosts, as a volume source for the
    Laplacian: ghost = c*interior + r*data adds r*data/d^2 at wall cells."""
    out = np.zeros(grid.shape())
    rx = 2.0 * alpha * grid.dx / (2.0 + alpha * grid.dx)
    ry = 2.0 * alpha * grid.dy / (2.0 + alpha * grid.dy)
    lo_x, hi_x = ts_faces["x"]
    lo_y, hi_y = ts_faces["y"]
    out[0] += rx * lo_x / grid.dx ** 2
    out[-1] += rx * hi_x / grid.dx ** 2
    out[:, 0] += ry * lo_y / grid.dy ** 2
    out[:, -1] += ry * hi_y / grid.dy ** 2
    return out


def solve_Tstar(bf: BoundaryForcing, params: PhysParams, grid: GridSpec,
                t_end: float, n_steps: int, tol: float = 1e-10) -> TstarSeries:
    """Integrate dT*/dt = Laplacian T* (unit coefficients, full 3D) with the
    side data, zero initial state, by implicit Euler + CG."""
    times = np.linspace(0.0, t_end, n_steps + 1)
    fields = np.zeros((n_steps + 1,) + grid.shape())
    if params.alpha_T == 0.0:
        return TstarSeries(times, fields)    # no data path into the domain
    bc = robin(params.alpha_T)
    dt = t_end / n_steps

    def apply_A(f):
        return f - dt * (laplacian_h(f, bc, grid) + dzz_centers(f, grid))

    x = np.zeros(grid.shape())
    for j in range(n_steps):
        data = bf.ts_at(times[j + 1])
        b = fields[j] + dt * _robin_rhs_lift(data, params.alpha_T, grid)
        r = b - apply_A(x)
        p = r.copy()
        rs = float(np.sum(r * r))
        target = tol * np.sqrt(float(np.sum(b * b))) + 1e-300
        it = 0
        while np.sqrt(rs) > target and it < 2000:
            q = apply_A(p)
            a = rs / float(np.sum(p * q))
            x += a * p
            r -= a * q
            rs_new = float(np.sum(r * r))
            p = r + (rs_new / rs) * p
            rs = rs_new
            it += 1
        if np.sqrt(rs) > target:
            raise RuntimeError(f"auxiliary heat solve stalled at step {j} ({it} iterations)")
        fields[j + 1] = x
    return TstarSeries(times, fields)


def _dz_centers(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    return interface_to_center(dz_interfaces(f, grid))


def _cumdiv_centers(V: np.ndarray, grid: GridSpec) -> np.ndarray:
    """int_{-h}^z grad_H . V dxi at cell centers."""
    div = ddx(V[0], DIRICHLET0, grid) + ddy(V[1], DIRICHLET0, grid)
    return interface_to_center(vertical_cumint(div, grid))


def a_tau(V: np.ndarray, tau: np.ndarray, params: PhysParams, grid: GridSpec,
          prof: LiftProfile) -> np.ndarray:
    """Left-hand correction in the lifted momentum balance."""
    av = params.alpha_v
    h = grid.h
    gtx = np.stack([ddx(tau[c], DIRICHLET0, grid) for c in range(2)])
    gty = np.stack([ddy(tau[c], DIRICHLET0, grid) for c in range(2)])
    v_grad_tau = V[0] * gtx[:, ..., None] + V[1] * gty[:, ..., None]
    tau_grad_V = (tau[0][..., None] * np.stack([ddx(V[c], DIRICHLET0, grid) for c in range(2)])
                  + tau[1][..., None] * np.stack([ddy(V[c], DIRICHLET0, grid) for c in range(2)]))
    div_tau = ddx(tau[0], DIRICHLET0, grid) + ddy(tau[1], DIRICHLET0, grid)
    dzV = np.stack([_dz_centers(V[c], grid) for c in range(2)])
    cum = _cumdiv_centers(V, grid)
    out = -(av / h) * prof.P_c * (v_grad_tau + tau_grad_V)
    out += (av / (6.0 * h)) * prof.Q_c * div_tau[..., None] * dzV
    out += cum * (av / h) * prof.zph_c * tau[..., None]
    return out


def b_term(V: np.ndarray, Tcal: np.ndarray, tau: np.ndarray, Tstar: np.ndarray,
           params: PhysParams, grid: GridSpec, prof: LiftProfile,
           ts_data: dict | None = None) -> np.ndarray:
    """Left-hand correction in the lifted temperature balance."""
    av = params.alpha_v
    h = grid.h
    bc_T = temperature_bc(params)
    dzTs = _dz_centers(Tstar, grid)
    cum = _cumdiv_centers(V, grid)
    tau_grad_Tcal = (tau[0][..., None] * ddx(Tcal, bc_T, grid)
                     + tau[1][..., None] * ddy(Tcal, bc_T, grid))
    div_tau = ddx(tau[0], DIRICHLET0, grid) + ddy(tau[1], DIRICHLET0, grid)
    dzTcal = _dz_centers(Tcal, grid)
    data_x = None if ts_data is None else ts_data.get("x")
    data_y = None if ts_data is None else ts_data.get("y")
    v_grad_Tstar = (V[0] * ddx(Tstar, bc_T, grid, data_x)
                    + V[1] * ddy(Tstar, bc_T, grid, data_y))
    return (-cum * dzTs
            - (av / h) * prof.P_c * tau_grad_Tcal
            + (av / (6.0 * h)) * prof.Q_c * div_tau[..., None] * dzTcal
            + v_grad_Tstar)


def f_tau(tau: np.ndarray, dtau: np.ndarray, Tstar: np.ndarray,
          params: PhysParams, grid: GridSpec, prof: LiftProfile,
          ts_data: dict | None = None) -> np.ndarray:
    """Right-hand momentum source produced by the lift."""
    av = params.alpha_v
    h = grid.h
    k_cross = np.stack([-tau[1], tau[0]])
    tau_grad_tau = np.stack([
        tau[0] * ddx(tau[c], DIRICHLET0, grid) + tau[1] * ddy(tau[c], DIRICHLET0, grid)
        for c in range(2)])
    lap_tau = np.stack([laplacian_h(tau[c], DIRICHLET0, grid) for c in range(2)])
    div_tau = ddx(tau[0], DIRICHLET0, grid) + ddy(tau[1], DIRICHLET0, grid)
    bc_T = temperature_bc(params)
    grad_int_Tstar = -baroclinic_grad(Tstar, grid, bc_T, ts_data)
    out = (av / h) * prof.P_c * (params.f * k_cross + dtau)[..., None]
    out -= (av ** 2 / h ** 2) * prof.P_c ** 2 * tau_grad_tau[..., None]
    out -= (av / (params.Re1 * h)) * prof.P_c * lap_tau[..., None]
    out -= (av / (params.Re2 * h)) * tau[..., None] * np.ones(grid.nz)
    out += grad_int_Tstar
    out += (av ** 2 / (6.0 * h ** 2)) * prof.R_c * (div_tau * tau)[..., None]
    return out


def g_tau(tau: np.ndarray, Tstar: np.ndarray, dTstar: np.ndarray,
          params: PhysParams, grid: GridSpec, prof: LiftProfile,
          ts_data: dict | None = None) -> np.ndarray:
    """Right-hand temperature source produced by the lift and T*."""
    av = params.alpha_v
    h = grid.h
    bc_T = temperature_bc(params)
    data_x = None if ts_data is None else ts_data.get("x")
    data_y = None if ts_data is None else ts_data.get("y")
    tau_grad_Tstar = (tau[0][..., None] * ddx(Tstar, bc_T, grid, data_x)
                      + tau[1][..., None] * ddy(Tstar, bc_T, grid, data_y))
    div_tau = ddx(tau[0], DIRICHLET0, grid) + ddy(tau[1], DIRICHLET0, grid)
    dzTs = _dz_centers(Tstar, grid)
    lapTs = laplacian_h(Tstar, bc_T, grid, data_x, data_y)
    return ((av / h) * prof.P_c * tau_grad_Tstar
            - (av / (6.0 * h)) * prof.Q_c * div_tau[..., None] * dzTs
            - dTstar
            + lapTs / params.R_T
            + params.eps * dzz_centers(Tstar, grid))


def correction_terms(V: np.ndarray, Tcal: np.ndarray, tau: np.ndarray,
                     dtau: np.ndarray, Tstar: np.ndarray, dTstar: np.ndarray,
                     params: PhysParams, grid: GridSpec,
                     prof: LiftProfile | None = None,
                     ts_data: dict | None = None) -> dict:
    """All four correction fields; every term also callable on its own."""
    if prof is None:
        prof = LiftProfile.build(grid)
    return {
        "a_tau": a_tau(V, tau, params, grid, prof),
        "b": b_term(V, Tcal, tau, Tstar, params, grid, prof, ts_data),
        "F_tau": f_tau(tau, dtau, Tstar, params, grid, prof, ts_data),
        "G_tau": g_tau(tau, Tstar, dTstar, params, grid, prof, ts_data),
    }


class HomogenizedForcing(Forcing):
    """Branch B: homogeneous boundaries, interior corrections and sources."""

    def __init__(self, bf: BoundaryForcing, tstar: TstarSeries,
                 params: PhysParams, grid: GridSpec):
        self.bf = bf
        self.tstar = tstar
        self.prof = LiftProfile.build(grid)
        self._params = params

    def sources(self, state: State, grid: GridSpec, params: PhysParams):
        t = state.t
        tau = self.bf.tau_at(t)
        terms = correction_terms(
            state.v, state.T, tau, self.bf.dtau_at(t),
            self.tstar.at(t), self.tstar.ddt_at(t),
            params, grid, self.prof, ts_data=self.bf.ts_at(t))
        return (terms["F_tau"] - terms["a_tau"], terms["G_tau"] - terms["b"])


def equivalence_run(v0: np.ndarray, T0: np.ndarray, bf: BoundaryForcing,
                    params: PhysParams, grid: GridSpec, config, t_end: float,
                    n_star: int = 256) -> dict:
    """Integrate the same data through both formulations and compare.

    Returns the relative L2 discrepancies of v and T at t_end together with
    both final states.
    """
    from .stepper import integrate
    from .dynamics import reconstruct_w

    bf.validate(grid, params)
    prof = LiftProfile.build(grid)

    sA = State(v0.copy(), T0.copy(), reconstruct_w(v0, grid),
               np.zeros((grid.nx, grid.ny)), 0.0)
    sA = integrate(sA, params, grid, config, t_end, forcing=DirectForcing(bf, params))

    tstar = solve_Tstar(bf, params, grid, t_end, n_star)
    V0 = lift(v0, bf.tau_at(0.0), params.alpha_v, grid, prof)
    sB = State(V0, T0.copy(), reconstruct_w(V0, grid),
               np.zeros((grid.nx, grid.ny)), 0.0)
    sB = integrate(sB, params, grid, config, t_end,
                   forcing=HomogenizedForcing(bf, tstar, params, grid))

    vB = unlift(sB.v, bf.tau_at(sB.t), params.alpha_v, grid, prof)
    TB = sB.T + tstar.at(sB.t)
    dv = norm_l2(sA.v - vB, grid) / max(norm_l2(sA.v, grid), 1e-300)
    dT = norm_l2(sA.T - TB, grid) / max(norm_l2(sA.T, grid), 1e-300)
    return {"rel_v": dv, "rel_T": dT, "state_direct": sA,
            "state_homogenized": sB, "v_unlifted": vB, "T_recomposed": TB}
