"""Time integration: explicit Heun stages, implicit vertical diffusion,
projection after every stage.

One step at size dt:

    stage 1:  s* = s + dt * F(s);          vertical solve; project
    stage 2:  s' = s + dt/2 (F(s)+F(s1));  vertical solve; project

F collects transport, rotation, buoyancy torque and horizontal diffusion;
the per-column solves apply (I - (dt/Re2) Dzz)^-1 to both velocity
components and (I - dt*eps*Dzz)^-1 to T (identity when eps = 0), with the
prescribed surface flux entering the top closure. Splitting is first order
globally; the explicit subsystem alone is second order.

dt comes from the CFL bound and is halved on a violated check, down to
dt_min; NaN/Inf is a hard failure, never retried.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .mesh import (DIRICHLET0, GridSpec, NonFiniteFieldError, check_finite,
                   dzz_centers, laplacian_h)
from .fields import (PhysParams, State, constraint_divergence, inner, norm_l2,
                     seminorm_h1_parts)
from .dynamics import Forcing, explicit_tendency, reconstruct_w, temperature_bc
from .pressure import PoissonSolve, PoissonSolver, project


class NumericalFailure(RuntimeError):
    """Unrecoverable integration failure (NaN/Inf or dt underflow)."""

    def __init__(self, message: str, state: State | None = None):
        super().__init__(message)
        self.state = state


@dataclass
class StepConfig:
    dt_max: float = 1e-2
    dt_min: float = 1e-9
    cfl_adv: float = 0.5
    cfl_diff: float = 0.25
    projection_tol: float = 1e-10

    def __post_init__(self):
        if not (0.0 < self.cfl_adv <= 1.0):
            raise ValueError("cfl_adv must lie in (0, 1]")
        if not (0.0 < self.cfl_diff <= 0.5):
            raise ValueError("cfl_diff must lie in (0, 0.5]")
        if not (0.0 < self.dt_min <= self.dt_max) or not np.isfinite(self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_max, both finite")
        if not (0.0 < self.projection_tol < 1.0):
            raise ValueError("projection_tol must lie in (0, 1)")


@dataclass
class StepReport:
    dt: float
    attempts: int
    cfl_adv_used: float
    cfl_diff_used: float
    poisson: tuple[PoissonSolve, ...] = ()
    constraint_res: float = 0.0
    constraint_rel: float = 0.0
    energy_residual_T: float = 0.0
    energy_residual_v: float = 0.0


_FLOOR = 1e-30


def cfl_dt(state: State, params: PhysParams, grid: GridSpec, config: StepConfig) -> float:
    """Largest admissible dt for the current fields."""
    umax = max(float(np.abs(state.v[0]).max()), _FLOOR)
    vmax = max(float(np.abs(state.v[1]).max()), _FLOOR)
    wmax = max(float(np.abs(state.w).max()), _FLOOR)
    dt = min(config.dt_max,
             config.cfl_adv * min(grid.dx / umax, grid.dy / vmax, grid.dz / wmax),
             config.cfl_diff * min(grid.dx ** 2, grid.dy ** 2) * min(params.Re1, params.R_T))
    if params.f != 0.0:
        dt = min(dt, 0.5 / abs(params.f))
    return dt


def _banded(c: float, nz: int, dz: float) -> np.ndarray:
    """Bands of (I - c*Dzz) with neumann closures; same matrix every column."""
    r = c / dz ** 2
    ab = np.zeros((3, nz))
    ab[0, 1:] = -r
    ab[2, :-1] = -r
    ab[1, :] = 1.0 + 2.0 * r
    ab[1, 0] = 1.0 + r
    ab[1, -1] = 1.0 + r
    return ab


def implicit_vertical(f: np.ndarray, c: float, grid: GridSpec,
                      top_flux: np.ndarray | None = None) -> np.ndarray:
    """Solve (I - c*Dzz) x = f per column; optional prescribed d/dz at the
    surface enters the top closure as a ghost offset."""
    if c == 0.0:
        return f if top_flux is None else f.copy()
    nz = grid.nz
    b = f.reshape(-1, nz).T.copy()
    if top_flux is not None:
        b[-1, :] += (c / grid.dz) * top_flux.reshape(-1)
    x = solve_banded((1, 1), _banded(c, nz, grid.dz), b)
    return x.T.reshape(f.shape)


def _dzz_energy(q: np.ndarray, grid: GridSpec, top_flux: np.ndarray | None = None) -> float:
    """<Dzz q, q> including the surface-flux work term."""
    val = inner(dzz_centers(q, grid), q, grid)
    if top_flux is not None:
        val += float(np.sum(top_flux * q[..., -1]) * grid.dx * grid.dy)
    return val


def _diffuse_and_project(v, T, dt, params, grid, solver, forcing, t, freeze_v):
    check_finite(v, "stage velocity")
    check_finite(T, "stage temperature")
    reports = []
    if not freeze_v:
        flux = forcing.top_flux(t) if forcing is not None else None
        c = dt / params.Re2
        v = np.stack([
            implicit_vertical(v[0], c, grid, None if flux is None else flux[0]),
            implicit_vertical(v[1], c, grid, None if flux is None else flux[1]),
        ])
        v, phi, rep = project(v, dt, grid, solver)
        reports.append((phi, rep))
    if params.eps > 0.0:
        T = implicit_vertical(T, dt * params.eps, grid)
    return v, T, reports


def step(state: State, params: PhysParams, grid: GridSpec, config: StepConfig,
         solver: PoissonSolver, forcing: Forcing | None = None,
         freeze_v: bool = False, dt: float | None = None) -> tuple[State, StepReport]:
    """Advance one accepted step; dt defaults to the CFL bound."""
    if dt is None:
        dt = cfl_dt(state, params, grid, config)
    dt = float(dt)

    e_T0 = 0.5 * norm_l2(state.T, grid) ** 2
    e_v0 = 0.5 * norm_l2(state.v, grid) ** 2
    ts = forcing.ts_faces(state.t) if forcing is not None else None
    bc_T = temperature_bc(params)
    lapT = laplacian_h(state.T, bc_T, grid,
                       None if ts is None else ts.get("x"),
                       None if ts is None else ts.get("y"))
    diss_T0 = inner(lapT, state.T, grid) / params.R_T \
        + params.eps * _dzz_energy(state.T, grid)

    attempts = 0
    while True:
        attempts += 1
        try:
            tend0 = explicit_tendency(state, params, grid, forcing)
            if freeze_v:
                v1 = state.v
            else:
                v1 = state.v + dt * tend0.dv
            T1 = state.T + dt * tend0.dT
            v1, T1, rep1 = _diffuse_and_project(v1, T1, dt, params, grid, solver,
                                                forcing, state.t, freeze_v)
            s1 = State(v1, T1, reconstruct_w(v1, grid), state.p_s, state.t + dt)
            tend1 = explicit_tendency(s1, params, grid, forcing)

            if freeze_v:
                v2 = state.v
            else:
                v2 = state.v + 0.5 * dt * (tend0.dv + tend1.dv)
            T2 = state.T + 0.5 * dt * (tend0.dT + tend1.dT)
            v2, T2, rep2 = _diffuse_and_project(v2, T2, dt, params, grid, solver,
                                                forcing, state.t, freeze_v)
        except NonFiniteFieldError as exc:
            raise NumericalFailure(
                f"non-finite intermediate at t={state.t:.6g}: {exc}", state) from exc

        if not (np.isfinite(v2).all() and np.isfinite(T2).all()):
            raise NumericalFailure(f"non-finite state at t={state.t + dt:.6g}", state)

        w2 = reconstruct_w(v2, grid)
        umax = max(float(np.abs(v2[0]).max()), _FLOOR)
        vmax = max(float(np.abs(v2[1]).max()), _FLOOR)
        wmax = max(float(np.abs(w2).max()), _FLOOR)
        cfl_used = dt * max(umax / grid.dx, vmax / grid.dy, wmax / grid.dz)
        diff_used = dt / (min(grid.dx ** 2, grid.dy ** 2) * min(params.Re1, params.R_T))
        poisson_ok = all(rep.converged for _, rep in rep1 + rep2)
        if cfl_used <= config.cfl_adv and diff_used <= config.cfl_diff and poisson_ok:
            break
        if dt * 0.5 < config.dt_min:
            raise NumericalFailure(
                f"dt underflow at t={state.t:.6g}: retry would drop below dt_min", state)
        dt *= 0.5

    p_s = rep2[-1][0] if rep2 else state.p_s
    new = State(v2, T2, w2, p_s, state.t + dt)

    # energy bookkeeping, O(dt^2) residuals against the semi-discrete identities
    e_T1 = 0.5 * norm_l2(new.T, grid) ** 2
    src_T = 0.0
    if forcing is not None:
        src = forcing.sources(state, grid, params)
        if src is not None and src[1] is not None:
            src_T = inner(src[1], state.T, grid)
    residual_T = e_T1 - e_T0 - dt * (diss_T0 + src_T)
    if freeze_v:
        residual_v = 0.0
    else:
        flux = forcing.top_flux(state.t) if forcing is not None else None
        work_v = inner(tend0.dv, state.v, grid) \
            + (_dzz_energy(state.v[0], grid, None if flux is None else flux[0])
               + _dzz_energy(state.v[1], grid, None if flux is None else flux[1])) / params.Re2
        residual_v = 0.5 * norm_l2(new.v, grid) ** 2 - e_v0 - dt * work_v

    div = np.sqrt(np.sum(constraint_divergence(new.v, grid) ** 2) * grid.dx * grid.dy)
    grad_v, _ = seminorm_h1_parts(new.v, DIRICHLET0, grid)
    report = StepReport(
        dt=dt, attempts=attempts,
        cfl_adv_used=cfl_used if not freeze_v else 0.0,
        cfl_diff_used=dt / (min(grid.dx ** 2, grid.dy ** 2) * min(params.Re1, params.R_T)),
        poisson=tuple(rep for _, rep in rep1 + rep2),
        constraint_res=float(div),
        constraint_rel=float(div / (grad_v + _FLOOR)),
        energy_residual_T=float(residual_T),
        energy_residual_v=float(residual_v),
    )
    return new, report


def integrate(state: State, params: PhysParams, grid: GridSpec,
              config: StepConfig, t_end: float,
              forcing=None, freeze_v: bool = False,
              solver: PoissonSolver | None = None, on_step=None) -> State:
    """March the state to t_end under the CFL policy, trimming the last step.

    on_step(state, report) fires after every accepted step.
    """
    if solver is None:
        solver = PoissonSolver(grid, tol=config.projection_tol)
    while state.t < t_end - 1e-12 * max(1.0, t_end):
        dt = min(cfl_dt(state, params, grid, config), t_end - state.t)
        state, report = step(state, params, grid, config, solver,
                             forcing=forcing, freeze_v=freeze_v, dt=dt)
        if on_step is not None:
            on_step(state, report)
    return state
