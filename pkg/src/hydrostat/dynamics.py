"""Spatial tendencies: transport, rotation, buoyancy torque, diffusion.

Advection uses the energy-neutral split form

    advect(q) = 1/2 [ div_H(v q) + v . grad_H q ]
              + 1/2 [ delta_z(w qbar^z) + wbar^z delta_z q ]

with the vertical advective flux zeroed on the top and bottom interfaces
(kinematic condition) and neumann vertical ghosts in the gradient half. With
dirichlet0 side ghosts on the advecting velocity the discrete inner product
<advect(q), q> telescopes to zero exactly, for any advected field.

Vertical diffusion is deliberately absent from these right-hand sides; the
stepper applies it implicitly per column. The surface pressure is likewise
absent; the projection enforces the depth-averaged constraint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import (DIRICHLET0, BoundaryKind, GridSpec, check_finite, ddx, ddy,
                   interface_to_center, laplacian_h, pad_axis, robin,
                   vertical_cumint)
from .fields import PhysParams, State


@dataclass
class Tendency:
    dv: np.ndarray   # (2, nx, ny, nz)
    dT: np.ndarray   # (nx, ny, nz)


class Forcing:
    """Hooks the stepper and tendencies query; the base class is inert.

    ts_faces(t):  side temperature data for the robin closure, dict with
                  'x' -> ((ny,nz) lo, (ny,nz) hi) and 'y' -> pair of (nx,nz)
    top_flux(t):  (2, nx, ny) prescribed d/dz v at the surface (already
                  including the -alpha_v factor), injected by the implicit
                  vertical solve
    sources(state, grid, params): extra explicit tendencies (dv, dT)
    """

    def ts_faces(self, t: float):
        return None

    def top_flux(self, t: float):
        return None

    def sources(self, state: State, grid: GridSpec, params: PhysParams):
        return None


class SourceForcing(Forcing):
    """Static additive tendencies (manufactured-solution residuals)."""

    def __init__(self, source_v=None, source_T=None):
        self.source_v = source_v
        self.source_T = source_T

    def sources(self, state, grid, params):
        return self.source_v, self.source_T


def temperature_bc(params: PhysParams) -> BoundaryKind:
    """Side closure for T: robin(alpha_T); alpha_T = 0 degrades to neumann."""
    return robin(params.alpha_T)


def reconstruct_w(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Diagnose w from the divergence-free column balance.

    w(z) = -int_{-h}^z grad_H . v dxi, evaluated at interfaces; w[...,0] = 0
    by construction and w[...,nz] vanishes exactly when the depth-integrated
    divergence does.
    """
    check_finite(v, "reconstruct_w input")
    div_h = ddx(v[0], DIRICHLET0, grid) + ddy(v[1], DIRICHLET0, grid)
    return -vertical_cumint(div_h, grid)


def advect(q: np.ndarray, vel: np.ndarray, w: np.ndarray, grid: GridSpec,
           bc_side: BoundaryKind, data=None) -> np.ndarray:
    """Split-form transport of the cell field q by (vel, w)."""
    if q.ndim == 4:
        return np.stack([advect(q[c], vel, w, grid, bc_side, data)
                         for c in range(q.shape[0])])
    check_finite(q, "advect q")
    check_finite(vel, "advect velocity")
    check_finite(w, "advect w")
    data_x = None if data is None else data.get("x")
    data_y = None if data is None else data.get("y")

    pu = pad_axis(vel[0], 0, DIRICHLET0, grid.dx)
    pqx = pad_axis(q, 0, bc_side, grid.dx, data_x)
    fx = pu * pqx
    horiz = 0.5 * ((fx[2:] - fx[:-2]) + vel[0] * (pqx[2:] - pqx[:-2])) / (2.0 * grid.dx)

    pv = pad_axis(vel[1], 1, DIRICHLET0, grid.dy)
    pqy = pad_axis(q, 1, bc_side, grid.dy, data_y)
    fy = pv * pqy
    horiz += 0.5 * ((fy[:, 2:] - fy[:, :-2]) + vel[1] * (pqy[:, 2:] - pqy[:, :-2])) / (2.0 * grid.dy)

    # zero advective flux through top and bottom interfaces
    flux = np.zeros(w.shape)
    flux[..., 1:-1] = w[..., 1:-1] * 0.5 * (q[..., 1:] + q[..., :-1])
    dq = np.zeros(w.shape)
    dq[..., 1:-1] = (q[..., 1:] - q[..., :-1]) / grid.dz
    vert = 0.5 * ((flux[..., 1:] - flux[..., :-1]) / grid.dz
                  + 0.5 * (w[..., 1:] * dq[..., 1:] + w[..., :-1] * dq[..., :-1]))
    return horiz + vert


def coriolis(v: np.ndarray, f: float) -> np.ndarray:
    """Rotation term f k x v = f (-v2, v1); pointwise orthogonal to v."""
    return np.stack([-f * v[1], f * v[0]])


def baroclinic_grad(T: np.ndarray, grid: GridSpec, bc: BoundaryKind,
                    data=None) -> np.ndarray:
    """Horizontal gradient of the baroclinic pressure -int_{-h}^z T dxi.

    The cumulative integral is taken per column (midpoint rule), averaged
    from interfaces to centers, then differenced with T's own side ghosts.
    The momentum tendency subtracts this term.
    """
    check_finite(T, "baroclinic_grad input")
    data_x = None if data is None else data.get("x")
    data_y = None if data is None else data.get("y")
    px = pad_axis(T, 0, bc, grid.dx, data_x)
    bx = interface_to_center(vertical_cumint(px, grid))
    gx = -(bx[2:] - bx[:-2]) / (2.0 * grid.dx)
    py = pad_axis(T, 1, bc, grid.dy, data_y)
    by = interface_to_center(vertical_cumint(py, grid))
    gy = -(by[:, 2:] - by[:, :-2]) / (2.0 * grid.dy)
    return np.stack([gx, gy])


def momentum_rhs(state: State, params: PhysParams, grid: GridSpec,
                 forcing: Forcing | None = None) -> np.ndarray:
    """Explicit momentum tendency; expects state.w already reconstructed.

    dv = -advect(v) - coriolis(v) - baroclinic_grad(T) + (1/Re1) lap_H v
    (the subtraction of the baroclinic pressure gradient applies the
    buoyancy torque +grad_H int T dxi).
    """
    bc_T = temperature_bc(params)
    ts = forcing.ts_faces(state.t) if forcing is not None else None
    dv = -advect(state.v, state.v, state.w, grid, DIRICHLET0)
    dv -= coriolis(state.v, params.f)
    dv -= baroclinic_grad(state.T, grid, bc_T, ts)
    dv[0] += laplacian_h(state.v[0], DIRICHLET0, grid) / params.Re1
    dv[1] += laplacian_h(state.v[1], DIRICHLET0, grid) / params.Re1
    if forcing is not None:
        src = forcing.sources(state, grid, params)
        if src is not None and src[0] is not None:
            dv += src[0]
    return dv


def temperature_rhs(state: State, params: PhysParams, grid: GridSpec,
                    forcing: Forcing | None = None) -> np.ndarray:
    """Explicit temperature tendency: transport + horizontal diffusion.

    dT = -advect(T) + (1/R_T) lap_H T, robin side ghosts (optionally with
    side data), neumann top/bottom; the eps d2/dz2 term is implicit.
    """
    bc_T = temperature_bc(params)
    ts = forcing.ts_faces(state.t) if forcing is not None else None
    data_x = None if ts is None else ts.get("x")
    data_y = None if ts is None else ts.get("y")
    dT = -advect(state.T, state.v, state.w, grid, bc_T, ts)
    dT += laplacian_h(state.T, bc_T, grid, data_x, data_y) / params.R_T
    if forcing is not None:
        src = forcing.sources(state, grid, params)
        if src is not None and src[1] is not None:
            dT += src[1]
    return dT


def explicit_tendency(state: State, params: PhysParams, grid: GridSpec,
                      forcing: Forcing | None = None) -> Tendency:
    return Tendency(dv=momentum_rhs(state, params, grid, forcing),
                    dT=temperature_rhs(state, params, grid, forcing))
