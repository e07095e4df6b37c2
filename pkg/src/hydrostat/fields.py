"""Simulation state, physical parameters, norms and the barotropic split.

Velocity components are stacked as v[0] (x-component) and v[1] (y-component),
each of shape (nx, ny, nz). The discrete L2 inner product weights every cell
by dx*dy*dz; side-wall traces weight each wall face by its area, with the
face value taken as the average of the interior cell and its ghost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import (DIRICHLET0, BoundaryKind, GridSpec, _ghost_pair, check_finite,
                   ddx, ddy, depth_average, dz_interfaces)


@dataclass
class PhysParams:
    """Nondimensional physics constants.

    Re1/Re2: horizontal/vertical momentum eddy viscosities (reciprocal
    coefficients), R_T: horizontal temperature diffusivity, f: rotation,
    eps: vertical temperature regularization, alpha_T/alpha_v: boundary
    exchange coefficients, delta: exponent knob for the p-norm monitor.
    """

    Re1: float = 1.0
    Re2: float = 1.0
    R_T: float = 1.0
    f: float = 0.0
    eps: float = 0.0
    alpha_T: float = 0.0
    alpha_v: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        for name in ("Re1", "Re2", "R_T", "f", "eps", "alpha_T", "alpha_v", "delta"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("Re1", "Re2", "R_T"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.eps < 1.0):
            raise ValueError("eps must lie in [0, 1)")
        if self.alpha_T < 0.0 or self.alpha_v < 0.0:
            raise ValueError("alpha_T and alpha_v must be >= 0")
        if not (0.0 < self.delta <= 1.0):
            raise ValueError("delta must lie in (0, 1]")


@dataclass
class State:
    """Prognostic fields plus the diagnosed w and surface pressure."""

    v: np.ndarray            # (2, nx, ny, nz)
    T: np.ndarray            # (nx, ny, nz)
    w: np.ndarray            # (nx, ny, nz+1), w[..., 0] == 0
    p_s: np.ndarray          # (nx, ny), zero-mean gauge
    t: float = 0.0

    @classmethod
    def zeros(cls, grid: GridSpec) -> "State":
        nx, ny, nz = grid.shape()
        return cls(v=np.zeros((2, nx, ny, nz)), T=np.zeros((nx, ny, nz)),
                   w=np.zeros((nx, ny, nz + 1)), p_s=np.zeros((nx, ny)), t=0.0)

    def copy(self) -> "State":
        return State(self.v.copy(), self.T.copy(), self.w.copy(), self.p_s.copy(), self.t)


def inner(f: np.ndarray, g: np.ndarray, grid: GridSpec) -> float:
    """Volume-weighted L2 inner product; vector fields sum over components."""
    return float(np.sum(f * g) * grid.cell_volume)


def norm_l2(f: np.ndarray, grid: GridSpec) -> float:
    check_finite(f, "norm_l2 input")
    return float(np.sqrt(np.sum(f * f) * grid.cell_volume))


def norm_lp(f: np.ndarray, p: float, grid: GridSpec) -> float:
    """Volume-weighted L^p norm; vector input uses the pointwise magnitude."""
    check_finite(f, "norm_lp input")
    if not p >= 1.0:
        raise ValueError("p must be >= 1")
    if f.ndim == 4:
        mag2 = np.sum(f * f, axis=0)
    else:
        mag2 = f * f
    return float((np.sum(mag2 ** (p / 2.0)) * grid.cell_volume) ** (1.0 / p))


def wall_faces(f: np.ndarray, bc: BoundaryKind, grid: GridSpec, data=None) -> dict:
    """Side-wall face values (interior+ghost)/2 on the four walls.

    Keys 'x_lo','x_hi' give (ny, nz) arrays, 'y_lo','y_hi' (nx, nz).
    """
    gxl, gxh = _ghost_pair(f, 0, bc, grid.dx, None if data is None else data.get("x"))
    gyl, gyh = _ghost_pair(f, 1, bc, grid.dy, None if data is None else data.get("y"))
    return {
        "x_lo": 0.5 * (f[0] + gxl), "x_hi": 0.5 * (f[-1] + gxh),
        "y_lo": 0.5 * (f[:, 0] + gyl), "y_hi": 0.5 * (f[:, -1] + gyh),
    }


def norm_l2_gamma_s(f: np.ndarray, bc: BoundaryKind, grid: GridSpec, data=None) -> float:
    """L2 norm of the side-wall trace, face areas dy*dz and dx*dz."""
    check_finite(f, "norm_l2_gamma_s input")
    faces = wall_faces(f, bc, grid, data)
    sx = (np.sum(faces["x_lo"] ** 2) + np.sum(faces["x_hi"] ** 2)) * grid.dy * grid.dz
    sy = (np.sum(faces["y_lo"] ** 2) + np.sum(faces["y_hi"] ** 2)) * grid.dx * grid.dz
    return float(np.sqrt(sx + sy))


def seminorm_h1_parts(f: np.ndarray, bc: BoundaryKind, grid: GridSpec) -> tuple[float, float]:
    """(||grad_H f||_2, ||d/dz f||_2) with centered stencils.

    The vertical part sums interior interface differences (one-sided closure
    is the neumann ghost, contributing zero at top/bottom).
    """
    if f.ndim == 4:
        parts = [seminorm_h1_parts(f[c], bc, grid) for c in range(f.shape[0])]
        gh = np.sqrt(sum(p[0] ** 2 for p in parts))
        gz = np.sqrt(sum(p[1] ** 2 for p in parts))
        return float(gh), float(gz)
    gx = ddx(f, bc, grid)
    gy = ddy(f, bc, grid)
    gh = np.sqrt((np.sum(gx * gx) + np.sum(gy * gy)) * grid.cell_volume)
    dzf = dz_interfaces(f, grid)[..., 1:-1]
    gz = np.sqrt(np.sum(dzf * dzf) * grid.cell_volume)
    return float(gh), float(gz)


def decompose(v: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Split v into its depth average (2, nx, ny) and the remainder.

    The split is L2-orthogonal: ||v||^2 = h*||vbar||^2_M + ||vtilde||^2.
    """
    check_finite(v, "decompose input")
    vbar = depth_average(v, grid)
    vtilde = v - vbar[..., None]
    return vbar, vtilde


def anisotropic_product_bound(phi: np.ndarray, varphi: np.ndarray, psi: np.ndarray,
                              grid: GridSpec, bc: BoundaryKind = None) -> dict:
    """Evaluate both sides of the depth-integrated product estimate.

    lhs  = int_M (int |phi| dz) (int |varphi*psi| dz) dxdy
    rhsf = ||phi|| * ||varphi||^(1/2) (||varphi||/L + ||grad_H varphi||)^(1/2)
                   * ||psi||^(1/2)    (||psi||/L    + ||grad_H psi||)^(1/2)

    with L the horizontal diameter. Returns lhs, rhs_factor and their ratio
    (the empirical constant); gradients use neumann0 ghosts unless told.
    """
    for name, f in (("phi", phi), ("varphi", varphi), ("psi", psi)):
        check_finite(f, name)
        if f.shape != grid.shape():
            raise ValueError(f"{name} has shape {f.shape}, expected {grid.shape()}")
    if bc is None:
        bc = BoundaryKind("neumann0")
    da = grid.dx * grid.dy
    col_phi = np.abs(phi).sum(axis=-1) * grid.dz
    col_vp = np.abs(varphi * psi).sum(axis=-1) * grid.dz
    lhs = float(np.sum(col_phi * col_vp) * da)
    L = grid.diameter
    n_phi = norm_l2(phi, grid)
    n_vp = norm_l2(varphi, grid)
    n_ps = norm_l2(psi, grid)
    g_vp, _ = seminorm_h1_parts(varphi, bc, grid)
    g_ps, _ = seminorm_h1_parts(psi, bc, grid)
    rhs = (n_phi * np.sqrt(n_vp) * np.sqrt(n_vp / L + g_vp)
           * np.sqrt(n_ps) * np.sqrt(n_ps / L + g_ps))
    ratio = lhs / rhs if rhs > 0.0 else (0.0 if lhs == 0.0 else np.inf)
    return {"lhs": lhs, "rhs_factor": float(rhs), "ratio": float(ratio)}


def constraint_divergence(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    """grad_H . (depth average of v) with the velocity's dirichlet0 ghosts."""
    vbar = depth_average(v, grid)
    return ddx(vbar[0], DIRICHLET0, grid) + ddy(vbar[1], DIRICHLET0, grid)
