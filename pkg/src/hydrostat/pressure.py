"""Surface-pressure projection enforcing the depth-averaged constraint.

The correction solves

    L phi = (1/dt) grad_H . (depth_average v*),   v = v* - dt grad_H phi

with neumann side conditions on phi and the zero-mean gauge. L is the exact
composition of the divergence actually measured on velocities (central
differences, dirichlet0 ghosts) with the central gradient applied to phi
(neumann0 ghosts). That composition is self-adjoint and negative
semidefinite in the uniform inner product, its only null mode is the
constant, and using it (rather than the compact 5-point stencil, which is
not the measured divergence of the applied correction) is what drives the
measured constraint residual to the solver tolerance.

The solver is plain conjugate gradients with the mean projected off each
iterate, warm-started from the previous solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import (DIRICHLET0, NEUMANN0, BoundaryKind, GridSpec, check_finite,
                   interface_to_center, pad_axis, vertical_cumint)
from .fields import constraint_divergence

log = logging.getLogger(__name__)


@dataclass
class PoissonSolve:
    """Outcome of one pressure solve."""

    iterations: int
    residual_norm: float
    rhs_norm: float
    converged: bool
    mean_removed: float
    compatible: bool


class PoissonSolver:
    """CG on the composite div(grad) operator; one instance per simulation.

    Owns its workspace (warm-start field), so concurrent simulations must
    not share an instance.
    """

    def __init__(self, grid: GridSpec, tol: float = 1e-10, max_iter: int | None = None):
        self.grid = grid
        self.tol = float(tol)
        self.max_iter = int(max_iter) if max_iter is not None else 100 * max(grid.nx, grid.ny)
        self._warm = np.zeros((grid.nx, grid.ny))

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """L phi = div_dirichlet0(grad_neumann0 phi)."""
        g = self.grid
        px = pad_axis(phi, 0, NEUMANN0, g.dx)
        gx = (px[2:] - px[:-2]) / (2.0 * g.dx)
        py = pad_axis(phi, 1, NEUMANN0, g.dy)
        gy = (py[:, 2:] - py[:, :-2]) / (2.0 * g.dy)
        qx = pad_axis(gx, 0, DIRICHLET0, g.dx)
        qy = pad_axis(gy, 1, DIRICHLET0, g.dy)
        return ((qx[2:] - qx[:-2]) / (2.0 * g.dx)
                + (qy[:, 2:] - qy[:, :-2]) / (2.0 * g.dy))

    def solve(self, rhs: np.ndarray) -> tuple[np.ndarray, PoissonSolve]:
        """Solve L phi = rhs in the zero-mean gauge."""
        check_finite(rhs, "poisson rhs")
        mean = float(rhs.mean())
        b = mean - rhs            # solve A phi = -(rhs - mean), A = -L SPD
        rhs_norm = float(np.sqrt(np.sum(b * b)))
        mean_rel = abs(mean) * np.sqrt(b.size) / (rhs_norm + 1e-300)
        compatible = mean_rel <= 1e-8
        if not compatible:
            log.warning("poisson rhs mean %.3e relative to ||rhs|| %.3e: "
                        "inconsistent velocity state", mean, rhs_norm)
        if rhs_norm == 0.0:
            return np.zeros_like(rhs), PoissonSolve(0, 0.0, 0.0, True, mean, compatible)

        x = self._warm.copy()
        r = b + self.apply(x)     # b - A x
        r -= r.mean()
        p = r.copy()
        rs = float(np.sum(r * r))
        target = self.tol * rhs_norm
        it = 0
        while np.sqrt(rs) > target and it < self.max_iter:
            q = -self.apply(p)
            alpha = rs / float(np.sum(p * q))
            x += alpha * p
            r -= alpha * q
            r -= r.mean()
            rs_new = float(np.sum(r * r))
            p = r + (rs_new / rs) * p
            rs = rs_new
            it += 1
        x -= x.mean()
        self._warm = x.copy()
        res = float(np.sqrt(rs))
        return x, PoissonSolve(it, res, rhs_norm, res <= target, mean, compatible)


def project(v: np.ndarray, dt: float, grid: GridSpec,
            solver: PoissonSolver) -> tuple[np.ndarray, np.ndarray, PoissonSolve]:
    """Remove the divergent part of the depth-averaged velocity.

    Returns (corrected v, phi, report). The correction -dt grad_H phi is
    uniform in z, so vertical ghost relations on v are untouched; applying
    project twice changes nothing beyond solver tolerance.
    """
    check_finite(v, "project input")
    div = constraint_divergence(v, grid)
    phi, report = solver.solve(div / dt)
    px = pad_axis(phi, 0, NEUMANN0, grid.dx)
    gx = (px[2:] - px[:-2]) / (2.0 * grid.dx)
    py = pad_axis(phi, 1, NEUMANN0, grid.dy)
    gy = (py[:, 2:] - py[:, :-2]) / (2.0 * grid.dy)
    out = v.copy()
    out[0] -= dt * gx[..., None]
    out[1] -= dt * gy[..., None]
    return out, phi, report


def reconstruct_p(T: np.ndarray, p_s: np.ndarray, grid: GridSpec,
                  bc: BoundaryKind | None = None) -> np.ndarray:
    """Hydrostatic pressure at cell centers: p = -int_{-h}^z T dxi + p_s.

    The column integral is the midpoint cumulative integral averaged from
    interfaces to centers, so consecutive centers satisfy
    p[k+1] - p[k] = -dz * (T[k] + T[k+1]) / 2 exactly.
    """
    check_finite(T, "reconstruct_p T")
    col = interface_to_center(vertical_cumint(T, grid))
    return -col + p_s[..., None]
