"""Structured grid and finite-difference operators for a closed rectangular basin.

The domain is the box [0, Lx] x [0, Ly] x (-h, 0). Scalars live at cell
centers with layout (nx, ny, nz); the vertical velocity lives at the nz+1
horizontal interfaces. All horizontal derivatives are second-order central
differences closed with one ghost layer per side; the ghost value encodes the
boundary condition:

    dirichlet0:  ghost = -interior          (wall value 0 at the face)
    neumann0:    ghost = +interior          (zero normal derivative)
    robin(a):    ghost = interior*(2 - a*dn)/(2 + a*dn)
                 (d/dn f = -a*f at the face, trapezoid face average)

Vertical integrals use the midpoint rule, which makes the discrete continuity
relation between the reconstructed w and the horizontal divergence exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteFieldError(ValueError):
    """A field handed to an operator contains NaN or Inf."""


def check_finite(f: np.ndarray, name: str = "field") -> None:
    """Reject non-finite input, locating the first bad entry."""
    if np.isfinite(f).all():
        return
    flat = np.argmin(np.isfinite(f).ravel())
    idx = tuple(int(i) for i in np.unravel_index(flat, f.shape))
    raise NonFiniteFieldError(f"{name} has non-finite entry {float(f[idx])!r} at index {idx}")


@dataclass(frozen=True)
class BoundaryKind:
    """Side-wall boundary treatment for the ghost layer."""

    kind: str
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet0", "neumann0", "robin"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "robin" and self.alpha < 0.0:
            raise ValueError("robin coefficient must be >= 0")


DIRICHLET0 = BoundaryKind("dirichlet0")
NEUMANN0 = BoundaryKind("neumann0")


def robin(alpha: float) -> BoundaryKind:
    return BoundaryKind("robin", float(alpha))


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centered grid on [0,Lx] x [0,Ly] x (-h,0)."""

    Lx: float
    Ly: float
    h: float
    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        for name in ("Lx", "Ly", "h"):
            val = getattr(self, name)
            if not (val > 0.0 and np.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite")
        if self.nx < 4 or self.ny < 4:
            raise ValueError("nx and ny must be at least 4")
        if self.nz < 2:
            raise ValueError("nz must be at least 2")

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def dz(self) -> float:
        return self.h / self.nz

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy * self.dz

    @property
    def diameter(self) -> float:
        """Horizontal diameter, the length scale L in the anisotropic bound."""
        return float(np.hypot(self.Lx, self.Ly))

    @property
    def xc(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def yc(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    @property
    def zc(self) -> np.ndarray:
        """Cell-center heights, -h + (k+1/2)dz."""
        return -self.h + (np.arange(self.nz) + 0.5) * self.dz

    @property
    def zi(self) -> np.ndarray:
        """Interface heights, -h + k*dz, k = 0..nz."""
        return -self.h + np.arange(self.nz + 1) * self.dz

    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)


def _ghost_pair(f: np.ndarray, axis: int, bc: BoundaryKind, d: float,
                data=None) -> tuple[np.ndarray, np.ndarray]:
    """Low/high ghost layers along axis. `data` holds inhomogeneous robin
    face values (lo, hi) for d/dn f = alpha*(data - f)."""
    lo = np.take(f, 0, axis=axis)
    hi = np.take(f, -1, axis=axis)
    if bc.kind == "dirichlet0":
        return -lo, -hi
    if bc.kind == "neumann0":
        return lo, hi
    a = bc.alpha
    c = (2.0 - a * d) / (2.0 + a * d)
    r = 2.0 * a * d / (2.0 + a * d)
    if data is None:
        return c * lo, c * hi
    return c * lo + r * data[0], c * hi + r * data[1]


def pad_axis(f: np.ndarray, axis: int, bc: BoundaryKind, d: float, data=None) -> np.ndarray:
    """Return f extended by one ghost layer on each side of `axis`."""
    glo, ghi = _ghost_pair(f, axis, bc, d, data)
    return np.concatenate(
        [np.expand_dims(glo, axis), f, np.expand_dims(ghi, axis)], axis=axis)


def ddx(f: np.ndarray, bc: BoundaryKind, grid: GridSpec, data=None) -> np.ndarray:
    """Central x-derivative with ghost closure; works on (nx,ny) or (nx,ny,nz)."""
    check_finite(f, "ddx input")
    p = pad_axis(f, 0, bc, grid.dx, data)
    return (p[2:] - p[:-2]) / (2.0 * grid.dx)


def ddy(f: np.ndarray, bc: BoundaryKind, grid: GridSpec, data=None) -> np.ndarray:
    """Central y-derivative with ghost closure."""
    check_finite(f, "ddy input")
    p = pad_axis(f, 1, bc, grid.dy, data)
    return (p[:, 2:] - p[:, :-2]) / (2.0 * grid.dy)


def laplacian_h(f: np.ndarray, bc: BoundaryKind, grid: GridSpec,
                data_x=None, data_y=None) -> np.ndarray:
    """Five-point horizontal Laplacian with the same ghost closure per axis."""
    check_finite(f, "laplacian_h input")
    px = pad_axis(f, 0, bc, grid.dx, data_x)
    py = pad_axis(f, 1, bc, grid.dy, data_y)
    return ((px[2:] - 2.0 * f + px[:-2]) / grid.dx ** 2
            + (py[:, 2:] - 2.0 * f + py[:, :-2]) / grid.dy ** 2)


def vertical_cumint(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Midpoint-rule cumulative integral from -h up; interface k holds
    sum_{j<k} f_j dz, so level 0 is 0 and level nz the full column integral."""
    out = np.zeros(f.shape[:-1] + (grid.nz + 1,))
    np.cumsum(f, axis=-1, out=out[..., 1:])
    out[..., 1:] *= grid.dz
    return out


def depth_integral(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    return f.sum(axis=-1) * grid.dz


def depth_average(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    return f.mean(axis=-1)


def interface_to_center(g: np.ndarray) -> np.ndarray:
    """Average an interface-valued column field (..., nz+1) to centers."""
    return 0.5 * (g[..., 1:] + g[..., :-1])


def dz_interfaces(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Centered interface differences of a center field: (..., nz+1).

    Boundary interfaces carry 0, consistent with the neumann vertical ghosts.
    """
    out = np.zeros(f.shape[:-1] + (grid.nz + 1,))
    out[..., 1:-1] = (f[..., 1:] - f[..., :-1]) / grid.dz
    return out


def dzz_centers(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Second vertical difference at centers with neumann top/bottom ghosts."""
    d = dz_interfaces(f, grid)
    return (d[..., 1:] - d[..., :-1]) / grid.dz
