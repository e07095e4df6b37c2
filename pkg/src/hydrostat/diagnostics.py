"""Energy ledger and a-posteriori monitors.

Every sampled row carries the norms the a-priori estimates are built from,
the composite growth-rate functionals K1..K5 / G1 / G2 (recomputable from
the raw columns of the same row), t-weighted gradient norms, the local
column-energy scan, the anisotropic-bound ratio and the per-step energy
residuals. Monitors report calibrated constants; they never decide physics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import DIRICHLET0, GridSpec, check_finite, dzz_centers
from .fields import (PhysParams, State, anisotropic_product_bound, decompose,
                     norm_l2, norm_l2_gamma_s, norm_lp, seminorm_h1_parts)
from .dynamics import temperature_bc

COLUMNS = [
    "t", "l2_v", "l2_T", "l2_dz_v", "l2_dz_T", "l2_gradh_v", "l2_gradh_T",
    "l2_gradh_dz_v", "l2_gradh_dz_T", "l2_dzz_v", "l2_T_gamma_s", "lp_vtilde",
    "K1", "K2", "K3", "K4", "K5", "G1", "G2",
    "tw_gradh_v", "tw_gradh_T", "disk_scan", "lemma_ratio",
    "energy_residual_T", "energy_residual_v",
]


def _dz_interior(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Interface differences on interior interfaces, shape (..., nz-1)."""
    return (f[..., 1:] - f[..., :-1]) / grid.dz


def _norm_if(f: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(np.sum(f * f) * grid.cell_volume))


def sample(state: State, params: PhysParams, grid: GridSpec,
           r0: float | None = None, residual_T: float = 0.0,
           residual_v: float = 0.0) -> dict:
    """Compute one ledger row from the current state."""
    from .mesh import ddx, ddy

    bc_T = temperature_bc(params)
    l2_v = norm_l2(state.v, grid)
    l2_T = norm_l2(state.T, grid)
    dzv = np.stack([_dz_interior(state.v[c], grid) for c in range(2)])
    dzT = _dz_interior(state.T, grid)
    l2_dz_v = _norm_if(dzv, grid)
    l2_dz_T = _norm_if(dzT, grid)
    gh_v, _ = seminorm_h1_parts(state.v, DIRICHLET0, grid)
    gh_T, _ = seminorm_h1_parts(state.T, bc_T, grid)
    # d/dz and grad_H commute exactly (ghost rules are per-level linear maps)
    gdz_v = np.sqrt(sum(
        _norm_if(ddx(dzv[c], DIRICHLET0, grid), grid) ** 2
        + _norm_if(ddy(dzv[c], DIRICHLET0, grid), grid) ** 2 for c in range(2)))
    gdz_T = np.sqrt(_norm_if(ddx(dzT, bc_T, grid), grid) ** 2
                    + _norm_if(ddy(dzT, bc_T, grid), grid) ** 2)
    l2_dzz_v = np.sqrt(sum(norm_l2(dzz_centers(state.v[c], grid), grid) ** 2
                           for c in range(2)))
    _, vtilde = decompose(state.v, grid)
    lp_til = norm_lp(vtilde, 3.0 + params.delta, grid)

    k1 = gh_v ** 2 * (l2_v ** 2 + 1.0) + (l2_T ** 2 + 1.0) * (gh_T + 1.0)
    k2 = l2_v ** 2 * gh_v ** 2 + lp_til ** (2.0 + 6.0 / params.delta) + 1.0
    k3 = 1.0 + gh_v ** 2 + gdz_v ** 2 + l2_dz_v ** 2 * gdz_v ** 2
    k4 = 1.0 + (l2_v ** 2 + l2_dz_v ** 2) * (gh_v ** 2 + gdz_v ** 2)
    k5 = gh_v ** 2 * (l2_dz_T ** 4 + l2_dz_T ** 2 * gdz_T ** 2)
    g1 = 1.0 + gh_T ** 2 + gdz_T ** 2 + l2_dz_T ** 4 + l2_dz_T ** 2 * gdz_T ** 2
    g2 = 1.0 + gh_v ** 2 + gdz_v ** 2 + l2_dz_v ** 4 + l2_dz_v ** 2 * gdz_v ** 2

    if r0 is None:
        r0 = 0.125 * min(grid.Lx, grid.Ly)
    lemma = anisotropic_product_bound(state.v[0], state.v[1], state.T, grid)

    return {
        "t": state.t, "l2_v": l2_v, "l2_T": l2_T,
        "l2_dz_v": l2_dz_v, "l2_dz_T": l2_dz_T,
        "l2_gradh_v": gh_v, "l2_gradh_T": gh_T,
        "l2_gradh_dz_v": float(gdz_v), "l2_gradh_dz_T": float(gdz_T),
        "l2_dzz_v": float(l2_dzz_v),
        "l2_T_gamma_s": norm_l2_gamma_s(state.T, bc_T, grid),
        "lp_vtilde": lp_til,
        "K1": k1, "K2": k2, "K3": k3, "K4": k4, "K5": k5, "G1": g1, "G2": g2,
        "tw_gradh_v": state.t * gh_v ** 2, "tw_gradh_T": state.t * gh_T ** 2,
        "disk_scan": disk_scan(dzv, r0, grid),
        "lemma_ratio": lemma["ratio"],
        "energy_residual_T": residual_T, "energy_residual_v": residual_v,
    }


@dataclass
class EnergyLedger:
    """Strictly time-ordered table of monitor rows."""

    rows: list = field(default_factory=list)

    def append(self, row: dict) -> None:
        if set(row) != set(COLUMNS):
            missing = set(COLUMNS) ^ set(row)
            raise ValueError(f"ledger row keys mismatch: {sorted(missing)}")
        for key, val in row.items():
            if not np.isfinite(val):
                raise ValueError(f"non-finite ledger entry {key}={val!r} at t={row['t']}")
        if self.rows and row["t"] <= self.rows[-1]["t"]:
            raise ValueError("ledger rows must be strictly increasing in t")
        self.rows.append(dict(row))

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(COLUMNS)
            for r in self.rows:
                writer.writerow([repr(float(r[c])) for c in COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "EnergyLedger":
        import csv
        led = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != COLUMNS:
                raise ValueError("ledger CSV columns do not match the documented order")
            for line in reader:
                led.rows.append({c: float(x) for c, x in zip(COLUMNS, line)})
        return led


class SampleScheduler:
    """Every accepted step early on, geometric thinning afterwards."""

    def __init__(self, dt_max: float, thin: float = 1.12):
        self.t_dense = 10.0 * dt_max
        self.thin = thin
        self._next = 0.0

    def due(self, t: float) -> bool:
        if t < self.t_dense:
            return True
        if t >= self._next:
            self._next = max(t * self.thin, self.t_dense)
            return True
        return False


def disk_scan(dzv: np.ndarray, r0: float, grid: GridSpec) -> float:
    """Largest column-disk energy sup_X int int_{D_2r0(X) cap M} |f|^2.

    `dzv` is a level field ((2,nx,ny,K) or (nx,ny,K)); each level carries
    weight dz. Cell membership: center within 2*r0 of the disk center
    (itself a cell center); the part of the disk outside M contributes 0.
    """
    check_finite(dzv, "disk_scan input")
    if not (0.0 < r0 <= 0.25 * min(grid.Lx, grid.Ly)):
        raise ValueError("r0 must lie in (0, min(Lx,Ly)/4]")
    if 2.0 * r0 < 0.5 * min(grid.dx, grid.dy):
        raise ValueError("disk radius below half a cell: scan undefined")
    mag2 = np.sum(dzv * dzv, axis=0) if dzv.ndim == 4 else dzv * dzv
    col = mag2.sum(axis=-1) * grid.dz * grid.dx * grid.dy   # (nx, ny)
    ri = int(np.floor(2.0 * r0 / grid.dx))
    rj = int(np.floor(2.0 * r0 / grid.dy))
    padded = np.zeros((grid.nx + 2 * ri, grid.ny + 2 * rj))
    padded[ri:ri + grid.nx, rj:rj + grid.ny] = col
    acc = np.zeros((grid.nx, grid.ny))
    r2 = (2.0 * r0) ** 2
    for oi in range(-ri, ri + 1):
        for oj in range(-rj, rj + 1):
            if (oi * grid.dx) ** 2 + (oj * grid.dy) ** 2 <= r2:
                acc += padded[ri + oi:ri + oi + grid.nx, rj + oj:rj + oj + grid.ny]
    return float(acc.max())


def gronwall_monitor(base_ledger: EnergyLedger, times: np.ndarray,
                     diff_sq: np.ndarray) -> dict:
    """Smallest C with ||(w,theta)(t)||^2 <= exp(C int (G1+G2)) ||(w0,theta0)||^2.

    `diff_sq` holds the squared difference norms at `times`, which must match
    the base ledger's sample times. Zero initial difference with any later
    nonzero difference is rejected; identically zero differences report the
    exact-zero branch.
    """
    t_led = base_ledger.column("t")
    times = np.asarray(times, dtype=float)
    diff_sq = np.asarray(diff_sq, dtype=float)
    if len(times) != len(t_led) or not np.allclose(times, t_led, rtol=0, atol=1e-12):
        raise ValueError("difference samples and base ledger times do not align")
    if diff_sq[0] == 0.0:
        if np.all(diff_sq == 0.0):
            return {"exact_zero": True, "C_emp": 0.0, "bound_ok": True,
                    "R": np.ones_like(diff_sq), "integral": None}
        raise ValueError("zero initial difference: ratio undefined")
    g = base_ledger.column("G1") + base_ledger.column("G2")
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(times))])
    R = diff_sq / diff_sq[0]
    with np.errstate(divide="ignore"):
        ratios = np.log(R[1:]) / integral[1:]
    c_emp = float(ratios.max())
    bound_ok = bool(np.all(np.log(R[1:]) <= c_emp * integral[1:] + 1e-12))
    return {"exact_zero": False, "C_emp": c_emp, "bound_ok": bound_ok,
            "R": R, "integral": integral}


def epsilon_sweep_report(entries: list, grid: GridSpec) -> dict:
    """Convergence report for runs at decreasing eps against the eps=0 run.

    `entries` holds (eps, T-field) pairs, one of them eps == 0. Reports the
    difference norms, whether they decrease monotonically (10% slack), and
    the least-squares order alpha of ||T_eps - T_0|| ~ C eps^alpha.
    """
    ref = [T for e, T in entries if e == 0.0]
    if not ref:
        raise ValueError("sweep needs the eps = 0 member")
    shape = ref[0].shape
    for e, T in entries:
        if T.shape != shape:
            raise ValueError("sweep members live on different grids")
    pos = sorted(((e, T) for e, T in entries if e > 0.0), key=lambda p: -p[0])
    if len(pos) < 3:
        raise ValueError("sweep needs at least three positive eps members")
    eps = np.array([e for e, _ in pos])
    diffs = np.array([norm_l2(T - ref[0], grid) for _, T in pos])
    monotone_ok = bool(np.all(diffs[1:] <= 1.1 * diffs[:-1]))
    if np.any(diffs <= 0.0):
        order = np.inf
    else:
        order = float(np.polyfit(np.log(eps), np.log(diffs), 1)[0])
    return {"eps": eps, "diffs": diffs, "monotone_ok": monotone_ok, "order": order}
