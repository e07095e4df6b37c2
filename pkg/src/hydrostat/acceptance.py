"""The ten acceptance criteria, runnable standalone or through the CLI.

Each criterion builds its own fixed-size configuration, runs the relevant
experiment, and reports (pass, detail). Tolerances and sizes are part of
the contract and are not configurable.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import DIRICHLET0, GridSpec, robin
from .fields import (PhysParams, State, anisotropic_product_bound, inner,
                     norm_l2)
from .dynamics import advect, reconstruct_w
from .pressure import PoissonSolver
from .stepper import StepConfig, step
from .experiments import (RunConfig, band_limited_state, scenario_eps_sweep,
                          scenario_equivalence, scenario_forced, scenario_mms,
                          scenario_perturbation, scenario_rough)


@dataclass
class CriterionResult:
    index: int
    name: str
    ok: bool
    detail: str


def _cfg(grid: GridSpec, params: PhysParams, scenario: str, outdir: str,
         seed: int, t_end: float, extra: dict | None = None,
         stepping: StepConfig | None = None) -> RunConfig:
    return RunConfig(grid=grid, params=params,
                     stepping=stepping or StepConfig(),
                     scenario=scenario, outdir=outdir, seed=seed,
                     t_end=t_end, extra=extra or {})


def _params(**kw) -> PhysParams:
    base = dict(Re1=5.0, Re2=5.0, R_T=5.0, f=1.0, eps=0.0,
                alpha_T=0.0, alpha_v=1.0, delta=1.0)
    base.update(kw)
    return PhysParams(**base)


def criterion_1_skew(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Transport is energy-neutral on random (unprojected) states."""
    grid = GridSpec(1.0, 1.0, 1.0, 16, 16, 8)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        v = rng.standard_normal((2,) + grid.shape())
        T = rng.standard_normal(grid.shape())
        w = reconstruct_w(v, grid)
        vmax = float(np.abs(v).max())
        for q, bc in ((v[0], DIRICHLET0), (v[1], DIRICHLET0), (T, robin(0.3))):
            val = abs(inner(advect(q, v, w, grid, bc), q, grid))
            tol = 1e-12 * norm_l2(q, grid) ** 2 * vmax / min(grid.dx, grid.dz)
            worst = max(worst, val / tol)
    ok = worst <= 1.0
    return CriterionResult(1, "advective energy neutrality", ok,
                           f"max |<adv(q),q>|/tol = {worst:.3e} (need <= 1)")


def _frozen_T_run(T0: np.ndarray, params: PhysParams, grid: GridSpec,
                  dt: float, n_steps: int) -> tuple[np.ndarray, float]:
    """March T with v frozen at 0; returns final T and max |energy residual|."""
    config = StepConfig()
    solver = PoissonSolver(grid)
    state = State(v=np.zeros((2,) + grid.shape()), T=T0.copy(),
                  w=np.zeros((grid.nx, grid.ny, grid.nz + 1)),
                  p_s=np.zeros((grid.nx, grid.ny)), t=0.0)
    worst = 0.0
    for _ in range(n_steps):
        state, rep = step(state, params, grid, config, solver,
                          freeze_v=True, dt=dt)
        worst = max(worst, abs(rep.energy_residual_T))
    return state.T, worst


def criterion_2_energy_identity(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Per-step temperature energy residual scales like dt^2."""
    grid = GridSpec(1.0, 1.0, 1.0, 32, 32, 16)
    T0 = band_limited_state(grid, seed, amplitude=1.0).T
    details = []
    ok = True
    for eps in (0.0, 0.01):
        params = _params(eps=eps, alpha_T=0.5, f=0.0)
        dt = 5e-4
        _, res_c = _frozen_T_run(T0, params, grid, dt, 200)
        _, res_f = _frozen_T_run(T0, params, grid, 0.5 * dt, 200)
        ratio = res_c / max(res_f, 1e-300)
        ok = ok and 3.2 <= ratio <= 4.8
        details.append(f"eps={eps:g}: residual ratio {ratio:.3f}")
    return CriterionResult(2, "temperature energy identity under dt halving",
                           ok, "; ".join(details) + " (need 3.2..4.8)")


def criterion_3_eigenmode(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Lowest horizontal mode decays at the discrete stencil rate."""
    grid = GridSpec(1.0, 1.0, 1.0, 32, 32, 2)
    params = _params(Re1=1.0, Re2=1.0, R_T=1.0, f=0.0)
    X = grid.xc[:, None, None]
    Y = grid.yc[None, :, None]
    T0 = np.broadcast_to(np.cos(np.pi * X / grid.Lx) * np.cos(np.pi * Y / grid.Ly),
                         grid.shape()).copy()
    dt, n = 2e-4, 5000
    T1, _ = _frozen_T_run(T0, params, grid, dt, n)
    lam = -4.0 * (np.sin(np.pi * grid.dx / (2 * grid.Lx)) ** 2 / grid.dx ** 2
                  + np.sin(np.pi * grid.dy / (2 * grid.Ly)) ** 2 / grid.dy ** 2)
    expected = float(np.exp(lam * (dt * n) / params.R_T))
    observed = norm_l2(T1, grid) / norm_l2(T0, grid)
    rel = abs(observed - expected) / expected
    ok = rel <= 1e-3 and n >= 1000
    return CriterionResult(3, "eigenmode decay at the stencil rate", ok,
                           f"rel error {rel:.3e} over {n} steps (need <= 1e-3)")


def criterion_4_constraint(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Depth-averaged divergence stays at solver tolerance under forcing."""
    grid = GridSpec(1.0, 1.0, 1.0, 32, 32, 16)
    cfg = _cfg(grid, _params(alpha_T=0.5), "forced", outdir or tempfile.mkdtemp(),
               seed, t_end=1.0)
    code, report = scenario_forced(cfg)
    worst = report["max_constraint_rel"]
    ok = code == 0 and worst <= 1e-8
    return CriterionResult(4, "depth-averaged velocity constraint", ok,
                           f"max per-step rel divergence {worst:.3e} (need <= 1e-8)")


def criterion_5_mms(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Manufactured steady solution converges at second order in space."""
    grid = GridSpec(1.0, 1.0, 1.0, 16, 16, 8)
    cfg = _cfg(grid, _params(Re1=2.0, Re2=2.0, R_T=2.0), "mms",
               outdir or tempfile.mkdtemp(), seed, t_end=0.2)
    code, report = scenario_mms(cfg)
    ok = code == 0
    return CriterionResult(
        5, "manufactured-solution spatial order", ok,
        f"order_v={report['order_v']:.2f}, order_T={report['order_T']:.2f} (need >= 1.8)")


def criterion_6_eps_sweep(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Removing the vertical temperature regularization converges."""
    grid = GridSpec(1.0, 1.0, 1.0, 32, 32, 16)
    cfg = _cfg(grid, _params(), "eps_sweep", outdir or tempfile.mkdtemp(),
               seed, t_end=0.5, extra={"eps_list": "0.1,0.01,0.001,0"})
    code, report = scenario_eps_sweep(cfg)
    ok = code == 0
    return CriterionResult(
        6, "vertical-regularization sweep", ok,
        f"monotone={report['monotone_ok']}, order={report['order']:.2f} "
        "(need monotone and order > 0.5)")


def criterion_7_perturbation(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Perturbation growth obeys the ledger-integrated exponential bound."""
    grid = GridSpec(1.0, 1.0, 1.0, 32, 32, 16)
    cfg = _cfg(grid, _params(), "perturbation", outdir or tempfile.mkdtemp(),
               seed, t_end=0.5)
    code, report = scenario_perturbation(cfg)
    ok = code == 0
    return CriterionResult(
        7, "continuous dependence on initial data", ok,
        f"C_emp {report['C_emp_delta0']:.3f} vs {report['C_emp_half']:.3f}, "
        f"agreement {report['C_emp_agreement']:.2%} (need <= 20%), "
        f"bound_ok={report['bound_ok']}")


def criterion_8_equivalence(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Direct and lifted boundary-data formulations agree to scheme accuracy."""
    grid = GridSpec(1.0, 1.0, 1.0, 16, 16, 8)
    cfg = _cfg(grid, _params(alpha_T=0.5), "equivalence",
               outdir or tempfile.mkdtemp(), seed, t_end=0.5,
               extra={"refine": "1"})
    code, report = scenario_equivalence(cfg)
    ok = code == 0
    return CriterionResult(
        8, "boundary homogenization equivalence", ok,
        f"discrepancy {report.get('discrepancy_coarse', float('nan')):.3e} vs "
        f"5x calibration {5.0 * report.get('calibration_error', float('nan')):.3e}; "
        f"fine {report.get('discrepancy_fine', float('nan')):.3e} (must decrease)")


def _mode_field(grid: GridSpec, coef: np.ndarray) -> np.ndarray:
    xh = (grid.xc / grid.Lx)[:, None, None]
    yh = (grid.yc / grid.Ly)[None, :, None]
    zh = ((grid.zc + grid.h) / grid.h)[None, None, :]
    out = np.zeros(grid.shape())
    for m in range(coef.shape[0]):
        for n in range(coef.shape[1]):
            for k in range(coef.shape[2]):
                out += coef[m, n, k] * (np.cos(m * np.pi * xh)
                                        * np.cos(n * np.pi * yh)
                                        * np.cos(k * np.pi * zh))
    return out


def criterion_9_product_bound(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """The depth-integrated product estimate does not degrade under refinement."""
    grids = (GridSpec(1.0, 1.0, 1.0, 16, 16, 8), GridSpec(1.0, 1.0, 1.0, 32, 32, 16))
    rng = np.random.default_rng(seed)
    worst = [0.0, 0.0]
    for _ in range(100):
        coefs = rng.standard_normal((3, 3, 3, 2))
        for i, grid in enumerate(grids):
            phi = _mode_field(grid, coefs[0])
            varphi = _mode_field(grid, coefs[1])
            psi = _mode_field(grid, coefs[2])
            ratio = anisotropic_product_bound(phi, varphi, psi, grid)["ratio"]
            worst[i] = max(worst[i], ratio)
    change = worst[1] / max(worst[0], 1e-300)
    ok = 0.5 <= change <= 2.0
    return CriterionResult(
        9, "anisotropic product bound stability", ok,
        f"max ratio {worst[0]:.3f} -> {worst[1]:.3f}, change x{change:.2f} "
        "(need within x2)")


def criterion_10_rough(seed: int = 0, outdir: str | None = None) -> CriterionResult:
    """Grid-scale horizontal noise integrates stably with bounded monitors."""
    grid = GridSpec(1.0, 1.0, 1.0, 32, 32, 16)
    cfg = _cfg(grid, _params(), "rough", outdir or tempfile.mkdtemp(),
               seed, t_end=1.0)
    code, report = scenario_rough(cfg)
    ok = code == 0
    return CriterionResult(
        10, "rough-data robustness", ok,
        f"max t-weighted gradient energy {report['max_t_weighted']:.3e} "
        f"<= envelope {report['envelope']:.3e}, {report['steps']} steps")


CRITERIA = (
    criterion_1_skew,
    criterion_2_energy_identity,
    criterion_3_eigenmode,
    criterion_4_constraint,
    criterion_5_mms,
    criterion_6_eps_sweep,
    criterion_7_perturbation,
    criterion_8_equivalence,
    criterion_9_product_bound,
    criterion_10_rough,
)


def run_suite(seed: int = 0, outdir: str | None = None) -> list:
    """Run all criteria; exceptions become failures, not crashes."""
    results = []
    for i, fn in enumerate(CRITERIA, 1):
        sub = str(Path(outdir) / f"criterion_{i:02d}") if outdir else None
        try:
            results.append(fn(seed=seed, outdir=sub))
        except Exception as exc:  # a criterion must never take down the suite
            results.append(CriterionResult(i, fn.__name__, False,
                                           f"raised {type(exc).__name__}: {exc}"))
    return results
