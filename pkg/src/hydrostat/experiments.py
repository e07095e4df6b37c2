"""Scenario orchestration and persistence: flat key=value configs, binary
field snapshots, forcing sample files, the ledger-producing run loop, and
the named experiment scenarios (decay, mms, eps_sweep, perturbation,
equivalence, rough, forced).

Formats
-------
Config: one "key = value" per line, '#' comments, dotted section prefixes
(grid.nx = 32). Unknown or malformed keys are named in the error.

Snapshot: one ASCII header line
    HYDROSTAT1 nx=<i> ny=<j> nz=<k> t=<float> field=<name> endian=little
followed by exactly 8*nx*ny*nz bytes of little-endian float64, x fastest,
then y, then z. Round-trips are lossless.

Forcing: one snapshot per (time sample, field) plus an index file of
"<time> <relative path>" pairs; field identity travels in the snapshot
header.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import GridSpec, dzz_centers
from .fields import PhysParams, State, inner, norm_l2
from .dynamics import SourceForcing, explicit_tendency, reconstruct_w
from .pressure import PoissonSolver, project
from .stepper import NumericalFailure, StepConfig, cfl_dt, step
from .diagnostics import (COLUMNS, EnergyLedger, SampleScheduler,
                          epsilon_sweep_report, gronwall_monitor, sample)
from .homogenize import (BoundaryForcing, DirectForcing, equivalence_run)


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class SnapshotError(ValueError):
    """Malformed snapshot or forcing file."""


# ---------------------------------------------------------------------------
# configuration


def parse_kv(text: str) -> dict:
    """Flat key = value lines with '#' comments; duplicate keys are errors."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = line.split("=", 1)
        key, val = key.strip(), val.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"duplicate key '{key}'")
        out[key] = val
    return out


_GRID_KEYS = {"Lx": float, "Ly": float, "h": float, "nx": int, "ny": int, "nz": int}
_PHYS_KEYS = {"Re1": float, "Re2": float, "R_T": float, "f": float, "eps": float,
              "alpha_T": float, "alpha_v": float, "delta": float}
_STEP_KEYS = {"dt_max": float, "dt_min": float, "cfl_adv": float,
              "cfl_diff": float, "projection_tol": float}
_RUN_KEYS = {"scenario": str, "outdir": str, "seed": int, "t_end": float}


@dataclass
class RunConfig:
    grid: GridSpec
    params: PhysParams
    stepping: StepConfig
    scenario: str
    outdir: str
    seed: int
    t_end: float
    extra: dict

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        kv = parse_kv(text)
        grid_args = {"Lx": 1.0, "Ly": 1.0, "h": 1.0, "nx": 32, "ny": 32, "nz": 16}
        phys_args = {"Re1": 5.0, "Re2": 5.0, "R_T": 5.0, "f": 1.0, "eps": 0.0,
                     "alpha_T": 0.0, "alpha_v": 1.0, "delta": 1.0}
        step_args: dict = {}
        run_args = {"outdir": "out", "seed": 0, "t_end": 1.0}
        extra: dict = {}
        tables = {"grid": (_GRID_KEYS, grid_args), "physics": (_PHYS_KEYS, phys_args),
                  "stepping": (_STEP_KEYS, step_args), "run": (_RUN_KEYS, run_args)}
        for key, val in kv.items():
            section, _, name = key.partition(".")
            if not name:
                raise ConfigError(f"key '{key}' lacks a section prefix")
            if section == "scenario":
                extra[name] = val
                continue
            if section not in tables:
                raise ConfigError(f"unknown key '{key}'")
            types, args = tables[section]
            if name not in types:
                raise ConfigError(f"unknown key '{key}'")
            try:
                args[name] = types[name](val)
            except ValueError:
                raise ConfigError(f"bad value for '{key}': {val!r}") from None
        if "scenario" not in run_args:
            raise ConfigError("missing required key 'run.scenario'")
        if run_args["scenario"] not in SCENARIOS:
            raise ConfigError(
                f"unknown scenario {run_args['scenario']!r} for key 'run.scenario' "
                f"(choose from {sorted(SCENARIOS)})")
        if not (run_args["t_end"] > 0.0 and np.isfinite(run_args["t_end"])):
            raise ConfigError("run.t_end must be positive and finite")
        try:
            grid = GridSpec(**grid_args)
            params = PhysParams(**phys_args)
            stepping = StepConfig(**step_args)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(grid=grid, params=params, stepping=stepping,
                   scenario=run_args["scenario"], outdir=run_args["outdir"],
                   seed=run_args["seed"], t_end=run_args["t_end"], extra=extra)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())

    def extra_float(self, name: str, default: float) -> float:
        if name not in self.extra:
            return default
        try:
            val = float(self.extra[name])
        except ValueError:
            raise ConfigError(f"bad value for 'scenario.{name}': {self.extra[name]!r}") from None
        if not np.isfinite(val):
            raise ConfigError(f"'scenario.{name}' must be finite, got {self.extra[name]!r}")
        return val

    def extra_int(self, name: str, default: int) -> int:
        if name not in self.extra:
            return default
        try:
            return int(self.extra[name])
        except ValueError:
            raise ConfigError(f"bad value for 'scenario.{name}': {self.extra[name]!r}") from None

    def extra_floats(self, name: str, default: str) -> list:
        raw = self.extra.get(name, default)
        try:
            vals = [float(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError:
            raise ConfigError(f"bad value for 'scenario.{name}': {raw!r}") from None
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError(f"'scenario.{name}' must be finite, got {raw!r}")
        return vals


def worker_count(members: int) -> int:
    """Concurrent sweep members, capped by HYDROSTAT_THREADS."""
    raw = os.environ.get("HYDROSTAT_THREADS", "").strip()
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"HYDROSTAT_THREADS is not an integer: {raw!r}") from None
    else:
        cap = os.cpu_count() or 1
    return max(1, min(members, cap))


# ---------------------------------------------------------------------------
# snapshots


SNAP_MAGIC = "HYDROSTAT1"


def write_snapshot(path, arr: np.ndarray, t: float, name: str) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise SnapshotError(f"snapshot fields are 2D or 3D, got shape {arr.shape}")
    if any(ch.isspace() for ch in name) or not name:
        raise SnapshotError(f"bad field name {name!r}")
    nx, ny, nz = arr.shape
    header = f"{SNAP_MAGIC} nx={nx} ny={ny} nz={nz} t={float(t)!r} field={name} endian=little\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(arr.transpose(2, 1, 0).astype("<f8").tobytes())


def read_snapshot(path):
    """Returns (array, time, field name); x fastest in the payload."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").strip()
        payload = fh.read()
    parts = header.split()
    if not parts or parts[0] != SNAP_MAGIC:
        raise SnapshotError(f"{path}: not a {SNAP_MAGIC} snapshot")
    meta = {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise SnapshotError(f"{path}: malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        meta[k] = v
    try:
        nx, ny, nz = int(meta["nx"]), int(meta["ny"]), int(meta["nz"])
        t = float(meta["t"])
        name = meta["field"]
    except (KeyError, ValueError) as exc:
        raise SnapshotError(f"{path}: bad header ({exc})") from None
    if meta.get("endian") != "little":
        raise SnapshotError(f"{path}: unsupported byte order {meta.get('endian')!r}")
    if len(payload) != 8 * nx * ny * nz:
        raise SnapshotError(
            f"{path}: payload is {len(payload)} bytes, expected {8 * nx * ny * nz}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(nz, ny, nx)
    return np.ascontiguousarray(arr.transpose(2, 1, 0)), t, name


_STATE_FIELDS = ("v1", "v2", "T", "w", "p_s")


def write_state(outdir, state: State, tag: str) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    arrays = {"v1": state.v[0], "v2": state.v[1], "T": state.T,
              "w": state.w, "p_s": state.p_s}
    paths = {}
    for name in _STATE_FIELDS:
        p = outdir / f"{tag}_{name}.snap"
        write_snapshot(p, arrays[name], state.t, name)
        paths[name] = str(p)
    return paths


def read_state(outdir, tag: str, grid: GridSpec) -> State:
    outdir = Path(outdir)
    got = {}
    t = None
    for name in _STATE_FIELDS:
        arr, t, stored = read_snapshot(outdir / f"{tag}_{name}.snap")
        if stored != name:
            raise SnapshotError(f"{tag}_{name}.snap stores field {stored!r}")
        got[name] = arr
    v = np.stack([got["v1"], got["v2"]])
    state = State(v=v, T=got["T"], w=got["w"], p_s=got["p_s"][..., 0], t=t)
    if v.shape[1:] != grid.shape():
        raise SnapshotError(f"state {tag} has shape {v.shape[1:]}, grid wants {grid.shape()}")
    return state


_FORCING_FIELDS = ("tau1", "tau2", "ts_x_lo", "ts_x_hi", "ts_y_lo", "ts_y_hi")


def write_forcing(dirpath, bf: BoundaryForcing) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, t in enumerate(bf.times):
        arrays = {
            "tau1": bf.tau[k, 0][:, :, None],
            "tau2": bf.tau[k, 1][:, :, None],
            "ts_x_lo": bf.ts["x_lo"][k][None, :, :],
            "ts_x_hi": bf.ts["x_hi"][k][None, :, :],
            "ts_y_lo": bf.ts["y_lo"][k][:, None, :],
            "ts_y_hi": bf.ts["y_hi"][k][:, None, :],
        }
        for name in _FORCING_FIELDS:
            fname = f"forcing_{k:04d}_{name}.snap"
            write_snapshot(dirpath / fname, arrays[name], t, name)
            lines.append(f"{float(t)!r} {fname}")
    (dirpath / "forcing.index").write_text("\n".join(lines) + "\n")


def read_forcing(dirpath) -> BoundaryForcing:
    dirpath = Path(dirpath)
    index = dirpath / "forcing.index"
    if not index.exists():
        raise SnapshotError(f"{index}: missing forcing index")
    groups: dict = {}
    for lineno, line in enumerate(index.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            t_tok, fname = line.split()
            t = float(t_tok)
        except ValueError:
            raise SnapshotError(f"{index}:{lineno}: expected '<time> <path>'") from None
        arr, t_snap, name = read_snapshot(dirpath / fname)
        if abs(t_snap - t) > 1e-12 * max(1.0, abs(t)):
            raise SnapshotError(f"{index}:{lineno}: index time {t} != snapshot time {t_snap}")
        groups.setdefault(t, {})[name] = arr
    if not groups:
        raise SnapshotError(f"{index}: empty forcing index")
    times = np.array(sorted(groups))
    tau, ts = [], {"x_lo": [], "x_hi": [], "y_lo": [], "y_hi": []}
    for t in times:
        fields = groups[t]
        missing = [n for n in _FORCING_FIELDS if n not in fields]
        if missing:
            raise SnapshotError(f"forcing sample t={t} is missing fields {missing}")
        tau.append(np.stack([fields["tau1"][:, :, 0], fields["tau2"][:, :, 0]]))
        ts["x_lo"].append(fields["ts_x_lo"][0])
        ts["x_hi"].append(fields["ts_x_hi"][0])
        ts["y_lo"].append(fields["ts_y_lo"][:, 0, :])
        ts["y_hi"].append(fields["ts_y_hi"][:, 0, :])
    return BoundaryForcing(times=times, tau=np.stack(tau),
                           ts={k: np.stack(v) for k, v in ts.items()})


def write_report(path, report: dict) -> None:
    lines = []
    for key in sorted(report):
        val = report[key]
        if isinstance(val, float):
            val = repr(val)
        lines.append(f"{key} = {val}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> dict:
    return parse_kv(Path(path).read_text())


# ---------------------------------------------------------------------------
# initial data and manufactured solutions


def band_limited_state(grid: GridSpec, seed: int, amplitude: float = 1.0,
                       rough: bool = False) -> State:
    """Random data on the lowest 4x4x2 modes, constraint-projected.

    rough=True adds z-uniform horizontal white noise at the grid scale, so
    the vertical derivative stays square-summable while horizontal
    derivatives carry O(1/dx) energy.
    """
    rng = np.random.default_rng(seed)
    xh = (grid.xc / grid.Lx)[:, None, None]
    yh = (grid.yc / grid.Ly)[None, :, None]
    zh = ((grid.zc + grid.h) / grid.h)[None, None, :]
    coef_v = rng.standard_normal((2, 4, 4, 2))
    coef_T = rng.standard_normal((4, 4, 2))
    v = np.zeros((2,) + grid.shape())
    T = np.zeros(grid.shape())
    for m in range(4):
        for n in range(4):
            sxy = np.sin((m + 1) * np.pi * xh) * np.sin((n + 1) * np.pi * yh)
            cxy = np.cos(m * np.pi * xh) * np.cos(n * np.pi * yh)
            for k in range(2):
                shape = np.cos(k * np.pi * zh) / (1.0 + m + n + k) ** 2
                v[0] += coef_v[0, m, n, k] * sxy * shape
                v[1] += coef_v[1, m, n, k] * sxy * shape
                T += coef_T[m, n, k] * cxy * shape
    vmax = float(np.abs(v).max()) + 1e-300
    tmax = float(np.abs(T).max()) + 1e-300
    v *= amplitude / vmax
    T *= amplitude / tmax
    if rough:
        window = 16.0 * (xh * (1.0 - xh) * yh * (1.0 - yh))[:, :, 0]
        noise = rng.standard_normal((2, grid.nx, grid.ny)) * window
        v += 0.5 * amplitude * noise[..., None]
    solver = PoissonSolver(grid)
    v, _, rep = project(v, 1.0, grid, solver)
    if not rep.converged:
        raise NumericalFailure("initial-data projection did not converge", None)
    return State(v=v, T=T, w=reconstruct_w(v, grid),
                 p_s=np.zeros((grid.nx, grid.ny)), t=0.0)


def _mms_v(X, Y, Z, grid: GridSpec, amp: float):
    """Streamfunction barotropic part + zero-depth-average baroclinic part;
    vanishes identically on the side walls, d/dz vanishes at top/bottom."""
    px, py = np.pi / grid.Lx, np.pi / grid.Ly
    s = np.pi * (Z + grid.h) / grid.h
    v1 = amp * py * np.sin(px * X) ** 2 * np.sin(2.0 * py * Y) \
        + 0.5 * amp * np.sin(px * X) * np.sin(py * Y) * np.cos(s)
    v2 = -amp * px * np.sin(2.0 * px * X) * np.sin(py * Y) ** 2 \
        - 0.3 * amp * np.sin(px * X) * np.sin(py * Y) * np.cos(s)
    return v1, v2


def _mms_dzv(X, Y, Z, grid: GridSpec, amp: float):
    px, py = np.pi / grid.Lx, np.pi / grid.Ly
    s = np.pi * (Z + grid.h) / grid.h
    ds = np.pi / grid.h
    common = np.sin(px * X) * np.sin(py * Y) * (-np.sin(s)) * ds
    return 0.5 * amp * common, -0.3 * amp * common


def _mms_T(X, Y, Z, grid: GridSpec, amp: float):
    px, py = np.pi / grid.Lx, np.pi / grid.Ly
    s = np.pi * (Z + grid.h) / grid.h
    return amp * np.cos(px * X) * np.cos(py * Y) * (1.0 + 0.5 * np.cos(s)) \
        + 0.4 * amp * np.cos(2.0 * px * X) * np.cos(py * Y) * np.cos(s)


def mms_state(grid: GridSpec, amp: float = 0.5) -> State:
    X = grid.xc[:, None, None]
    Y = grid.yc[None, :, None]
    Z = grid.zc[None, None, :]
    v1, v2 = _mms_v(X, Y, Z, grid, amp)
    v = np.stack([np.broadcast_to(v1, grid.shape()).copy(),
                  np.broadcast_to(v2, grid.shape()).copy()])
    T = np.broadcast_to(_mms_T(X, Y, Z, grid, amp), grid.shape()).copy()
    return State(v=v, T=T, w=reconstruct_w(v, grid),
                 p_s=np.zeros((grid.nx, grid.ny)), t=0.0)


def mms_wall_residual(grid: GridSpec, amp: float = 0.5) -> float:
    """Largest violation of the analytic side/top/bottom conditions."""
    Yf = grid.yc[None, :, None]
    Zc = grid.zc[None, None, :]
    Xf = grid.xc[:, None, None]
    worst = 0.0
    for X, Y in ((np.array(0.0), Yf), (np.array(grid.Lx), Yf),
                 (Xf, np.array(0.0)), (Xf, np.array(grid.Ly))):
        v1, v2 = _mms_v(X, Y, Zc, grid, amp)
        worst = max(worst, float(np.abs(v1).max()), float(np.abs(v2).max()))
    for Z in (np.array(-grid.h), np.array(0.0)):
        d1, d2 = _mms_dzv(Xf, Yf, Z, grid, amp)
        worst = max(worst, float(np.abs(d1).max()), float(np.abs(d2).max()))
    return worst


def mms_source(grid: GridSpec, params: PhysParams, amp: float = 0.5):
    """Steady forcing for the sampled analytic fields (computed once,
    reused every step).

    The source is the negated right-hand side evaluated on a 4x finer grid
    and volume-averaged down. A source computed on the run grid itself would
    cancel that grid's truncation error term by term and hide the scheme's
    spatial order; the fine-grid source is accurate to O((dx/4)^2), so what
    separates the run from the samples is the run's own truncation error.
    """
    if mms_wall_residual(grid, amp) > 1e-12 * max(amp, 1.0):
        raise ConfigError("manufactured fields violate the wall conditions")
    exact = mms_state(grid, amp)
    fine = GridSpec(grid.Lx, grid.Ly, grid.h, 4 * grid.nx, 4 * grid.ny, 4 * grid.nz)
    fex = mms_state(fine, amp)
    tend = explicit_tendency(fex, params, fine, None)
    sv = -(tend.dv + np.stack([dzz_centers(fex.v[c], fine) for c in range(2)])
           / params.Re2)
    sT = -(tend.dT + params.eps * dzz_centers(fex.T, fine))
    return SourceForcing(restrict(restrict(sv)), restrict(restrict(sT))), exact


def restrict(arr: np.ndarray) -> np.ndarray:
    """Volume average onto the 2x-coarser grid (exact for cell means)."""
    if arr.ndim == 4:
        return np.stack([restrict(a) for a in arr])
    nx, ny, nz = arr.shape
    if nx % 2 or ny % 2 or nz % 2:
        raise ValueError(f"cannot coarsen odd shape {arr.shape}")
    return arr.reshape(nx // 2, 2, ny // 2, 2, nz // 2, 2).mean(axis=(1, 3, 5))


def default_boundary_forcing(grid: GridSpec, t_end: float, n_samples: int = 7,
                             amp_tau: float = 0.1, amp_ts: float = 0.2) -> BoundaryForcing:
    """Smooth compatible wind stress and side temperature on a sample grid."""
    times = np.linspace(0.0, t_end, max(int(n_samples), 3))
    xh = grid.xc / grid.Lx
    yh = grid.yc / grid.Ly
    zprof = np.cos(np.pi * (grid.zc + grid.h) / grid.h)
    wx = np.sin(np.pi * xh) ** 2
    wy = np.sin(np.pi * yh) ** 2
    base1 = wx[:, None] * wy[None, :]
    base2 = np.sin(2.0 * np.pi * xh)[:, None] * wy[None, :]
    tau = np.empty((len(times), 2, grid.nx, grid.ny))
    ts = {"x_lo": np.empty((len(times), grid.ny, grid.nz)),
          "x_hi": np.empty((len(times), grid.ny, grid.nz)),
          "y_lo": np.empty((len(times), grid.nx, grid.nz)),
          "y_hi": np.empty((len(times), grid.nx, grid.nz))}
    span = max(t_end, 1e-30)
    for k, t in enumerate(times):
        s = 1.0 + 0.5 * np.sin(2.0 * np.pi * t / span)
        c = 1.0 + 0.3 * np.cos(np.pi * t / span)
        tau[k, 0] = amp_tau * s * base1
        tau[k, 1] = 0.6 * amp_tau * c * base2
        ts["x_lo"][k] = amp_ts * s * wy[:, None] * zprof[None, :]
        ts["x_hi"][k] = -amp_ts * c * wy[:, None] * zprof[None, :]
        ts["y_lo"][k] = amp_ts * c * wx[:, None] * zprof[None, :]
        ts["y_hi"][k] = amp_ts * 0.5 * s * wx[:, None] * zprof[None, :]
    return BoundaryForcing(times=times, tau=tau, ts=ts)


# ---------------------------------------------------------------------------
# run loop


@dataclass
class SimResult:
    state: State
    ledger: EnergyLedger
    steps: int
    max_constraint_rel: float
    max_constraint_res: float
    min_dt: float
    sampled_states: list


def simulate(state: State, params: PhysParams, grid: GridSpec,
             stepping: StepConfig, t_end: float, forcing=None,
             freeze_v: bool = False, fixed_dt: float | None = None,
             outdir=None, snapshot_times=(), keep_states: bool = False,
             solver: PoissonSolver | None = None) -> SimResult:
    """March to t_end collecting the ledger; snapshot times are landed on
    exactly. On numerical failure the last accepted state is checkpointed
    (when outdir is set) and the failure re-raised with the path attached."""
    if solver is None:
        solver = PoissonSolver(grid, tol=stepping.projection_tol)
    sched = SampleScheduler(stepping.dt_max)
    ledger = EnergyLedger()
    ledger.append(sample(state, params, grid))
    kept = [state.copy()] if keep_states else []
    snaps = sorted(float(s) for s in snapshot_times)
    if outdir is not None:
        Path(outdir).mkdir(parents=True, exist_ok=True)
    eps_t = 1e-12 * max(1.0, t_end)
    steps = 0
    max_rel = 0.0
    max_res = 0.0
    min_dt = np.inf
    while state.t < t_end - eps_t:
        dt = fixed_dt if fixed_dt is not None else cfl_dt(state, params, grid, stepping)
        dt = min(dt, t_end - state.t)
        if snaps and snaps[0] > state.t + eps_t:
            dt = min(dt, snaps[0] - state.t)
        try:
            state, rep = step(state, params, grid, stepping, solver,
                              forcing=forcing, freeze_v=freeze_v, dt=dt)
        except NumericalFailure as exc:
            last = exc.state
            if outdir is not None and last is not None:
                write_state(outdir, last, "checkpoint")
                exc.checkpoint = str(Path(outdir) / "checkpoint_v1.snap")
            raise
        steps += 1
        max_rel = max(max_rel, rep.constraint_rel)
        max_res = max(max_res, rep.constraint_res)
        min_dt = min(min_dt, rep.dt)
        if sched.due(state.t):
            ledger.append(sample(state, params, grid,
                                 residual_T=rep.energy_residual_T,
                                 residual_v=rep.energy_residual_v))
            if keep_states:
                kept.append(state.copy())
        if snaps and state.t >= snaps[0] - eps_t:
            if outdir is not None:
                write_state(outdir, state, f"t{snaps[0]:g}".replace(".", "p"))
            snaps.pop(0)
    return SimResult(state=state, ledger=ledger, steps=steps,
                     max_constraint_rel=max_rel, max_constraint_res=max_res,
                     min_dt=float(min_dt) if steps else 0.0, sampled_states=kept)


# ---------------------------------------------------------------------------
# scenarios: each returns (exit code, report dict) and writes artifacts


def _fit_growth_rate(ledger: EnergyLedger) -> float:
    """Slope bound for log ||(v,T)||^2 along the ledger (0 for zero data)."""
    t = ledger.column("t")
    e = ledger.column("l2_v") ** 2 + ledger.column("l2_T") ** 2
    if e.max() == 0.0 or len(t) < 2:
        return 0.0
    loge = np.log(e + 1e-300)
    slope = np.diff(loge) / np.maximum(np.diff(t), 1e-300)
    return float(slope.max())


def scenario_decay(cfg: RunConfig):
    amp = cfg.extra_float("amplitude", 1.0)
    state = band_limited_state(cfg.grid, cfg.seed, amplitude=amp)
    e0 = norm_l2(state.v, cfg.grid) ** 2 + norm_l2(state.T, cfg.grid) ** 2
    res = simulate(state, cfg.params, cfg.grid, cfg.stepping, cfg.t_end,
                   outdir=cfg.outdir, snapshot_times=(cfg.t_end,))
    res.ledger.to_csv(Path(cfg.outdir) / "ledger.csv")
    e1 = norm_l2(res.state.v, cfg.grid) ** 2 + norm_l2(res.state.T, cfg.grid) ** 2
    report = {
        "scenario": "decay", "steps": res.steps, "t_end": res.state.t,
        "energy_initial": float(e0), "energy_final": float(e1),
        "growth_rate_max": _fit_growth_rate(res.ledger),
        "max_constraint_rel": res.max_constraint_rel,
    }
    return 0, report


def _mms_member(grid: GridSpec, cfg: RunConfig, amp: float):
    forcing, exact = mms_source(grid, cfg.params, amp)
    res = simulate(exact.copy(), cfg.params, grid, cfg.stepping, cfg.t_end,
                   forcing=forcing)
    ev = norm_l2(res.state.v - exact.v, grid) / max(norm_l2(exact.v, grid), 1e-300)
    eT = norm_l2(res.state.T - exact.T, grid) / max(norm_l2(exact.T, grid), 1e-300)
    return ev, eT


def scenario_mms(cfg: RunConfig):
    if cfg.params.alpha_T != 0.0:
        raise ConfigError("scenario mms requires physics.alpha_T = 0 "
                          "(the manufactured fields satisfy insulating sides)")
    amp = cfg.extra_float("amplitude", 0.5)
    coarse = cfg.grid
    fine = GridSpec(coarse.Lx, coarse.Ly, coarse.h,
                    2 * coarse.nx, 2 * coarse.ny, 2 * coarse.nz)
    with ThreadPoolExecutor(max_workers=worker_count(2)) as pool:
        fut_c = pool.submit(_mms_member, coarse, cfg, amp)
        fut_f = pool.submit(_mms_member, fine, cfg, amp)
        (ev_c, eT_c), (ev_f, eT_f) = fut_c.result(), fut_f.result()
    order_v = float(np.log2(ev_c / max(ev_f, 1e-300)))
    order_T = float(np.log2(eT_c / max(eT_f, 1e-300)))
    report = {
        "scenario": "mms", "err_v_coarse": ev_c, "err_T_coarse": eT_c,
        "err_v_fine": ev_f, "err_T_fine": eT_f,
        "order_v": order_v, "order_T": order_T,
    }
    ok = order_v >= 1.8 and order_T >= 1.8
    report["order_ok"] = ok
    return (0 if ok else 4), report


def _sweep_member(cfg: RunConfig, eps: float, state0: State):
    params = PhysParams(Re1=cfg.params.Re1, Re2=cfg.params.Re2, R_T=cfg.params.R_T,
                        f=cfg.params.f, eps=eps, alpha_T=cfg.params.alpha_T,
                        alpha_v=cfg.params.alpha_v, delta=cfg.params.delta)
    res = simulate(state0.copy(), params, cfg.grid, cfg.stepping, cfg.t_end)
    return eps, res.state


def scenario_eps_sweep(cfg: RunConfig):
    eps_list = cfg.extra_floats("eps_list", "0.1,0.01,0.001,0")
    if 0.0 not in eps_list:
        raise ConfigError("scenario.eps_list must include 0")
    amp = cfg.extra_float("amplitude", 0.5)
    state0 = band_limited_state(cfg.grid, cfg.seed, amplitude=amp)
    with ThreadPoolExecutor(max_workers=worker_count(len(eps_list))) as pool:
        finals = list(pool.map(lambda e: _sweep_member(cfg, e, state0), eps_list))
    rep = epsilon_sweep_report([(e, s.T) for e, s in finals], cfg.grid)
    ref_v = next(s.v for e, s in finals if e == 0.0)
    vdiffs = {e: norm_l2(s.v - ref_v, cfg.grid) for e, s in finals if e > 0.0}
    report = {"scenario": "eps_sweep", "order": rep["order"],
              "monotone_ok": rep["monotone_ok"]}
    for e, d in zip(rep["eps"], rep["diffs"]):
        report[f"diff_T_eps_{e:g}"] = float(d)
    for e, d in vdiffs.items():
        report[f"diff_v_eps_{e:g}"] = float(d)
    ok = rep["monotone_ok"] and rep["order"] > 0.5
    report["sweep_ok"] = ok
    return (0 if ok else 4), report


def _perturbed(state: State, direction: State, delta: float, grid: GridSpec) -> State:
    base = np.sqrt(norm_l2(state.v, grid) ** 2 + norm_l2(state.T, grid) ** 2)
    size = np.sqrt(norm_l2(direction.v, grid) ** 2 + norm_l2(direction.T, grid) ** 2)
    scale = delta * base / max(size, 1e-300)
    v = state.v + scale * direction.v
    return State(v=v, T=state.T + scale * direction.T, w=reconstruct_w(v, grid),
                 p_s=state.p_s.copy(), t=0.0)


def _diff_sq(states_a: list, states_b: list, grid: GridSpec) -> np.ndarray:
    if len(states_a) != len(states_b):
        raise ValueError("perturbation pair produced different sample counts")
    out = np.empty(len(states_a))
    for i, (a, b) in enumerate(zip(states_a, states_b)):
        if abs(a.t - b.t) > 1e-12 * max(1.0, a.t):
            raise ValueError("perturbation pair sample times diverged")
        out[i] = norm_l2(a.v - b.v, grid) ** 2 + norm_l2(a.T - b.T, grid) ** 2
    return out


def scenario_perturbation(cfg: RunConfig):
    delta0 = cfg.extra_float("delta0", 1e-3)
    amp = cfg.extra_float("amplitude", 0.5)
    base0 = band_limited_state(cfg.grid, cfg.seed, amplitude=amp)
    direction = band_limited_state(cfg.grid, cfg.seed + 1, amplitude=1.0)
    dt0 = cfg.extra_float("dt", 0.5 * min(
        cfl_dt(base0, cfg.params, cfg.grid, cfg.stepping), cfg.stepping.dt_max))
    members = [base0, _perturbed(base0, direction, delta0, cfg.grid),
               _perturbed(base0, direction, 0.5 * delta0, cfg.grid)]

    def run(s0):
        return simulate(s0.copy(), cfg.params, cfg.grid, cfg.stepping,
                        cfg.t_end, fixed_dt=dt0, keep_states=True)

    with ThreadPoolExecutor(max_workers=worker_count(3)) as pool:
        res_base, res_p1, res_p2 = list(pool.map(run, members))
    times = res_base.ledger.column("t")
    mon1 = gronwall_monitor(res_base.ledger, times,
                            _diff_sq(res_p1.sampled_states, res_base.sampled_states, cfg.grid))
    mon2 = gronwall_monitor(res_base.ledger, times,
                            _diff_sq(res_p2.sampled_states, res_base.sampled_states, cfg.grid))
    agree = abs(mon1["C_emp"] - mon2["C_emp"]) / max(abs(mon1["C_emp"]),
                                                     abs(mon2["C_emp"]), 1e-300)
    _ensure_out(cfg)
    res_base.ledger.to_csv(Path(cfg.outdir) / "ledger.csv")
    report = {
        "scenario": "perturbation", "delta0": delta0, "dt": dt0,
        "C_emp_delta0": mon1["C_emp"], "C_emp_half": mon2["C_emp"],
        "C_emp_agreement": float(agree),
        "bound_ok": bool(mon1["bound_ok"] and mon2["bound_ok"]),
        "R_final_delta0": float(mon1["R"][-1]), "R_final_half": float(mon2["R"][-1]),
    }
    ok = agree <= 0.2 and report["bound_ok"]
    report["perturbation_ok"] = ok
    return (0 if ok else 4), report


def _equivalence_once(cfg: RunConfig, grid: GridSpec, t_end: float):
    bf = default_boundary_forcing(grid, t_end,
                                  amp_tau=cfg.extra_float("amp_tau", 0.1),
                                  amp_ts=cfg.extra_float("amp_ts", 0.2))
    fdir = Path(cfg.outdir) / f"forcing_{grid.nx}x{grid.ny}x{grid.nz}"
    write_forcing(fdir, bf)
    bf = read_forcing(fdir)
    state = band_limited_state(grid, cfg.seed, amplitude=cfg.extra_float("amplitude", 0.3))
    n_star = cfg.extra_int("n_star", 128)
    return equivalence_run(state.v, state.T, bf, cfg.params, grid,
                           cfg.stepping, t_end, n_star=n_star)


def scenario_equivalence(cfg: RunConfig):
    if cfg.params.alpha_T <= 0.0 or cfg.params.alpha_v <= 0.0:
        raise ConfigError("scenario equivalence needs physics.alpha_T > 0 and "
                          "physics.alpha_v > 0 so both data paths are active")
    _ensure_out(cfg)
    coarse = cfg.grid
    rep_c = _equivalence_once(cfg, coarse, cfg.t_end)
    report = {"scenario": "equivalence",
              "rel_v_coarse": rep_c["rel_v"], "rel_T_coarse": rep_c["rel_T"]}
    if cfg.extra_int("refine", 1):
        fine = GridSpec(coarse.Lx, coarse.Ly, coarse.h,
                        2 * coarse.nx, 2 * coarse.ny, 2 * coarse.nz)
        rep_f = _equivalence_once(cfg, fine, cfg.t_end)
        sA = rep_c["state_direct"]
        sAf = rep_f["state_direct"]
        cal_v = norm_l2(restrict(sAf.v) - sA.v, coarse) / max(norm_l2(sA.v, coarse), 1e-300)
        cal_T = norm_l2(restrict(sAf.T) - sA.T, coarse) / max(norm_l2(sA.T, coarse), 1e-300)
        cal = max(cal_v, cal_T)
        disc_c = max(rep_c["rel_v"], rep_c["rel_T"])
        disc_f = max(rep_f["rel_v"], rep_f["rel_T"])
        ok = disc_c <= 5.0 * cal and disc_f < disc_c
        report.update({"rel_v_fine": rep_f["rel_v"], "rel_T_fine": rep_f["rel_T"],
                       "calibration_error": float(cal),
                       "discrepancy_coarse": float(disc_c),
                       "discrepancy_fine": float(disc_f),
                       "equivalence_ok": ok})
        return (0 if ok else 4), report
    return 0, report


def scenario_rough(cfg: RunConfig):
    amp = cfg.extra_float("amplitude", 1.0)
    state = band_limited_state(cfg.grid, cfg.seed, amplitude=amp, rough=True)
    e0 = norm_l2(state.v, cfg.grid) ** 2 + norm_l2(state.T, cfg.grid) ** 2
    envelope = cfg.extra_float(
        "envelope", 10.0 * e0 * max(cfg.params.Re1, cfg.params.R_T))
    res = simulate(state, cfg.params, cfg.grid, cfg.stepping, cfg.t_end,
                   outdir=cfg.outdir, snapshot_times=(cfg.t_end,))
    res.ledger.to_csv(Path(cfg.outdir) / "ledger.csv")
    tw = res.ledger.column("tw_gradh_v") + res.ledger.column("tw_gradh_T")
    max_tw = float(tw.max())
    ok = bool(np.isfinite(max_tw)) and max_tw <= envelope
    report = {"scenario": "rough", "steps": res.steps,
              "energy_initial": float(e0), "max_t_weighted": max_tw,
              "envelope": float(envelope), "rough_ok": ok}
    return (0 if ok else 4), report


def scenario_forced(cfg: RunConfig):
    if cfg.params.alpha_v <= 0.0:
        raise ConfigError("scenario forced needs physics.alpha_v > 0")
    _ensure_out(cfg)
    bf = default_boundary_forcing(cfg.grid, cfg.t_end,
                                  amp_tau=cfg.extra_float("amp_tau", 0.1),
                                  amp_ts=cfg.extra_float("amp_ts", 0.2))
    fdir = Path(cfg.outdir) / "forcing"
    write_forcing(fdir, bf)
    bf = read_forcing(fdir)
    bf.validate(cfg.grid, cfg.params)
    state = band_limited_state(cfg.grid, cfg.seed,
                               amplitude=cfg.extra_float("amplitude", 0.5))
    res = simulate(state, cfg.params, cfg.grid, cfg.stepping, cfg.t_end,
                   forcing=DirectForcing(bf, cfg.params),
                   outdir=cfg.outdir, snapshot_times=(cfg.t_end,))
    res.ledger.to_csv(Path(cfg.outdir) / "ledger.csv")
    report = {"scenario": "forced", "steps": res.steps,
              "max_constraint_rel": res.max_constraint_rel,
              "max_constraint_res": res.max_constraint_res,
              "min_dt": res.min_dt,
              "energy_final": float(norm_l2(res.state.v, cfg.grid) ** 2
                                    + norm_l2(res.state.T, cfg.grid) ** 2)}
    return 0, report


def _ensure_out(cfg: RunConfig) -> bool:
    Path(cfg.outdir).mkdir(parents=True, exist_ok=True)
    return True


SCENARIOS = {
    "decay": scenario_decay,
    "mms": scenario_mms,
    "eps_sweep": scenario_eps_sweep,
    "perturbation": scenario_perturbation,
    "equivalence": scenario_equivalence,
    "rough": scenario_rough,
    "forced": scenario_forced,
}


def run_scenario(cfg: RunConfig) -> int:
    """Execute one scenario, write report.txt (and a checkpoint on failure);
    returns the process exit code."""
    _ensure_out(cfg)
    try:
        code, report = SCENARIOS[cfg.scenario](cfg)
    except NumericalFailure as exc:
        report = {"scenario": cfg.scenario, "failed": True, "error": str(exc.args[0])}
        checkpoint = getattr(exc, "checkpoint", None)
        if checkpoint:
            report["checkpoint"] = checkpoint
        write_report(Path(cfg.outdir) / "report.txt", report)
        return 3
    report.setdefault("seed", cfg.seed)
    write_report(Path(cfg.outdir) / "report.txt", report)
    return code
