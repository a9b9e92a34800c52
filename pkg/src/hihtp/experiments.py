"""Phase-transition sweeps over recovery problems.

A sweep runs seeded trials over a (n, mu, s, sigma) grid (demixing adds
M, N, S), applies the success rule (relative error <= 1e-4 within the
iteration cap) and the preemptive-failure rule (mu < s * sigma fails
without solving), and persists raw per-trial records plus per-cell
aggregates as CSV.  Every record is a pure function of the grid and the
base seed: trial seeds are derived by hashing (base_seed, n, mu, s, sigma,
trial), so cells are independently reproducible and sweeps can be resumed
or parallelized without changing the numbers.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from itertools import product
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .ensembles import gen_blind_instance, gen_demix_instance
from .hier_sparse import SparsityLevels
from .solver import SolverConfig, hihtp_solve, relative_error

__all__ = [
    "SUCCESS_REL_ERROR",
    "TrialParams",
    "TrialRecord",
    "CellAggregate",
    "PhaseTable",
    "PhaseGrid",
    "DemixGrid",
    "PhaseBoundary",
    "derive_trial_seed",
    "run_trial",
    "run_demix_trial",
    "run_phase",
    "run_demix_phase",
    "fit_phase_boundary",
    "read_records",
    "write_records",
    "read_config",
    "parse_config_text",
    "format_config",
    "phase_grid_from_config",
    "demix_grid_from_config",
]

SUCCESS_REL_ERROR = 1e-4

RAW_HEADER = "n,mu,s,sigma,trial,seed,preempted,success,rel_error,iterations,wall_time_s"
AGG_HEADER = "n,sigma,s,mu,trials,success_fraction,mean_rel_error,mean_iterations"
DEMIX_RAW_HEADER = "n,mu,s,sigma,M,N,S,trial,seed,preempted,success,rel_error,iterations,wall_time_s"
DEMIX_AGG_HEADER = "n,sigma,s,mu,M,N,S,trials,success_fraction,mean_rel_error,mean_iterations"

_MASK64 = (1 << 64) - 1


class TrialParams(NamedTuple):
    n: int
    mu: int
    s: int
    sigma: int
    trial: int
    M: int = 1
    N: int = 1
    S: int = 1


@dataclass(frozen=True)
class TrialRecord:
    """Outcome of a single recovery trial."""

    n: int
    mu: int
    s: int
    sigma: int
    trial: int
    seed: int
    preempted: bool
    success: bool
    rel_error: float
    iterations: int
    wall_time_s: float
    M: int = 1
    N: int = 1
    S: int = 1

    def __post_init__(self):
        if self.preempted and (self.success or self.iterations != 0):
            raise ValueError("a preempted trial must fail with zero iterations")

    @property
    def cell(self) -> tuple:
        return (self.n, self.sigma, self.s, self.mu, self.M, self.N, self.S)


@dataclass(frozen=True)
class CellAggregate:
    n: int
    sigma: int
    s: int
    mu: int
    trials: int
    success_fraction: float
    mean_rel_error: float
    mean_iterations: float
    max_rel_error: float
    mean_wall_time_s: float
    M: int = 1
    N: int = 1
    S: int = 1


@dataclass
class PhaseTable:
    """Per-cell aggregates of a sweep, ordered by (n, sigma, s, mu[, M])."""

    cells: list[CellAggregate]
    demix: bool = False

    @classmethod
    def from_records(cls, records: Iterable[TrialRecord], demix: bool = False) -> "PhaseTable":
        groups: dict[tuple, list[TrialRecord]] = {}
        for rec in records:
            groups.setdefault(rec.cell, []).append(rec)
        cells = []
        for key in sorted(groups):
            recs = sorted(groups[key], key=lambda r: r.trial)
            n, sigma, s, mu, M, N, S = key
            trials = len(recs)
            errors = np.array([r.rel_error for r in recs])
            cells.append(
                CellAggregate(
                    n=n,
                    sigma=sigma,
                    s=s,
                    mu=mu,
                    trials=trials,
                    success_fraction=sum(r.success for r in recs) / trials,
                    mean_rel_error=float(np.mean(errors)),
                    mean_iterations=float(np.mean([r.iterations for r in recs])),
                    max_rel_error=float(np.max(errors)),
                    mean_wall_time_s=float(np.mean([r.wall_time_s for r in recs])),
                    M=M,
                    N=N,
                    S=S,
                )
            )
        return cls(cells=cells, demix=demix)

    def cell(self, n: int, sigma: int, s: int, mu: int, M: int = 1, N: int = 1, S: int = 1) -> CellAggregate:
        for c in self.cells:
            if (c.n, c.sigma, c.s, c.mu, c.M, c.N, c.S) == (n, sigma, s, mu, M, N, S):
                return c
        raise KeyError(f"no cell (n={n}, sigma={sigma}, s={s}, mu={mu}, M={M}, N={N}, S={S})")

    def to_csv(self, path) -> None:
        header = DEMIX_AGG_HEADER if self.demix else AGG_HEADER
        lines = [header]
        for c in self.cells:
            front = f"{c.n},{c.sigma},{c.s},{c.mu}"
            if self.demix:
                front += f",{c.M},{c.N},{c.S}"
            lines.append(
                f"{front},{c.trials},{c.success_fraction!r},{c.mean_rel_error!r},{c.mean_iterations!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "PhaseTable":
        lines = Path(path).read_text().strip().splitlines()
        if not lines or lines[0] not in (AGG_HEADER, DEMIX_AGG_HEADER):
            raise ValueError(f"unrecognized aggregate header in {path}")
        demix = lines[0] == DEMIX_AGG_HEADER
        cells = []
        for line in lines[1:]:
            parts = line.split(",")
            if demix:
                n, sigma, s, mu, M, N, S = (int(v) for v in parts[:7])
                trials, frac, err, iters = parts[7:]
            else:
                n, sigma, s, mu = (int(v) for v in parts[:4])
                M = N = S = 1
                trials, frac, err, iters = parts[4:]
            cells.append(
                CellAggregate(
                    n=n, sigma=sigma, s=s, mu=mu, trials=int(trials),
                    success_fraction=float(frac), mean_rel_error=float(err),
                    mean_iterations=float(iters), max_rel_error=float("nan"),
                    mean_wall_time_s=float("nan"), M=M, N=N, S=S,
                )
            )
        return cls(cells=cells, demix=demix)


@dataclass
class PhaseGrid:
    """Sweep definition for single-user deconvolution."""

    n_values: list[int]
    sigma_values: list[int]
    s_values: list[int]
    mu_values: list[int]
    trials_per_cell: int = 100
    solver: SolverConfig = field(default_factory=SolverConfig)
    base_seed: int = 0

    def __post_init__(self):
        for name in ("n_values", "sigma_values", "s_values", "mu_values"):
            vals = getattr(self, name)
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            setattr(self, name, [int(v) for v in vals])
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")

    def cells(self) -> list[tuple[int, int, int, int]]:
        return list(product(self.n_values, self.sigma_values, self.s_values, self.mu_values))


@dataclass
class DemixGrid:
    """Sweep definition for multi-user demixing; also sweeps antenna counts."""

    n_values: list[int]
    sigma_values: list[int]
    s_values: list[int]
    mu_values: list[int]
    M_values: list[int]
    N: int
    S: int
    trials_per_cell: int = 100
    solver: SolverConfig = field(default_factory=SolverConfig)
    base_seed: int = 0
    identity_mixing: bool = False

    def __post_init__(self):
        for name in ("n_values", "sigma_values", "s_values", "mu_values", "M_values"):
            vals = getattr(self, name)
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            setattr(self, name, [int(v) for v in vals])
        if min(self.M_values) < 1:
            raise ValueError("antenna counts must be positive")
        if self.S > self.N:
            raise ValueError(f"S={self.S} exceeds N={self.N}")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")

    def cells(self) -> list[tuple[int, int, int, int, int]]:
        return list(
            product(self.n_values, self.sigma_values, self.s_values, self.mu_values, self.M_values)
        )


def derive_trial_seed(base_seed: int, n: int, mu: int, s: int, sigma: int, trial: int) -> int:
    """Per-trial seed hashed from the base seed and the cell coordinates.

    Demixing trials use the same derivation, so a (N=1, M=1) demixing sweep
    sees exactly the single-user draws.
    """
    ss = np.random.SeedSequence((int(base_seed) & _MASK64, n, mu, s, sigma, trial))
    return int(ss.generate_state(1, np.uint64)[0])


def run_trial(params: TrialParams, base_seed: int, solver: SolverConfig | None = None) -> TrialRecord:
    """Run one seeded single-user recovery trial.

    Draws a fresh operator and ground truth, solves, and scores success by
    the relative error of the lifted estimate.  When mu < s * sigma the
    trial fails preemptively without solving.
    """
    n, mu, s, sigma, trial = params.n, params.mu, params.s, params.sigma, params.trial
    seed = derive_trial_seed(base_seed, n, mu, s, sigma, trial)
    if mu < s * sigma:
        return TrialRecord(n, mu, s, sigma, trial, seed, True, False, float("nan"), 0, 0.0)
    t0 = time.perf_counter()
    op, _, _, w_true, y = gen_blind_instance(n, mu, s, sigma, seed)
    report = hihtp_solve(y, op, SparsityLevels(s, sigma), solver or SolverConfig())
    err = relative_error(report.estimate, w_true)
    wall = time.perf_counter() - t0
    return TrialRecord(n, mu, s, sigma, trial, seed, False, err <= SUCCESS_REL_ERROR, err,
                       report.iterations, wall)


def run_demix_trial(params: TrialParams, base_seed: int, solver: SolverConfig | None = None,
                    identity_mixing: bool = False) -> TrialRecord:
    """Run one seeded demixing trial with three-level recovery."""
    n, mu, s, sigma, trial = params.n, params.mu, params.s, params.sigma, params.trial
    M, N, S = params.M, params.N, params.S
    seed = derive_trial_seed(base_seed, n, mu, s, sigma, trial)
    if mu < s * sigma:
        return TrialRecord(n, mu, s, sigma, trial, seed, True, False, float("nan"), 0, 0.0,
                           M=M, N=N, S=S)
    t0 = time.perf_counter()
    op, _, W_true, Y = gen_demix_instance(n, mu, s, sigma, N, M, S, seed,
                                          identity_mixing=identity_mixing)
    report = hihtp_solve(Y, op, SparsityLevels(s, sigma, S=S), solver or SolverConfig())
    err = relative_error(report.estimate, W_true)
    wall = time.perf_counter() - t0
    return TrialRecord(n, mu, s, sigma, trial, seed, False, err <= SUCCESS_REL_ERROR, err,
                       report.iterations, wall, M=M, N=N, S=S)


# --- raw record persistence ---------------------------------------------------


def _record_to_line(rec: TrialRecord, demix: bool) -> str:
    mid = f",{rec.M},{rec.N},{rec.S}" if demix else ""
    return (
        f"{rec.n},{rec.mu},{rec.s},{rec.sigma}{mid},{rec.trial},{rec.seed},"
        f"{int(rec.preempted)},{int(rec.success)},{rec.rel_error!r},{rec.iterations},"
        f"{rec.wall_time_s!r}"
    )


def _record_from_line(line: str, demix: bool) -> TrialRecord:
    parts = line.split(",")
    if demix:
        n, mu, s, sigma, M, N, S = (int(v) for v in parts[:7])
        rest = parts[7:]
    else:
        n, mu, s, sigma = (int(v) for v in parts[:4])
        M = N = S = 1
        rest = parts[4:]
    trial, seed, preempted, success = int(rest[0]), int(rest[1]), bool(int(rest[2])), bool(int(rest[3]))
    return TrialRecord(n, mu, s, sigma, trial, seed, preempted, success,
                       float(rest[4]), int(rest[5]), float(rest[6]), M=M, N=N, S=S)


def write_records(records: Iterable[TrialRecord], path, demix: bool = False) -> None:
    header = DEMIX_RAW_HEADER if demix else RAW_HEADER
    lines = [header] + [_record_to_line(r, demix) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_records(path) -> list[TrialRecord]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] not in (RAW_HEADER, DEMIX_RAW_HEADER):
        raise ValueError(f"unrecognized raw-record header in {path}")
    demix = lines[0] == DEMIX_RAW_HEADER
    return [_record_from_line(line, demix) for line in lines[1:]]


# --- sweep drivers -------------------------------------------------------------


def _run_phase_cell(args):
    n, sigma, s, mu, trials, base_seed, solver = args
    return [run_trial(TrialParams(n, mu, s, sigma, t), base_seed, solver) for t in trials]


def _run_demix_cell(args):
    n, sigma, s, mu, M, N, S, trials, base_seed, solver, identity_mixing = args
    return [
        run_demix_trial(TrialParams(n, mu, s, sigma, t, M=M, N=N, S=S), base_seed, solver,
                        identity_mixing=identity_mixing)
        for t in trials
    ]


def _sorted_records(records: Iterable[TrialRecord]) -> list[TrialRecord]:
    return sorted(records, key=lambda r: (r.cell, r.trial))


def _execute(tasks, worker, raw_path, demix: bool, jobs: int, done: list[TrialRecord]):
    """Run cell tasks, streaming finished records to the raw file."""
    records = list(done)
    sink = None
    if raw_path is not None:
        raw_path = Path(raw_path)
        append = raw_path.exists() and bool(done)
        sink = raw_path.open("a" if append else "w")
        if not append:
            sink.write((DEMIX_RAW_HEADER if demix else RAW_HEADER) + "\n")
            sink.flush()

    def consume(batches):
        for batch in batches:
            records.extend(batch)
            if sink is not None:
                for rec in batch:
                    sink.write(_record_to_line(rec, demix) + "\n")
                sink.flush()

    try:
        if jobs <= 1 or len(tasks) <= 1:
            consume(map(worker, tasks))
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                consume(pool.map(worker, tasks))
    finally:
        if sink is not None:
            sink.close()
    return records


def _pending_trials(all_trials: int, done: list[TrialRecord]):
    done_keys = {(r.cell, r.trial) for r in done}

    def missing(cell_key) -> list[int]:
        return [t for t in range(all_trials) if (cell_key, t) not in done_keys]

    return missing


def run_phase(grid: PhaseGrid, out_dir=None, jobs: int = 1, resume: bool = False) -> PhaseTable:
    """Run a full single-user sweep and aggregate it.

    With ``out_dir`` set, raw records stream to phase_raw.csv as trials
    finish and the aggregate lands in phase_aggregate.csv.  With ``resume``,
    records already present in the raw file are kept and only missing trials
    run.  The aggregate is a pure function of (grid, base_seed) regardless
    of job count or resumption.
    """
    raw_path = agg_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        raw_path = out_dir / "phase_raw.csv"
        agg_path = out_dir / "phase_aggregate.csv"

    done: list[TrialRecord] = []
    if resume and raw_path is not None and raw_path.exists():
        done = read_records(raw_path)
    missing = _pending_trials(grid.trials_per_cell, done)

    tasks = []
    for n, sigma, s, mu in grid.cells():
        trials = missing((n, sigma, s, mu, 1, 1, 1))
        if trials:
            tasks.append((n, sigma, s, mu, trials, grid.base_seed, grid.solver))
    records = _execute(tasks, _run_phase_cell, raw_path, False, jobs, done)

    table = PhaseTable.from_records(_sorted_records(records))
    if agg_path is not None:
        table.to_csv(agg_path)
    return table


def run_demix_phase(grid: DemixGrid, out_dir=None, jobs: int = 1, resume: bool = False) -> PhaseTable:
    """Run a demixing sweep; same protocol as :func:`run_phase` with
    three-level recovery and files demix_raw.csv / demix_aggregate.csv."""
    raw_path = agg_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        raw_path = out_dir / "demix_raw.csv"
        agg_path = out_dir / "demix_aggregate.csv"

    done: list[TrialRecord] = []
    if resume and raw_path is not None and raw_path.exists():
        done = read_records(raw_path)
    missing = _pending_trials(grid.trials_per_cell, done)

    tasks = []
    for n, sigma, s, mu, M in grid.cells():
        trials = missing((n, sigma, s, mu, M, grid.N, grid.S))
        if trials:
            tasks.append((n, sigma, s, mu, M, grid.N, grid.S, trials, grid.base_seed,
                          grid.solver, grid.identity_mixing))
    records = _execute(tasks, _run_demix_cell, raw_path, True, jobs, done)

    table = PhaseTable.from_records(_sorted_records(records), demix=True)
    if agg_path is not None:
        table.to_csv(agg_path)
    return table


# --- phase boundary ------------------------------------------------------------


@dataclass
class PhaseBoundary:
    """Per-(n, sigma) crossing points mu50(s) and their least-squares slope."""

    n: int
    sigma: int
    points: list[tuple[int, int | None]]
    slope: float | None


def fit_phase_boundary(table: PhaseTable, level: float = 0.5) -> list[PhaseBoundary]:
    """Smallest grid mu reaching the given success level, per s, with a
    linear fit of mu50 against s.

    Slices that never reach the level are marked None and excluded from the
    fit; a fit needs at least two defined points.
    """
    if not 0 < level <= 1:
        raise ValueError("level must be in (0, 1]")
    by_pane: dict[tuple[int, int], list[CellAggregate]] = {}
    for c in table.cells:
        by_pane.setdefault((c.n, c.sigma), []).append(c)
    out = []
    for (n, sigma), cells in sorted(by_pane.items()):
        s_values = sorted({c.s for c in cells})
        points: list[tuple[int, int | None]] = []
        for s in s_values:
            crossing = [c.mu for c in cells if c.s == s and c.success_fraction >= level]
            points.append((s, min(crossing) if crossing else None))
        defined = [(s, mu) for s, mu in points if mu is not None]
        slope = None
        if len(defined) >= 2:
            xs = np.array([s for s, _ in defined], dtype=float)
            ys = np.array([mu for _, mu in defined], dtype=float)
            slope = float(np.polyfit(xs, ys, 1)[0])
        out.append(PhaseBoundary(n=n, sigma=sigma, points=points, slope=slope))
    return out


# --- config file format ---------------------------------------------------------


def _parse_token(tok: str):
    tok = tok.strip()
    low = tok.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def parse_config_text(text: str) -> dict:
    """Parse the key = value config format; comma-separated values become
    lists, tokens are coerced to int/float/bool where they parse."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        tokens = [t for t in value.split(",") if t.strip()]
        if not tokens:
            raise ValueError(f"config line {lineno}: no value for {key!r}")
        parsed = [_parse_token(t) for t in tokens]
        out[key] = parsed[0] if len(parsed) == 1 else parsed
    return out


def read_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


def format_config(mapping: dict) -> str:
    lines = []
    for key, value in mapping.items():
        if isinstance(value, (list, tuple)):
            rendered = ", ".join(str(v) for v in value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _solver_from_config(cfg: dict) -> SolverConfig:
    kwargs = {}
    for f in fields(SolverConfig):
        if f.name in cfg:
            kwargs[f.name] = cfg[f.name]
    return SolverConfig(**kwargs)


def phase_grid_from_config(cfg: dict) -> PhaseGrid:
    for key in ("n", "sigma", "s", "mu"):
        if key not in cfg:
            raise ValueError(f"config is missing required key {key!r}")
    return PhaseGrid(
        n_values=_as_list(cfg["n"]),
        sigma_values=_as_list(cfg["sigma"]),
        s_values=_as_list(cfg["s"]),
        mu_values=_as_list(cfg["mu"]),
        trials_per_cell=int(cfg.get("trials", 100)),
        solver=_solver_from_config(cfg),
        base_seed=int(cfg.get("base_seed", 0)),
    )


def demix_grid_from_config(cfg: dict) -> DemixGrid:
    for key in ("n", "sigma", "s", "mu", "M", "N", "S"):
        if key not in cfg:
            raise ValueError(f"config is missing required key {key!r}")
    return DemixGrid(
        n_values=_as_list(cfg["n"]),
        sigma_values=_as_list(cfg["sigma"]),
        s_values=_as_list(cfg["s"]),
        mu_values=_as_list(cfg["mu"]),
        M_values=_as_list(cfg["M"]),
        N=int(cfg["N"]),
        S=int(cfg["S"]),
        trials_per_cell=int(cfg.get("trials", 100)),
        solver=_solver_from_config(cfg),
        base_seed=int(cfg.get("base_seed", 0)),
        identity_mixing=bool(cfg.get("identity_mixing", False)),
    )
