"""Monte Carlo sweeps over power, impairment level, UE count, antennas and scheme.

A cell is one grid point; a run is one (cell, realization) pair. The
realization index seeds channels, IQI and RIS initialization, so all cells
share the same random draws for a given realization (common random numbers).
"""
from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .baselines import Scheme, run_scheme
from .channel import assemble_channels
from .impairments import build_distortion, sample_iqi
from .scenario import IQI_LEVELS, ConfigError, ScenarioConfig, default_allocation
from .wmmse import SolverOptions

__all__ = ["SweepSpec", "RunResult", "RESULT_COLUMNS", "SUMMARY_COLUMNS", "TRACE_COLUMNS",
           "sweep_from_dict", "run_cell", "run_sweep", "summarize", "emit_results"]

log = logging.getLogger(__name__)

DEFAULT_POWERS = tuple(float(p) for p in range(-15, 11, 5))

RESULT_COLUMNS = ("scheme", "seed", "realization", "iqi_level", "power_dbm", "num_ues",
                  "rx_antennas", "tx_antennas", "sum_rate", "iterations", "converged",
                  "max_violation", "median_theta", "combiner_rate", "error")
CELL_COLUMNS = ("scheme", "iqi_level", "power_dbm", "num_ues", "rx_antennas", "tx_antennas")
SUMMARY_COLUMNS = CELL_COLUMNS + ("runs", "failed", "mean_sum_rate", "stderr_sum_rate",
                                  "mean_iterations", "converged_fraction", "median_theta")
TRACE_COLUMNS = ("scheme", "iqi_level", "power_dbm", "num_ues", "rx_antennas", "tx_antennas",
                 "iteration", "objective", "sum_rate", "max_violation")


@dataclass(frozen=True)
class SweepSpec:
    """Grid of cells; every non-scheme axis is crossed with every other."""

    powers_dbm: tuple = DEFAULT_POWERS
    iqi_levels: tuple = ("level3",)
    num_ues: tuple = (4,)
    rx_antennas: tuple = (4,)
    schemes: tuple = ("proposed",)
    realizations: int = 20

    def __post_init__(self):
        for name in ("powers_dbm", "iqi_levels", "num_ues", "rx_antennas", "schemes"):
            vals = tuple(getattr(self, name))
            if not vals:
                raise ConfigError(f"sweep.{name}: grid must be nonempty")
            object.__setattr__(self, name, vals)
        for lvl in self.iqi_levels:
            if lvl not in IQI_LEVELS:
                raise ConfigError(f"sweep.iqi_levels: unknown level {lvl!r}")
        for sch in self.schemes:
            if sch not in {s.value for s in Scheme}:
                raise ConfigError(f"sweep.schemes: unknown scheme {sch!r}")
        if self.realizations < 1:
            raise ConfigError("sweep.realizations: must be ≥ 1")

    def cells(self):
        """Grid points as dicts, in a fixed order."""
        for p, lvl, k, nr, sch in itertools.product(self.powers_dbm, self.iqi_levels, self.num_ues,
                                                     self.rx_antennas, self.schemes):
            yield {"power_dbm": float(p), "iqi_level": lvl, "num_ues": int(k),
                   "rx_antennas": int(nr), "scheme": sch}


def sweep_from_dict(data: Mapping | None, cfg: ScenarioConfig) -> SweepSpec:
    """Read the ``[sweep]`` table; missing axes collapse to the scenario's own value."""
    data = dict(data or {})
    known = {"powers_dbm", "iqi_levels", "num_ues", "rx_antennas", "schemes", "realizations"}
    for key in data:
        if key not in known:
            raise ConfigError(f"sweep.{key}: unknown key")
    return SweepSpec(
        powers_dbm=tuple(data.get("powers_dbm", DEFAULT_POWERS)),
        iqi_levels=tuple(data.get("iqi_levels", (cfg.iqi_level,))),
        num_ues=tuple(data.get("num_ues", (cfg.num_ues,))),
        rx_antennas=tuple(data.get("rx_antennas", (cfg.rx_antennas,))),
        schemes=tuple(data.get("schemes", ("proposed",))),
        realizations=int(data.get("realizations", 20)),
    )


@dataclass
class RunResult:
    scheme: str
    seed: int
    realization: int
    iqi_level: str
    power_dbm: float
    num_ues: int
    rx_antennas: int
    tx_antennas: int
    sum_rate: float = float("nan")
    iterations: int = 0
    converged: bool = False
    max_violation: float = float("nan")
    median_theta: float = float("nan")
    combiner_rate: float = float("nan")
    error: str = ""
    trace: list = field(default_factory=list, repr=False)

    @property
    def cell(self) -> tuple:
        return tuple(getattr(self, c) for c in CELL_COLUMNS)

    @property
    def ok(self) -> bool:
        return not self.error

    def row(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        return d


def run_cell(cfg: ScenarioConfig, cell: Mapping, realization: int,
             opts: SolverOptions | None = None) -> RunResult:
    """One solver run; exceptions are captured in ``RunResult.error``."""
    res = RunResult(scheme=cell["scheme"], seed=cfg.rng_seed, realization=realization,
                    iqi_level=cell["iqi_level"], power_dbm=float(cell["power_dbm"]),
                    num_ues=int(cell["num_ues"]), rx_antennas=int(cell["rx_antennas"]),
                    tx_antennas=cfg.tx_antennas)
    try:
        c = cfg.replace(power_dbm=res.power_dbm, iqi_level=res.iqi_level, num_ues=res.num_ues,
                        rx_antennas=res.rx_antennas)
        channels = assemble_channels(c, realization)
        dist = build_distortion(sample_iqi(c.iqi_level, c, realization=realization))
        state = run_scheme(res.scheme, channels, dist, c, default_allocation(c), opts, realization)
    except Exception as exc:  # recorded, the sweep continues
        log.warning("run failed (%s, realization %d): %s", cell, realization, exc)
        res.error = f"{type(exc).__name__}: {exc}"
        return res
    res.sum_rate = state.sum_rate
    res.iterations = state.iteration
    res.converged = state.converged
    res.max_violation = max(r.max_violation for r in state.trace)
    res.median_theta = float(np.median(np.abs(state.theta))) if state.theta.size else float("nan")
    res.combiner_rate = float(state.diagnostics.get("combiner_rate", float("nan")))
    res.trace = list(state.trace)
    return res


def _run_star(args):
    return run_cell(*args)


def run_sweep(spec: SweepSpec, cfg: ScenarioConfig, opts: SolverOptions | None = None,
              workers: int = 1) -> list[RunResult]:
    """Run every (cell, realization); ``workers > 1`` uses a process pool.

    The returned list is sorted by (cell order, realization) regardless of
    completion order.
    """
    jobs = [(cfg, cell, r, opts) for cell in spec.cells() for r in range(spec.realizations)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_star, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_run_star(j) for j in jobs]
    return results


def summarize(results: Sequence[RunResult]) -> list[dict]:
    """Per-cell mean and standard error of the sum-rate over successful runs."""
    groups: dict[tuple, list[RunResult]] = {}
    for r in results:
        groups.setdefault(r.cell, []).append(r)
    rows = []
    for cell, rs in groups.items():
        ok = [r for r in rs if r.ok]
        rates = np.array([r.sum_rate for r in ok])
        n = len(rates)
        rows.append({
            **dict(zip(CELL_COLUMNS, cell)),
            "runs": len(rs),
            "failed": len(rs) - n,
            "mean_sum_rate": float(rates.mean()) if n else float("nan"),
            "stderr_sum_rate": float(rates.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan"),
            "mean_iterations": float(np.mean([r.iterations for r in ok])) if n else float("nan"),
            "converged_fraction": float(np.mean([r.converged for r in ok])) if n else float("nan"),
            "median_theta": float(np.median([r.median_theta for r in ok])) if n else float("nan"),
        })
    return rows


def _write_csv(path: Path, columns, rows):
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({c: _fmt(row[c]) for c in columns})
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def emit_results(results: Sequence[RunResult], out_dir, traces: bool = True,
                 plot: bool = False) -> list[Path]:
    """Write results.csv, summary.csv and (optionally) trace_<realization>.csv files.

    With ``plot=True`` PNG figures are rendered next to the CSVs.
    """
    if not results:
        raise ValueError("no results to emit")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: {exc.strerror or exc}") from exc
    written = [out / "results.csv", out / "summary.csv"]
    _write_csv(written[0], RESULT_COLUMNS, (r.row() for r in results))
    summary = summarize(results)
    _write_csv(written[1], SUMMARY_COLUMNS, summary)
    if traces:
        by_real: dict[int, list[RunResult]] = {}
        for r in results:
            if r.trace:
                by_real.setdefault(r.realization, []).append(r)
        for real, rs in sorted(by_real.items()):
            rows = [{**dict(zip(CELL_COLUMNS, r.cell)), "iteration": t.iteration,
                     "objective": t.objective, "sum_rate": t.sum_rate,
                     "max_violation": t.max_violation} for r in rs for t in r.trace]
            path = out / f"trace_{real}.csv"
            _write_csv(path, TRACE_COLUMNS, rows)
            written.append(path)
    if plot:
        from .plotting import render_figures
        written += render_figures(results, summary, out)
    return written
