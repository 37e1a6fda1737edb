"""Command-line entry point: ``cfris {run,sweep,validate,dump-channels}``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .baselines import Scheme
from .channel import assemble_channels, dump_channels
from .scenario import IQI_LEVELS, ConfigError, ScenarioConfig, config_from_dict, read_toml
from .sweep import SweepSpec, emit_results, run_cell, run_sweep, summarize, sweep_from_dict
from .wmmse import SolverOptions

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("cfris")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, many: bool):
    nargs = "+" if many else None
    p.add_argument("--config", type=Path, help="TOML scenario file (defaults: desk scale)")
    p.add_argument("--seed", type=int, help="master RNG seed (overrides rng_seed)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--power-dbm", type=float, nargs=nargs, help="power budget per UE and subcarrier")
    p.add_argument("--iqi-level", choices=IQI_LEVELS, nargs=nargs)
    p.add_argument("--ues", type=int, nargs=nargs, help="number of UEs")
    p.add_argument("--rx-antennas", type=int, nargs=nargs, help="antennas per AP")


def _solver(p, many: bool):
    schemes = [s.value for s in Scheme]
    p.add_argument("--scheme", choices=schemes, nargs="+" if many else None,
                   default=None if many else "proposed")
    p.add_argument("--max-iters", type=int, help="maximum outer iterations")
    p.add_argument("--tol", type=float, help="relative objective change for convergence")
    p.add_argument("--plot", action="store_true", help="also render PNG figures next to the CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfris", description="RIS-aided cell-free MIMO-OFDM precoding under IQ imbalance")
    parser.add_argument("--version", action="version", version=f"cfris {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="solve one scenario")
    _common(p, many=False)
    _solver(p, many=False)
    p.add_argument("--realization", type=int, default=0)

    p = sub.add_parser("sweep", help="Monte Carlo grid over power, IQI, UEs, antennas and schemes")
    _common(p, many=True)
    _solver(p, many=True)
    p.add_argument("--realizations", type=int, help="realizations per grid point")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--no-traces", action="store_true", help="skip trace_<realization>.csv files")

    p = sub.add_parser("validate", help="run the oracle self-check suite")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("dump-channels", help="write the channel fixture of one realization")
    _common(p, many=False)
    p.add_argument("--realization", type=int, default=0)
    return parser


def _load(args) -> tuple[ScenarioConfig, dict]:
    data = read_toml(args.config) if args.config else {}
    cfg = config_from_dict(data)
    if args.seed is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    return cfg, data.get("sweep", {})


def _single(cfg: ScenarioConfig, args) -> ScenarioConfig:
    changes = {k: v for k, v in (("power_dbm", args.power_dbm), ("iqi_level", args.iqi_level),
                                 ("num_ues", args.ues), ("rx_antennas", args.rx_antennas))
               if v is not None}
    return cfg.replace(**changes) if changes else cfg


def _options(args) -> SolverOptions:
    opts = SolverOptions()
    if args.max_iters is not None:
        if args.max_iters < 1:
            raise ConfigError("--max-iters must be ≥ 1")
        opts.max_outer_iters = args.max_iters
    if args.tol is not None:
        if args.tol <= 0:
            raise ConfigError("--tol must be positive")
        opts.tol = args.tol
    return opts


def cmd_run(args) -> int:
    cfg, _ = _load(args)
    cfg = _single(cfg, args)
    cell = {"scheme": args.scheme, "iqi_level": cfg.iqi_level, "power_dbm": cfg.power_dbm,
            "num_ues": cfg.num_ues, "rx_antennas": cfg.rx_antennas}
    res = run_cell(cfg, cell, args.realization, _options(args))
    if res.error:
        raise RuntimeError(res.error)
    print(f"scheme={res.scheme} sum_rate={res.sum_rate:.6f} iterations={res.iterations} "
          f"converged={res.converged} median_theta={res.median_theta:.4f}")
    if args.out:
        for path in emit_results([res], args.out, plot=args.plot):
            log.info("wrote %s", path)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, table = _load(args)
    spec = sweep_from_dict(table, cfg)
    overrides = {k: tuple(v) for k, v in (("powers_dbm", args.power_dbm),
                                          ("iqi_levels", args.iqi_level), ("num_ues", args.ues),
                                          ("rx_antennas", args.rx_antennas),
                                          ("schemes", args.scheme)) if v is not None}
    if args.realizations is not None:
        overrides["realizations"] = args.realizations
    if overrides:
        spec = SweepSpec(**{**spec.__dict__, **overrides})
    if args.workers < 1:
        raise ConfigError("--workers must be ≥ 1")
    results = run_sweep(spec, cfg, _options(args), workers=args.workers)
    for row in summarize(results):
        print(f"{row['scheme']:>8} {row['iqi_level']:>6} {row['power_dbm']:6.1f} dBm K={row['num_ues']} "
              f"Nr={row['rx_antennas']}: {row['mean_sum_rate']:.4f} ± {row['stderr_sum_rate']:.4f}"
              f" ({row['failed']} failed)")
    out = args.out or Path("results")
    for path in emit_results(results, out, traces=not args.no_traces, plot=args.plot):
        log.info("wrote %s", path)
    failed = sum(not r.ok for r in results)
    if failed:
        print(f"{failed} of {len(results)} runs failed; see the error column", file=sys.stderr)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .checks import run_checks
    results = run_checks(args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_dump(args) -> int:
    cfg, _ = _load(args)
    cfg = _single(cfg, args)
    out = args.out or Path(".")
    path = out / f"channels_{cfg.rng_seed}_{args.realization}.bin" if out.is_dir() or not out.suffix else out
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_channels(assemble_channels(cfg, args.realization), path, cfg.num_aps, cfg.num_ris)
    print(path)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate, "dump-channels": cmd_dump}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
