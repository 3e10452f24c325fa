"""Command line entry point: ``distloc run``, ``distloc sweep`` and ``distloc verify``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .filtering import FilterAbort
from .harness.config import ConfigError, load_config, preset_names
from .harness.io import write_csv, write_rmse_csv, write_summary, write_tracking_csv
from .harness.metrics import rmse_series
from .harness.simulation import run_scenario

log = logging.getLogger("distloc")


def _apply_overrides(cfg, args):
    over = {}
    if args.runs is not None:
        over["runs"] = args.runs
    if args.steps is not None:
        over["steps"] = args.steps
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "K", None) is not None:
        over["K"] = args.K
    return cfg.replace(**over) if over else cfg


def _write_outputs(cfg, results, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        write_csv(r, out / f"errors_run{r.run}.csv")
        write_tracking_csv(out / f"tracking_run{r.run}.csv", r)
    rmse = rmse_series(results, include_initial=True)
    write_rmse_csv(out / "rmse.csv", rmse)
    write_summary(out / "summary.json", results, cfg)
    return rmse


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    results = run_scenario(cfg, workers=args.workers)
    rmse = _write_outputs(cfg, results, Path(args.out))
    print(f"{cfg.name}: {cfg.runs} run(s) x {cfg.steps} steps, RMSE {rmse[0]:.4f} -> {rmse[-1]:.4f}; "
          f"outputs in {args.out}")
    return 0


def parse_param(spec: str):
    """``key=v1,v2,...`` -> (key, [values]); values are parsed as JSON where possible."""
    if "=" not in spec:
        raise argparse.ArgumentTypeError(f"expected key=v1,v2,..., got {spec!r}")
    key, raw = spec.split("=", 1)
    values = []
    for tok in raw.split(","):
        try:
            values.append(json.loads(tok))
        except json.JSONDecodeError:
            values.append(tok)
    return key.strip(), values


def cmd_sweep(args) -> int:
    base = _apply_overrides(load_config(args.config), args)
    key, values = args.param
    out = Path(args.out)
    rows = []
    for value in values:
        cfg = base.replace(**{key: value})
        tag = f"{key.replace('.', '_')}={value}"
        results = run_scenario(cfg, workers=args.workers)
        rmse = _write_outputs(cfg, results, out / tag)
        rows.append((value, rmse[0], rmse[-1]))
        print(f"{tag}: RMSE {rmse[0]:.4f} -> {rmse[-1]:.4f} (ratio {rmse[-1] / rmse[0]:.3f})")
    with (out / "sweep.csv").open("w") as fh:
        fh.write(f"{key},rmse_initial,rmse_final\n")
        for v, a, b in rows:
            fh.write(f"{v},{a!r},{b!r}\n")
    return 0


def cmd_verify(args) -> int:
    from . import verify

    checks = list(verify.ORACLE_CHECKS)
    if args.all:
        checks += verify.SIMULATION_CHECKS
    results = verify.run_checks(checks, out_dir=Path(args.out) if args.out else None)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distloc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True,
                        help=f"JSON file or preset name ({', '.join(preset_names())})")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--runs", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, default=1, help="processes for Monte Carlo runs")

    sp = sub.add_parser("run", help="simulate one scenario and write CSV/JSON outputs")
    common(sp)
    sp.add_argument("-K", type=int, help="message-passing rounds")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="repeat a scenario over values of one config field")
    common(sp)
    sp.add_argument("--param", required=True, type=parse_param,
                    help="dotted field and values, e.g. K=2,4,8,12 or motion.sigma_x=0.25,0.5")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("verify", help="run the oracle checks (add --all for the simulation criteria)")
    sp.add_argument("--all", action="store_true")
    sp.add_argument("--out", help="directory for sweep CSV baselines (with --all)")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FilterAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
