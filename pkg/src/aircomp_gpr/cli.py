"""Command-line entry point: ``aircomp-gpr {demo,sweep,bench,cost}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .cost import uplink_cost
from .radiomap import METHODS, ScenarioConfig

log = logging.getLogger("aircomp_gpr")


def _csv_list(cast):
    def parse(text: str):
        return [cast(v) for v in text.split(",") if v.strip()]

    return parse


def load_config(path) -> dict:
    """Read a JSON config: scenario fields at top level, optional ``sweep`` block."""
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SystemExit(f"cannot read config {path}: {exc}")


def scenario_from(cfg: dict, trials: int | None) -> ScenarioConfig:
    fields = {k: v for k, v in cfg.items() if k != "sweep"}
    sc = ScenarioConfig.from_dict(fields)
    if trials is not None:
        sc = sc.replace(trials=trials)
    return sc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with scenario fields (and an optional 'sweep' block)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=None)
    common.add_argument("--out", default=None, help="output CSV path (directory for demo)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="aircomp-gpr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("demo", parents=[common], help="M=4, N=128 regression example as plot-ready CSV")
    d.add_argument("--gamma-db", type=float, default=0.0)

    s = sub.add_parser("sweep", parents=[common], help="RMSE sweep over gain, N or M")
    s.add_argument("--param", choices=bench.SWEEP_PARAMS, default=None)
    s.add_argument("--values", type=_csv_list(float), default=None)
    s.add_argument("--methods", type=_csv_list(str), default=None)
    s.add_argument("--trials-out", default=None, help="also write per-trial records here")
    s.add_argument("--timing", action="store_true", help="record wall-clock training time (output no longer byte-reproducible)")

    b = sub.add_parser("bench", parents=[common], help="likelihood time per iteration, full vs distributed")
    b.add_argument("--N", dest="N_values", type=_csv_list(int), default=[2**k for k in range(5, 11)])
    b.add_argument("--M", dest="M_values", type=_csv_list(int), default=[1, 4, 16])

    c = sub.add_parser("cost", parents=[common], help="uplink variable counts per method")
    c.add_argument("--methods", type=_csv_list(str), default=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    cfg = load_config(args.config)

    if args.command == "demo":
        out = Path(args.out or "demo_out")
        res = bench.demo_regression(seed=args.seed, out_dir=out, gamma_bar_db=args.gamma_db)
        log.info("demo written to %s (theta=%s)", out, res.theta)
        return 0

    if args.command == "sweep":
        sweep_cfg = cfg.get("sweep", {})
        sc = scenario_from(cfg, args.trials)
        spec = bench.ExperimentSpec(
            scenario=sc,
            sweep_param=args.param or sweep_cfg.get("param", "gamma_bar_db"),
            sweep_values=args.values or sweep_cfg.get("values", [-80, -70, -60, -50, 0]),
            methods=args.methods or sweep_cfg.get("methods", list(METHODS)),
            output_path=args.out or "sweep.csv",
            seed=args.seed,
            timing=args.timing,
        )
        rows = bench.run_sweep(spec, trials_path=args.trials_out)
        for r in rows:
            log.info("%s=%s %-20s rmse=%.3f dB", r["sweep_param"], r["sweep_value"], r["method"], r["mean_rmse_db"])
        return 0

    if args.command == "bench":
        rows = bench.bench_training_time(args.N_values, args.M_values, args.seed)
        if args.out:
            bench.write_csv_atomic(args.out, bench.BENCH_VERSION, bench.BENCH_FIELDS, rows)
        for r in rows:
            log.info("N=%d M=%d speedup=%.1fx", r["N"], r["M"], r["speedup"])
        return 0

    if args.command == "cost":
        sc = scenario_from(cfg, args.trials)
        methods = args.methods or [m for m in METHODS if m != "pathloss"]
        rows = [{"method": m, "uplink_cost": uplink_cost(m, sc.cost_model())} for m in methods]
        if args.out:
            bench.write_csv_atomic(args.out, "# aircomp-gpr uplink-cost v1", ["method", "uplink_cost"], rows)
        else:
            for r in rows:
                print(f"{r['method']},{r['uplink_cost']}")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
