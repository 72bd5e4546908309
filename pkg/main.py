# Description: Command line entry point. Loads a scenario (file or preset), runs it for every seed and sweep
# point, writes one CSV row per run and optionally an HDF5 event trace.
# Runs are spread over worker processes; SIM_THREADS caps their number.

import argparse
import logging
import sys
from dataclasses import replace

from event_trace import write_trace
from scenario import ScenarioError, parse_scenario
from sweep import LOAD_POINTS, RunError, run_sweep, use_mac, write_csv

logger = logging.getLogger("uwbsim")


def parse_seeds(text):
    """'7', '1,2,5' or '1-10' (inclusive)."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return seeds


def parse_loads(text):
    try:
        loads = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from err
    if not loads:
        raise argparse.ArgumentTypeError(f"no loads in {text!r}")
    return loads


def build_parser():
    parser = argparse.ArgumentParser(description="Discrete-event simulator for IR-UWB wireless sensor networks")
    parser.add_argument("--scenario", required=True, help="scenario file or preset name (scenario1, scenario2, ...)")
    parser.add_argument("--seed", type=parse_seeds, default=None, help="seed, list '1,2,3' or range '1-10'")
    parser.add_argument("--sweep", choices=("retx", "load", "none"), default="none")
    parser.add_argument("--out", required=True, help="CSV file, one row per run")
    parser.add_argument("--trace", default=None, help="HDF5 file for the event trace")
    parser.add_argument("--mac", choices=("unslotted", "slotted", "csma-ca"), default=None)
    parser.add_argument("--retx", type=int, default=None, help="override the retransmission limit")
    parser.add_argument(
        "--loads", type=parse_loads, default=list(LOAD_POINTS), help="comma separated packet rates for --sweep load"
    )
    parser.add_argument("--duration", type=float, default=None, help="override the simulated time in seconds")
    parser.add_argument("--threads", type=int, default=None, help="worker processes (default SIM_THREADS or cpu count)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        scenario = parse_scenario(args.scenario)
        if args.mac is not None:
            scenario = use_mac(scenario, args.mac)
        if args.retx is not None:
            scenario = scenario.with_mac(max_retx=args.retx)
        if args.duration is not None:
            if args.duration <= 0:
                raise ScenarioError("duration must be positive", field="--duration")
            scenario = replace(scenario, duration=args.duration)
    except ScenarioError as err:
        logger.error("invalid scenario: %s", err)
        return 2

    seeds = args.seed or list(scenario.seeds)
    try:
        results = run_sweep(scenario, args.sweep, seeds, args.loads, args.threads, trace=args.trace is not None)
    except RunError as err:
        logger.error("%s", err)
        return 1
    write_csv(args.out, results)
    logger.info("wrote %d rows to %s", len(results), args.out)
    if args.trace is not None:
        write_trace(
            args.trace,
            [(f"{r.job.point} seed{r.job.seed}", r.events or [], r.metrics.hops) for r in results],
        )
        logger.info("wrote trace to %s", args.trace)
    return 0


if __name__ == "__main__":
    sys.exit(main())
