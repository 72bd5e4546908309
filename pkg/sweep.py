"""
Run orchestration: one run per (sweep point, seed), optionally spread over worker processes, and
the CSV export of their metrics in sweep order.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, replace
from multiprocessing import Pool
from pathlib import Path

from channel import RadioParams
from mac import MacVariant
from metrics import CSV_COLUMNS, Metrics, csv_row, summary
from network import Network
from scenario import Scenario

logger = logging.getLogger(__name__)

RETX_POINTS = tuple(range(7))
LOAD_POINTS = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0)


class RunError(RuntimeError):
    """A run failed; names the seed and sweep point."""

    def __init__(self, seed: int, point: str, message: str):
        super().__init__(seed, point, message)
        self.seed = seed
        self.point = point
        self.message = message

    def __str__(self):
        return f"run seed={self.seed} point={self.point} failed: {self.message}"


@dataclass(frozen=True)
class Job:
    scenario: Scenario
    seed: int
    point: str
    retx: int
    load_pps: float | None
    trace: bool = False


@dataclass
class RunResult:
    job: Job
    metrics: Metrics
    events: list | None = None


def use_mac(scenario: Scenario, variant: MacVariant | str) -> Scenario:
    """Switch the MAC; CSMA/CA comes with the OQPSK radio and the ALOHA variants with UWB."""
    variant = MacVariant(variant)
    radio = scenario.radio
    if variant is MacVariant.CSMA_CA and radio.family != "oqpsk":
        radio = RadioParams.oqpsk()
    elif variant is not MacVariant.CSMA_CA and radio.family != "uwb":
        radio = RadioParams.uwb()
    return replace(scenario, radio=radio, mac=replace(scenario.mac, variant=variant))


def offered_load(scenario: Scenario) -> float | None:
    rates = {flow.rate for flow in scenario.flows}
    return rates.pop() if len(rates) == 1 else None


def run_scenario(scenario: Scenario, seed: int, trace: bool = False) -> RunResult:
    network = Network.from_scenario(scenario, seed, trace=trace)
    metrics = network.run(scenario.duration)
    job = Job(scenario, seed, "single", scenario.mac.max_retx, offered_load(scenario), trace)
    return RunResult(job, metrics, network.sim.trace)


def _run_job(job: Job) -> RunResult:
    try:
        network = Network.from_scenario(job.scenario, job.seed, trace=job.trace)
        metrics = network.run(job.scenario.duration)
    except Exception as err:
        raise RunError(job.seed, job.point, f"{type(err).__name__}: {err}") from err
    values = summary(metrics)
    logger.info(
        "%s seed %d %s: pdr=%s delay=%s detection=%s auth=%s",
        job.scenario.name, job.seed, job.point,
        values["pdr"], values["avg_delay_s"], values["detection_rate"], values["auth_rate"],
    )
    return RunResult(job, metrics, network.sim.trace)


def sweep_jobs(
    scenario: Scenario,
    sweep: str,
    seeds,
    loads=LOAD_POINTS,
    trace: bool = False,
) -> list[Job]:
    """Jobs in sweep order: sweep points outer, seeds inner."""
    match sweep:
        case "retx":
            points = [(f"retx={r}", scenario.with_mac(max_retx=r)) for r in RETX_POINTS]
        case "load":
            points = [(f"load={l!r}", scenario.with_flow_rate(l)) for l in loads]
        case "none":
            points = [("single", scenario)]
        case _:
            raise ValueError(f"unknown sweep {sweep!r}")
    return [
        Job(variant, int(seed), label, variant.mac.max_retx, offered_load(variant), trace)
        for label, variant in points
        for seed in seeds
    ]


def thread_count() -> int:
    value = os.environ.get("SIM_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning("ignoring SIM_THREADS=%r", value)
    return os.cpu_count() or 1


def run_sweep(
    scenario: Scenario,
    sweep: str,
    seeds,
    loads=LOAD_POINTS,
    threads: int | None = None,
    trace: bool = False,
) -> list[RunResult]:
    """
    Execute every (sweep point, seed) run.

    Results come back in sweep order whatever the completion order of the workers.

    Raises
    ------
    RunError
        The first failing run, with its seed and sweep point.
    """
    jobs = sweep_jobs(scenario, sweep, seeds, loads, trace)
    threads = min(threads or thread_count(), len(jobs))
    logger.info("running %d jobs on %d process(es)", len(jobs), threads)
    if threads <= 1:
        return [_run_job(job) for job in jobs]
    with Pool(processes=threads) as pool:
        return pool.map(_run_job, jobs)


def result_row(result: RunResult) -> list[str]:
    job = result.job
    return csv_row(
        result.metrics, job.seed, job.scenario.name, job.scenario.mac.variant.value, job.retx, job.load_pps
    )


def write_csv(path, results: list[RunResult]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for result in results:
            writer.writerow(result_row(result))
