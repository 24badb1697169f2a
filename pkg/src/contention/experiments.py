"""Monte Carlo harness: trial batches, latency/energy extraction, scaling and whp checks."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .adaptive import AdaptiveNoK, DecreaseSlowly, Sawtooth
from .adversary import (
    AdversarySpec, BlockingInstanceConfig, ObliviousSchedule, ScheduleError, blocking_instance, parse_adversary,
    sigma_hat_series, verify_sigma_hat,
)
from .engine import Protocol, TrialRecord, VectorizedProtocol, run_simulation
from .nonadaptive import AckMode, NonAdaptiveWithK, SublinearDecrease
from .rng import adversary_rng, trial_seeds

PROTOCOLS = ("nak", "sublinear", "adaptive", "decrease-slowly", "sawtooth")


class PreconditionFailed(RuntimeError):
    """An experiment's hypothesis does not hold, so running it would be meaningless."""


@dataclass(frozen=True)
class ProtocolSpec:
    name: str
    k: int | None = None
    c: int = 8
    b: int = 8
    ack: str = "on"
    q: float = 2.0
    sawtooth_initial_phase: int = 1
    min_control_exponent: int = 2

    def build(self) -> Protocol:
        if self.name == "nak":
            if self.k is None:
                raise ValueError("protocol nak needs the contention size k")
            return NonAdaptiveWithK(self.k, self.c)
        if self.name == "sublinear":
            return SublinearDecrease(self.b, AckMode(self.ack))
        if self.name == "adaptive":
            return AdaptiveNoK(self.q, self.sawtooth_initial_phase, self.min_control_exponent)
        if self.name == "decrease-slowly":
            return DecreaseSlowly(self.q)
        if self.name == "sawtooth":
            return Sawtooth(self.sawtooth_initial_phase)
        raise ValueError(f"unknown protocol {self.name!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: ProtocolSpec
    adversary: AdversarySpec
    k: int
    trials: int = 1
    master_seed: int = 0
    max_rounds: int | None = None
    eta: float = 1.0
    record_traces: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def resolved(self) -> dict:
        d = asdict(self)
        d["adversary"] = str(self.adversary)
        return d


def first_round_probability(protocol: Protocol) -> float | None:
    if isinstance(protocol, VectorizedProtocol):
        return float(protocol.probabilities(np.array([1]))[0])
    return None


def run_one(config: ExperimentConfig, seed: int) -> TrialRecord:
    protocol = config.protocol.build()
    source = config.adversary.build(config.k, adversary_rng(seed), first_round_probability(protocol))
    return run_simulation(protocol, source, config.k, config.max_rounds, seed, config.record_traces)


def run_trials(config: ExperimentConfig, workers: int = 1) -> list[TrialRecord]:
    """Run ``config.trials`` independent trials; results are ordered by trial index."""
    seeds = trial_seeds(config.master_seed, config.trials)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(run_one, [config] * len(seeds), seeds))
    return [run_one(config, s) for s in seeds]


def latency_of(record: TrialRecord) -> tuple[list[int | None], float]:
    """Per-station latencies (success minus activation) and their maximum; inf if incomplete."""
    lat = [None if s is None else s - a for a, s in zip(record.activation, record.first_success)]
    if not record.completed or any(x is None for x in lat):
        return lat, math.inf
    return lat, float(max(lat)) if lat else 0.0


def energy_of(record: TrialRecord) -> int:
    return sum(record.transmissions)


def makespan_of(record: TrialRecord) -> float:
    if not record.completed or any(s is None for s in record.first_success):
        return math.inf
    return float(max(record.first_success) - min(record.activation))


def whp_fraction(records: Sequence[TrialRecord], predicate: Callable[[TrialRecord], bool]) -> float:
    if not records:
        raise ValueError("need at least one record")
    return sum(1 for r in records if predicate(r)) / len(records)


def wilson_interval(passes: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    from statsmodels.stats.proportion import proportion_confint
    lo, hi = proportion_confint(passes, n, alpha=alpha, method="wilson")
    return float(lo), float(hi)


@dataclass
class SummaryStats:
    p50: float
    p90: float
    p99: float
    max: float
    n: int

    @classmethod
    def of(cls, values: Iterable[float]) -> "SummaryStats":
        v = np.asarray(list(values), dtype=np.float64)
        if v.size == 0:
            raise ValueError("no values to summarize")
        # 'higher' keeps quantiles on observed values and handles inf
        q = np.quantile(v, [0.5, 0.9, 0.99], method="higher")
        return cls(float(q[0]), float(q[1]), float(q[2]), float(v.max()), int(v.size))


def summarize(records: Sequence[TrialRecord]) -> dict[str, SummaryStats]:
    return {
        "latency": SummaryStats.of(latency_of(r)[1] for r in records),
        "energy": SummaryStats.of(energy_of(r) for r in records),
        "makespan": SummaryStats.of(makespan_of(r) for r in records),
    }


SUMMARY_COLUMNS = ("k", "protocol", "adversary", "metric", "p50", "p99", "max", "fraction_pass", "fitted_C")


def summary_rows(config: ExperimentConfig, records: Sequence[TrialRecord],
                 fitted_c: Mapping[str, float] | None = None) -> list[dict]:
    frac = whp_fraction(records, lambda r: r.completed)
    rows = []
    for metric, st in summarize(records).items():
        rows.append({
            "k": config.k, "protocol": config.protocol.name, "adversary": str(config.adversary),
            "metric": metric, "p50": st.p50, "p99": st.p99, "max": st.max,
            "fraction_pass": frac, "fitted_C": "" if not fitted_c else fitted_c.get(metric, ""),
        })
    return rows


def rows_to_csv(rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


@dataclass
class ScalingReport:
    ks: list[int]
    ratios: list[float]
    fitted_c: float
    spread: float
    tolerance: float
    ok: bool


def check_grid(ks: Sequence[int]) -> None:
    if len(ks) < 3:
        raise ValueError("a scaling check needs at least 3 grid points")
    for a, b in zip(ks, ks[1:]):
        if b < 2 * a:
            raise ValueError(f"grid points must at least double: {a} -> {b}")


def scaling_check(points: Mapping[int, float], bound: Callable[[int], float],
                  tolerance: float = 2.0) -> ScalingReport:
    """Compare metric(k) against bound(k) on a doubling grid.

    C is the largest metric/bound ratio; the check passes when the largest
    and smallest ratios are within ``tolerance`` of each other.
    """
    ks = sorted(points)
    check_grid(ks)
    ratios = [points[k] / bound(k) for k in ks]
    lo, hi = min(ratios), max(ratios)
    spread = math.inf if lo <= 0 else hi / lo
    return ScalingReport(ks, ratios, hi, spread, tolerance, spread <= tolerance)


def latency_bound(protocol: ProtocolSpec) -> Callable[[int], float]:
    """The latency bound each protocol is claimed to meet, as a function of k."""
    if protocol.name in ("nak", "adaptive", "decrease-slowly", "sawtooth"):
        return float
    if protocol.name == "sublinear":
        if protocol.ack == "on":
            return lambda k: k * math.log(k) ** 2 / math.log(math.log(k))
        return lambda k: k * math.log(k) ** 2
    raise ValueError(f"no bound known for {protocol.name!r}")


@dataclass
class BlockingReport:
    k: int
    gamma: float
    b: int
    variant: str
    per_round: int
    window: tuple[int, int]
    threshold: float
    sigma_hat_min: float
    sigma_hat_argmin: int
    per_round_success_bound: float
    trials: int
    zero_success_fraction: float
    blocked_until: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def per_round_success_bound(s: float) -> float:
    """Upper bound s * e^(1 - s) on the chance of a lone transmitter when the summed probability is s."""
    return s * math.exp(1.0 - s)


def blocking_experiment(k: int, gamma: float, b: int = 1, trials: int = 100, seed: int = 0,
                        variant: str = "frontloaded", t1: int | None = None,
                        t2: int | None = None) -> BlockingReport:
    """Run SublinearDecrease(b) on a blocking instance and count trials with no success.

    The window is ``[1, T1]``: the stretch where every round has ``r``
    fresh wakes behind it.  The instance is drawn once; trials differ only
    in station randomness.
    """
    if gamma <= 0 or k < 2:
        raise PreconditionFailed(f"threshold gamma*log2(k) = {gamma * math.log2(max(k, 1)):.4g} is not positive")
    protocol = SublinearDecrease(b)
    p1 = first_round_probability(protocol)
    cfg = BlockingInstanceConfig(k, gamma, p1, variant, t1, t2)
    try:
        schedule = blocking_instance(cfg, adversary_rng(seed))
    except ScheduleError as exc:
        raise PreconditionFailed(str(exc)) from exc
    window_end = k // cfg.per_round if variant == "frontloaded" else t1
    threshold = cfg.threshold
    ok, low, argmin = verify_sigma_hat(schedule, protocol.probabilities, threshold, (1, window_end))
    if not ok:
        raise PreconditionFailed(
            f"sigma_hat drops to {low:.4g} at round {argmin}, below threshold {threshold:.4g} "
            f"(gamma={gamma}, k={k}, r={cfg.per_round})")
    horizon = max(window_end, t2 or 0)
    series = sigma_hat_series(schedule, protocol.probabilities, min(horizon, k * k))
    below = np.flatnonzero(series < threshold)
    blocked_until = int(below[0]) if below.size else int(series.size)
    zero = 0
    for s in trial_seeds(seed, trials):
        rec = run_simulation(protocol, schedule, k, max_rounds=window_end, seed=s)
        if all(x is None or x > window_end for x in rec.first_success):
            zero += 1
    extra = {}
    if variant == "twophase":
        extra["sigma_hat_min_to_t2"] = float(series.min()) if series.size else 0.0
    return BlockingReport(k, gamma, b, variant, cfg.per_round, (1, window_end), threshold, low, argmin,
                          per_round_success_bound(low), trials, zero / trials, blocked_until, extra)


def schedule_for(k: int, adversary: str, seed: int = 0, p1: float | None = None):
    """Convenience: parse an adversary string and build it for one run."""
    return parse_adversary(adversary).build(k, adversary_rng(seed), p1)


__all__ = [
    "ExperimentConfig", "ProtocolSpec", "ScalingReport", "SummaryStats", "BlockingReport",
    "PreconditionFailed", "run_trials", "run_one", "latency_of", "energy_of", "makespan_of",
    "whp_fraction", "wilson_interval", "summarize", "summary_rows", "rows_to_csv",
    "scaling_check", "latency_bound", "blocking_experiment", "per_round_success_bound",
    "schedule_for", "ObliviousSchedule",
]
