"""Scenario builders, training loop, runs, ablation, and report export."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import (PolicyBinding, QLearnerConfig, SimConfig, StationSpec,
                     UtilityParams)
from .errors import NonConvergence
from .market import ChargeRecord, World
from .pricing import QLearningPolicy, make_policy

# ---- case layouts ----------------------------------------------------------

DEFAULT_ARRIVAL_RATE = 9.2
# the co-located duopoly runs near slot saturation
CASE1_ARRIVAL_RATE = 24.0
ABLATION_INFO_SETS = ("2.1", "2.2", "2.3", "2.4")


def _utility(variant: str) -> UtilityParams:
    if variant == "eq1":
        return UtilityParams.with_waiting()
    if variant == "eq8":
        return UtilityParams.price_only()
    raise ValueError(f"unknown utility variant {variant!r}")


def case1(utility: str = "eq1", policy: str = "qlearn", seed: int = 0,
          arrival_rate: float = CASE1_ARRIVAL_RATE, days: int = 30) -> SimConfig:
    """Two co-located stations at 250 km pricing against each other."""
    if policy == "qlearn":
        binding = PolicyBinding("qlearn", info_set="case1")
    elif policy == "bertrand":
        binding = PolicyBinding("bertrand")
    elif policy == "wholesale":
        binding = PolicyBinding("fixed", price=0.35)
    else:
        raise ValueError(f"unknown case-1 policy {policy!r}")
    stations = (StationSpec(1, 250.0, 4, binding), StationSpec(2, 250.0, 4, binding))
    return SimConfig(stations, horizon_days=days, arrival_rate_per_hour=arrival_rate,
                     rng_seed=seed, utility_params=_utility(utility), name=f"case1-{utility}-{policy}")


def case2(info_set: str = "2.4", seed: int = 0, arrival_rate: float = DEFAULT_ARRIVAL_RATE,
          days: int = 30) -> SimConfig:
    """Oligopoly: random pricer at 150 km, learner at 200 km, Bertrand at 400 km."""
    stations = (StationSpec(1, 150.0, 4, PolicyBinding("random")),
                StationSpec(2, 200.0, 4, PolicyBinding("qlearn", info_set=info_set)),
                StationSpec(3, 400.0, 4, PolicyBinding("bertrand", rival=1)))
    return SimConfig(stations, horizon_days=days, arrival_rate_per_hour=arrival_rate,
                     rng_seed=seed, name=f"case2-oligopoly-{info_set}")


def ablation(info_set: str, seed: int = 0, rival_price: float = 0.52,
             arrival_rate: float = DEFAULT_ARRIVAL_RATE, days: int = 30) -> SimConfig:
    """Learner and a fixed-price rival co-located at 250 km."""
    stations = (StationSpec(1, 250.0, 4, PolicyBinding("qlearn", info_set=info_set)),
                StationSpec(2, 250.0, 4, PolicyBinding("fixed", price=rival_price)))
    return SimConfig(stations, horizon_days=days, arrival_rate_per_hour=arrival_rate,
                     rng_seed=seed, name=f"ablation-{info_set}")


def case3(info_set: str = "2.2", seed: int = 0, rival_price: float = 0.52,
          arrival_rate: float = DEFAULT_ARRIVAL_RATE, days: int = 30) -> SimConfig:
    """Learner at 200 km, fixed-price rival at 400 km."""
    stations = (StationSpec(1, 200.0, 4, PolicyBinding("qlearn", info_set=info_set)),
                StationSpec(2, 400.0, 4, PolicyBinding("fixed", price=rival_price)))
    return SimConfig(stations, horizon_days=days, arrival_rate_per_hour=arrival_rate,
                     rng_seed=seed, name=f"case3-{info_set}")


# ---- policies ------------------------------------------------------------------

def build_policies(cfg: SimConfig, learner: QLearnerConfig, seed: int,
                   trained: Optional[dict] = None) -> dict:
    """Fresh policy objects per station; ``trained`` supplies learned ones by id."""
    trained = trained or {}
    ss = np.random.SeedSequence([seed, 0x5EED])
    rngs = ss.spawn(len(cfg.station_specs))
    out = {}
    for spec, child in zip(cfg.station_specs, rngs):
        if spec.id in trained:
            out[spec.id] = trained[spec.id]
        else:
            out[spec.id] = make_policy(spec.policy, spec.id, cfg, learner,
                                       np.random.default_rng(child))
    return out


def learners(policies: dict) -> dict:
    return {sid: p for sid, p in policies.items() if isinstance(p, QLearningPolicy)}


@dataclass
class TrainResult:
    policies: dict
    loss_trace: list
    days: int
    converged: bool


def train(cfg: SimConfig, learner: QLearnerConfig, max_days: int = 10, seed: Optional[int] = None,
          strict: bool = False, min_days: int = 1) -> TrainResult:
    """Train every learning station by simulating whole days.

    Stops once each learner's daily mean loss moved by less than the stop
    threshold (checked from ``min_days`` on), or after ``max_days``.  With ``strict`` the day cap raises
    :class:`NonConvergence` carrying the loss trace.
    """
    seed = cfg.rng_seed if seed is None else seed
    policies = build_policies(cfg, learner, seed)
    learning = learners(policies)
    world = World(cfg, policies, seed=seed, log_steps=False, log_offers=False)
    trace = []
    converged = False
    day = 0
    for day in range(1, max_days + 1):
        world.run_days(1)
        for sid, p in sorted(learning.items()):
            p.finish_day()
            loss = p.daily_loss[-1] if p.daily_loss else float("nan")
            trace.append({"day": day, "station_id": sid, "mean_loss": loss,
                          "epsilon": p.epsilon, "grad_steps": p.grad_steps, "events": p.events})
        if day >= min_days and learning and all(p.converged() for p in learning.values()):
            converged = True
            break
    for p in learning.values():
        p.freeze()
    if strict and not converged:
        raise NonConvergence(f"training did not meet the stop criterion within {max_days} days",
                             trace=trace)
    return TrainResult(learning, trace, day, converged)


# ---- reports --------------------------------------------------------------------

REVENUE_FIELDS = ("day", "station_id", "net_revenue_euro", "gross_billing_euro", "charged_evs")
OCCUPANCY_FIELDS = ("day", "minute", "station_id", "price", "occupied_slots", "queue_length")
OFFER_FIELDS = ("day", "minute", "station_id", "ev_id", "esoc", "last_price", "mean_price",
                "n_offers", "outcome")
PARTITION_FIELDS = ("day", "minute", "ev_id", "station_id", "revisions", "rounds")
LOSS_FIELDS = ("day", "station_id", "mean_loss", "epsilon", "grad_steps", "events")


@dataclass
class StationTotals:
    net_revenue_euro: float = 0.0
    gross_billing_euro: float = 0.0
    charged_evs: int = 0


@dataclass
class RunReport:
    name: str
    seed: int
    days: int
    stations: dict
    utility_medians: dict
    arrivals: int
    turned_away: int
    exits: int
    max_revisions: int
    records: list = field(default_factory=list)
    daily_rows: list = field(default_factory=list)
    occupancy_rows: list = field(default_factory=list)
    offer_rows: list = field(default_factory=list)
    partition_rows: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "name": self.name, "seed": self.seed, "days": self.days,
            "stations": {str(k): dataclasses.asdict(v) for k, v in sorted(self.stations.items())},
            "utility_medians": self.utility_medians,
            "arrivals": self.arrivals, "turned_away": self.turned_away, "exits": self.exits,
            "max_revisions": self.max_revisions,
        }

    @classmethod
    def from_summary(cls, data: dict) -> "RunReport":
        return cls(data["name"], data["seed"], data["days"],
                   {int(k): StationTotals(**v) for k, v in data["stations"].items()},
                   data["utility_medians"], data["arrivals"], data["turned_away"],
                   data["exits"], data["max_revisions"])

    def revenue(self, station_id: int) -> float:
        return self.stations[station_id].net_revenue_euro


def _median(values) -> float:
    return float(np.median(values)) if len(values) else 0.0


def make_report(world: World, name: str, seed: int, days: int) -> RunReport:
    totals = {st.id: StationTotals() for st in world.stations}
    daily = {}
    for r in world.records:
        t = totals[r.station_id]
        t.net_revenue_euro += r.net_revenue_euro
        t.gross_billing_euro += r.bill_euro
        t.charged_evs += 1
        d = daily.setdefault((r.arrival_minute // (24 * 60), r.station_id), [0.0, 0.0, 0])
        d[0] += r.net_revenue_euro
        d[1] += r.bill_euro
        d[2] += 1
    daily_rows = [(day, st.id) + tuple(daily.get((day, st.id), (0.0, 0.0, 0)))
                  for day in range(days) for st in world.stations]
    e = [-r.electricity_cost_euro for r in world.records]
    w = [-r.waiting_cost_euro for r in world.records]
    tot = [a + b for a, b in zip(e, w)]
    medians = {"total": _median(tot), "electricity": _median(e), "waiting": _median(w)}
    return RunReport(name, seed, days, totals, medians, world.arrivals_total, world.turned_away,
                     world.exited_total, world.max_revisions_seen, list(world.records), daily_rows,
                     list(world.step_rows), list(world.offer_rows), list(world.partition_rows))


def run_scenario(cfg: SimConfig, n_days: int, seed: Optional[int] = None,
                 learner: Optional[QLearnerConfig] = None, trained: Optional[dict] = None,
                 train_days: int = 0, log_steps: bool = True,
                 trace_partitions: bool = False, min_train_days: Optional[int] = None) -> RunReport:
    """Simulate ``n_days`` and aggregate a report.

    Learning stations use ``trained`` policies when given; otherwise they are
    trained inline for ``train_days`` first (or act untrained if zero); the
    stop criterion only applies after ``min_train_days`` (default: the whole budget).
    Learned policies act greedily during the run.
    """
    seed = cfg.rng_seed if seed is None else seed
    learner = learner or QLearnerConfig()
    if trained is None and train_days > 0:
        floor = train_days if min_train_days is None else min_train_days
        trained = train(cfg, learner, train_days, seed, min_days=floor).policies
    policies = build_policies(cfg, learner, seed, trained)
    for p in learners(policies).values():
        p.freeze()
    world = World(cfg, policies, seed=seed + 1_000_003, log_steps=log_steps,
                  trace_partitions=trace_partitions)
    world.run_days(n_days)
    return make_report(world, cfg.name, seed, n_days)


def esoc_price_gap(report: RunReport, station_id: int, threshold: float,
                   step: float = 0.01) -> Optional[float]:
    """Mean offered price below ``threshold`` esoc minus the mean at or above it, in grid steps.

    Returns None when either side has no offers.
    """
    lo, hi = [], []
    for row in report.offer_rows:
        if row[2] != station_id:
            continue
        (lo if row[4] < threshold else hi).append(row[6])
    if not lo or not hi:
        return None
    return round((float(np.mean(lo)) - float(np.mean(hi))) / step, 6)


@dataclass
class AblationResult:
    revenues: dict
    medians: dict
    seeds: list

    def ordering_holds(self) -> bool:
        m = self.medians
        return m["2.4"] >= m["2.3"] > m["2.2"] > m["2.1"]


def run_ablation(seeds, train_days: int = 30, n_days: int = 5, rival_price: float = 0.52,
                 info_sets=ABLATION_INFO_SETS, learner: Optional[QLearnerConfig] = None,
                 arrival_rate: float = DEFAULT_ARRIVAL_RATE) -> AblationResult:
    """Learner revenue per information set over seeds, with medians."""
    learner = learner or QLearnerConfig()
    revenues = {k: [] for k in info_sets}
    for info in info_sets:
        for seed in seeds:
            cfg = ablation(info, seed, rival_price, arrival_rate)
            rep = run_scenario(cfg, n_days, seed, learner, train_days=train_days, log_steps=False)
            revenues[info].append(rep.revenue(1))
    medians = {k: _median(v) for k, v in revenues.items()}
    return AblationResult(revenues, medians, list(seeds))


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return v


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def export_report(report: RunReport, out_dir) -> list:
    """Write the report's CSV files and summary.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "revenue.csv": (REVENUE_FIELDS, report.daily_rows),
        "charge_records.csv": (ChargeRecord.FIELDS, [r.row() for r in report.records]),
        "price_traj.csv": (OFFER_FIELDS, report.offer_rows),
        "occupancy.csv": (OCCUPANCY_FIELDS, report.occupancy_rows),
    }
    if report.partition_rows:
        files["partition_trace.csv"] = (PARTITION_FIELDS, report.partition_rows)
    for name, (header, rows) in files.items():
        write_csv(out / name, header, rows)
    (out / "summary.json").write_text(json.dumps(report.summary(), indent=1, sort_keys=True))
    return [out / n for n in (*files, "summary.json")]


def export_loss_trace(trace: list, path) -> None:
    write_csv(path, LOSS_FIELDS, [tuple(row[k] for k in LOSS_FIELDS) for row in trace])
