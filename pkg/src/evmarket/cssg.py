"""Charging-station selection game: Nash stable partitions of EVs over stations.

The solver runs the decentralised best-response protocol with revision
counters and random stamps for mutual exclusion.  Agents are co-resident, so
each protocol round is one sweep over a shared mailbox.  Two executions of
the same protocol live here: ``solve`` calls the compiled kernel, and
``solve_by_messages`` moves explicit :class:`AgentMessage` objects around.
Given the same stamp seed they return the same partition.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .choice import electricity_cost_matrix, expected_waiting_hours, monetary_utility
from .config import UtilityParams
from .errors import NoReachableStation, NonConvergence


def iteration_bound(n_evs: int) -> int:
    """Worst-case revisions to reach a Nash stable partition under SPAO."""
    if n_evs < 0:
        raise ValueError("n_evs must be non-negative")
    return n_evs * (n_evs + 1) // 2


@dataclass
class Partition:
    assignment: dict
    revision: int = 0
    stamp: float = 0.0
    rounds: int = 0

    @property
    def groups(self) -> dict:
        out: dict = {}
        for ev, st in self.assignment.items():
            out.setdefault(st, set()).add(ev)
        return out

    def moved(self, ev, station) -> "Partition":
        return Partition({**self.assignment, ev: station}, self.revision, self.stamp)


@dataclass
class AgentMessage:
    r: int
    s: float
    partition: dict
    satisfied: np.ndarray


@dataclass
class CssgInstance:
    """Everything an EV needs to rank stations at one decision instant.

    ``esoc[i, j]`` is the arrival SOC of EV i at station j (``-inf`` when the
    station is behind the EV); ``prices[i, j]`` the price EV i faces there.
    ``committed[j]`` counts queued EVs already bound to station j; they add
    to the tentative group without being re-optimised.
    """

    ev_ids: list
    station_ids: list
    esoc: np.ndarray
    prices: np.ndarray
    free_slots: np.ndarray
    slots: np.ndarray
    locations: np.ndarray
    params: UtilityParams
    committed: Optional[np.ndarray] = None
    _cost: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        m = len(self.station_ids)
        self.esoc = np.asarray(self.esoc, dtype=float).reshape(len(self.ev_ids), m)
        self.prices = np.asarray(self.prices, dtype=float).reshape(len(self.ev_ids), m)
        self.free_slots = np.asarray(self.free_slots, dtype=np.int64)
        self.slots = np.asarray(self.slots, dtype=np.int64)
        self.locations = np.asarray(self.locations, dtype=float)
        if self.committed is None:
            self.committed = np.zeros(m, dtype=np.int64)
        self.committed = np.asarray(self.committed, dtype=np.int64)
        self._col = {sid: j for j, sid in enumerate(self.station_ids)}
        self._row = {ev: i for i, ev in enumerate(self.ev_ids)}

    @property
    def reachable(self) -> np.ndarray:
        return self.esoc >= 0

    @property
    def cost(self) -> np.ndarray:
        if self._cost is None:
            self._cost = np.ascontiguousarray(
                electricity_cost_matrix(self.esoc, self.prices, self.params))
        return self._cost

    @property
    def wait_weight(self) -> float:
        return self.params.vtt_euro_per_hour if self.params.waiting_enabled else 0.0

    def group_sizes(self, assignment: dict) -> dict:
        sizes = {sid: int(self.committed[j]) for j, sid in enumerate(self.station_ids)}
        for ev in self.ev_ids:
            st = assignment.get(ev)
            if st is not None:
                sizes[st] += 1
        return sizes

    def utility(self, ev, station, group_size: int) -> float:
        """Utility of ``ev`` at ``station`` if the tentative group has ``group_size`` EVs."""
        i, j = self._row[ev], self._col[station]
        if self.esoc[i, j] < 0:
            return -math.inf
        w = expected_waiting_hours(int(self.free_slots[j]), group_size,
                                   int(self.slots[j]), self.params.k_ch_hours)
        return monetary_utility(self.esoc[i, j], self.prices[i, j], w, self.params)

    def utility_in(self, ev, assignment: dict) -> float:
        """Utility of ``ev`` under ``assignment`` (its own seat included)."""
        st = assignment[ev]
        return self.utility(ev, st, self.group_sizes(assignment)[st])

    def tie_key(self, ev, station):
        i, j = self._row[ev], self._col[station]
        return (self.prices[i, j], self.locations[j], station)


def best_response(ev, assignment: dict, inst: CssgInstance):
    """Best station for ``ev`` with everyone else held fixed.

    Only strict improvements move the EV; among equally good alternatives the
    lower price, then the nearer station, then the lower id wins.
    """
    sizes = inst.group_sizes(assignment)
    cur = assignment.get(ev)
    best, u_best = None, -math.inf
    if cur is not None:
        best, u_best = cur, inst.utility(ev, cur, sizes[cur])
    for st in inst.station_ids:
        if st == cur:
            continue
        u = inst.utility(ev, st, sizes[st] + 1)
        if u == -math.inf:
            continue
        if best is None:
            best, u_best = st, u
            continue
        tol = 1e-9 * (1.0 + abs(u_best))
        if u > u_best + tol:
            best, u_best = st, u
        elif u >= u_best - tol and best != cur and inst.tie_key(ev, st) < inst.tie_key(ev, best):
            best, u_best = st, u
    if best is None:
        raise NoReachableStation(ev)
    return best


def certify_nash_stable(partition, inst: CssgInstance) -> bool:
    """Exhaustive unilateral-deviation check."""
    assignment = partition.assignment if isinstance(partition, Partition) else partition
    if set(assignment) != set(inst.ev_ids):
        return False
    sizes = inst.group_sizes(assignment)
    for ev in inst.ev_ids:
        cur = assignment[ev]
        u_cur = inst.utility(ev, cur, sizes[cur])
        if u_cur == -math.inf:
            return False
        tol = 1e-9 * (1.0 + abs(u_cur))
        for st in inst.station_ids:
            if st != cur and inst.utility(ev, st, sizes[st] + 1) > u_cur + tol:
                return False
    return True


def enumerate_stable(inst: CssgInstance) -> list:
    """All Nash stable assignments by brute force (small instances only)."""
    options = [[st for j, st in enumerate(inst.station_ids) if inst.esoc[i, j] >= 0]
               for i in range(len(inst.ev_ids))]
    out = []
    for combo in itertools.product(*options):
        assignment = dict(zip(inst.ev_ids, combo))
        if certify_nash_stable(assignment, inst):
            out.append(assignment)
    return out


def _check_reachable(inst: CssgInstance):
    ok = inst.reachable.any(axis=1)
    if not ok.all():
        raise NoReachableStation(inst.ev_ids[int(np.argmin(ok))])


def _seed_from(rng) -> int:
    if rng is None:
        return 0
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(0, 2**63))


def solve(inst: CssgInstance, previous: Optional[dict] = None, rng=None,
          max_revisions: Optional[int] = None, backend=None) -> Partition:
    """Nash stable partition of the instance's EVs.

    ``previous`` warm-starts from an earlier assignment; EVs missing from it
    (or assigned to a station that is no longer reachable) start unassigned.
    ``rng`` seeds the stamp stream (a Generator or an int).
    """
    n, m = len(inst.ev_ids), len(inst.station_ids)
    if n == 0:
        return Partition({}, 0, 0.0, 0)
    _check_reachable(inst)
    col = {sid: j for j, sid in enumerate(inst.station_ids)}
    assign = np.full(n, -1, dtype=np.int64)
    if previous:
        for i, ev in enumerate(inst.ev_ids):
            j = col.get(previous.get(ev), -1)
            if j >= 0 and inst.esoc[i, j] >= 0:
                assign[i] = j
    budget = iteration_bound(n) if max_revisions is None else max_revisions
    k = kernels if backend is None else kernels.get_backend(backend)
    seed = _seed_from(rng)
    revisions, rounds, status = k.cssg_solve(
        inst.cost, np.ascontiguousarray(inst.prices), inst.locations,
        np.asarray(inst.station_ids, dtype=np.int64), inst.free_slots, inst.slots,
        inst.committed, float(inst.wait_weight), float(inst.params.k_ch_hours),
        assign, seed, int(budget))
    result = Partition({ev: inst.station_ids[assign[i]] for i, ev in enumerate(inst.ev_ids)
                        if assign[i] >= 0}, int(revisions), 0.0, int(rounds))
    if status != kernels.STATUS_OK:
        raise NonConvergence(f"no stable partition within {budget} revisions",
                             trace={"revisions": revisions, "rounds": rounds}, result=result)
    return result


def solve_by_messages(inst: CssgInstance, previous: Optional[dict] = None, seed: int = 0,
                      max_revisions: Optional[int] = None) -> Partition:
    """Literal message-passing run of the protocol (slow; for cross-checks).

    Every agent keeps its own message; deviators bump ``r`` and draw a fresh
    stamp, then all messages are swept and each agent adopts the one with the
    highest (r, s).  Messages tied on (r, s) merge their satisfied bits.
    """
    n = len(inst.ev_ids)
    if n == 0:
        return Partition({}, 0, 0.0, 0)
    _check_reachable(inst)
    start = {ev: st for ev, st in (previous or {}).items()
             if ev in inst._row and st in inst._col
             and inst.utility(ev, st, 1) > -math.inf}
    msgs = [AgentMessage(0, 0.0, dict(start), np.zeros(n, dtype=bool)) for _ in range(n)]
    state = int(seed)
    budget = iteration_bound(n) if max_revisions is None else max_revisions
    rounds = 0
    while True:
        rounds += 1
        for i, ev in enumerate(inst.ev_ids):
            msg = msgs[i]
            if msg.satisfied[i]:
                continue
            choice = best_response(ev, msg.partition, inst)
            if choice != msg.partition.get(ev):
                state, stamp = kernels.splitmix64(state)
                msgs[i] = msg = AgentMessage(msg.r + 1, stamp, {**msg.partition, ev: choice},
                                             np.zeros(n, dtype=bool))
            msg.satisfied = msg.satisfied.copy()
            msg.satisfied[i] = True
        top = max(msgs, key=lambda mm: (mm.r, mm.s))
        merged = np.zeros(n, dtype=bool)
        for mm in msgs:
            if mm.r == top.r and mm.s == top.s:
                merged |= mm.satisfied
        valid = AgentMessage(top.r, top.s, top.partition, merged)
        msgs = [AgentMessage(valid.r, valid.s, valid.partition, valid.satisfied.copy())
                for _ in range(n)]
        if valid.satisfied.all():
            return Partition(dict(valid.partition), valid.r, valid.s, rounds)
        if valid.r > budget:
            raise NonConvergence(f"no stable partition within {budget} revisions",
                                 trace={"revisions": valid.r})


def random_instance(rng: np.random.Generator, n_evs: int, n_stations: int,
                    params: Optional[UtilityParams] = None) -> CssgInstance:
    """Small random instance for oracle sweeps.

    Prices and locations come from coarse grids so ties are common; every EV
    gets at least one reachable station.
    """
    if params is None:
        params = UtilityParams.with_waiting() if rng.random() < 0.5 else UtilityParams.price_only()
    slots = rng.integers(1, 5, n_stations)
    free = np.array([rng.integers(0, s + 1) for s in slots], dtype=np.int64)
    committed = rng.integers(0, 3, n_stations)
    locations = rng.choice([150.0, 200.0, 250.0, 400.0], n_stations)
    esoc = rng.uniform(-0.2, 0.7, (n_evs, n_stations))
    for i in range(n_evs):
        if not (esoc[i] >= 0).any():
            esoc[i, rng.integers(0, n_stations)] = rng.uniform(0.0, 0.7)
    prices = rng.choice(np.round(np.linspace(0.35, 0.55, 5), 10), (n_evs, n_stations))
    return CssgInstance(list(range(n_evs)), list(range(1, n_stations + 1)), esoc, prices,
                        free, slots, locations, params, committed=committed)


def certify_sweep(n_instances: int = 1000, seed: int = 0, max_evs: int = 8,
                  max_stations: int = 3, enumerate_upto: int = 6) -> dict:
    """Solve random instances and check each result independently.

    Every output must certify as Nash stable within the revision bound;
    instances with at most ``enumerate_upto`` EVs must also land in the
    brute-force stable set.
    """
    rng = np.random.default_rng(seed)
    failures = []
    enumerated = 0
    worst = 0.0
    for k in range(n_instances):
        n = int(rng.integers(1, max_evs + 1))
        m = int(rng.integers(1, max_stations + 1))
        inst = random_instance(rng, n, m)
        try:
            part = solve(inst, rng=rng)
        except NonConvergence as exc:
            failures.append({"instance": k, "reason": str(exc)})
            continue
        worst = max(worst, part.revision / max(iteration_bound(n), 1))
        if not certify_nash_stable(part, inst):
            failures.append({"instance": k, "reason": "not Nash stable"})
        elif part.revision > iteration_bound(n):
            failures.append({"instance": k, "reason": "revision bound exceeded"})
        elif n <= enumerate_upto:
            enumerated += 1
            if part.assignment not in enumerate_stable(inst):
                failures.append({"instance": k, "reason": "missing from enumerated stable set"})
    return {"instances": n_instances, "enumerated": enumerated, "failures": failures,
            "max_revision_ratio": worst, "passed": not failures}
