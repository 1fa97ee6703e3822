"""Highway market world: EVs arrive, pick stations, queue, charge, and leave.

One call to :meth:`World.step` advances every entity by ``step_minutes``:

1. stations whose pricing period is due refresh their prices;
2. new EVs enter at km 0;
3. uncharged driving EVs re-solve the station selection game;
4. EVs move, and those reaching their selected station queue there with
   the price they were last offered;
5. charging EVs gain SOC, finished ones pay and drive on, queues advance;
6. charged EVs at the end of the highway leave.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import cssg
from .choice import expected_waiting_hours, waiting_cost
from .config import SimConfig, StationSpec
from .errors import DomainError, StrandedEv


class EvState(enum.Enum):
    DRIVING = "driving"
    QUEUED = "queued"
    CHARGING = "charging"
    EXITED = "exited"


@dataclass
class EvUser:
    id: int
    position_km: float
    soc: float
    entry_minute: int
    initial_soc: float = 0.0
    state: EvState = EvState.DRIVING
    station: Optional[int] = None
    remaining_minutes: int = 0
    selected_station: Optional[int] = None
    locked_offer: Optional[tuple] = None
    decision: tuple = (0.0, 0.0)
    charged: bool = False
    queue_minute: int = 0
    start_minute: int = 0
    arrival_soc: float = 0.0
    left_stations: set = field(default_factory=set)


@dataclass
class ChargeRecord:
    """One completed charge.

    ``electricity_cost_euro`` and ``waiting_cost_euro`` are the two parts of
    the EV's own utility when it committed to the station (expected waiting,
    not the realised queue time, which is ``waited_minutes``).
    """

    ev_id: int
    station_id: int
    arrival_minute: int
    arrival_soc: float
    delta_soc: float
    locked_price: float
    bill_euro: float
    net_revenue_euro: float
    waited_minutes: int
    charged_flag: int = 1
    electricity_cost_euro: float = 0.0
    waiting_cost_euro: float = 0.0

    FIELDS = ("ev_id", "station_id", "arrival_minute", "arrival_soc", "delta_soc",
              "locked_price", "bill_euro", "net_revenue_euro", "waited_minutes",
              "charged_flag", "electricity_cost_euro", "waiting_cost_euro")

    def row(self) -> tuple:
        return tuple(getattr(self, f) for f in self.FIELDS)


@dataclass
class Station:
    id: int
    location_km: float
    slots: int
    policy: object = None
    occupied_slots: int = 0
    public_price: Optional[float] = None
    personalized_prices: dict = field(default_factory=dict)
    queue: deque = field(default_factory=deque)
    charging: list = field(default_factory=list)

    @classmethod
    def from_spec(cls, spec: StationSpec, policy=None) -> "Station":
        return cls(spec.id, spec.location_km, spec.slots, policy)

    @property
    def free_slots(self) -> int:
        return self.slots - self.occupied_slots

    @property
    def price_update_period_minutes(self) -> int:
        return getattr(self.policy, "period", 1)


def settle_bill(locked_price: float, delta_soc: float, battery_kwh: float,
                wholesale_price: float) -> tuple[float, float]:
    """(bill, net revenue over wholesale) in euro for one charge."""
    energy = delta_soc * battery_kwh
    return locked_price * energy, (locked_price - wholesale_price) * energy


def sample_arrivals(rate_per_hour: float, rng: np.random.Generator, minute: int,
                    soc_range=(0.25, 0.75), step_minutes: int = 1, first_id: int = 0) -> list:
    """New EVs for one step: Poisson count, uniform initial SOC, at km 0."""
    if rate_per_hour < 0:
        raise DomainError("arrival rate must be non-negative")
    if rate_per_hour == 0:
        return []
    count = int(rng.poisson(rate_per_hour * step_minutes / 60.0))
    lo, hi = soc_range
    socs = rng.uniform(lo, hi, count)
    return [EvUser(first_id + k, 0.0, float(s), minute, initial_soc=float(s))
            for k, s in enumerate(socs)]


class World:
    """Mutable market state plus the stepping logic.

    ``policies`` maps station id to a pricing policy object exposing
    ``period``, ``update(world, station)``, and the optional learning hooks
    ``on_charged(world, station, ev, net_revenue)``,
    ``on_passed(world, station, ev)`` and ``start_day(world, day)``.
    """

    def __init__(self, cfg: SimConfig, policies: dict, seed: Optional[int] = None,
                 log_steps: bool = True, log_offers: bool = True,
                 trace_partitions: bool = False):
        self.cfg = cfg
        seed = cfg.rng_seed if seed is None else seed
        ss = np.random.SeedSequence(seed)
        arr_ss, cssg_ss, self.policy_seed = ss.spawn(3)
        self.arrival_rng = np.random.default_rng(arr_ss)
        self.cssg_rng = np.random.default_rng(cssg_ss)
        self.stations = [Station.from_spec(s, policies.get(s.id))
                         for s in sorted(cfg.station_specs, key=lambda s: s.id)]
        self.station_by_id = {s.id: s for s in self.stations}
        self.evs: dict = {}
        self.partition: dict = {}
        self.records: list = []
        self.step_index = 0
        self.next_ev_id = 0
        self.arrivals_total = 0
        self.turned_away = 0
        self.exited_total = 0
        self.max_revisions_seen = 0
        self.log_steps = log_steps
        self.log_offers = log_offers
        self.step_rows: list = []
        self.offer_rows: list = []
        self._offers: dict = {}
        self.trace_partitions = trace_partitions
        self.partition_rows: list = []
        self.snapshot_prices: dict = {}
        self.snapshot_free: dict = {}
        self._locations = np.array([s.location_km for s in self.stations])
        self._slots = np.array([s.slots for s in self.stations], dtype=np.int64)
        self._ids = [s.id for s in self.stations]

    # ---- time --------------------------------------------------------
    @property
    def minute(self) -> int:
        return self.step_index * self.cfg.step_minutes

    @property
    def day(self) -> int:
        return self.step_index // self.cfg.steps_per_day

    @property
    def minute_of_day(self) -> int:
        return self.minute % (24 * 60)

    # ---- observation helpers used by pricing policies -----------------
    def esoc_at(self, ev: EvUser, station: Station) -> float:
        if station.location_km < ev.position_km:
            return -math.inf
        return ev.soc - (station.location_km - ev.position_km) / self.cfg.ev_spec.travel_range_km

    def applicable_price(self, ev_id: int, station: Station) -> float:
        p = station.personalized_prices.get(ev_id)
        if p is not None:
            return p
        if station.public_price is not None:
            return station.public_price
        return self.cfg.p_max

    def offer_targets(self, station: Station) -> list:
        """Uncharged driving EVs still upstream of ``station`` that can reach it."""
        out = []
        for ev in self.evs.values():
            if (ev.state is EvState.DRIVING and not ev.charged
                    and station.id not in ev.left_stations
                    and ev.position_km <= station.location_km
                    and self.esoc_at(ev, station) >= 0):
                out.append(ev)
        return out

    def competitors(self, station: Station) -> list:
        return [s for s in self.stations if s.id != station.id]

    def _check_price(self, price: float, station: Station) -> float:
        p_min, p_max = self.cfg.price_bounds
        if not (p_min - 1e-9 <= price <= p_max + 1e-9):
            raise DomainError(f"station {station.id} emitted price {price} outside [{p_min}, {p_max}]")
        return float(price)

    # ---- stepping ----------------------------------------------------
    def step(self) -> None:
        cfg = self.cfg
        if self.step_index % cfg.steps_per_day == 0:
            for st in self.stations:
                hook = getattr(st.policy, "start_day", None)
                if hook is not None:
                    hook(self, self.day)
        self._update_prices()
        self._admit_arrivals()
        self._select_stations()
        self._move()
        self._charge()
        self._exit()
        if self.log_steps:
            self._log_step()
        self.step_index += 1

    def run(self, n_steps: int) -> None:
        for _ in range(n_steps):
            self.step()

    def run_days(self, n_days: int) -> None:
        self.run(n_days * self.cfg.steps_per_day)

    def _update_prices(self):
        self.snapshot_prices = {s.id: s.public_price for s in self.stations}
        self.snapshot_free = {s.id: s.free_slots for s in self.stations}
        for st in self.stations:
            if st.policy is None:
                continue
            if self.minute % st.policy.period == 0:
                st.policy.update(self, st)
                if st.public_price is not None:
                    st.public_price = self._check_price(st.public_price, st)
                for ev_id, p in st.personalized_prices.items():
                    self._check_price(p, st)
                    if self.log_offers:
                        self._note_offer(st, ev_id, p)

    def _note_offer(self, st: Station, ev_id: int, price: float):
        key = (st.id, ev_id)
        stats = self._offers.get(key)
        if stats is None:
            ev = self.evs[ev_id]
            self._offers[key] = [self.minute, self.esoc_at(ev, st), price, 1, price]
        else:
            stats[2] += price
            stats[3] += 1
            stats[4] = price

    def _close_offers(self, ev: EvUser, st: Station, outcome: str):
        stats = self._offers.pop((st.id, ev.id), None)
        if stats is None:
            return
        first, es, total, n, last = stats
        self.offer_rows.append((first // (24 * 60), first % (24 * 60), st.id, ev.id,
                                es, last, total / n, n, outcome))

    def _admit_arrivals(self):
        cfg = self.cfg
        new = sample_arrivals(cfg.arrival_rate_per_hour, self.arrival_rng, self.minute,
                              cfg.ev_spec.initial_soc_range, cfg.step_minutes, self.next_ev_id)
        self.next_ev_id += len(new)
        k_eff = cfg.ev_spec.travel_range_km
        for ev in new:
            if any(ev.soc - st.location_km / k_eff >= 0 for st in self.stations):
                self.evs[ev.id] = ev
                self.arrivals_total += 1
            else:
                self.turned_away += 1

    def add_ev(self, soc: float, position_km: float = 0.0) -> EvUser:
        """Place one EV on the road now, bypassing the arrival process."""
        ev = EvUser(self.next_ev_id, float(position_km), float(soc), self.minute,
                    initial_soc=float(soc))
        self.next_ev_id += 1
        self.evs[ev.id] = ev
        self.arrivals_total += 1
        return ev

    def _active(self) -> list:
        return [ev for ev in self.evs.values() if ev.state is EvState.DRIVING and not ev.charged]

    def build_instance(self, active: list) -> cssg.CssgInstance:
        k_eff = self.cfg.ev_spec.travel_range_km
        n, m = len(active), len(self.stations)
        pos = np.array([ev.position_km for ev in active]).reshape(n, 1)
        soc = np.array([ev.soc for ev in active]).reshape(n, 1)
        loc = self._locations.reshape(1, m)
        es = soc - (loc - pos) / k_eff
        es = np.where(loc >= pos, es, -np.inf)
        for i, ev in enumerate(active):
            for j, st in enumerate(self.stations):
                if st.id in ev.left_stations:
                    es[i, j] = -np.inf
        prices = np.empty((n, m))
        for j, st in enumerate(self.stations):
            default = st.public_price if st.public_price is not None else self.cfg.p_max
            pp = st.personalized_prices
            for i, ev in enumerate(active):
                prices[i, j] = pp.get(ev.id, default)
        free = np.array([s.free_slots for s in self.stations], dtype=np.int64)
        committed = np.array([len(s.queue) for s in self.stations], dtype=np.int64)
        return cssg.CssgInstance([ev.id for ev in active], self._ids, es, prices, free,
                                 self._slots, self._locations, self.cfg.utility_params,
                                 committed=committed)

    def _select_stations(self):
        active = self._active()
        if not active:
            self.partition = {}
            return
        inst = self.build_instance(active)
        ok = inst.reachable.any(axis=1)
        if not ok.all():
            ev = active[int(np.argmin(ok))]
            raise StrandedEv(ev.id, ev.position_km, ev.soc)
        result = cssg.solve(inst, previous=self.partition, rng=self.cssg_rng)
        self.max_revisions_seen = max(self.max_revisions_seen, result.revision)
        self.partition = result.assignment
        col = {sid: j for j, sid in enumerate(self._ids)}
        chosen = np.array([col[result.assignment[ev.id]] for ev in active], dtype=np.int64)
        groups = inst.committed + np.bincount(chosen, minlength=len(self._ids))
        k_ch = self.cfg.utility_params.k_ch_hours
        cost = inst.cost
        for i, ev in enumerate(active):
            j = chosen[i]
            ev.selected_station = self._ids[j]
            wait = expected_waiting_hours(int(inst.free_slots[j]), int(groups[j]),
                                          int(inst.slots[j]), k_ch)
            ev.decision = (float(cost[i, j]), wait)
        if self.trace_partitions:
            day, mod = self.day, self.minute_of_day
            for ev in active:
                self.partition_rows.append((day, mod, ev.id, ev.selected_station,
                                            result.revision, result.rounds))

    def _notify_left(self, ev: EvUser, station: Station):
        if station.id in ev.left_stations:
            return
        ev.left_stations.add(station.id)
        station.personalized_prices.pop(ev.id, None)
        self._close_offers(ev, station, "passed")
        hook = getattr(station.policy, "on_passed", None)
        if hook is not None:
            hook(self, station, ev)

    def _move(self):
        cfg = self.cfg
        dx = cfg.ev_spec.speed_kmh * cfg.step_minutes / 60.0
        k_eff = cfg.ev_spec.travel_range_km
        for ev in sorted(self.evs.values(), key=lambda e: e.id):
            if ev.state is not EvState.DRIVING:
                continue
            target = ev.position_km + dx
            if not ev.charged:
                st = self.station_by_id[ev.selected_station]
                if target >= st.location_km:
                    ev.soc -= (st.location_km - ev.position_km) / k_eff
                    ev.position_km = st.location_km
                    self._join(ev, st)
                    continue
                ev.soc -= dx / k_eff
                ev.position_km = target
                for other in self.stations:
                    if other.location_km < target and other.id not in ev.left_stations:
                        self._notify_left(ev, other)
                if ev.soc < -1e-9:
                    raise StrandedEv(ev.id, ev.position_km, ev.soc)
            else:
                ev.soc -= dx / k_eff
                ev.position_km = target

    def _join(self, ev: EvUser, st: Station):
        price = self.applicable_price(ev.id, st)
        ev.locked_offer = (st.id, price)
        ev.state = EvState.QUEUED
        ev.station = st.id
        ev.queue_minute = self.minute
        ev.arrival_soc = ev.soc
        st.queue.append(ev.id)
        st.personalized_prices.pop(ev.id, None)
        self._close_offers(ev, st, "joined")
        for other in self.stations:
            if other.id != st.id:
                self._notify_left(ev, other)
        self.partition.pop(ev.id, None)

    def _charge(self):
        cfg = self.cfg
        rate = cfg.charge_rate_soc_per_min * cfg.step_minutes
        max_soc = cfg.ev_spec.max_soc
        for st in self.stations:
            still = []
            for ev_id in st.charging:
                ev = self.evs[ev_id]
                ev.soc = min(max_soc, ev.soc + rate)
                ev.remaining_minutes -= cfg.step_minutes
                if ev.soc >= max_soc - 1e-12:
                    ev.soc = max_soc
                    self._finish(ev, st)
                else:
                    still.append(ev_id)
            st.charging = still
            while st.queue and st.occupied_slots < st.slots:
                ev = self.evs[st.queue.popleft()]
                ev.state = EvState.CHARGING
                ev.start_minute = self.minute
                ev.remaining_minutes = math.ceil((max_soc - ev.soc) / rate - 1e-9) * cfg.step_minutes
                st.occupied_slots += 1
                st.charging.append(ev.id)

    def _finish(self, ev: EvUser, st: Station):
        cfg = self.cfg
        price = ev.locked_offer[1]
        delta = cfg.ev_spec.max_soc - ev.arrival_soc
        bill, net = settle_bill(price, delta, cfg.ev_spec.battery_kwh, cfg.wholesale_price)
        waited = ev.start_minute - ev.queue_minute
        e_cost, wait_hours = ev.decision
        w_cost = waiting_cost(wait_hours, cfg.utility_params)
        rec = ChargeRecord(ev.id, st.id, ev.queue_minute, ev.arrival_soc, delta, price,
                           bill, net, waited, 1, e_cost, w_cost)
        self.records.append(rec)
        st.occupied_slots -= 1
        ev.state = EvState.DRIVING
        ev.charged = True
        ev.station = None
        hook = getattr(st.policy, "on_charged", None)
        if hook is not None:
            hook(self, st, ev, net)

    def _exit(self):
        end = self.cfg.highway_length_km
        gone = [ev.id for ev in self.evs.values()
                if ev.state is EvState.DRIVING and ev.charged and ev.position_km >= end]
        for ev_id in gone:
            self.evs[ev_id].state = EvState.EXITED
            del self.evs[ev_id]
            self.exited_total += 1

    def _log_step(self):
        day, mod = self.day, self.minute_of_day
        for st in self.stations:
            if st.public_price is not None:
                price = st.public_price
            elif st.personalized_prices:
                price = float(np.mean(list(st.personalized_prices.values())))
            else:
                price = float("nan")
            self.step_rows.append((day, mod, st.id, price, st.occupied_slots, len(st.queue)))

    # ---- accounting --------------------------------------------------
    def counts(self) -> dict:
        c = {s: 0 for s in EvState}
        for ev in self.evs.values():
            c[ev.state] += 1
        c[EvState.EXITED] = self.exited_total
        return c

    def check_invariants(self) -> None:
        for st in self.stations:
            charging = sum(1 for ev in self.evs.values()
                           if ev.state is EvState.CHARGING and ev.station == st.id)
            assert st.occupied_slots == charging, (st.id, st.occupied_slots, charging)
            assert 0 <= st.occupied_slots <= st.slots
        c = self.counts()
        assert self.arrivals_total == sum(c.values())
