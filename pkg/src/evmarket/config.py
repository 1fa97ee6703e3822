"""Configuration dataclasses and the YAML scenario file format.

A scenario file is a YAML mapping carrying ``schema_version: 1``.  Keys not
listed here are rejected so typos fail loudly::

    schema_version: 1
    name: case1-eq1
    horizon_days: 30
    step_minutes: 1
    highway_length_km: 500
    arrival_rate_per_hour: 12
    rng_seed: 7
    price_bounds: [0.35, 0.55]
    charge_rate_soc_per_min: 0.0267
    ev: {travel_range_km: 800, speed_kmh: 100, battery_kwh: 800,
         max_soc: 0.8, initial_soc_range: [0.25, 0.75]}
    utility: {variant: eq1}            # or eq8, plus any UtilityParams field
    stations:
      - {id: 1, location_km: 250, slots: 4,
         policy: {kind: qlearn, info_set: "2.3", period_minutes: 1}}
    learner: {learning_rate: 0.01, ...}  # QLearnerConfig fields
    train_days: 10
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .errors import ConfigError

SCHEMA_VERSION = 1
MINUTES_PER_DAY = 24 * 60


@dataclass(frozen=True)
class UtilityParams:
    """Parameters of the EV monetary utility.

    ``energy_factor`` is 0.8 for the waiting-aware utility and 1.0 for the
    price-only variant; ``waiting_enabled`` switches the waiting term and the
    ``k_s`` scaling used by the price-only variant.
    """

    fixed_cost_euro: float = 5.0
    battery_kwh: float = 800.0
    vtt_euro_per_hour: float = 29.0
    k_ch_hours: float = 0.3
    max_soc: float = 0.8
    energy_factor: float = 0.8
    waiting_enabled: bool = True
    k_s: float = 1.0

    def __post_init__(self):
        for name in ("fixed_cost_euro", "battery_kwh", "vtt_euro_per_hour",
                     "k_ch_hours", "max_soc", "energy_factor", "k_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"UtilityParams.{name} must be positive")

    @classmethod
    def with_waiting(cls, **kw) -> "UtilityParams":
        return cls(**{"energy_factor": 0.8, "waiting_enabled": True, **kw})

    @classmethod
    def price_only(cls, **kw) -> "UtilityParams":
        return cls(**{"energy_factor": 1.0, "waiting_enabled": False, **kw})

    @property
    def variant(self) -> str:
        return "eq1" if self.waiting_enabled else "eq8"


@dataclass(frozen=True)
class EvSpec:
    travel_range_km: float = 800.0
    speed_kmh: float = 100.0
    battery_kwh: float = 800.0
    max_soc: float = 0.8
    initial_soc_range: tuple = (0.25, 0.75)

    def __post_init__(self):
        lo, hi = self.initial_soc_range
        if not (0 < lo <= hi <= self.max_soc <= 1):
            raise ConfigError("EvSpec requires 0 < lo <= hi <= max_soc <= 1")
        if self.travel_range_km <= 0 or self.speed_kmh <= 0:
            raise ConfigError("travel range and speed must be positive")


@dataclass(frozen=True)
class QLearnerConfig:
    learning_rate: float = 0.01
    discount: float = 0.99
    epsilon0: float = 0.2
    epsilon_decay: float = 0.99
    epsilon_floor: float = 0.01
    replay_capacity: int = 10_000
    batch_size: int = 32
    target_clone_period: int = 500
    stop_lambda: float = 0.005
    hidden_width: int = 128
    # rewards are multiplied by this before entering the replay memory
    reward_scale: float = 0.01
    updates_per_event: int = 4
    # "terminal": only the binding offer of each EV becomes a transition;
    # "chain": every offer does, linked with zero intermediate reward
    transition_mode: str = "terminal"
    approximator: str = "network"   # or "tabular"
    tabular_bins: int = 10
    init_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.discount <= 1:
            raise ConfigError("discount must lie in [0, 1]")
        for name in ("epsilon0", "epsilon_floor"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.transition_mode not in ("terminal", "chain"):
            raise ConfigError(f"unknown transition_mode {self.transition_mode!r}")
        if self.approximator not in ("network", "tabular"):
            raise ConfigError(f"unknown approximator {self.approximator!r}")

    def epsilon_for_day(self, day: int) -> float:
        return max(self.epsilon_floor, self.epsilon0 * self.epsilon_decay ** day)


POLICY_KINDS = ("fixed", "bertrand", "random", "qlearn")


@dataclass(frozen=True)
class PolicyBinding:
    """How a station sets prices.

    fixed: constant ``price``.  bertrand: one undercut step against
    ``rival`` (or the cheapest competitor) every period.  random: a uniform
    draw from the action grid every period.  qlearn: a learned policy over
    ``info_set``.
    """

    kind: str = "fixed"
    price: Optional[float] = None
    period_minutes: Optional[int] = None
    epsilon_cut: float = 0.01
    rival: Optional[int] = None
    info_set: str = "2.1"
    reset_daily: bool = True

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.kind == "fixed" and self.price is None:
            raise ConfigError("fixed policy needs a price")

    @property
    def period(self) -> int:
        if self.period_minutes is not None:
            return self.period_minutes
        return 30 if self.kind in ("bertrand", "random") else 1


@dataclass(frozen=True)
class StationSpec:
    id: int
    location_km: float
    slots: int = 4
    policy: PolicyBinding = field(default_factory=lambda: PolicyBinding("fixed", price=0.55))

    def __post_init__(self):
        if self.slots < 1:
            raise ConfigError("a station needs at least one slot")


@dataclass(frozen=True)
class SimConfig:
    station_specs: tuple
    horizon_days: int = 30
    step_minutes: int = 1
    highway_length_km: float = 500.0
    arrival_rate_per_hour: float = 12.0
    rng_seed: int = 0
    ev_spec: EvSpec = field(default_factory=EvSpec)
    price_bounds: tuple = (0.35, 0.55)
    utility_params: UtilityParams = field(default_factory=UtilityParams)
    charge_rate_soc_per_min: float = 0.0267
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "station_specs", tuple(self.station_specs))
        p_min, p_max = self.price_bounds
        if not p_min < p_max:
            raise ConfigError("price bounds need p_min < p_max")
        if self.step_minutes <= 0 or self.horizon_days < 1:
            raise ConfigError("step_minutes > 0 and horizon_days >= 1 required")
        if self.arrival_rate_per_hour < 0:
            raise ConfigError("arrival rate must be non-negative")
        ids = [s.id for s in self.station_specs]
        if len(set(ids)) != len(ids):
            raise ConfigError("station ids must be unique")
        for s in self.station_specs:
            if not 0 < s.location_km < self.highway_length_km:
                raise ConfigError(f"station {s.id} lies outside the highway")
        if abs(self.utility_params.max_soc - self.ev_spec.max_soc) > 1e-12:
            raise ConfigError("utility and EV max_soc disagree")

    @property
    def p_min(self) -> float:
        return self.price_bounds[0]

    @property
    def p_max(self) -> float:
        return self.price_bounds[1]

    @property
    def wholesale_price(self) -> float:
        return self.price_bounds[0]

    @property
    def steps_per_day(self) -> int:
        return MINUTES_PER_DAY // self.step_minutes

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _utility_from(data: dict) -> UtilityParams:
    data = dict(data)
    variant = data.pop("variant", "eq1")
    if variant == "eq1":
        return UtilityParams.with_waiting(**data)
    if variant == "eq8":
        return UtilityParams.price_only(**data)
    raise ConfigError(f"unknown utility variant {variant!r}")


def config_from_dict(data: dict) -> tuple[SimConfig, QLearnerConfig, dict]:
    """Parse a scenario mapping into (SimConfig, QLearnerConfig, extras)."""
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    ev = data.pop("ev", {}) or {}
    if "initial_soc_range" in ev:
        ev["initial_soc_range"] = tuple(ev["initial_soc_range"])
    utility = _utility_from(data.pop("utility", {}) or {})
    learner = _build(QLearnerConfig, data.pop("learner", {}) or {}, "learner")
    extras = {"train_days": data.pop("train_days", 10)}
    stations = []
    for raw in data.pop("stations", []):
        raw = dict(raw)
        policy = _build(PolicyBinding, raw.pop("policy", {"kind": "fixed", "price": 0.55}), "policy")
        stations.append(_build(StationSpec, {**raw, "policy": policy}, "station"))
    if "price_bounds" in data:
        data["price_bounds"] = tuple(data["price_bounds"])
    cfg = _build(SimConfig, {**data, "station_specs": tuple(stations),
                             "ev_spec": _build(EvSpec, ev, "ev"),
                             "utility_params": utility}, "scenario")
    return cfg, learner, extras


def config_to_dict(cfg: SimConfig, learner: Optional[QLearnerConfig] = None,
                   train_days: int = 10) -> dict:
    utility = dataclasses.asdict(cfg.utility_params)
    utility["variant"] = cfg.utility_params.variant
    out = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "horizon_days": cfg.horizon_days,
        "step_minutes": cfg.step_minutes,
        "highway_length_km": cfg.highway_length_km,
        "arrival_rate_per_hour": cfg.arrival_rate_per_hour,
        "rng_seed": cfg.rng_seed,
        "price_bounds": list(cfg.price_bounds),
        "charge_rate_soc_per_min": cfg.charge_rate_soc_per_min,
        "ev": {**dataclasses.asdict(cfg.ev_spec),
               "initial_soc_range": list(cfg.ev_spec.initial_soc_range)},
        "utility": utility,
        "stations": [{"id": s.id, "location_km": s.location_km, "slots": s.slots,
                      "policy": {k: v for k, v in dataclasses.asdict(s.policy).items()
                                 if v is not None}}
                     for s in cfg.station_specs],
        "train_days": train_days,
    }
    if learner is not None:
        out["learner"] = dataclasses.asdict(learner)
    return out


def load_config(path) -> tuple[SimConfig, QLearnerConfig, dict]:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(path, cfg: SimConfig, learner: Optional[QLearnerConfig] = None,
                train_days: int = 10) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg, learner, train_days),
                                         sort_keys=False))
