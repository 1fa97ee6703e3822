"""Station pricing policies: fixed, Bertrand undercutting, random, and learned.

Every policy object exposes ``period`` (minutes between price refreshes) and
``update(world, station)``.  Learned policies also receive
``on_charged`` / ``on_passed`` events from the world and ``start_day``.
Learned stations either post one public price (``mode="pudp"``) or an
individual price to every EV that can still reach them (``mode="pedp"``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import PolicyBinding, QLearnerConfig, SimConfig
from .errors import ConfigError, DomainError, NonConvergence, ShapeMismatch
from .network import Network

POLICY_FILE_FORMAT = "evmarket-policy"
POLICY_FILE_VERSION = 1


class ActionSpace:
    """Evenly spaced price grid ``p_min, p_min + step, ..., p_max``."""

    def __init__(self, p_min: float = 0.35, p_max: float = 0.55, levels: int = 21):
        if levels < 2 or not p_min < p_max:
            raise DomainError("action grid needs p_min < p_max and at least two levels")
        self.p_min, self.p_max, self.levels = float(p_min), float(p_max), int(levels)
        self.prices = np.round(np.linspace(p_min, p_max, levels), 10)

    @property
    def step(self) -> float:
        return (self.p_max - self.p_min) / (self.levels - 1)

    def __len__(self) -> int:
        return self.levels

    def price(self, index: int) -> float:
        return float(self.prices[index])

    def index_of(self, price: float) -> int:
        return int(np.argmin(np.abs(self.prices - price)))

    def clamp(self, price: float) -> float:
        return float(min(self.p_max, max(self.p_min, price)))


# ---- information sets -------------------------------------------------

FEATURES = ("competitor_price", "competitor_free", "own_free", "esoc")

INFO_SETS = {
    "2.1": ("competitor_price",),
    "2.2": ("competitor_price", "esoc"),
    "2.3": ("competitor_price", "competitor_free", "own_free"),
    "2.4": ("competitor_price", "competitor_free", "own_free", "esoc"),
    "case1": ("competitor_price", "competitor_free"),
}


@dataclass(frozen=True)
class InfoSet:
    name: str
    features: tuple

    @classmethod
    def preset(cls, name: str) -> "InfoSet":
        if name not in INFO_SETS:
            raise ConfigError(f"unknown information set {name!r}; choose from {sorted(INFO_SETS)}")
        return cls(name, INFO_SETS[name])

    @property
    def mask(self) -> list:
        return [f in self.features for f in FEATURES]

    def dim(self, n_competitors: int) -> int:
        per = {"competitor_price": n_competitors, "competitor_free": n_competitors,
               "own_free": 1, "esoc": 1}
        return sum(per[f] for f in self.features)


def build_observation(world, station, info: InfoSet, ev=None) -> np.ndarray:
    """Normalised features seen by ``station`` (for ``ev`` when personalised).

    Competitor prices are taken as of the start of the step, scaled to
    [0, 1] over the price bounds; free slots are fractions of capacity.
    """
    cfg = world.cfg
    span = cfg.p_max - cfg.p_min
    out = []
    rivals = world.competitors(station)
    if "competitor_price" in info.features:
        for r in rivals:
            p = world.snapshot_prices.get(r.id)
            if p is None:
                p = world.applicable_price(ev.id, r) if ev is not None else cfg.p_max
            out.append((p - cfg.p_min) / span)
    if "competitor_free" in info.features:
        for r in rivals:
            out.append(world.snapshot_free.get(r.id, r.free_slots) / r.slots)
    if "own_free" in info.features:
        out.append(world.snapshot_free.get(station.id, station.free_slots) / station.slots)
    if "esoc" in info.features:
        e = 0.0 if ev is None else world.esoc_at(ev, station)
        out.append(min(1.0, max(0.0, e)))
    return np.asarray(out, dtype=float)


# ---- replay and value updates -------------------------------------------

@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: Optional[np.ndarray]
    done: bool


class ReplayMemory:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity, self.obs_dim = int(capacity), int(obs_dim)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._at = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        if len(t.obs) != self.obs_dim:
            raise ShapeMismatch(f"observation length {len(t.obs)} != {self.obs_dim}")
        k = self._at
        self.obs[k] = t.obs
        self.next_obs[k] = 0.0 if t.next_obs is None else t.next_obs
        self.actions[k] = t.action
        self.rewards[k] = t.reward
        self.done[k] = t.done
        self._at = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, batch_size)
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.done[idx])


def select_action(q_values, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    explore = rng.random() < epsilon
    if explore:
        return int(rng.integers(0, len(q_values)))
    return int(np.argmax(q_values))


def q_update(q_sa: float, reward: float, next_max: float, lr: float, discount: float,
             terminal: bool = False) -> float:
    """Tabular temporal-difference update of one action value."""
    target = reward if terminal else reward + discount * next_max
    return q_sa + lr * (target - q_sa)


def td_targets(target_net: Network, rewards, next_obs, done, discount: float) -> np.ndarray:
    nxt = target_net.forward(next_obs).max(axis=1)
    return rewards + discount * np.where(done, 0.0, nxt)


class TabularQ:
    """Action values over observations discretised into equal-width bins."""

    def __init__(self, n_actions: int, bins: int = 10):
        self.n_actions, self.bins = int(n_actions), int(bins)
        self.table: dict = {}

    def key(self, obs) -> tuple:
        return tuple(int(min(self.bins - 1, max(0, math.floor(x * self.bins)))) for x in obs)

    def values(self, obs) -> np.ndarray:
        return self.table.get(self.key(obs), np.zeros(self.n_actions))

    def forward(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        if obs.ndim == 1:
            return self.values(obs).copy()
        return np.array([self.values(o) for o in obs])

    def update(self, t: Transition, lr: float, discount: float) -> float:
        row = self.table.setdefault(self.key(t.obs), np.zeros(self.n_actions))
        nxt = 0.0 if t.done else float(self.values(t.next_obs).max())
        before = row[t.action]
        row[t.action] = q_update(before, t.reward, nxt, lr, discount, t.done)
        target = t.reward if t.done else t.reward + discount * nxt
        return float((target - before) ** 2)


# ---- Bertrand dynamics --------------------------------------------------

def bertrand_step(own_price: float, rival_price: float, epsilon_cut: float,
                  wholesale: float) -> float:
    """Undercut a rival that is at or below our price; otherwise hold.

    The result never drops below the wholesale price.
    """
    if own_price >= rival_price:
        return round(max(wholesale, rival_price - epsilon_cut), 10)
    return own_price


def bertrand_duopoly(p1: float, p2: float, epsilon_cut: float = 0.01, wholesale: float = 0.35,
                     max_iter: int = 10_000) -> list:
    """Alternating undercutting until a full round changes nothing.

    Returns the price pairs after every single-station move, starting with
    the initial pair.
    """
    traj = [(p1, p2)]
    for _ in range(max_iter):
        n1 = bertrand_step(p1, p2, epsilon_cut, wholesale)
        traj.append((n1, p2))
        n2 = bertrand_step(p2, n1, epsilon_cut, wholesale)
        traj.append((n1, n2))
        if (n1, n2) == (p1, p2):
            return traj
        p1, p2 = n1, n2
    raise NonConvergence("Bertrand iteration did not settle", trace=traj)


# ---- policies -----------------------------------------------------------

class FixedPolicy:
    def __init__(self, price: float, period: int = 1):
        self.price, self.period = float(price), int(period)

    def start_day(self, world, day):
        for st in world.stations:
            if st.policy is self:
                st.public_price = self.price

    def update(self, world, station):
        station.public_price = self.price


class BertrandPolicy:
    """Undercut ``rival`` (or the cheapest competitor) every period."""

    def __init__(self, epsilon_cut: float, p_min: float, p_max: float, period: int = 30,
                 rival: Optional[int] = None, reset_daily: bool = True):
        self.epsilon_cut, self.p_min, self.p_max = epsilon_cut, p_min, p_max
        self.period, self.rival, self.reset_daily = int(period), rival, reset_daily

    def start_day(self, world, day):
        if self.reset_daily or day == 0:
            for st in world.stations:
                if st.policy is self:
                    st.public_price = self.p_max

    def update(self, world, station):
        if self.rival is not None:
            ref = world.snapshot_prices.get(self.rival)
            ref = self.p_max if ref is None else ref
        else:
            vals = [world.snapshot_prices.get(r.id) for r in world.competitors(station)]
            ref = min((v if v is not None else self.p_max) for v in vals) if vals else self.p_max
        own = self.p_max if station.public_price is None else station.public_price
        station.public_price = bertrand_step(own, ref, self.epsilon_cut, self.p_min)


class RandomPolicy:
    def __init__(self, actions: ActionSpace, rng: np.random.Generator, period: int = 30):
        self.actions, self.rng, self.period = actions, rng, int(period)

    def update(self, world, station):
        station.public_price = self.actions.price(int(self.rng.integers(0, len(self.actions))))


class QLearningPolicy:
    """Epsilon-greedy value learner pricing publicly or per EV.

    With ``learner.transition_mode == "terminal"`` each EV contributes one
    terminal transition: the offer it acted on, rewarded with the net revenue
    of its charge or zero if it drove past.  ``"chain"`` also links successive
    offers to the same EV with zero intermediate reward.
    """

    def __init__(self, mode: str, info: InfoSet, actions: ActionSpace, n_competitors: int,
                 learner: QLearnerConfig, rng: np.random.Generator, period: int = 1,
                 seed: int = 0):
        if mode not in ("pedp", "pudp"):
            raise ConfigError(f"unknown pricing mode {mode!r}")
        self.mode, self.info, self.actions = mode, info, actions
        self.n_competitors = n_competitors
        self.learner, self.rng, self.period = learner, rng, int(period)
        self.obs_dim = info.dim(n_competitors)
        if learner.approximator == "tabular":
            self.q = TabularQ(len(actions), learner.tabular_bins)
            self.target = None
        else:
            self.q = Network(self.obs_dim, len(actions), learner.hidden_width, seed=seed)
            self.target = self.q.clone()
        self.replay = ReplayMemory(learner.replay_capacity, max(self.obs_dim, 1))
        self.training = True
        self.epsilon = learner.epsilon0
        self.pending: dict = {}
        self.grad_steps = 0
        self.day_losses: list = []
        self.daily_loss: list = []
        self.events = 0

    # -- acting ---
    def greedy_prices(self, observations) -> np.ndarray:
        q = self.q.forward(np.atleast_2d(observations))
        return self.actions.prices[np.argmax(q, axis=1)]

    def _act(self, obs) -> int:
        eps = self.epsilon if self.training else 0.0
        return select_action(self.q.forward(obs), eps, self.rng)

    def update(self, world, station):
        targets = world.offer_targets(station)
        if self.mode == "pudp":
            obs = build_observation(world, station, self.info)
            a = self._act(obs)
            station.public_price = self.actions.price(a)
            for ev in targets:
                self._offer(ev.id, obs, a)
            return
        offers = {}
        if targets:
            obs = np.array([build_observation(world, station, self.info, ev) for ev in targets])
            eps = self.epsilon if self.training else 0.0
            q = self.q.forward(obs)
            for ev, o, qv in zip(targets, obs, q):
                a = select_action(qv, eps, self.rng)
                offers[ev.id] = self.actions.price(a)
                self._offer(ev.id, o, a)
        station.personalized_prices = offers

    def _offer(self, ev_id, obs, action):
        prev = self.pending.get(ev_id)
        if prev is not None and self.learner.transition_mode == "chain" and self.mode == "pedp":
            self._learn(Transition(prev[0], prev[1], 0.0, obs, False), steps=1)
        self.pending[ev_id] = (obs, action)

    # -- learning ---
    def on_charged(self, world, station, ev, net_revenue):
        self._close(ev.id, net_revenue)

    def on_passed(self, world, station, ev):
        self._close(ev.id, 0.0)

    def _close(self, ev_id, reward):
        rec = self.pending.pop(ev_id, None)
        if rec is None:
            return
        self.events += 1
        t = Transition(rec[0], rec[1], reward * self.learner.reward_scale, None, True)
        self._learn(t, steps=self.learner.updates_per_event)

    def _learn(self, t: Transition, steps: int):
        if not self.training:
            return
        cfg = self.learner
        if isinstance(self.q, TabularQ):
            self.day_losses.append(self.q.update(t, cfg.learning_rate, cfg.discount))
            return
        self.replay.push(t)
        if len(self.replay) < cfg.batch_size:
            return
        for _ in range(steps):
            obs, acts, rew, nxt, done = self.replay.sample(cfg.batch_size, self.rng)
            tgt = td_targets(self.target, rew, nxt, done, cfg.discount)
            self.day_losses.append(self.q.grad_step(obs, acts, tgt, cfg.learning_rate))
            self.grad_steps += 1
            if self.grad_steps % cfg.target_clone_period == 0:
                self.target.copy_from(self.q)

    def start_day(self, world, day):
        if self.day_losses:
            self.daily_loss.append(float(np.mean(self.day_losses)))
        elif day > 0 and self.training:
            self.daily_loss.append(float("nan"))
        self.day_losses = []
        self.epsilon = self.learner.epsilon_for_day(day)

    def finish_day(self):
        """Close the running day's loss bucket (the world only opens days)."""
        if self.day_losses:
            self.daily_loss.append(float(np.mean(self.day_losses)))
            self.day_losses = []

    def converged(self) -> bool:
        d = [x for x in self.daily_loss if not math.isnan(x)]
        return len(d) >= 2 and abs(d[-1] - d[-2]) < self.learner.stop_lambda

    def freeze(self):
        self.training = False
        self.pending.clear()

    # -- persistence ---
    def to_dict(self) -> dict:
        out = {
            "format": POLICY_FILE_FORMAT,
            "version": POLICY_FILE_VERSION,
            "mode": self.mode,
            "info_set": self.info.name,
            "info_mask": self.info.mask,
            "feature_order": list(FEATURES),
            "n_competitors": self.n_competitors,
            "action_grid": [float(p) for p in self.actions.prices],
            "approximator": "tabular" if isinstance(self.q, TabularQ) else "network",
        }
        if isinstance(self.q, TabularQ):
            out["bins"] = self.q.bins
            out["table"] = [[list(k), [float(v) for v in row]] for k, row in sorted(self.q.table.items())]
        else:
            net = self.q
            out["layer_dims"] = [net.input_dim, net.hidden_dim, net.output_dim]
            out["weights"] = {name: [float(v) for v in arr.ravel()]
                              for name, arr in zip(("W1", "b1", "W2", "b2"), net.params)}
        return out

    def load_dict(self, data: dict) -> None:
        check_policy_dict(data)
        if data["info_set"] != self.info.name or data["n_competitors"] != self.n_competitors:
            raise ShapeMismatch("policy file was trained for a different observation layout")
        if not np.allclose(data["action_grid"], self.actions.prices):
            raise ShapeMismatch("policy file action grid differs from the scenario's")
        if data["approximator"] == "tabular":
            self.q = TabularQ(len(self.actions), data["bins"])
            self.q.table = {tuple(k): np.array(v, dtype=float) for k, v in data["table"]}
            self.target = None
            return
        dims = data["layer_dims"]
        if dims != [self.obs_dim, dims[1], len(self.actions)]:
            raise ShapeMismatch(f"layer dims {dims} do not fit this station")
        net = Network(dims[0], dims[2], dims[1], zero=True)
        w = data["weights"]
        net.load_flat(np.concatenate([np.asarray(w[k], dtype=float) for k in ("W1", "b1", "W2", "b2")]))
        self.q = net
        self.target = net.clone()


def check_policy_dict(data: dict) -> None:
    if data.get("format") != POLICY_FILE_FORMAT:
        raise ConfigError("not an evmarket policy file")
    if data.get("version") != POLICY_FILE_VERSION:
        raise ConfigError(f"unsupported policy file version {data.get('version')!r}")


def save_policies(path, policies: dict, meta: Optional[dict] = None) -> None:
    """Write the learned policies of a run (station id -> policy) as JSON."""
    doc = {"format": POLICY_FILE_FORMAT, "version": POLICY_FILE_VERSION,
           "meta": meta or {},
           "stations": {str(sid): p.to_dict() for sid, p in sorted(policies.items())
                        if isinstance(p, QLearningPolicy)}}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_policies(path) -> dict:
    """Station id -> policy dict, as written by :func:`save_policies`."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read policy file {path}: {exc}") from exc
    check_policy_dict(doc)
    return {int(k): v for k, v in doc["stations"].items()}


def make_policy(binding: PolicyBinding, station_id: int, cfg: SimConfig,
                learner: QLearnerConfig, rng: np.random.Generator,
                actions: Optional[ActionSpace] = None, mode: Optional[str] = None):
    """Instantiate the policy object described by a station's binding."""
    actions = actions or ActionSpace(cfg.p_min, cfg.p_max)
    period = binding.period
    if binding.kind == "fixed":
        if not cfg.p_min - 1e-9 <= binding.price <= cfg.p_max + 1e-9:
            raise DomainError(f"fixed price {binding.price} outside the price bounds")
        return FixedPolicy(binding.price, period)
    if binding.kind == "bertrand":
        return BertrandPolicy(binding.epsilon_cut, cfg.p_min, cfg.p_max, period,
                              binding.rival, binding.reset_daily)
    if binding.kind == "random":
        return RandomPolicy(actions, rng, period)
    n_comp = len(cfg.station_specs) - 1
    if mode is None:
        mode = "pedp" if "esoc" in INFO_SETS.get(binding.info_set, ()) else "pudp"
    return QLearningPolicy(mode, InfoSet.preset(binding.info_set), actions, n_comp, learner,
                           rng, period, seed=learner.init_seed + 7919 * station_id)
