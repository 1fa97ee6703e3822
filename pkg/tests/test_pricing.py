import time

import numpy as np
import pytest

from evmarket.config import PolicyBinding, QLearnerConfig, SimConfig, StationSpec
from evmarket.errors import ConfigError, ShapeMismatch
from evmarket.market import World
from evmarket.pricing import (ActionSpace, BertrandPolicy, InfoSet, QLearningPolicy,
                              ReplayMemory, TabularQ, Transition, bertrand_duopoly,
                              bertrand_step, load_policies, make_policy, q_update,
                              save_policies, select_action)


def test_action_grid():
    grid = ActionSpace()
    assert len(grid) == 21
    assert grid.price(0) == 0.35 and grid.price(20) == 0.55
    assert grid.step == pytest.approx(0.01)
    assert np.all(np.diff(grid.prices) > 0)
    assert grid.index_of(0.42) == 7


def test_bertrand_step_rules():
    assert bertrand_step(0.35, 0.35, 0.01, 0.35) == 0.35
    assert bertrand_step(0.50, 0.40, 0.01, 0.35) == 0.39
    assert bertrand_step(0.40, 0.50, 0.01, 0.35) == 0.40


def test_bertrand_duopoly_reaches_wholesale_exactly():
    t0 = time.perf_counter()
    traj = bertrand_duopoly(0.55, 0.55, 0.01, 0.35)
    assert time.perf_counter() - t0 < 1.0
    assert traj[-1] == (0.35, 0.35)
    p = traj[-1]
    for _ in range(5):
        p = (bertrand_step(p[0], p[1], 0.01, 0.35), bertrand_step(p[1], p[0], 0.01, 0.35))
        assert p == (0.35, 0.35)


def test_select_action_exploit_and_ties(rng):
    q = np.zeros(21)
    q[7] = 1.0
    assert select_action(q, 0.0, rng) == 7
    assert select_action(np.zeros(21), 0.0, rng) == 0


def test_select_action_explore_is_uniform(rng):
    counts = np.bincount([select_action(np.arange(21.0), 1.0, rng) for _ in range(10_000)],
                         minlength=21)
    expected = 10_000 / 21
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 45.3  # 99.9% quantile, 20 degrees of freedom


def test_tabular_update_arithmetic():
    assert q_update(0.0, 30.4, 0.0, 1.0, 0.0) == pytest.approx(30.4)
    assert q_update(0.0, 30.4, 0.0, 0.01, 0.99) == 0.01 * 30.4
    assert q_update(1.0, 2.0, 3.0, 0.5, 0.9) == 1.0 + 0.5 * (2.0 + 0.9 * 3.0 - 1.0)
    q = 0.0
    for _ in range(5000):
        q = q_update(q, 30.4, 0.0, 0.01, 0.99, terminal=True)
    assert q == pytest.approx(30.4, rel=1e-9)


def test_tabular_q_matches_closed_form():
    tab = TabularQ(21, bins=10)
    obs = np.array([0.2, 0.5])
    tab.update(Transition(obs, 3, 30.4, None, True), 0.01, 0.99)
    assert tab.values(obs)[3] == 0.01 * 30.4
    nxt = np.array([0.9, 0.9])
    tab.table[tab.key(nxt)] = np.full(21, 2.0)
    tab.update(Transition(obs, 4, 1.0, nxt, False), 0.01, 0.99)
    assert tab.values(obs)[4] == 0.0 + 0.01 * (1.0 + 0.99 * 2.0)


def test_replay_capacity_fifo_and_uniform(rng):
    mem = ReplayMemory(5, 1)
    for k in range(8):
        mem.push(Transition(np.array([k]), k % 21, float(k), None, True))
    assert len(mem) == 5
    assert sorted(mem.rewards) == [3.0, 4.0, 5.0, 6.0, 7.0]
    draws = np.concatenate([mem.sample(32, rng)[2] for _ in range(500)])
    freq = np.bincount(draws.astype(int), minlength=8)[3:] / draws.size
    assert np.all(np.abs(freq - 0.2) < 0.02)
    with pytest.raises(ShapeMismatch):
        mem.push(Transition(np.array([1.0, 2.0]), 0, 0.0, None, True))


def test_epsilon_schedule():
    cfg = QLearnerConfig()
    eps = [cfg.epsilon_for_day(d) for d in range(600)]
    assert eps[0] == 0.2 and eps[1] == pytest.approx(0.198)
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    assert min(eps) == 0.01


def _bandit(learner, steps=3000, seed=0):
    pol = QLearningPolicy("pudp", InfoSet.preset("2.1"), ActionSpace(), 1, learner,
                          np.random.default_rng(seed), seed=seed)
    obs = np.array([0.5])
    for k in range(steps):
        a = pol._act(obs)
        pol._offer(k, obs, a)
        pol._close(k, 100.0 - 10.0 * abs(a - 7))
    return pol


def test_bandit_oracle_network():
    learner = QLearnerConfig(epsilon0=1.0, reward_scale=0.01, target_clone_period=50)
    pol = _bandit(learner)
    assert int(np.argmax(pol.q.forward(np.array([0.5])))) == 7


def test_bandit_oracle_tabular():
    learner = QLearnerConfig(epsilon0=1.0, approximator="tabular", learning_rate=0.1)
    pol = _bandit(learner)
    assert int(np.argmax(pol.q.forward(np.array([0.5])))) == 7


def test_target_network_changes_only_at_clone_instants():
    learner = QLearnerConfig(epsilon0=1.0, target_clone_period=40, batch_size=4,
                             updates_per_event=1)
    pol = QLearningPolicy("pudp", InfoSet.preset("2.1"), ActionSpace(), 1, learner,
                          np.random.default_rng(0))
    snapshot = pol.target.flat()
    obs = np.array([0.3])
    for k in range(200):
        pol._offer(k, obs, k % 21)
        pol._close(k, 10.0)
        if pol.grad_steps % 40 == 0 and pol.grad_steps:
            assert np.array_equal(pol.target.flat(), pol.q.flat())
            snapshot = pol.target.flat()
        else:
            assert np.array_equal(pol.target.flat(), snapshot)


def _world(bindings, positions=(250.0, 250.0), rate=0.0, learner=None):
    specs = tuple(StationSpec(i + 1, loc, 4, b) for i, (loc, b) in enumerate(zip(positions, bindings)))
    cfg = SimConfig(specs, arrival_rate_per_hour=rate)
    learner = learner or QLearnerConfig()
    pols = {s.id: make_policy(s.policy, s.id, cfg, learner, np.random.default_rng(s.id))
            for s in specs}
    return World(cfg, pols, seed=0), pols


def test_pudp_broadcasts_one_price():
    world, _ = _world([PolicyBinding("qlearn", info_set="2.3"), PolicyBinding("fixed", price=0.5)])
    for soc in (0.4, 0.5, 0.7):
        world.add_ev(soc)
    world.step()
    st = world.station_by_id[1]
    assert st.public_price is not None and not st.personalized_prices
    assert {world.applicable_price(ev, st) for ev in world.evs} == {st.public_price}


def test_pedp_offers_every_reachable_ev():
    world, _ = _world([PolicyBinding("qlearn", info_set="2.2"), PolicyBinding("fixed", price=0.5)])
    reach = [world.add_ev(s) for s in (0.4, 0.5, 0.7)]
    world.step()
    offers = world.station_by_id[1].personalized_prices
    assert set(offers) == {ev.id for ev in reach}
    assert all(0.35 <= p <= 0.55 for p in offers.values())


def test_bertrand_cadence():
    world, pols = _world([PolicyBinding("bertrand"), PolicyBinding("fixed", price=0.45)])
    prices = []
    for _ in range(61):
        world.step()
        prices.append(world.station_by_id[1].public_price)
    assert prices[0] == 0.44
    assert prices[17] == prices[0]
    assert prices[30] == 0.44  # own below rival: hold
    assert pols[1].period == 30


def test_policy_file_round_trip(tmp_path):
    cfg_learner = QLearnerConfig()
    for info in ("2.2", "2.3"):
        pol = QLearningPolicy("pedp", InfoSet.preset(info), ActionSpace(), 1, cfg_learner,
                              np.random.default_rng(0), seed=4)
        path = tmp_path / f"p{info}.json"
        save_policies(path, {1: pol})
        back = QLearningPolicy("pedp", InfoSet.preset(info), ActionSpace(), 1, cfg_learner,
                               np.random.default_rng(1), seed=99)
        back.load_dict(load_policies(path)[1])
        xs = np.random.default_rng(2).uniform(0, 1, (20, pol.obs_dim))
        assert np.array_equal(back.q.forward(xs), pol.q.forward(xs))
        data = load_policies(path)[1]
        assert data["layer_dims"] == [pol.obs_dim, 128, 21]
        assert data["info_mask"] == InfoSet.preset(info).mask


def test_policy_file_rejects_foreign_layout(tmp_path):
    pol = QLearningPolicy("pedp", InfoSet.preset("2.2"), ActionSpace(), 1, QLearnerConfig(),
                          np.random.default_rng(0))
    path = tmp_path / "p.json"
    save_policies(path, {1: pol})
    other = QLearningPolicy("pudp", InfoSet.preset("2.3"), ActionSpace(), 1, QLearnerConfig(),
                            np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        other.load_dict(load_policies(path)[1])
    path.write_text('{"format": "evmarket-policy", "version": 99}')
    with pytest.raises(ConfigError):
        load_policies(path)


def test_tabular_policy_file_round_trip(tmp_path):
    learner = QLearnerConfig(approximator="tabular", epsilon0=1.0, learning_rate=0.5)
    pol = _bandit(learner, steps=200)
    save_policies(tmp_path / "t.json", {1: pol})
    back = QLearningPolicy("pudp", InfoSet.preset("2.1"), ActionSpace(), 1, learner,
                           np.random.default_rng(0))
    back.load_dict(load_policies(tmp_path / "t.json")[1])
    assert np.array_equal(back.q.forward(np.array([0.5])), pol.q.forward(np.array([0.5])))


def test_unknown_info_set_rejected():
    with pytest.raises(ConfigError):
        InfoSet.preset("9.9")
