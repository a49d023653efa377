import dataclasses

import numpy as np
import pytest

from tgoffload import env as E
from tgoffload.audit import audit_constraints
from tgoffload.baselines import rop_action
from tgoffload.config import EnvConfig
from tgoffload.env import ContractViolation, EnvState, HybridAction, MecEnv

CFG = EnvConfig(n_servers=5, n_devices=4)


def act(slot=0, split=0.5, power=1.0):
    return HybridAction(discrete=np.eye(3)[slot], split=split, power_w=power)


def hand_state(cfg, device_pos, energy=None, load=None):
    n, m = cfg.n_servers, len(device_pos)
    ang = 2 * np.pi * np.arange(n) / n
    return EnvState(
        capacity=np.full(n, 2e10),
        load=np.full(n, 5e9) if load is None else np.asarray(load, float),
        energy=np.full(n, 1e4) if energy is None else np.asarray(energy, float),
        bandwidth=np.full(n, 2e7),
        server_pos=0.5 * np.stack([np.cos(ang), np.sin(ang)], 1),
        device_pos=np.asarray(device_pos, float),
        size_bits=np.full(m, 3.2e8), priority=np.full(m, 2, dtype=np.int64),
        power=np.ones(m))


def rollout(cfg, seed, episodes=3, policy=None):
    env = MecEnv(cfg, seed)
    rng = np.random.default_rng(seed)
    for ep in range(episodes):
        st = env.reset(ep)
        while not env.done:
            pairs = env.pairs()
            acts = [policy(d, pairs) if policy else rop_action(pairs.floor[d], cfg, rng)
                    for d in range(cfg.n_devices)]
            before = env.state
            nxt, outs, r, rec = env.step(acts, pairs)
            yield before, nxt, outs, r, rec


def test_energy_conservation_exact():
    for before, nxt, outs, r, rec in rollout(CFG, 1, episodes=5):
        drop = before.energy - nxt.energy
        per_server = np.zeros(CFG.n_servers)
        for d in range(CFG.n_devices):
            for b, srv in enumerate((rec.m1[d], rec.m2[d])):
                if srv >= 0 and rec.accepted[d, b]:
                    per_server[srv] += rec.branch[d, b, 3]
        assert drop.sum() == pytest.approx(per_server.sum(), rel=1e-12, abs=1e-9)
        assert np.all(drop >= 0)
        # replaying the deductions in service order reproduces the energies bit for bit
        replay = before.energy.copy()
        for d in range(CFG.n_devices):
            for b, srv in enumerate((rec.m1[d], rec.m2[d])):
                if srv >= 0 and rec.accepted[d, b]:
                    replay[srv] -= rec.branch[d, b, 3]
        assert np.array_equal(replay, nxt.energy)


def test_energy_nonincreasing_and_depleted_servers_never_serve():
    cfg = dataclasses.replace(CFG, energy_max_j=60.0, n_devices=5)
    env = MecEnv(cfg, 4)
    env.reset(0)
    dead = set()
    prev = env.state.energy.copy()
    while not env.done:
        pairs = env.pairs()
        for srv in dead:
            assert not np.any(pairs.pairs == srv)
        _, _, _, rec = env.step([act(0, 1.0, cfg.power_max_w)] * cfg.n_devices, pairs)
        assert np.all(env.state.energy <= prev)
        prev = env.state.energy.copy()
        dead |= {i for i in range(cfg.n_servers) if env.state.energy[i] <= 0}


def test_split_complete_and_tmax():
    for _, _, outs, _, rec in rollout(CFG, 2):
        served = rec.m1 >= 0
        assert np.all(rec.alphas[served].sum(axis=1) == 1.0)
        for d, o in enumerate(outs):
            assert o.t_total_s == max(rec.branch[d, 0, 2], rec.branch[d, 1, 2])


def test_step_is_pure_and_deterministic():
    rng = np.random.default_rng(0)
    st = E.initial_state(CFG, rng)
    snapshot = st.copy()
    acts = [act(k % 3, 0.3, 2.0) for k in range(CFG.n_devices)]
    a = E.step(st, acts, CFG, [7, 1])
    b = E.step(st, acts, CFG, [7, 1])
    for f in E._ARRAY_FIELDS:
        assert np.array_equal(getattr(a[0], f), getattr(b[0], f))
        assert np.array_equal(getattr(st, f), getattr(snapshot, f))
    assert a[2] == b[2]


def test_feasible_pairs_three_servers_three_pairs():
    cfg = EnvConfig(n_servers=3, n_devices=1)
    st = hand_state(cfg, [[2.0, 0.0]])
    t = E.feasible_pairs(st, cfg)
    pairs = {tuple(sorted(p)) for p in t.pairs[0].tolist()}
    assert pairs == {(0, 1), (0, 2), (1, 2)} and t.counts[0] == 3


def test_feasible_pairs_two_servers_padded():
    cfg = EnvConfig(n_servers=3, n_devices=1)
    st = hand_state(cfg, [[2.0, 0.0]], energy=[1e4, 1e4, 0.0])
    t = E.feasible_pairs(st, cfg)
    assert t.pairs[0].tolist() == [[0, 1]] * 3 and t.counts[0] == 1


def test_feasible_pairs_skip_depleted():
    cfg = EnvConfig(n_servers=5, n_devices=1)
    st = hand_state(cfg, [[2.0, 0.0]], energy=[1e4, 0.0, 1e4, 1e4, 1e4])
    t = E.feasible_pairs(st, cfg)
    assert not np.any(t.pairs == 1) and t.counts[0] == 3


def test_feasible_pairs_ranking_by_score():
    cfg = EnvConfig(n_servers=4, n_devices=1)
    st = hand_state(cfg, [[2.0, 0.0]], load=[1e10, 0.0, 5e9, 2e9])
    # scores: energy fraction 1 minus load fraction -> 0.5, 1.0, 0.75, 0.9
    t = E.feasible_pairs(st, cfg)
    assert t.pairs[0].tolist() == [[1, 3], [1, 2], [2, 3]]


def test_single_server_degenerates():
    cfg = EnvConfig(n_servers=3, n_devices=1)
    st = hand_state(cfg, [[2.0, 0.0]], energy=[0.0, 1e4, 0.0])
    t = E.feasible_pairs(st, cfg)
    assert t.pairs[0].tolist() == [[1, 1]] * 3 and t.counts[0] == 1
    _, outs, _, rec = E.step(st, [act(2, 0.2, 1.0)], cfg, 0, t)
    assert rec.alphas[0].tolist() == [1.0, 0.0]
    assert outs[0].completed


def test_no_server_in_range():
    cfg = EnvConfig(n_servers=3, n_devices=1, distance_km_high=100.0)
    st = hand_state(cfg, [[90.0, 0.0]])
    with pytest.raises(E.NoFeasibleTarget):
        E.device_pairs(st, cfg, 0)
    t = E.feasible_pairs(st, cfg)
    _, outs, _, _ = E.step(st, [act()], cfg, 0, t)
    assert not outs[0].completed and outs[0].e_total_j == 0.0


def test_loads_accumulate_within_slot():
    cfg = EnvConfig(n_servers=4, n_devices=2)
    st = hand_state(cfg, [[2.0, 0.0], [-2.0, 0.0]])
    pairs = E.PairTable(pairs=np.array([[[0, 1]] * 3, [[2, 3]] * 3]), counts=np.array([1, 1]),
                        floor=np.zeros((2, 3)))
    _, _, _, rec = E.step(st, [act(0, 0.5), act(0, 0.5)], cfg, 0, pairs)
    grew = rec.committed_load - st.load
    assert np.all(grew > 0)
    for d, (a, b) in enumerate([(0, 1), (2, 3)]):
        assert grew[a] == rec.branch[d, 0, 4] and grew[b] == rec.branch[d, 1, 4]
    # a second device on the same server sees the earlier allocation
    pairs2 = E.PairTable(pairs=np.array([[[0, 1]] * 3] * 2), counts=np.array([1, 1]), floor=np.zeros((2, 3)))
    _, _, _, rec2 = E.step(st, [act(0, 0.5), act(0, 0.5)], cfg, 0, pairs2)
    assert rec2.branch[1, 0, 4] < rec2.branch[0, 0, 4]


def test_refusal_leaves_energy_unchanged():
    cfg = EnvConfig(n_servers=3, n_devices=1)
    st = hand_state(cfg, [[2.0, 0.0]], energy=[1e-6, 1e4, 1e4])
    pairs = E.PairTable(pairs=np.array([[[0, 1]] * 3]), counts=np.array([1]), floor=np.zeros((1, 3)))
    nxt, outs, _, rec = E.step(st, [act(0, 0.5)], cfg, 0, pairs)
    assert nxt.energy[0] == st.energy[0]
    assert not outs[0].completed
    assert rec.accepted[0].tolist() == [0, 1]


def test_malformed_actions_rejected():
    st = E.initial_state(CFG, np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        E.step(st, [act()] * (CFG.n_devices - 1), CFG, 0)
    bad = HybridAction(discrete=np.ones(4), split=0.5, power_w=1.0)
    with pytest.raises(ContractViolation):
        E.step(st, [bad] * CFG.n_devices, CFG, 0)
    nan = HybridAction(discrete=np.eye(3)[0], split=float("nan"), power_w=1.0)
    with pytest.raises(ContractViolation):
        E.step(st, [nan] * CFG.n_devices, CFG, 0)


def test_power_clamped_to_floor_and_max():
    for _, _, _, _, rec in rollout(CFG, 3, policy=lambda d, p: act(d % 3, 0.5, 1e-30)):
        served = rec.m1 >= 0
        floors = rec.pairs.floor[np.arange(CFG.n_devices), rec.discrete.argmax(1)]
        assert np.all(rec.power[served] == floors[served])
    for _, _, _, _, rec in rollout(CFG, 3, policy=lambda d, p: act(0, 0.5, 1e9)):
        assert np.all(rec.power[rec.m1 >= 0] == CFG.power_max_w)


# ---- audit -------------------------------------------------------------

def test_audit_clean_on_valid_rollout():
    used = np.zeros(CFG.n_servers)
    for before, nxt, _, _, rec in rollout(CFG, 5, episodes=4):
        if before.t == 0:
            used[:] = 0
        used += before.energy - nxt.energy
        assert audit_constraints(rec, CFG, used) == []


def _one_record():
    st = E.initial_state(CFG, np.random.default_rng(9))
    return E.step(st, [act(k % 3, 0.4, 5.0) for k in range(CFG.n_devices)], CFG, 1)[3]


def test_audit_flags_split():
    rec = _one_record()
    rec.alphas[0] = [0.6, 0.6]
    assert any(v.rule == "split" and v.index == 0 for v in audit_constraints(rec, CFG))


def test_audit_flags_capacity():
    rec = _one_record()
    srv = rec.m1[0]
    rec.branch[0, 0, 4] = rec.state.capacity[srv] * 2
    assert any(v.rule == "capacity" and v.index == srv for v in audit_constraints(rec, CFG))


def test_audit_flags_power_and_range():
    rec = _one_record()
    rec.power[1] = 1e-30
    rules = {v.rule for v in audit_constraints(rec, CFG) if v.index == 1}
    assert {"power", "range"} <= rules


def test_audit_flags_energy():
    rec = _one_record()
    used = np.zeros(CFG.n_servers)
    used[2] = CFG.energy_max_j * 1.5
    assert any(v.rule == "energy" and v.index == 2 for v in audit_constraints(rec, CFG, used))


def test_audit_flags_coupling():
    cfg = EnvConfig(n_servers=3, n_devices=1)
    st = hand_state(cfg, [[2.0, 0.0]])
    pairs = E.PairTable(pairs=np.array([[[0, 1]] * 3]), counts=np.array([1]), floor=np.zeros((1, 3)))
    rec = E.step(st, [act(0, 0.8)], cfg, 0, pairs)[3]
    assert audit_constraints(rec, cfg) == []
    rec.branch[0, 0, 4], rec.branch[0, 1, 4] = rec.branch[0, 1, 4] * 0.5, rec.branch[0, 0, 4]
    assert any(v.rule == "coupling" for v in audit_constraints(rec, cfg))


# ---- observations ------------------------------------------------------

def test_observation_shapes_and_ranges():
    for n in (3, 5, 10, 15):
        cfg = EnvConfig(n_servers=n, n_devices=3)
        env = MecEnv(cfg, 0)
        st = env.reset(0)
        pairs = env.pairs()
        obs = E.local_observations(st, pairs, cfg)
        assert obs.shape == (3, E.local_obs_dim(cfg))
        feats = E.node_features(st, cfg)
        assert feats.shape == (n, E.N_FEATURES)
        assert np.all((feats >= 0) & (feats <= 1))
        gs = E.global_state(st, cfg, np.zeros((n, E.N_FEATURES)))
        assert gs.shape == (E.global_state_dim(cfg),)


def test_episode_reset_is_seeded():
    a = MecEnv(CFG, 11).reset(3)
    b = MecEnv(CFG, 11).reset(3)
    c = MecEnv(CFG, 12).reset(3)
    assert np.array_equal(a.device_pos, b.device_pos)
    assert not np.array_equal(a.device_pos, c.device_pos)
