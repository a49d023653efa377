"""Slot-based multi-server offloading environment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, physics
from .config import MB_BITS, EnvConfig, dbm_to_w

N_FEATURES = 4  # load fraction, energy fraction, bandwidth, mean link quality
LINK_REF_POWER_W = 1.0
LINK_NORM = 32.0


class NoFeasibleTarget(physics.DomainError):
    pass


class ContractViolation(ValueError):
    pass


@dataclass(frozen=True)
class HybridAction:
    """discrete: one-hot over the 3 ranked pair slots; split: share for the pair's first server."""
    discrete: np.ndarray
    split: float
    power_w: float

    @property
    def slot(self) -> int:
        return int(np.argmax(self.discrete))


@dataclass
class EnvState:
    capacity: np.ndarray  # Hz
    load: np.ndarray  # Hz
    energy: np.ndarray  # J
    bandwidth: np.ndarray  # Hz
    server_pos: np.ndarray  # (N, 2) km
    device_pos: np.ndarray  # (M, 2) km
    size_bits: np.ndarray
    priority: np.ndarray
    power: np.ndarray  # W, last applied
    t: int = 0

    def copy(self) -> "EnvState":
        return EnvState(*(np.array(getattr(self, f), copy=True) for f in _ARRAY_FIELDS), t=self.t)

    def servers(self) -> list[physics.ServerState]:
        return [physics.ServerState(float(self.capacity[i]), float(self.load[i]), float(self.energy[i]),
                                    float(self.bandwidth[i]), tuple(self.server_pos[i]))
                for i in range(len(self.capacity))]

    def devices(self) -> list[physics.DeviceState]:
        return [physics.DeviceState(tuple(self.device_pos[i]), float(self.power[i]),
                                    physics.Task(float(self.size_bits[i]), int(self.priority[i])))
                for i in range(len(self.size_bits))]


_ARRAY_FIELDS = ("capacity", "load", "energy", "bandwidth", "server_pos", "device_pos",
                 "size_bits", "priority", "power")


@dataclass
class PairTable:
    pairs: np.ndarray  # (M, 3, 2) server ids, -1 when the device has no target
    counts: np.ndarray  # (M,) distinct pairs found (1 for a lone server)
    floor: np.ndarray  # (M, 3) minimum transmit power for each slot's pair


@dataclass
class StepRecord:
    """Everything the audit needs about one resolved slot."""
    state: EnvState  # state at slot start
    pairs: PairTable
    m1: np.ndarray
    m2: np.ndarray
    alphas: np.ndarray  # (M, 2)
    power: np.ndarray  # applied, after clamping
    discrete: np.ndarray  # (M, 3)
    branch: np.ndarray  # (M, 2, 5)
    accepted: np.ndarray  # (M, 2)
    energy_after: np.ndarray
    committed_load: np.ndarray  # load after all allocations, before release
    outcomes: list = field(default_factory=list)


def distances(state: EnvState) -> np.ndarray:
    diff = state.device_pos[:, None, :] - state.server_pos[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def _draw_devices(cfg: EnvConfig, rng: np.random.Generator):
    m = cfg.n_devices
    r = rng.uniform(cfg.distance_km_low, cfg.distance_km_high, m)
    theta = rng.uniform(0.0, 2 * math.pi, m)
    pos = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    size = rng.uniform(cfg.task_mb_low, cfg.task_mb_high, m) * MB_BITS
    prio = rng.integers(1, 4, m)
    return pos, size, prio


def initial_state(cfg: EnvConfig, rng: np.random.Generator) -> EnvState:
    n = cfg.n_servers
    angles = 2 * math.pi * np.arange(n) / n
    spos = cfg.server_ring_km * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    bw = rng.uniform(cfg.bandwidth_mhz_low, cfg.bandwidth_mhz_high, n) * 1e6
    load = rng.uniform(cfg.load_ghz_low, cfg.load_ghz_high, n) * 1e9
    pos, size, prio = _draw_devices(cfg, rng)
    return EnvState(
        capacity=np.full(n, cfg.capacity_ghz * 1e9), load=load,
        energy=np.full(n, float(cfg.energy_max_j)), bandwidth=bw, server_pos=spos,
        device_pos=pos, size_bits=size, priority=prio.astype(np.int64),
        power=np.full(cfg.n_devices, dbm_to_w(0.5 * (cfg.power_dbm_low + cfg.power_dbm_high))),
    )


def link_floor(cfg: EnvConfig, d_km: np.ndarray, bandwidth: np.ndarray) -> np.ndarray:
    """Per (device, server) minimum power: max of the channel floor and the reach floor."""
    gain = cfg.gain_ref * d_km ** -cfg.path_loss_exp
    d_m = d_km * 1e3
    chan = cfg.noise_w_hz * d_m ** 2 / (bandwidth[None, :] * gain)
    reach = physics.range_power(d_m, cfg.antenna_gain_tx, cfg.antenna_gain_rx, cfg.wavelength_m,
                                cfg.p_th_w, cfg.path_loss_exp)
    return np.maximum(chan, reach)


def server_scores(state: EnvState, energy_max: float, forecast: np.ndarray | None = None) -> np.ndarray:
    """Residual energy fraction minus load fraction, per server."""
    if forecast is not None:
        return forecast[:, 1] - forecast[:, 0]
    return state.energy / energy_max - state.load / state.capacity


def feasible_pairs(state: EnvState, cfg: EnvConfig, forecast: np.ndarray | None = None) -> PairTable:
    d = distances(state)
    reach_km = physics.max_range(cfg.power_max_w, cfg.antenna_gain_tx, cfg.antenna_gain_rx,
                                 cfg.wavelength_m, cfg.p_th_w, cfg.path_loss_exp) / 1e3
    floor = link_floor(cfg, d, state.bandwidth)
    ok = ((d <= reach_km) & (state.energy[None, :] > 0) & (floor <= cfg.power_max_w)).astype(np.uint8)
    ok = np.ascontiguousarray(ok)
    pairs = np.full((cfg.n_devices, 3, 2), -1, dtype=np.int64)
    score = np.ascontiguousarray(server_scores(state, cfg.energy_max_j, forecast), dtype=float)
    counts = np.asarray(kernels.rank_pairs(score, ok, pairs), dtype=np.int64)
    pf = np.full((cfg.n_devices, 3), np.nan)
    rows = np.arange(cfg.n_devices)[:, None]
    live = pairs[..., 0] >= 0
    pf[live] = np.maximum(floor[rows, np.where(live, pairs[..., 0], 0)],
                          floor[rows, np.where(live, pairs[..., 1], 0)])[live]
    return PairTable(pairs=pairs, counts=counts, floor=pf)


def device_pairs(state: EnvState, cfg: EnvConfig, device: int) -> list[tuple[int, int]]:
    """Ranked pair list for one device; raises when nothing is reachable."""
    table = feasible_pairs(state, cfg)
    if table.counts[device] == 0:
        raise NoFeasibleTarget(f"device {device} has no live server in range")
    return [tuple(int(x) for x in p) for p in table.pairs[device]]


def _check_actions(actions, cfg: EnvConfig) -> None:
    if len(actions) != cfg.n_devices:
        raise ContractViolation(f"expected {cfg.n_devices} actions, got {len(actions)}")
    for a in actions:
        disc = np.asarray(a.discrete)
        if disc.shape != (3,) or not np.all(np.isfinite(disc)):
            raise ContractViolation(f"discrete part must be a finite 3-vector, got {disc!r}")
        if not (np.isfinite(a.split) and np.isfinite(a.power_w)):
            raise ContractViolation("continuous action parts must be finite")


def step(state: EnvState, actions, cfg: EnvConfig, seed, pairs: PairTable | None = None):
    """Resolve one slot.  Pure: returns (next_state, outcomes, reward, record)."""
    _check_actions(actions, cfg)
    if pairs is None:
        pairs = feasible_pairs(state, cfg)
    m = cfg.n_devices
    slots = np.array([a.slot for a in actions], dtype=np.int64)
    rows = np.arange(m)
    chosen = pairs.pairs[rows, slots]
    m1 = np.ascontiguousarray(chosen[:, 0])
    m2 = np.ascontiguousarray(chosen[:, 1])
    split = np.clip(np.array([float(a.split) for a in actions]), 0.0, 1.0)
    floor = pairs.floor[rows, slots]
    raw_power = np.array([float(a.power_w) for a in actions])
    power = np.where(m1 >= 0, np.clip(raw_power, np.nan_to_num(floor), cfg.power_max_w), raw_power)
    power = np.ascontiguousarray(power)
    single = m1 == m2
    alphas = np.stack([np.where(single, 1.0, split), np.where(single, 0.0, 1.0 - split)], axis=1)
    alphas[m1 < 0] = 0.0

    load = state.load.copy()
    energy = state.energy.copy()
    branch = np.zeros((m, 2, 5))
    accepted = np.zeros((m, 2), dtype=np.uint8)
    kernels.resolve_slot(
        state.capacity, load, energy, state.bandwidth, np.ascontiguousarray(distances(state)),
        state.size_bits, state.priority, power, m1, m2, np.ascontiguousarray(split),
        cfg.beta, cfg.kappa, cfg.cycles_per_bit, cfg.gain_ref, cfg.path_loss_exp, cfg.noise_w_hz,
        branch, accepted)

    outcomes = []
    for d in range(m):
        b1 = physics.BranchOutcome(*map(float, branch[d, 0]))
        b2 = physics.BranchOutcome(*map(float, branch[d, 1]))
        served = m1[d] >= 0
        live = served and state.energy[m1[d]] > 0 and state.energy[m2[d]] > 0
        outcomes.append(physics.task_outcome(
            b1, b2, cfg.slot_s, cfg.w_energy, cfg.w_delay, servers_live=bool(live),
            accepted=bool(served and accepted[d].all())))
    r = physics.reward(outcomes, cfg.w_energy, cfg.w_delay, cfg.reward_bonus, cfg.energy_ref_j,
                       cfg.latency_ref)

    rng = np.random.default_rng(seed)
    pos, size, prio = _draw_devices(cfg, rng)
    nxt = EnvState(
        capacity=state.capacity.copy(),
        load=rng.uniform(cfg.load_ghz_low, cfg.load_ghz_high, cfg.n_servers) * 1e9,
        energy=energy, bandwidth=state.bandwidth.copy(), server_pos=state.server_pos.copy(),
        device_pos=pos, size_bits=size, priority=prio.astype(np.int64), power=power.copy(),
        t=state.t + 1)
    record = StepRecord(state=state, pairs=pairs, m1=m1, m2=m2, alphas=alphas, power=power,
                        discrete=np.array([np.asarray(a.discrete, dtype=float) for a in actions]),
                        branch=branch, accepted=accepted, energy_after=energy.copy(),
                        committed_load=load, outcomes=outcomes)
    return nxt, outcomes, r, record


class MecEnv:
    """Stateful wrapper: seeded episodes over the pure `step`."""

    def __init__(self, cfg: EnvConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = int(seed)
        self.episode = -1
        self.state: EnvState | None = None

    def reset(self, episode: int | None = None) -> EnvState:
        self.episode = self.episode + 1 if episode is None else int(episode)
        rng = np.random.default_rng([self.seed, self.episode, 0])
        self.state = initial_state(self.cfg, rng)
        return self.state

    def pairs(self, forecast=None) -> PairTable:
        return feasible_pairs(self.state, self.cfg, forecast)

    def step(self, actions, pairs: PairTable | None = None):
        seed = [self.seed, self.episode, self.state.t + 1]
        nxt, outcomes, r, record = step(self.state, actions, self.cfg, seed, pairs)
        self.state = nxt
        return nxt, outcomes, r, record

    @property
    def done(self) -> bool:
        return self.state.t >= self.cfg.slots_per_episode


# ---- observations -------------------------------------------------------

def node_features(state: EnvState, cfg: EnvConfig) -> np.ndarray:
    d = distances(state)
    gain = cfg.gain_ref * d ** -cfg.path_loss_exp
    se = np.log2(1.0 + LINK_REF_POWER_W * gain / (cfg.noise_w_hz * state.bandwidth[None, :]))
    link = np.clip(se.mean(axis=0) / LINK_NORM, 0.0, 1.0)
    return np.stack([
        state.load / state.capacity,
        state.energy / cfg.energy_max_j,
        state.bandwidth / (cfg.bandwidth_mhz_high * 1e6),
        link,
    ], axis=1)


def local_obs_dim(cfg: EnvConfig) -> int:
    return 2 + 4 * cfg.n_servers


def local_observations(state: EnvState, pairs: PairTable, cfg: EnvConfig) -> np.ndarray:
    """(M, 2 + 4N): task size, priority, distances, pair-slot membership."""
    m, n = cfg.n_devices, cfg.n_servers
    d = distances(state) / cfg.distance_km_high
    member = np.zeros((m, 3, n))
    for dev in range(m):
        for k in range(3):
            a, b = pairs.pairs[dev, k]
            if a >= 0:
                member[dev, k, a] = 1.0
                member[dev, k, b] = 1.0
    head = np.stack([state.size_bits / (cfg.task_mb_high * MB_BITS), state.priority / 3.0], axis=1)
    return np.concatenate([head, d, member.reshape(m, 3 * n)], axis=1)


def global_state_dim(cfg: EnvConfig) -> int:
    n, m = cfg.n_servers, cfg.n_devices
    return 2 * N_FEATURES * n + m * (2 + n)


def global_state(state: EnvState, cfg: EnvConfig, forecast: np.ndarray) -> np.ndarray:
    d = distances(state) / cfg.distance_km_high
    dev = np.concatenate([(state.size_bits / (cfg.task_mb_high * MB_BITS))[:, None],
                          (state.priority / 3.0)[:, None], d], axis=1)
    return np.concatenate([node_features(state, cfg).ravel(), dev.ravel(),
                           np.asarray(forecast, dtype=float).ravel()])
