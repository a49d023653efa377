"""Episode loop shared by training and evaluation of every policy kind.

Per slot: refresh the forecast every `k_pred` slots, build augmented
observations, act, step the environment, push the new snapshot into the
temporal buffer and the transition into replay, then update critics every
step and actors plus targets on the actor cadence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import marl
from .audit import audit_constraints
from .baselines import PolicyKind, ablation_augment, foo_action, rop_action
from .config import RunConfig
from .env import (N_FEATURES, MecEnv, global_state, global_state_dim, local_obs_dim,
                  local_observations, node_features)
from .nn import prefixed, unprefixed
from .timegnn import PairStore, Predictor, TemporalBuffer, augment_observation, build_graph


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpisodeStats:
    episode: int
    reward: float
    energy_j: float
    latency_eq10_s: float
    latency_total_s: float
    completed: int
    generated: int
    cost: float

    @property
    def completion_rate(self) -> float:
        return self.completed / self.generated if self.generated else 0.0


@dataclass
class AuditRow:
    episode: int
    slot: int
    device: int
    completed: bool
    violations: list = field(default_factory=list)


def policy_kind(kind) -> PolicyKind:
    return kind if isinstance(kind, PolicyKind) else PolicyKind(kind)


class Runner:
    def __init__(self, cfg: RunConfig, kind=None):
        self.cfg = cfg
        self.kind = policy_kind(kind if kind is not None else cfg.policy)
        ec = cfg.env
        self.env = MecEnv(ec, cfg.seed)
        self.obs_dim = local_obs_dim(ec) + ec.n_servers * N_FEATURES
        self.state_dim = global_state_dim(ec)
        self.agents = []
        self.predictor = None
        if self.kind.learns:
            critic_in = self.state_dim + ec.n_devices * marl.ACTION_DIM
            self.agents = [marl.AgentNets.build(self.obs_dim, critic_in, cfg.hidden, [cfg.seed, 100 + i])
                           for i in range(ec.n_devices)]
            self.replay = marl.ReplayBuffer(cfg.replay_capacity, ec.n_devices, self.obs_dim, self.state_dim)
        if self.kind is PolicyKind.TG_DCMADDPG:
            self.predictor = Predictor(N_FEATURES, cfg.gnn_hidden, cfg.gnn_layers, seed=[cfg.seed, 200])
            self.pair_store = PairStore(cfg.predictor_pairs)
        self.buffer = TemporalBuffer(cfg.k_hist)
        self.explore_rng = np.random.default_rng([cfg.seed, 1])
        self.replay_rng = np.random.default_rng([cfg.seed, 2])
        self.predictor_rng = np.random.default_rng([cfg.seed, 3])
        self.baseline_rng = np.random.default_rng([cfg.seed, 4])
        self.global_step = 0
        self.refresh_log: list[tuple[int, int]] = []
        self.actor_update_steps: list[int] = []
        self.audit_rows: list[AuditRow] = []
        self.audit = cfg.audit
        self.last_losses = {}

    # -- pieces ----------------------------------------------------------
    def sigma(self, episode: int) -> float:
        half = max(self.cfg.episodes / 2, 1)
        frac = min(1.0, episode / half)
        return self.cfg.noise_start + (self.cfg.noise_end - self.cfg.noise_start) * frac

    def snapshot(self, state):
        return build_graph(state.server_pos, node_features(state, self.env.cfg))

    def forecast(self, episode: int, t: int) -> np.ndarray:
        ec = self.env.cfg
        if self.predictor is None:
            return np.zeros((ec.n_servers, N_FEATURES))
        self.refresh_log.append((episode, t))
        return self.predictor.predict(self.buffer).states

    def observe(self, state, pairs, fc):
        ec = self.env.cfg
        local = local_observations(state, pairs, ec)
        if self.kind is PolicyKind.TG_DCMADDPG:
            obs = np.stack([augment_observation(o, fc) for o in local])
        else:
            obs = np.stack([ablation_augment(o, ec.n_servers, N_FEATURES) for o in local])
        return obs, global_state(state, ec, fc)

    def act(self, obs, pairs, explore: bool, sigma: float):
        ec = self.env.cfg
        if self.kind is PolicyKind.ROP:
            acts = [rop_action(pairs.floor[d], ec, self.baseline_rng) for d in range(ec.n_devices)]
            return np.stack([marl.from_hybrid(a, ec) for a in acts]), acts
        if self.kind is PolicyKind.FOO:
            acts = [foo_action(ec) for _ in range(ec.n_devices)]
            return np.stack([marl.from_hybrid(a, ec) for a in acts]), acts
        rng = self.explore_rng if explore else None
        vecs = np.concatenate([ag.actor(obs[i], sigma, rng, self.cfg.gumbel_temp).data
                               for i, ag in enumerate(self.agents)])
        return vecs, [marl.to_hybrid(v, ec) for v in vecs]

    def learn_step(self):
        cfg = self.cfg
        if len(self.replay) >= cfg.batch_size:
            batch = self.replay.sample(self.replay_rng, cfg.batch_size)
            a2 = marl.target_actions(self.agents, batch["obs2"])
            for i, ag in enumerate(self.agents):
                q2 = ag.critic_target(batch["state2"], a2).data
                y = batch["rew"][:, None] + cfg.gamma * q2
                loss = marl.critic_update(ag, batch, y, cfg.critic_lr)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"critic {i} loss became {loss} at step {self.global_step}")
                self.last_losses[f"critic{i}"] = loss
        self.global_step += 1
        if self.global_step % cfg.actor_every == 0 and len(self.replay) >= cfg.batch_size:
            for _ in range(cfg.actor_iters):
                batch = self.replay.sample(self.replay_rng, cfg.batch_size)
                for i in range(len(self.agents)):
                    self.last_losses[f"actor{i}"] = marl.actor_update(self.agents, i, batch, cfg.actor_lr,
                                                                      cfg.gumbel_temp)
                for ag in self.agents:
                    marl.soft_update(ag.actor.ps, ag.actor_target.ps, cfg.tau)
                    marl.soft_update(ag.critic.ps, ag.critic_target.ps, cfg.tau)
            self.actor_update_steps.append(self.global_step)
            if not marl.params_finite(self.agents):
                raise TrainingDiverged(f"non-finite network parameters after step {self.global_step}")

    def train_predictor(self):
        if self.predictor is None or not len(self.pair_store) or self.cfg.predictor_lr == 0:
            return
        seqs, adjs, tgts = self.pair_store.sample(self.predictor_rng, self.cfg.predictor_batch)
        loss = self.predictor.train_step(seqs, adjs, tgts, self.cfg.predictor_lr)
        if not math.isfinite(loss):
            raise TrainingDiverged(f"predictor loss became {loss} at step {self.global_step}")
        self.last_losses["predictor"] = loss

    # -- episodes --------------------------------------------------------
    def run_episode(self, episode: int, learn: bool, explore: bool) -> EpisodeStats:
        cfg, ec = self.cfg, self.env.cfg
        learn = learn and self.kind.learns
        state = self.env.reset(episode)
        self.buffer.warm(self.snapshot(state))
        energy_used = np.zeros(ec.n_servers)
        sigma = self.sigma(episode)
        pairs = self.env.pairs()
        fc = self.forecast(episode, 0)
        obs, gs = self.observe(state, pairs, fc)
        rewards, energy, lat10, latall, cost = [], [], [], [], 0.0
        done = 0
        for t in range(ec.slots_per_episode):
            vecs, actions = self.act(obs, pairs, explore, sigma)
            nxt, outcomes, r, rec = self.env.step(actions, pairs)
            if self.audit:
                energy_used += rec.state.energy - rec.energy_after
                viol = audit_constraints(rec, ec, energy_used)
                for d, o in enumerate(outcomes):
                    self.audit_rows.append(AuditRow(episode, t, d, o.completed,
                                                    [v for v in viol if v.rule in ("capacity", "energy")
                                                     or v.index == d]))
            rewards.append(r)
            for o in outcomes:
                energy.append(o.e_total_j)
                lat10.append(o.t_total_s)
                latall.append(o.latency_total_s)
                cost += o.cost
                done += o.completed

            snap = self.snapshot(nxt)
            if self.predictor is not None:
                self.pair_store.add(self.buffer.sequence(), self.buffer[-1].adjacency, snap.node_features)
            self.buffer.append(snap)
            pairs = self.env.pairs()
            if (t + 1) % cfg.k_pred == 0:
                fc = self.forecast(episode, t + 1)
            obs2, gs2 = self.observe(nxt, pairs, fc)
            if learn:
                self.train_predictor()
                self.replay.add(obs, gs, vecs, r, obs2, gs2)
                self.learn_step()
            obs, gs, state = obs2, gs2, nxt
        n_tasks = len(energy)
        stats = EpisodeStats(episode, float(np.mean(rewards)), float(np.mean(energy)), float(np.mean(lat10)),
                             float(np.mean(latall)), int(done), n_tasks, float(cost))
        if not all(math.isfinite(v) for v in (stats.reward, stats.energy_j, stats.latency_total_s)):
            raise TrainingDiverged(f"non-finite episode metrics in episode {episode}")
        return stats

    def run(self, episodes: int | None = None, learn: bool = True, explore: bool = True, callback=None):
        out = []
        for e in range(self.cfg.episodes if episodes is None else episodes):
            stats = self.run_episode(e, learn, explore)
            out.append(stats)
            if callback is not None:
                callback(stats)
        return out

    # -- checkpoints -----------------------------------------------------
    def checkpoint_arrays(self) -> dict:
        arrays = {}
        for i, ag in enumerate(self.agents):
            arrays.update(prefixed(f"agent{i}/actor/", ag.actor.ps))
            arrays.update(prefixed(f"agent{i}/critic/", ag.critic.ps))
            arrays.update(prefixed(f"agent{i}/actor_target/", ag.actor_target.ps))
            arrays.update(prefixed(f"agent{i}/critic_target/", ag.critic_target.ps))
        if self.predictor is not None:
            arrays.update(prefixed("timegnn/", self.predictor.ps))
        return arrays

    def load_arrays(self, arrays: dict):
        for i, ag in enumerate(self.agents):
            for name in ("actor", "critic", "actor_target", "critic_target"):
                getattr(ag, name).ps.load_arrays(unprefixed(f"agent{i}/{name}/", arrays))
        if self.predictor is not None:
            self.predictor.ps.load_arrays(unprefixed("timegnn/", arrays))
