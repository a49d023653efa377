"""Hybrid discrete-continuous multi-agent actor-critic with centralised critics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, relu, sigmoid
from .config import EnvConfig, dbm_to_w
from .env import HybridAction
from .nn import Dense, ParamSet, adam_step, gumbel_noise, gumbel_softmax

ACTION_DIM = 5


class Actor:
    """Trunk of two ReLU layers; 3 pair-slot logits and 2 squashed continuous outputs."""

    def __init__(self, obs_dim: int, hidden: int, rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.ps = ParamSet()
        self.l1 = Dense(self.ps, "l1", obs_dim, hidden, rng)
        self.l2 = Dense(self.ps, "l2", hidden, hidden, rng)
        self.disc = Dense(self.ps, "disc", hidden, 3, rng)
        self.cont = Dense(self.ps, "cont", hidden, 2, rng)

    def __call__(self, obs, sigma: float = 0.0, rng: np.random.Generator | None = None,
                 temperature: float = 1.0) -> Tensor:
        """(B, obs_dim) -> (B, 5) action vectors [one-hot(3), split, power level].

        With `rng`, Gumbel noise and Gaussian noise of scale `sigma` are drawn from it;
        without, the output is the deterministic argmax action.
        """
        x = Tensor(np.atleast_2d(obs))
        h = relu(self.l2(relu(self.l1(x))))
        logits = self.disc(h)
        pre = self.cont(h)
        if rng is not None:
            gnoise = gumbel_noise(rng, logits.shape)
            pre = pre + sigma * rng.standard_normal(pre.shape)
        else:
            gnoise = np.zeros(logits.shape)
        onehot = gumbel_softmax(logits, temperature, hard=True, noise=gnoise)
        return concat([onehot, sigmoid(pre)], axis=-1)


class Critic:
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.ps = ParamSet()
        self.l1 = Dense(self.ps, "l1", in_dim, hidden, rng)
        self.l2 = Dense(self.ps, "l2", hidden, hidden, rng)
        self.out = Dense(self.ps, "out", hidden, 1, rng)

    def __call__(self, global_state, joint_actions) -> Tensor:
        s = global_state if isinstance(global_state, Tensor) else Tensor(np.atleast_2d(global_state))
        a = joint_actions if isinstance(joint_actions, Tensor) else Tensor(np.atleast_2d(joint_actions))
        return self.out(relu(self.l2(relu(self.l1(concat([s, a], axis=-1))))))


def copy_params(src: ParamSet, dst: ParamSet):
    dst.load_arrays(src.arrays())


def soft_update(online: ParamSet, target: ParamSet, tau: float):
    """target <- tau * online + (1 - tau) * target, in place."""
    for (_, p), (_, q) in zip(online, target):
        q.data = tau * p.data + (1.0 - tau) * q.data


@dataclass
class AgentNets:
    actor: Actor
    critic: Critic
    actor_target: Actor
    critic_target: Critic

    @classmethod
    def build(cls, obs_dim: int, critic_in: int, hidden: int, seed) -> "AgentNets":
        rng = np.random.default_rng(seed)
        actor, critic = Actor(obs_dim, hidden, rng), Critic(critic_in, hidden, rng)
        at, ct = Actor(obs_dim, hidden, rng), Critic(critic_in, hidden, rng)
        copy_params(actor.ps, at.ps)
        copy_params(critic.ps, ct.ps)
        return cls(actor, critic, at, ct)


def to_hybrid(vec, cfg: EnvConfig) -> HybridAction:
    vec = np.asarray(vec, dtype=float)
    dbm = cfg.power_dbm_low + vec[4] * (cfg.power_dbm_high - cfg.power_dbm_low)
    return HybridAction(discrete=vec[:3].copy(), split=float(vec[3]), power_w=dbm_to_w(dbm))


def from_hybrid(action: HybridAction, cfg: EnvConfig) -> np.ndarray:
    span = cfg.power_dbm_high - cfg.power_dbm_low
    dbm = 10.0 * np.log10(max(action.power_w, 1e-30)) + 30.0
    u = 0.0 if span == 0 else float(np.clip((dbm - cfg.power_dbm_low) / span, 0.0, 1.0))
    return np.concatenate([np.asarray(action.discrete, dtype=float), [action.split, u]])


class ReplayBuffer:
    """Ring of (obs, global state, joint action, reward, next obs, next global state)."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, state_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, n_agents, obs_dim))
        self.state = np.zeros((capacity, state_dim))
        self.act = np.zeros((capacity, n_agents * ACTION_DIM))
        self.rew = np.zeros(capacity)
        self.obs2 = np.zeros((capacity, n_agents, obs_dim))
        self.state2 = np.zeros((capacity, state_dim))
        self.size = 0
        self._next = 0

    def add(self, obs, state, act, rew, obs2, state2):
        i = self._next
        self.obs[i], self.state[i], self.act[i] = obs, state, np.ravel(act)
        self.rew[i], self.obs2[i], self.state2[i] = rew, obs2, state2
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def __len__(self):
        return self.size

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(0, self.size, n)

    def sample(self, rng: np.random.Generator, n: int) -> dict:
        idx = self.sample_indices(rng, n)
        return {k: getattr(self, k)[idx] for k in ("obs", "state", "act", "rew", "obs2", "state2")}


def target_actions(agents, obs2) -> np.ndarray:
    """Joint deterministic target-actor actions, agents concatenated in order."""
    return np.concatenate([ag.actor_target(obs2[:, i]).data for i, ag in enumerate(agents)], axis=-1)


def td_target(batch: dict, agents, i: int, gamma: float) -> np.ndarray:
    """y = r + gamma * Q'_i(s', mu'(o')), shape (B, 1); no graph is kept."""
    q = agents[i].critic_target(batch["state2"], target_actions(agents, batch["obs2"])).data
    return batch["rew"][:, None] + gamma * q


def critic_update(agent: AgentNets, batch: dict, y: np.ndarray, lr: float) -> float:
    ps = agent.critic.ps
    ps.zero_grad()
    q = agent.critic(batch["state"], batch["act"])
    d = q - Tensor(y)
    loss = (d * d).mean()
    loss.backward()
    adam_step(ps, lr)
    return float(loss.data)


def actor_update(agents, i: int, batch: dict, lr: float, temperature: float = 1.0) -> float:
    """Ascend Q_i with agent i's action replaced by its current deterministic policy."""
    ag = agents[i]
    ag.actor.ps.zero_grad()
    a_i = ag.actor(batch["obs"][:, i], temperature=temperature)
    acts = batch["act"]
    lo, hi = i * ACTION_DIM, (i + 1) * ACTION_DIM
    joint = concat([Tensor(acts[:, :lo]), a_i, Tensor(acts[:, hi:])], axis=-1)
    q = ag.critic(batch["state"], joint).mean()
    (-q).backward()
    adam_step(ag.actor.ps, lr)
    ag.critic.ps.zero_grad()
    return float(q.data)


def params_finite(agents) -> bool:
    return all(np.all(np.isfinite(p.data)) for ag in agents
               for ps in (ag.actor.ps, ag.critic.ps) for _, p in ps)
