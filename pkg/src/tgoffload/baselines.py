"""Reference policies: random offloading, full offloading, and the no-forecast ablation."""
from __future__ import annotations

import enum

import numpy as np

from .config import EnvConfig
from .env import HybridAction


class PolicyKind(enum.Enum):
    TG_DCMADDPG = "tg"
    DC_MADDPG_ABLATION = "ablation"
    ROP = "rop"
    FOO = "foo"

    @property
    def learns(self) -> bool:
        return self in (PolicyKind.TG_DCMADDPG, PolicyKind.DC_MADDPG_ABLATION)


def rop_action(floors, cfg: EnvConfig, rng: np.random.Generator) -> HybridAction:
    """Uniform pair slot, split and power.  `floors` holds each slot's minimum power."""
    k = int(rng.integers(0, 3))
    split = float(rng.uniform(0.0, 1.0))
    lo = float(np.nan_to_num(floors[k]))
    power = float(rng.uniform(lo, cfg.power_max_w))
    return HybridAction(discrete=np.eye(3)[k], split=split, power_w=power)


def foo_action(cfg: EnvConfig) -> HybridAction:
    """Everything to the top-ranked pair's first server at maximum power."""
    return HybridAction(discrete=np.eye(3)[0], split=1.0, power_w=cfg.power_max_w)


def ablation_augment(local_obs, n_servers: int, n_features: int) -> np.ndarray:
    """Local observation followed by an all-zero forecast block of the usual size."""
    return np.concatenate([np.asarray(local_obs, dtype=float).ravel(), np.zeros(n_servers * n_features)])
