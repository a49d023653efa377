"""Run and environment configuration.

Config files are flat ``key = value`` lines, ``#`` starts a comment.  Every
key of :class:`EnvConfig` and :class:`RunConfig` is accepted; see
``docs/formats.md`` for the full list.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

MB_BITS = 8e6


class ConfigError(ValueError):
    """Bad key or value in a run configuration."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def w_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


@dataclass(frozen=True)
class EnvConfig:
    n_servers: int = 5
    n_devices: int = 5
    slots_per_episode: int = 10
    # draw ranges, in the units of the key names
    task_mb_low: float = 30.0
    task_mb_high: float = 50.0
    load_ghz_low: float = 4.5
    load_ghz_high: float = 10.0
    bandwidth_mhz_low: float = 20.0
    bandwidth_mhz_high: float = 25.0
    distance_km_low: float = 1.0
    distance_km_high: float = 5.0
    power_dbm_low: float = 0.0
    power_dbm_high: float = 50.0
    capacity_ghz: float = 20.0
    server_ring_km: float = 0.5
    energy_max_j: float = 10_000.0
    # cost weights and priority scale
    w_energy: float = 1.0
    w_delay: float = 2.0
    beta: float = 0.1
    # model constants
    kappa: float = 1e-28
    path_loss_exp: float = 3.0
    gain_ref: float = 1e-6
    noise_dbm_hz: float = -174.0
    cycles_per_bit: float = 1.0
    slot_s: float = 10.0
    antenna_gain_tx: float = 1.0
    antenna_gain_rx: float = 1.0
    wavelength_m: float = 0.125
    p_th_w: float = 1e-15
    # reward shaping
    reward_bonus: float = 2.0
    energy_ref_j: float = 100.0
    latency_ref_s: float = 0.0  # 0 means "use slot_s"

    def __post_init__(self):
        validate_env(self)

    @property
    def noise_w_hz(self) -> float:
        return dbm_to_w(self.noise_dbm_hz)

    @property
    def power_max_w(self) -> float:
        return dbm_to_w(self.power_dbm_high)

    @property
    def latency_ref(self) -> float:
        return self.latency_ref_s if self.latency_ref_s > 0 else self.slot_s


_POSITIVE_ENV = (
    "n_servers", "n_devices", "slots_per_episode", "task_mb_low", "load_ghz_high",
    "bandwidth_mhz_low", "distance_km_low", "capacity_ghz", "energy_max_j", "beta",
    "kappa", "path_loss_exp", "gain_ref", "cycles_per_bit", "slot_s",
    "antenna_gain_tx", "antenna_gain_rx", "wavelength_m", "p_th_w", "energy_ref_j",
)
_RANGES = ("task_mb", "load_ghz", "bandwidth_mhz", "distance_km", "power_dbm")


def validate_env(cfg: EnvConfig) -> None:
    for key in _POSITIVE_ENV:
        if not getattr(cfg, key) > 0:
            raise ConfigError(key, f"must be > 0, got {getattr(cfg, key)!r}")
    for stem in _RANGES:
        lo, hi = getattr(cfg, stem + "_low"), getattr(cfg, stem + "_high")
        if lo > hi:
            raise ConfigError(stem + "_low", f"low {lo!r} exceeds high {hi!r}")
    for key in ("w_energy", "w_delay", "load_ghz_low", "server_ring_km", "latency_ref_s", "reward_bonus"):
        if getattr(cfg, key) < 0:
            raise ConfigError(key, "must be >= 0")
    if cfg.load_ghz_high > cfg.capacity_ghz:
        raise ConfigError("load_ghz_high", "background load cannot exceed capacity_ghz")
    if cfg.server_ring_km >= cfg.distance_km_low:
        raise ConfigError("server_ring_km", "servers must sit strictly inside the device ring")


POLICIES = ("tg", "ablation", "rop", "foo")


@dataclass(frozen=True)
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: str = "tg"
    episodes: int = 2000
    report_stride: int = 20
    final_window: int = 50
    seed: int = 0
    sweep_servers: tuple = (3, 5, 10, 15)
    out: str = "runs"
    audit: bool = False
    # learner
    actor_lr: float = 1e-3
    critic_lr: float = 1e-2
    predictor_lr: float = 1e-3
    tau: float = 0.01
    gamma: float = 0.95
    actor_every: int = 100
    actor_iters: int = 100
    replay_capacity: int = 100_000
    batch_size: int = 64
    hidden: int = 64
    noise_start: float = 0.2
    noise_end: float = 0.02
    gumbel_temp: float = 1.0
    # predictor
    k_hist: int = 5
    k_pred: int = 2
    gnn_hidden: int = 32
    gnn_layers: int = 3
    predictor_batch: int = 16
    predictor_pairs: int = 256

    def __post_init__(self):
        validate_run(self)

    def replace(self, **kw) -> "RunConfig":
        env_kw = {k: kw.pop(k) for k in list(kw) if k in ENV_KEYS}
        env = dataclasses.replace(self.env, **env_kw) if env_kw else self.env
        return dataclasses.replace(self, env=env, **kw)


def validate_run(cfg: RunConfig) -> None:
    if cfg.policy not in POLICIES:
        raise ConfigError("policy", f"must be one of {POLICIES}, got {cfg.policy!r}")
    for key in ("episodes", "report_stride", "final_window", "actor_every", "replay_capacity",
                "batch_size", "hidden", "k_hist", "k_pred", "gnn_hidden", "gnn_layers",
                "predictor_batch", "predictor_pairs", "gumbel_temp"):
        if not getattr(cfg, key) > 0:
            raise ConfigError(key, "must be > 0")
    for key in ("actor_lr", "critic_lr", "predictor_lr", "noise_start", "noise_end", "actor_iters"):
        if getattr(cfg, key) < 0:
            raise ConfigError(key, "must be >= 0")
    if not 0 <= cfg.tau <= 1:
        raise ConfigError("tau", "must lie in [0, 1]")
    if not 0 <= cfg.gamma <= 1:
        raise ConfigError("gamma", "must lie in [0, 1]")
    if not cfg.sweep_servers or any(n < 1 for n in cfg.sweep_servers):
        raise ConfigError("sweep_servers", "need at least one positive server count")


ENV_KEYS = {f.name: f.type for f in fields(EnvConfig)}
RUN_KEYS = {f.name: f.type for f in fields(RunConfig) if f.name != "env"}


def _parse_value(key: str, raw: str):
    default = getattr(EnvConfig(), key) if key in ENV_KEYS else getattr(RunConfig(), key)
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in ENV_KEYS and key not in RUN_KEYS:
            raise ConfigError(key, "unknown key")
        values[key] = _parse_value(key, raw)
    return values


def build_config(values: dict) -> RunConfig:
    for key in values:
        if key not in ENV_KEYS and key not in RUN_KEYS:
            raise ConfigError(key, "unknown key")
    env = EnvConfig(**{k: v for k, v in values.items() if k in ENV_KEYS})
    return RunConfig(env=env, **{k: v for k, v in values.items() if k in RUN_KEYS})


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at `path` (if any), then `overrides`."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if isinstance(val, str) and key not in ("policy", "out"):
            val = _parse_value(key, val)
        values[key] = val
    return build_config(values)


def _fmt(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, tuple):
        return ",".join(str(v) for v in val)
    return str(val)


def dump_config(cfg: RunConfig) -> str:
    lines = ["# effective configuration"]
    for name in RUN_KEYS:
        lines.append(f"{name} = {_fmt(getattr(cfg, name))}")
    for name in ENV_KEYS:
        lines.append(f"{name} = {_fmt(getattr(cfg.env, name))}")
    return "\n".join(lines) + "\n"


def desk_preset(**kw) -> RunConfig:
    """Small setting: 3 servers, 3 devices, 300 episodes."""
    base = RunConfig().replace(n_servers=3, n_devices=3, episodes=300)
    return base.replace(**kw) if kw else base
