"""Closed-form link, compute and cost model for one offloaded task.

All quantities are SI: bits, Hz, W, J, s.  Positions are km, except where a
function says otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DomainError(ValueError):
    pass


class InfeasibleLinkError(DomainError):
    pass


class InfeasibleAllocationError(DomainError):
    pass


@dataclass(frozen=True)
class Task:
    size_bits: float
    priority: int

    def __post_init__(self):
        if not self.size_bits > 0:
            raise DomainError(f"task size must be > 0, got {self.size_bits}")
        if self.priority not in (1, 2, 3):
            raise DomainError(f"priority must be 1, 2 or 3, got {self.priority}")


@dataclass
class ServerState:
    capacity_hz: float
    load_hz: float
    energy_j: float
    bandwidth_hz: float
    position_km: tuple


@dataclass
class DeviceState:
    position_km: tuple
    power_w: float
    task: Task


@dataclass(frozen=True)
class LinkQuality:
    gain: float
    rate_bps: float
    distance_km: float


@dataclass(frozen=True)
class BranchOutcome:
    t_trans_s: float = 0.0
    e_trans_j: float = 0.0
    t_comp_s: float = 0.0
    e_comp_j: float = 0.0
    freq_hz: float = 0.0


@dataclass(frozen=True)
class SlotOutcome:
    e_total_j: float
    t_total_s: float
    latency_total_s: float
    completed: bool
    cost: float


def priority_share(priority: int, beta: float) -> float:
    if priority not in (1, 2, 3):
        raise DomainError(f"priority must be 1, 2 or 3, got {priority}")
    if not beta > 0:
        raise DomainError(f"beta must be > 0, got {beta}")
    return min(beta * priority, 1.0)


def distance_km(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def channel_gain(d_km: float, gain_ref: float, eta: float) -> float:
    if not d_km > 0:
        raise DomainError("zero distance makes the path-loss gain singular")
    return gain_ref * d_km ** -eta


def shannon_rate(bandwidth_hz: float, power_w: float, gain: float, n0: float) -> float:
    return bandwidth_hz * math.log2(1.0 + power_w * gain / (n0 * bandwidth_hz))


def link_quality(device: DeviceState, server: ServerState, gain_ref: float, eta: float,
                 n0: float) -> LinkQuality:
    d = distance_km(device.position_km, server.position_km)
    h = channel_gain(d, gain_ref, eta)
    rate = shannon_rate(server.bandwidth_hz, device.power_w, h, n0)
    return LinkQuality(gain=h, rate_bps=rate, distance_km=d)


def transmit(alpha: float, task: Task, power_w: float, link: LinkQuality) -> tuple[float, float]:
    if alpha == 0:
        return 0.0, 0.0
    if not link.rate_bps > 0:
        raise InfeasibleLinkError("cannot send a positive share over a zero-rate link")
    t = alpha * task.size_bits / link.rate_bps
    return t, power_w * t


def allocate_frequency(share: float, server: ServerState) -> float:
    f_m = server.capacity_hz
    return share * f_m * (1.0 - server.load_hz / f_m)


def execute(alpha: float, task: Task, freq_hz: float, kappa: float, chi: float = 1.0):
    """Returns (t_comp, e_comp, p_comp) for the `alpha` share computed at `freq_hz`."""
    p = kappa * freq_hz ** 3
    if alpha == 0:
        return 0.0, 0.0, p
    if not freq_hz > 0:
        raise InfeasibleAllocationError("positive share with no allocated frequency")
    t = alpha * task.size_bits * chi / freq_hz
    return t, p * t, p


def slot_cost(e_total: float, t_total: float, w_energy: float, w_delay: float) -> float:
    return w_energy * e_total + w_delay * t_total


def task_outcome(b1: BranchOutcome, b2: BranchOutcome, slot_s: float, w_energy: float,
                 w_delay: float, servers_live: bool = True, accepted: bool = True) -> SlotOutcome:
    e = b1.e_trans_j + b2.e_trans_j + b1.e_comp_j + b2.e_comp_j
    t = max(b1.t_comp_s, b2.t_comp_s)
    lat = max(b1.t_trans_s + b1.t_comp_s, b2.t_trans_s + b2.t_comp_s)
    done = bool(accepted and servers_live and lat <= slot_s)
    return SlotOutcome(e_total_j=e, t_total_s=t, latency_total_s=lat, completed=done,
                       cost=slot_cost(e, t, w_energy, w_delay))


def power_floor(n0: float, d_m: float, bandwidth_hz: float, gain: float) -> float:
    """Minimum transmit power for a link, with the distance term in meters."""
    if not gain > 0:
        raise InfeasibleLinkError("zero channel gain")
    return n0 * d_m ** 2 / (bandwidth_hz * gain)


def max_range(power_w, g_t, g_r, wavelength_m, p_th_w, eta):
    """Reach in meters at which received power falls to `p_th_w`."""
    return (power_w * g_t * g_r * wavelength_m ** 2 / ((4 * math.pi) ** 2 * p_th_w)) ** (1.0 / eta)


def range_power(d_m, g_t, g_r, wavelength_m, p_th_w, eta):
    """Smallest power whose reach covers `d_m` meters (inverse of max_range)."""
    return d_m ** eta * (4 * math.pi) ** 2 * p_th_w / (g_t * g_r * wavelength_m ** 2)


def reward(outcomes, w_energy: float, w_delay: float, bonus: float, e_ref: float,
           t_ref: float) -> float:
    if not outcomes:
        raise DomainError("reward needs at least one outcome")
    total = 0.0
    for o in outcomes:
        total += bonus * o.completed - (w_energy * o.e_total_j / e_ref + w_delay * o.t_total_s / t_ref)
    return total / len(outcomes)


def rate_array(bandwidth_hz, power_w, gain, n0):
    bandwidth_hz = np.asarray(bandwidth_hz, dtype=float)
    return bandwidth_hz * np.log2(1.0 + power_w * gain / (n0 * bandwidth_hz))
