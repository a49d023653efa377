"""Constraint audit over a resolved slot.  Violations are returned, never raised."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import physics
from .config import EnvConfig
from .env import StepRecord, distances

REL_TOL = 1e-9


@dataclass(frozen=True)
class Violation:
    rule: str  # "split", "capacity", "power", "energy", "coupling", "range", "action"
    index: int  # device id, or server id for capacity/energy
    detail: str


def audit_constraints(rec: StepRecord, cfg: EnvConfig, energy_used: np.ndarray | None = None) -> list[Violation]:
    """Check one step.  `energy_used` is the episode's cumulative compute energy per server,
    including this slot; defaults to what the record alone implies."""
    out: list[Violation] = []
    st = rec.state
    served = rec.m1 >= 0
    d_km = distances(st)

    for dev in range(len(rec.m1)):
        disc = rec.discrete[dev]
        if abs(disc.sum() - 1.0) > 1e-9 or disc.min() < 0 or abs(disc.max() - 1.0) > 1e-9:
            out.append(Violation("action", dev, f"discrete part is not one-hot: {disc}"))
        if not served[dev]:
            continue
        a1, a2 = rec.alphas[dev]
        if abs(a1 + a2 - 1.0) > 1e-12 or min(a1, a2) < 0 or max(a1, a2) > 1:
            out.append(Violation("split", dev, f"shares ({a1}, {a2}) do not form a full split"))
        p = rec.power[dev]
        if p > cfg.power_max_w * (1 + REL_TOL):
            out.append(Violation("action", dev, f"power {p} above maximum"))
        for b, srv in enumerate((rec.m1[dev], rec.m2[dev])):
            if rec.alphas[dev, b] <= 0:
                continue
            d = d_km[dev, srv]
            gain = physics.channel_gain(d, cfg.gain_ref, cfg.path_loss_exp)
            floor = physics.power_floor(cfg.noise_w_hz, d * 1e3, st.bandwidth[srv], gain)
            if p < floor * (1 - REL_TOL):
                out.append(Violation("power", dev, f"power {p} below floor {floor} for server {srv}"))
            reach = physics.max_range(p, cfg.antenna_gain_tx, cfg.antenna_gain_rx, cfg.wavelength_m,
                                      cfg.p_th_w, cfg.path_loss_exp)
            if d * 1e3 > reach * (1 + REL_TOL):
                out.append(Violation("range", dev, f"server {srv} at {d * 1e3:.1f} m beyond reach {reach:.1f} m"))

    # capacity: replay allocations in service order from the slot-start load
    load = st.load.copy()
    spare_seen = np.zeros((len(rec.m1), 2))
    for dev in range(len(rec.m1)):
        if not served[dev]:
            continue
        for b, srv in enumerate((rec.m1[dev], rec.m2[dev])):
            spare_seen[dev, b] = st.capacity[srv] - load[srv]
            load[srv] += rec.branch[dev, b, 4]
    for srv in range(len(load)):
        total = load[srv]
        if total > st.capacity[srv] * (1 + REL_TOL):
            out.append(Violation("capacity", srv, f"committed {total:.6g} Hz exceeds {st.capacity[srv]:.6g} Hz"))

    # coupling: the larger share never gets less frequency when spare capacity matches
    for dev in range(len(rec.m1)):
        if not served[dev] or rec.m1[dev] == rec.m2[dev] or not rec.accepted[dev].all():
            continue
        a, f, s = rec.alphas[dev], rec.branch[dev, :, 4], spare_seen[dev]
        if abs(s[0] - s[1]) <= REL_TOL * max(s.max(), 1.0):
            hi, lo = (0, 1) if a[0] > a[1] else (1, 0)
            if a[hi] > a[lo] and f[lo] > 0 and f[hi] < f[lo] * (1 - REL_TOL):
                out.append(Violation("coupling", dev, f"share {a[hi]} got {f[hi]} Hz < {f[lo]} Hz"))

    used = energy_used if energy_used is not None else cfg.energy_max_j - rec.energy_after
    for srv in range(len(used)):
        if used[srv] > cfg.energy_max_j * (1 + REL_TOL) or rec.energy_after[srv] < 0:
            out.append(Violation("energy", srv, f"used {used[srv]} J of budget {cfg.energy_max_j} J"))
    return out
