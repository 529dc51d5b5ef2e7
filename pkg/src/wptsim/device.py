"""Per-device behavior: battery levels and states, consumption, vote casting.

Battery levels are energies in joules. States partition (0, C] into I
right-closed bands (b_{r-1}, b_r]; anything at or below 0 classifies as state
1 and anything above C as state I. Two update rules exist side by side:

* exact     — level clamped into [0, C] every block; this is the physical rule.
* approx    — level may go negative (device died mid-block) or exceed C; while
              the level is at or above C at the start of a block the harvest
              for that block is dropped entirely. This linearized rule is what
              the closed-form lifetime analysis works with.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .topology import ConsumptionModel, NetworkScenario

DEFAULT_STATE_FRACTIONS = (0.3, 0.5, 0.9)  # interior thresholds as shares of C


@dataclass(frozen=True)
class BatteryStateConfig:
    """Ascending battery-state thresholds b_0 = 0 < ... < b_I = C (joules)."""

    thresholds: np.ndarray

    def __post_init__(self):
        thr = np.asarray(self.thresholds, dtype=np.float64)
        if thr.ndim != 1 or thr.size < 2:
            raise ValueError("need at least [0, C]")
        if thr[0] != 0.0:
            raise ValueError("first threshold must be 0")
        if np.any(np.diff(thr) <= 0):
            raise ValueError("thresholds must be strictly ascending")
        thr.setflags(write=False)
        object.__setattr__(self, "thresholds", thr)

    @classmethod
    def from_fractions(cls, capacity: float,
                       fractions=DEFAULT_STATE_FRACTIONS) -> "BatteryStateConfig":
        inner = [f * capacity for f in fractions]
        return cls(np.array([0.0, *inner, capacity]))

    @property
    def n_states(self) -> int:
        return self.thresholds.size - 1

    @property
    def capacity(self) -> float:
        return float(self.thresholds[-1])


def classify_battery_state(energy: float, config: BatteryStateConfig) -> int:
    """State index in 1..I for a battery level in joules.

    Levels at or below 0 report state 1, levels above C report state I; the
    caller decides whether those are outage/overcharge conditions.
    """
    idx = int(np.searchsorted(config.thresholds, energy, side="left"))
    return min(max(idx, 1), config.n_states)


@dataclass(frozen=True)
class DeviceState:
    """One WD's battery book-keeping between blocks.

    ``battery_state`` is the classification announced to the ENs; it is
    refreshed at block boundaries (see engine), not by the update functions.
    """

    residual_energy: float
    battery_state: int
    overcharged: bool = False   # approx mode only: harvest blocked this block
    in_outage: bool = False     # permanent; set once the level hits 0

    @classmethod
    def fresh(cls, energy: float, config: BatteryStateConfig) -> "DeviceState":
        return cls(residual_energy=float(energy),
                   battery_state=classify_battery_state(energy, config),
                   overcharged=energy >= config.capacity,
                   in_outage=energy <= 0.0)


def update_battery_exact(device: DeviceState, consumed: float, harvested: float,
                         capacity: float) -> DeviceState:
    """Physical update: level <- min(max(level - consumed + harvested, 0), C).

    The device enters (permanent) outage when the clamped level hits 0.
    """
    if device.in_outage:
        return device
    level = min(max(device.residual_energy - consumed + harvested, 0.0), capacity)
    return replace(device, residual_energy=level, in_outage=level <= 0.0,
                   overcharged=False)


def update_battery_approx(device: DeviceState, consumed: float, harvested: float,
                          capacity: float) -> DeviceState:
    """Linearized update: harvest is dropped while the level started >= C.

    The level may go negative (the block in which the device dies) or run
    above C; ``overcharged`` marks levels that will block the next harvest.
    """
    if device.in_outage:
        return device
    gained = 0.0 if device.overcharged else harvested
    level = device.residual_energy - consumed + gained
    return replace(device, residual_energy=level, in_outage=level <= 0.0,
                   overcharged=level >= capacity)


def sample_consumption(model: ConsumptionModel, votes_cast: int,
                       scenario: NetworkScenario,
                       rng: np.random.Generator) -> float:
    """One block's consumed energy in joules: bursty load + feedback cost.

    Feedback transmission runs for the alpha2 share of the block per vote:
    votes * feedback_tx_power * alpha2 * T.
    """
    if votes_cast < 0:
        raise ValueError("votes_cast must be >= 0")
    t = scenario.block_seconds
    active = rng.random() < model.active_probability
    base = model.active_power * t if active else 0.0
    feedback = votes_cast * model.feedback_tx_power * scenario.alpha2 * t
    return base + feedback


def feedback_energy(model: ConsumptionModel, votes_cast: int,
                    scenario: NetworkScenario) -> float:
    """Deterministic feedback part of one block's consumption (joules)."""
    return votes_cast * model.feedback_tx_power * scenario.alpha2 * scenario.block_seconds


def top_channels(gains_row: np.ndarray, count: int) -> np.ndarray:
    """Indices of the ``count`` largest gains, strongest first.

    Ties break toward the lower sub-channel index so the selection is
    deterministic for degenerate (equal-gain) inputs.
    """
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    count = min(count, gains_row.size)
    # stable sort on the negated gains: equal values keep ascending index order
    order = np.argsort(-gains_row, kind="stable")
    return order[:count].astype(np.int64)


def cast_votes(device: DeviceState, gains_row: np.ndarray, weights) -> np.ndarray:
    """Ranked vote list for one WD: its J strongest sub-channels.

    J is the number of non-zero weights in the row of ``weights`` matching the
    device's battery state. Devices in outage stay silent (empty vote list).
    """
    if device.in_outage:
        return np.empty(0, dtype=np.int64)
    return top_channels(gains_row, weights.votes_per_state(device.battery_state))
