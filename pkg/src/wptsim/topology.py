"""Network geometry and physical constants for one experiment.

An experiment is described by a NetworkScenario: energy-node (EN) and wireless
device (WD) positions in meters, the sub-channel plan, and every physical
constant the block loop needs. Scenarios are immutable after construction and
safe to share between trials and worker processes.

Default constants reproduce the reference setup: three ENs at the corners of
an equilateral triangle with 4 m sides, 6 WDs clustered per EN, 1 W transmit
power at 915 MHz over 30 sub-channels per EN, 500 ms fading blocks, and a
1 V / 1000 mAh battery (3600 J) per device.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kv

SPEED_OF_LIGHT = 299792458.0  # m/s

# Reference-setup defaults. Powers in watts, energies in joules, times in
# seconds, distances in meters.
DEFAULT_TX_POWER = 1.0
DEFAULT_CARRIER_HZ = 915e6
DEFAULT_TX_ANTENNA_GAIN = 2.0
DEFAULT_RX_ANTENNA_GAIN = 2.0
DEFAULT_PATH_LOSS_EXPONENT = 2.0
DEFAULT_SUBCHANNELS_PER_EN = 30
DEFAULT_BLOCK_SECONDS = 0.5
DEFAULT_HARVEST_EFFICIENCY = 0.51
DEFAULT_PILOT_FRACTION = 0.02      # share of each block spent on pilots
DEFAULT_FEEDBACK_FRACTION = 0.03   # share of each block spent on vote feedback
DEFAULT_BATTERY_CAPACITY_J = 3600.0  # 1 V x 1000 mAh = 1 Ah x 1 V x 3600 s/h
DEFAULT_INITIAL_FRACTION = 0.75
DEFAULT_ACTIVE_POWER_W = 0.012       # 12 mW while active
DEFAULT_ACTIVE_PROBABILITY = 0.25    # active in a quarter of blocks (3 mW average)
DEFAULT_FEEDBACK_TX_POWER_W = 1e-4   # 0.1 mW while feeding back one vote


def free_space_beta(tx_gain: float = DEFAULT_TX_ANTENNA_GAIN,
                    rx_gain: float = DEFAULT_RX_ANTENNA_GAIN,
                    carrier_hz: float = DEFAULT_CARRIER_HZ) -> float:
    """Free-space reference gain at 1 m: Gt * Gr * (wavelength / 4 pi)^2.

    With the default 2/2 antenna gains at 915 MHz this is ~2.72e-3, which
    together with a path-loss exponent of 2 matches commercial RF-harvesting
    link budgets (about 40 uW harvested at 10 m from a 3 W transmitter).
    """
    wavelength = SPEED_OF_LIGHT / carrier_hz
    return tx_gain * rx_gain * (wavelength / (4.0 * math.pi)) ** 2


@dataclass(frozen=True)
class ConsumptionModel:
    """Two-point device load plus per-vote feedback cost.

    A device consumes active_power for the whole block with probability
    active_probability (independently per block), otherwise nothing. On top of
    that, sending one vote costs feedback_tx_power for the feedback share
    (alpha2) of the block.
    """

    active_power: float = DEFAULT_ACTIVE_POWER_W
    active_probability: float = DEFAULT_ACTIVE_PROBABILITY
    feedback_tx_power: float = DEFAULT_FEEDBACK_TX_POWER_W

    def __post_init__(self):
        if self.active_power < 0 or self.feedback_tx_power < 0:
            raise ValueError("consumption powers must be non-negative")
        if not 0.0 <= self.active_probability <= 1.0:
            raise ValueError("active_probability must lie in [0, 1]")

    @property
    def mean_power(self) -> float:
        return self.active_power * self.active_probability


@dataclass(frozen=True)
class NetworkScenario:
    """Immutable geometry + constants bundle consumed by the engine.

    Sub-channels are indexed globally: 0 .. n_subchannels-1, with EN i owning
    the contiguous range [i*n_per_en, (i+1)*n_per_en). ``mean_gains[k, j]`` is
    the expected fading gain from the owner of sub-channel j to WD k:
    beta * distance^(-delta).
    """

    en_positions: np.ndarray          # (M, 2) meters
    wd_positions: np.ndarray          # (K, 2) meters
    n_per_en: int = DEFAULT_SUBCHANNELS_PER_EN
    p0: float = DEFAULT_TX_POWER                    # per-EN transmit power, W
    beta: float = field(default_factory=free_space_beta)
    delta: float = DEFAULT_PATH_LOSS_EXPONENT
    eta: float = DEFAULT_HARVEST_EFFICIENCY
    block_seconds: float = DEFAULT_BLOCK_SECONDS
    alpha1: float = DEFAULT_PILOT_FRACTION
    alpha2: float = DEFAULT_FEEDBACK_FRACTION
    battery_capacity: float = DEFAULT_BATTERY_CAPACITY_J
    initial_energy: float = DEFAULT_INITIAL_FRACTION * DEFAULT_BATTERY_CAPACITY_J
    outage_quorum: int = 1            # dead WDs that end the network
    consumption: ConsumptionModel = field(default_factory=ConsumptionModel)
    subchannel_owner: np.ndarray = field(init=False, repr=False)
    mean_gains: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        en = np.atleast_2d(np.asarray(self.en_positions, dtype=np.float64))
        wd = np.atleast_2d(np.asarray(self.wd_positions, dtype=np.float64))
        if en.ndim != 2 or en.shape[1] != 2 or en.shape[0] < 1:
            raise ValueError("en_positions must be (M, 2)")
        if wd.ndim != 2 or wd.shape[1] != 2 or wd.shape[0] < 1:
            raise ValueError("wd_positions must be (K, 2)")
        if self.n_per_en < 1:
            raise ValueError("n_per_en must be >= 1")
        for name in ("p0", "beta", "delta", "eta", "block_seconds",
                     "battery_capacity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.block_seconds <= 0:
            raise ValueError("block_seconds must be positive")
        if self.battery_capacity <= 0:
            raise ValueError("battery_capacity must be positive")
        if self.alpha1 < 0 or self.alpha2 < 0 or self.alpha1 + self.alpha2 >= 1.0:
            raise ValueError("need alpha1, alpha2 >= 0 and alpha1 + alpha2 < 1")
        if not 0.0 <= self.initial_energy <= self.battery_capacity:
            raise ValueError("initial_energy must lie in [0, battery_capacity]")
        if not 1 <= self.outage_quorum <= wd.shape[0]:
            raise ValueError("outage_quorum must lie in [1, K]")

        # distances (M, K); coincident EN/WD would make the mean gain blow up
        diff = en[:, None, :] - wd[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        if np.any(dist <= 0.0):
            raise ValueError("a WD coincides with an EN; move it")

        owner = np.repeat(np.arange(en.shape[0]), self.n_per_en)
        gains = self.beta * dist[owner, :].T ** (-self.delta)  # (K, MN)

        for arr in (en, wd, owner, gains):
            arr.setflags(write=False)
        object.__setattr__(self, "en_positions", en)
        object.__setattr__(self, "wd_positions", wd)
        object.__setattr__(self, "subchannel_owner", owner)
        object.__setattr__(self, "mean_gains", gains)

    @property
    def n_ens(self) -> int:
        return self.en_positions.shape[0]

    @property
    def n_wds(self) -> int:
        return self.wd_positions.shape[0]

    @property
    def n_subchannels(self) -> int:
        return self.n_ens * self.n_per_en

    def en_channels(self, en: int) -> np.ndarray:
        """Global indices of the sub-channels EN ``en`` transmits on."""
        return np.arange(en * self.n_per_en, (en + 1) * self.n_per_en)

    def distance(self, en: int, wd: int) -> float:
        return float(np.linalg.norm(self.en_positions[en] - self.wd_positions[wd]))

    def with_(self, **changes) -> "NetworkScenario":
        """Copy with fields replaced (positions re-validated)."""
        return replace(self, **changes)


def mean_gain(scenario: NetworkScenario, en: int, wd: int) -> float:
    """Expected fading gain beta * d^(-delta) between EN ``en`` and WD ``wd``."""
    return scenario.beta * scenario.distance(en, wd) ** (-scenario.delta)


def default_en_positions() -> np.ndarray:
    """Three ENs on an equilateral triangle with 4 m sides, centroid at origin."""
    s = math.sqrt(3.0)
    return np.array([[-2.0, -2.0 / s], [2.0, -2.0 / s], [0.0, 4.0 / s]])


def generate_clustered_placement(en_positions: np.ndarray | None = None,
                                 wds_per_en: int = 6,
                                 radius: float = 3.0,
                                 seed: int | np.random.SeedSequence = 0,
                                 **overrides) -> NetworkScenario:
    """Scenario with ``wds_per_en`` WDs dropped uniformly in a disk per EN.

    Uniform-in-disk sampling: radius ~ R*sqrt(U), angle ~ 2*pi*U. The draw is
    deterministic in ``seed``. Extra keyword arguments override any
    NetworkScenario field (p0, battery_capacity, ...).
    """
    if en_positions is None:
        en_positions = default_en_positions()
    en_positions = np.atleast_2d(np.asarray(en_positions, dtype=np.float64))
    if wds_per_en < 1:
        raise ValueError("wds_per_en must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    wds = []
    for center in en_positions:
        r = radius * np.sqrt(rng.random(wds_per_en))
        theta = 2.0 * math.pi * rng.random(wds_per_en)
        wds.append(center + np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    return NetworkScenario(en_positions=en_positions,
                           wd_positions=np.concatenate(wds, axis=0),
                           **overrides)


# --- text serialization ------------------------------------------------------

_SCALAR_FIELDS = [
    # (key, attribute, converter)
    ("n_per_en", "n_per_en", _kv.as_int),
    ("p0", "p0", _kv.as_float),
    ("beta", "beta", _kv.as_float),
    ("delta", "delta", _kv.as_float),
    ("eta", "eta", _kv.as_float),
    ("block_seconds", "block_seconds", _kv.as_float),
    ("alpha1", "alpha1", _kv.as_float),
    ("alpha2", "alpha2", _kv.as_float),
    ("battery_capacity", "battery_capacity", _kv.as_float),
    ("initial_energy", "initial_energy", _kv.as_float),
    ("outage_quorum", "outage_quorum", _kv.as_int),
]

_CONSUMPTION_FIELDS = [
    ("active_power", _kv.as_float),
    ("active_probability", _kv.as_float),
    ("feedback_tx_power", _kv.as_float),
]


def scenario_to_text(scenario: NetworkScenario) -> str:
    items: dict[str, object] = {
        "en_positions": scenario.en_positions,
        "wd_positions": scenario.wd_positions,
    }
    for key, attr, _ in _SCALAR_FIELDS:
        items[key] = getattr(scenario, attr)
    for key, _ in _CONSUMPTION_FIELDS:
        items[key] = getattr(scenario.consumption, key)
    return _kv.format_text(items, header="wptsim scenario")


def scenario_from_text(text: str) -> NetworkScenario:
    raw = _kv.parse_text(text)
    try:
        en = _kv.as_matrix("en_positions", raw.pop("en_positions"))
        wd = _kv.as_matrix("wd_positions", raw.pop("wd_positions"))
    except KeyError as exc:
        raise _kv.KVError(f"missing required field {exc.args[0]!r}") from None
    kwargs: dict[str, object] = {}
    for key, attr, conv in _SCALAR_FIELDS:
        if key in raw:
            kwargs[attr] = conv(key, raw.pop(key))
    consumption: dict[str, float] = {}
    for key, conv in _CONSUMPTION_FIELDS:
        if key in raw:
            consumption[key] = conv(key, raw.pop(key))
    if raw:
        raise _kv.KVError(f"unknown scenario fields: {sorted(raw)}")
    if consumption:
        kwargs["consumption"] = ConsumptionModel(**consumption)
    return NetworkScenario(en_positions=en, wd_positions=wd, **kwargs)


def save_scenario(scenario: NetworkScenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(scenario_to_text(scenario))


def load_scenario(path) -> NetworkScenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_text(fh.read())
