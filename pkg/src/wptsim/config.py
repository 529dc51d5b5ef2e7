"""Experiment configuration files.

Same flat key-value grammar as scenario files (see _kv): one `key = value`
assignment per line, `#` comments, whitespace-separated arrays, `;` between
matrix rows. Every key is optional; omitted keys fall back to the reference
setup (1 W per EN, 915 MHz free-space link budget, path-loss exponent 2,
500 ms blocks, 30 sub-channels per EN, 3 mW average consumption, 3600 J
battery at 75%, default weight table with thresholds at {0, 0.3, 0.5, 0.9,
1} x capacity).

    # example experiment file
    schemes = Singl-Univ Propo-Univ EqlPower
    d_grid = 3.0 3.9
    w = 63 27 0 ; 21 9 0 ; 6 3 1 ; 1 0 0
    trials = 5
    seed = 7

Unknown keys and malformed values raise KVError naming the field.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import _kv
from ._kv import KVError
from .policy import SCHEME_NAMES, WeightingMatrix, default_weights
from .topology import (DEFAULT_ACTIVE_POWER_W, DEFAULT_ACTIVE_PROBABILITY,
                       DEFAULT_BATTERY_CAPACITY_J, DEFAULT_BLOCK_SECONDS,
                       DEFAULT_FEEDBACK_TX_POWER_W, DEFAULT_HARVEST_EFFICIENCY,
                       DEFAULT_INITIAL_FRACTION, DEFAULT_PATH_LOSS_EXPONENT,
                       DEFAULT_PILOT_FRACTION, DEFAULT_SUBCHANNELS_PER_EN,
                       DEFAULT_TX_POWER, free_space_beta)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description: network knobs, grids, trial counts."""

    # network build knobs
    wds_per_en: int = 6
    subchannels_per_en: int = DEFAULT_SUBCHANNELS_PER_EN
    p0: float = DEFAULT_TX_POWER
    beta: float = field(default_factory=free_space_beta)
    delta: float = DEFAULT_PATH_LOSS_EXPONENT
    eta: float = DEFAULT_HARVEST_EFFICIENCY
    block_seconds: float = DEFAULT_BLOCK_SECONDS
    alpha1: float = DEFAULT_PILOT_FRACTION
    alpha2: float | None = None      # None: 1% per vote of the busiest state
    battery_capacity: float = DEFAULT_BATTERY_CAPACITY_J
    initial_fraction: float = DEFAULT_INITIAL_FRACTION
    active_power: float = DEFAULT_ACTIVE_POWER_W
    active_probability: float = DEFAULT_ACTIVE_PROBABILITY
    feedback_tx_power: float = DEFAULT_FEEDBACK_TX_POWER_W
    # what to run
    schemes: tuple = SCHEME_NAMES
    weights: WeightingMatrix = field(default_factory=default_weights)
    d_grid: tuple = (3.0, 3.9)
    p0_grid: tuple = (0.5, 1.0, 2.0)
    r_grid: tuple = (2, 3, 4, 5, 6)
    feedback_grid: tuple = (1, 2, 3, 4, 5)
    ratio_grid: tuple = (0.5, 1.0, 1.5, 2.0)
    # how much of it
    placements: int = 5
    trials: int = 5
    validation_trials: int = 20
    search_placements: int = 1
    target_lifetime_hours: float = 500.0
    modeling_blocks: int = 100_000
    seed: int = 0
    out_dir: str = "results"

    def __post_init__(self):
        for name in ("wds_per_en", "subchannels_per_en", "placements",
                     "trials", "validation_trials", "search_placements",
                     "modeling_blocks"):
            if getattr(self, name) < 1:
                raise KVError(f"{name}: must be at least 1")
        for name in ("d_grid", "p0_grid", "r_grid", "feedback_grid",
                     "ratio_grid", "schemes"):
            if len(getattr(self, name)) == 0:
                raise KVError(f"{name}: must not be empty")
        for s in self.schemes:
            if s not in SCHEME_NAMES:
                raise KVError(f"schemes: unknown scheme {s!r}; pick from "
                              f"{', '.join(SCHEME_NAMES)}")
        if not 0.0 <= self.initial_fraction <= 1.0:
            raise KVError("initial_fraction: must lie in [0, 1]")
        if self.target_lifetime_hours < 0:
            raise KVError("target_lifetime_hours: must be non-negative")
        if any(d <= 0 for d in self.d_grid):
            raise KVError("d_grid: distances must be positive")
        if any(p < 0 for p in self.p0_grid):
            raise KVError("p0_grid: powers must be non-negative")
        if any(r < 2 for r in self.r_grid):
            raise KVError("r_grid: exponents start at 2")


def apply_paper_scale(config: ExperimentConfig) -> ExperimentConfig:
    """Restore the full published trial counts and lifetime target."""
    return dataclasses.replace(config, placements=15, trials=10,
                               validation_trials=40, search_placements=5,
                               target_lifetime_hours=5000.0)


_FLOAT_FIELDS = ("p0", "beta", "delta", "eta", "block_seconds", "alpha1",
                 "alpha2", "battery_capacity", "initial_fraction",
                 "active_power", "active_probability", "feedback_tx_power",
                 "target_lifetime_hours")
_INT_FIELDS = ("wds_per_en", "subchannels_per_en", "placements", "trials",
               "validation_trials", "search_placements", "modeling_blocks",
               "seed")


def config_from_text(text: str) -> ExperimentConfig:
    data = _kv.parse_text(text)
    kwargs: dict = {}
    for key in _FLOAT_FIELDS:
        if key in data:
            kwargs[key] = _kv.as_float(key, data.pop(key))
    for key in _INT_FIELDS:
        if key in data:
            kwargs[key] = _kv.as_int(key, data.pop(key))
    if "schemes" in data:
        kwargs["schemes"] = tuple(_kv.as_strs("schemes", data.pop("schemes")))
    if "out_dir" in data:
        kwargs["out_dir"] = _kv.as_str("out_dir", data.pop("out_dir"))
    for key in ("d_grid", "p0_grid", "ratio_grid"):
        if key in data:
            kwargs[key] = tuple(_kv.as_floats(key, data.pop(key)).tolist())
    for key in ("r_grid", "feedback_grid"):
        if key in data:
            kwargs[key] = tuple(_kv.as_ints(key, data.pop(key)).tolist())
    fractions = None
    if "state_fractions" in data:
        fractions = tuple(
            _kv.as_floats("state_fractions", data.pop("state_fractions"))
            .tolist())
    if "w" in data:
        entries = _kv.as_matrix("w", data.pop("w"))
        try:
            kwargs["weights"] = WeightingMatrix(entries) if fractions is None \
                else WeightingMatrix(entries, fractions)
        except ValueError as exc:
            raise KVError(f"w: {exc}") from None
    elif fractions is not None:
        try:
            kwargs["weights"] = WeightingMatrix(default_weights().entries,
                                                fractions)
        except ValueError as exc:
            raise KVError(f"state_fractions: {exc}") from None
    if data:
        unknown = ", ".join(sorted(data))
        raise KVError(f"unknown keys: {unknown}")
    return ExperimentConfig(**kwargs)


def config_to_text(config: ExperimentConfig) -> str:
    items: dict = {}
    for key in _FLOAT_FIELDS:
        value = getattr(config, key)
        if value is not None:
            items[key] = value
    for key in _INT_FIELDS:
        items[key] = getattr(config, key)
    items["schemes"] = list(config.schemes)
    items["out_dir"] = config.out_dir
    for key in ("d_grid", "p0_grid", "ratio_grid", "r_grid", "feedback_grid"):
        items[key] = list(getattr(config, key))
    items["w"] = config.weights.entries
    items["state_fractions"] = list(config.weights.state_fractions)
    return _kv.format_text(items, header="wptsim experiment")


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def save_config(config: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(config))


def default_config() -> ExperimentConfig:
    return ExperimentConfig()
