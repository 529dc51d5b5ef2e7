"""Config tests.

Proves:
 1. An empty file yields the full reference setup (1 W, exponent 2, 500 ms
    blocks, 30 sub-channels per EN, 3 mW average drain, 3600 J battery at
    75%, default weight table).
 2. Every recognized key parses, and text round-trips losslessly.
 3. Schema violations are reported with the offending field named: unknown
    keys, bad scheme names, malformed numbers, empty grids, bad counts.
 4. Weight-table handling: `w` omitted keeps the default table; custom `w`
    and `state_fractions` are honored together or separately.
 5. apply_paper_scale restores the published counts and target.
"""

import numpy as np
import pytest

from wptsim._kv import KVError
from wptsim.config import (ExperimentConfig, apply_paper_scale,
                           config_from_text, config_to_text, default_config,
                           load_config, save_config)
from wptsim.policy import SCHEME_NAMES, default_weights
from wptsim.topology import free_space_beta


def test_empty_text_gives_reference_defaults():
    cfg = config_from_text("")
    assert cfg.p0 == 1.0
    assert cfg.delta == 2.0
    assert cfg.beta == free_space_beta()
    assert cfg.block_seconds == 0.5
    assert cfg.subchannels_per_en == 30
    assert cfg.wds_per_en == 6
    assert cfg.active_power * cfg.active_probability == pytest.approx(3e-3)
    assert cfg.battery_capacity == 3600.0
    assert cfg.initial_fraction == 0.75
    assert cfg.alpha2 is None   # derived from the weight table downstream
    assert cfg.schemes == SCHEME_NAMES
    assert np.array_equal(cfg.weights.entries, default_weights().entries)
    assert cfg.weights.state_fractions == (0.3, 0.5, 0.9)
    assert cfg == default_config()


def test_all_keys_parse_and_round_trip():
    cfg = config_from_text("""
        # comments and blank lines are fine
        wds_per_en = 2
        subchannels_per_en = 4
        p0 = 0.25
        beta = 0.001
        delta = 2.5
        eta = 0.4
        block_seconds = 0.25
        alpha1 = 0.01
        alpha2 = 0.05
        battery_capacity = 10.0
        initial_fraction = 0.5
        active_power = 0.006
        active_probability = 0.5
        feedback_tx_power = 0.0002
        schemes = Singl-Univ EqlPower
        w = 5 2 ; 3 1 ; 1 0
        state_fractions = 0.4 0.8
        d_grid = 2.0 3.0
        p0_grid = 0.5
        r_grid = 2 4
        feedback_grid = 1 3
        ratio_grid = 1.0
        placements = 3
        trials = 4
        validation_trials = 6
        search_placements = 2
        target_lifetime_hours = 1.5
        modeling_blocks = 500
        seed = 99
        out_dir = elsewhere
    """)
    assert cfg.wds_per_en == 2
    assert cfg.alpha2 == 0.05
    assert cfg.schemes == ("Singl-Univ", "EqlPower")
    assert cfg.weights.n_states == 3
    assert cfg.weights.state_fractions == (0.4, 0.8)
    assert cfg.d_grid == (2.0, 3.0)
    assert cfg.r_grid == (2, 4)
    assert cfg.seed == 99
    assert cfg.out_dir == "elsewhere"

    again = config_from_text(config_to_text(cfg))
    assert again == cfg


def test_round_trip_of_defaults(tmp_path):
    path = tmp_path / "exp.cfg"
    save_config(default_config(), path)
    assert load_config(path) == default_config()


@pytest.mark.parametrize("text, field", [
    ("no_such_knob = 1", "no_such_knob"),
    ("schemes = Singl-Univ Best-Effort", "schemes"),
    ("p0 = fast", "p0"),
    ("trials = 2.5", "trials"),
    ("d_grid =", "d_grid"),
    ("trials = 0", "trials"),
    ("initial_fraction = 1.5", "initial_fraction"),
    ("r_grid = 1 2", "r_grid"),
    ("w = 1 2 ; 3", "w"),
    ("d_grid = -3.0", "d_grid"),
])
def test_schema_errors_name_the_field(text, field):
    with pytest.raises(KVError, match=field):
        config_from_text(text)


def test_weight_table_variants():
    # fractions alone reshape the default table's thresholds
    cfg = config_from_text("state_fractions = 0.2 0.4 0.8")
    assert np.array_equal(cfg.weights.entries, default_weights().entries)
    assert cfg.weights.state_fractions == (0.2, 0.4, 0.8)
    # table alone keeps default fractions
    cfg = config_from_text("w = 9 3 0 ; 4 2 0 ; 2 1 1 ; 1 0 0")
    assert cfg.weights.entries[0, 0] == 9.0
    assert cfg.weights.state_fractions == (0.3, 0.5, 0.9)
    # a table that cannot index four states still loads if fractions shrink
    cfg = config_from_text("w = 5 2 ; 1 0\nstate_fractions = 0.5")
    assert cfg.weights.n_states == 2


def test_apply_paper_scale():
    cfg = apply_paper_scale(default_config())
    assert cfg.placements == 15
    assert cfg.trials == 10
    assert cfg.validation_trials == 40
    assert cfg.search_placements == 5
    assert cfg.target_lifetime_hours == 5000.0
    # everything else untouched
    assert cfg.d_grid == default_config().d_grid
    assert cfg.seed == default_config().seed


def test_direct_construction_validates():
    with pytest.raises(KVError, match="schemes"):
        ExperimentConfig(schemes=("NotAScheme",))
    with pytest.raises(KVError, match="placements"):
        ExperimentConfig(placements=0)
