"""Experiment presets and CSV emission.

Each preset sweeps one study axis and writes `<preset>.csv` into the output
directory. All randomness descends from the config's master seed, so a rerun
with the same config produces byte-identical files. Within a sweep point the
same sub-seed is reused for every scheme: competing schemes face identical
placements, channel draws and consumption draws, and differ only in their
decisions.

Presets (lifetimes in seconds in all files):

* fig3  — exact-vs-linearized battery recursion error per E[Q]/E[E] ratio.
* fig4  — closed-form vs simulated mean lifetime per (scheme, P0), first
          death ends the network.
* fig5  — mean lifetime per (scheme, d, placement), quorum of a third.
* fig6  — minimum per-EN power reaching the lifetime target, per (scheme, d,
          placement).
* fig7a — lifetime of the top-vote scheme under power-law weight tables,
          exponent sweep.
* fig7b — lifetime of the top-vote scheme under growing feedback amounts,
          with the feedback share of the block scaled to the vote count.
* custom — plain (scheme, d, P0, placement) lifetime sweep from the config
          grids.
"""

from __future__ import annotations

import csv
import math
import os

import numpy as np

from .analysis import estimate_rates, min_power_search, modeling_error_study
from .config import ExperimentConfig
from .engine import RunStatistics, monte_carlo
from .policy import (WeightingMatrix, feedback_family_weights, make_policy,
                     power_family_weights)
from .topology import ConsumptionModel, generate_clustered_placement

PRESETS = ("fig3", "fig4", "fig5", "fig6", "fig7a", "fig7b", "custom")

# schemes the closed-form validation and the power search are defined over
VALIDATION_SCHEMES = ("EqlPower", "Singl-Univ", "Propo-Univ")
SEARCH_SCHEMES = ("EqlPower", "Singl-Univ", "Propo-Univ")
TOP_VOTE_SCHEME = "Singl-Univ"


def feedback_fraction(weights: WeightingMatrix) -> float:
    """Feedback share of a block: 1% per vote of the busiest state's count."""
    return 0.01 * weights.max_votes()


def build_scenario(config: ExperimentConfig, *, radius: float,
                   placement_seed, outage_quorum: int | None = None,
                   p0: float | None = None,
                   weights: WeightingMatrix | None = None):
    """Scenario from config knobs with WDs dropped around each EN."""
    weights = weights if weights is not None else config.weights
    alpha2 = config.alpha2 if config.alpha2 is not None \
        else feedback_fraction(weights)
    scn = generate_clustered_placement(
        wds_per_en=config.wds_per_en, radius=radius, seed=placement_seed,
        n_per_en=config.subchannels_per_en,
        p0=config.p0 if p0 is None else p0,
        beta=config.beta, delta=config.delta, eta=config.eta,
        block_seconds=config.block_seconds, alpha1=config.alpha1,
        alpha2=alpha2, battery_capacity=config.battery_capacity,
        initial_energy=config.initial_fraction * config.battery_capacity,
        consumption=ConsumptionModel(
            active_power=config.active_power,
            active_probability=config.active_probability,
            feedback_tx_power=config.feedback_tx_power))
    if outage_quorum is not None:
        scn = scn.with_(outage_quorum=outage_quorum)
    return scn


def third_quorum(scenario) -> int:
    """Outage quorum of one third of the devices, rounded up."""
    return math.ceil(scenario.n_wds / 3)


def _subseed(config: ExperimentConfig, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=config.seed, spawn_key=key)


# ---------------------------------------------------------------------------
# CSV plumbing

def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def emit_csv(rows, path, *, header) -> None:
    """Write rows under a header; floats keep full round-trip precision."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def run_statistics_header(n_wds: int) -> list:
    head = ["scheme", "mode", "blocks", "lifetime_s", "censored",
            "initial_energy_j", "residual_energy_j"]
    for stem in ("lam", "mu", "alpha"):
        head += [f"{stem}_{k}" for k in range(n_wds)]
    return head


def run_statistics_row(stats: RunStatistics) -> list:
    """One run as 7 summary columns plus per-WD arrival/consumption/loss."""
    row = [stats.scheme, stats.mode, stats.blocks, stats.lifetime,
           stats.censored, stats.initial_energy, stats.residual_energy]
    row += list(stats.arrival_rates)
    row += list(stats.consumption_rates)
    row += list(stats.overcharge_fractions)
    return row


class _RunLog:
    """Collects per-run detail rows when tracing is on."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.rows: list = []
        self.n_wds: int | None = None

    def add(self, runs) -> None:
        if not self.enabled:
            return
        for r in runs:
            self.n_wds = r.n_wds
            self.rows.append(run_statistics_row(r))


# ---------------------------------------------------------------------------
# presets

def _fig3(config: ExperimentConfig, log: _RunLog):
    points = modeling_error_study(config.ratio_grid,
                                  blocks=config.modeling_blocks,
                                  seed=_subseed(config, 3),
                                  capacity=config.battery_capacity)
    rows = [(p.ratio, p.error, p.window_blocks) for p in points]
    return ["ratio", "error", "window_blocks"], rows


def _fig4(config: ExperimentConfig, log: _RunLog):
    rows = []
    for pi, p0 in enumerate(config.p0_grid):
        # one fixed placement across every scheme and power level
        scn = build_scenario(config, radius=config.d_grid[0],
                             placement_seed=_subseed(config, 4, 0), p0=p0)
        for scheme in VALIDATION_SCHEMES:
            est = estimate_rates(scn, make_policy(scheme), config.weights,
                                 trials=config.validation_trials,
                                 seed=_subseed(config, 4, 1, pi))
            analytical = est.expected_lifetime()
            simulated = est.mean_lifetime
            rows.append((scheme, p0, est.lifetimes.size, simulated,
                         float(est.lifetimes.std(ddof=1))
                         if est.lifetimes.size > 1 else 0.0,
                         analytical, (analytical - simulated) / simulated))
    return ["scheme", "p0_w", "trials", "mean_lifetime_s", "std_lifetime_s",
            "analytical_s", "rel_error"], rows


def _sweep_point(config, scn, scheme, seed, log):
    res = monte_carlo(scn, make_policy(scheme), config.weights,
                      trials=config.trials, seed=seed)
    log.add(res.runs)
    return res


def _fig5(config: ExperimentConfig, log: _RunLog):
    rows = []
    for di, d in enumerate(config.d_grid):
        for m in range(config.placements):
            scn = build_scenario(config, radius=d,
                                 placement_seed=_subseed(config, 5, 0, di, m))
            scn = scn.with_(outage_quorum=third_quorum(scn))
            seed = _subseed(config, 5, 1, di, m)
            for scheme in config.schemes:
                res = _sweep_point(config, scn, scheme, seed, log)
                rows.append((scheme, d, m, len(res.runs),
                             res.mean_lifetime, res.std_lifetime,
                             res.n_censored))
    return ["scheme", "d_m", "placement", "trials", "mean_lifetime_s",
            "std_lifetime_s", "n_censored"], rows


def _fig6(config: ExperimentConfig, log: _RunLog):
    target_s = config.target_lifetime_hours * 3600.0
    rows = []
    for di, d in enumerate(config.d_grid):
        for m in range(config.search_placements):
            scn = build_scenario(config, radius=d,
                                 placement_seed=_subseed(config, 6, 0, di, m))
            scn = scn.with_(outage_quorum=third_quorum(scn))
            seed = _subseed(config, 6, 1, di, m)
            for scheme in SEARCH_SCHEMES:
                p_star = min_power_search(scn, make_policy(scheme),
                                          config.weights,
                                          target_lifetime=target_s,
                                          trials=config.trials, seed=seed)
                rows.append((scheme, d, m, config.target_lifetime_hours,
                             config.trials, p_star))
    return ["scheme", "d_m", "placement", "target_h", "trials",
            "min_power_w"], rows


def _family_sweep(config: ExperimentConfig, log: _RunLog, axis_name,
                  axis, weights_for, spawn):
    """Lifetime of the top-vote scheme across a family of weight tables."""
    d = config.d_grid[0]
    rows = []
    for ai, value in enumerate(axis):
        weights = weights_for(value)
        for m in range(config.placements):
            scn = build_scenario(config, radius=d,
                                 placement_seed=_subseed(config, spawn, 0, m),
                                 weights=weights)
            scn = scn.with_(outage_quorum=third_quorum(scn))
            res = monte_carlo(scn, make_policy(TOP_VOTE_SCHEME), weights,
                              trials=config.trials,
                              seed=_subseed(config, spawn, 1, m))
            log.add(res.runs)
            rows.append((value, d, m, len(res.runs), res.mean_lifetime,
                         res.std_lifetime, scn.alpha2))
    return [axis_name, "d_m", "placement", "trials", "mean_lifetime_s",
            "std_lifetime_s", "alpha2"], rows


def _fig7a(config: ExperimentConfig, log: _RunLog):
    return _family_sweep(config, log, "exponent", config.r_grid,
                         power_family_weights, 70)


def _fig7b(config: ExperimentConfig, log: _RunLog):
    return _family_sweep(config, log, "feedback_amount", config.feedback_grid,
                         feedback_family_weights, 71)


def _custom(config: ExperimentConfig, log: _RunLog):
    rows = []
    for di, d in enumerate(config.d_grid):
        for pi, p0 in enumerate(config.p0_grid):
            for m in range(config.placements):
                scn = build_scenario(
                    config, radius=d, p0=p0,
                    placement_seed=_subseed(config, 9, 0, di, m))
                scn = scn.with_(outage_quorum=third_quorum(scn))
                seed = _subseed(config, 9, 1, di, pi, m)
                for scheme in config.schemes:
                    res = _sweep_point(config, scn, scheme, seed, log)
                    rows.append((scheme, d, p0, m, len(res.runs),
                                 res.mean_lifetime, res.std_lifetime,
                                 res.n_censored))
    return ["scheme", "d_m", "p0_w", "placement", "trials",
            "mean_lifetime_s", "std_lifetime_s", "n_censored"], rows


_PRESET_FNS = {"fig3": _fig3, "fig4": _fig4, "fig5": _fig5, "fig6": _fig6,
               "fig7a": _fig7a, "fig7b": _fig7b, "custom": _custom}


def run_experiment(preset: str, config: ExperimentConfig, *,
                   out_dir=None, trace: bool = False) -> list:
    """Run one preset, write its CSV(s), return the written paths.

    With ``trace`` a second file `<preset>_runs.csv` holds one row per
    individual run (7 summary columns plus per-WD rates) in sweep order.
    """
    if preset not in _PRESET_FNS:
        raise ValueError(f"unknown preset {preset!r}; pick from "
                         f"{', '.join(PRESETS)}")
    out_dir = config.out_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    log = _RunLog(trace)
    header, rows = _PRESET_FNS[preset](config, log)
    paths = [os.path.join(out_dir, f"{preset}.csv")]
    emit_csv(rows, paths[0], header=header)
    if trace and log.n_wds is not None:
        runs_path = os.path.join(out_dir, f"{preset}_runs.csv")
        emit_csv(log.rows, runs_path,
                 header=run_statistics_header(log.n_wds))
        paths.append(runs_path)
    return paths
