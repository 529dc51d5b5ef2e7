"""Lifetime analysis tools built on top of the engine.

Five operations:

* expected_lifetime      — closed-form mean lifetime from energy rates.
* estimate_rates         — measures those rates from first-death simulations.
* martingale_drift_check — verifies the compensated battery process has zero
                           one-step drift (the property the closed form
                           leans on).
* modeling_error_study   — quantifies the gap between the exact clamped
                           battery recursion and the linearized one on
                           synthetic i.i.d. draws.
* min_power_search       — smallest per-EN transmit power whose lifetime
                           clears a target in every trial (bisection).
"""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np

from .device import BatteryStateConfig
from .engine import monte_carlo, run_lifetime
from .policy import Policy, WeightingMatrix
from .topology import NetworkScenario

# two-sided 99% normal quantile, used by the drift check's zero-mean test
Z_99 = 2.5758


class InfiniteLifetimeError(ValueError):
    """Consumption does not exceed effective harvesting; no finite estimate."""


def expected_lifetime(eps0: float, eps_r: float, mu, lam, alpha) -> float:
    """Closed-form expected lifetime in seconds.

    (eps0 - eps_r) / (sum_k mu_k - sum_k (1 - alpha_k) * lam_k), where eps0 is
    the total initial energy, eps_r the total residual energy at first death,
    mu_k / lam_k the per-device consumption / arrival rates in watts, and
    alpha_k the share of arriving energy lost to full batteries.
    """
    mu = np.asarray(mu, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if not (mu.shape == lam.shape == alpha.shape):
        raise ValueError("mu, lam, alpha must have one entry per device")
    denom = float(mu.sum() - ((1.0 - alpha) * lam).sum())
    if denom <= 0.0:
        raise InfiniteLifetimeError(
            f"net drain {denom:.3e} W is not positive; "
            "lifetime is unbounded in this regime")
    return (eps0 - eps_r) / denom


@dataclasses.dataclass(frozen=True)
class RateEstimate:
    """Pooled time-averaged energy rates measured over first-death runs."""

    eps0: float                  # total initial energy, J
    eps_r: float                 # mean total residual energy at death, J
    mu: np.ndarray               # (K,) consumption rates, W
    lam: np.ndarray              # (K,) arrival rates, W
    alpha: np.ndarray            # (K,) overcharge-loss fractions
    lifetimes: np.ndarray        # (trials,) seconds, uncensored runs only
    n_censored: int

    @property
    def mean_lifetime(self) -> float:
        return float(self.lifetimes.mean())

    def expected_lifetime(self) -> float:
        return expected_lifetime(self.eps0, self.eps_r, self.mu, self.lam,
                                 self.alpha)


def estimate_rates(scenario: NetworkScenario, policy: Policy,
                   weights: WeightingMatrix, *, trials: int, seed=0,
                   mode: str = "exact",
                   max_blocks: int = 200_000_000) -> RateEstimate:
    """Measure eps_r and per-device rates from first-death simulations.

    Runs ``trials`` independent runs stopped at the first outage and pools
    time averages across them: rates are total energy over total simulated
    time, and alpha is total wasted over total arrived. Censored runs carry
    no stopping-time statistics and are excluded with a warning.
    """
    result = monte_carlo(scenario, policy, weights, trials=trials, seed=seed,
                         mode=mode, outage_quorum=1, max_blocks=max_blocks)
    usable = [r for r in result.runs if not r.censored]
    if len(usable) < len(result.runs):
        warnings.warn(f"{len(result.runs) - len(usable)} of {len(result.runs)}"
                      " runs hit the block budget and were excluded",
                      stacklevel=2)
    if not usable:
        raise RuntimeError("every run was censored; raise max_blocks")

    total_time = float(sum(r.lifetime for r in usable))
    arrived = np.sum([r.arrived for r in usable], axis=0)
    consumed = np.sum([r.consumed for r in usable], axis=0)
    wasted = np.sum([r.wasted for r in usable], axis=0)
    lam = arrived / total_time
    mu = consumed / total_time
    alpha = np.zeros_like(arrived)
    np.divide(wasted, arrived, out=alpha, where=arrived > 0.0)
    eps_r = float(np.mean([r.residual_energy for r in usable]))
    return RateEstimate(eps0=usable[0].initial_energy, eps_r=eps_r, mu=mu,
                        lam=lam, alpha=alpha,
                        lifetimes=np.array([r.lifetime for r in usable]),
                        n_censored=len(result.runs) - len(usable))


# ---------------------------------------------------------------------------
# drift of the compensated battery process

@dataclasses.dataclass(frozen=True)
class DriftCheckResult:
    """Per-device one-step drift of the compensated process."""

    drift: np.ndarray            # (K,) mean increment, J per block
    stderr: np.ndarray           # (K,) standard error of that mean
    n_samples: np.ndarray        # (K,) increments measured per device
    skipped_strata: tuple        # strata without enough calibration samples
    conditioning: str

    @property
    def z_scores(self) -> np.ndarray:
        out = np.zeros_like(self.drift)
        np.divide(np.abs(self.drift), self.stderr, out=out,
                  where=self.stderr > 0.0)
        out[(self.stderr == 0.0) & (self.drift != 0.0)] = np.inf
        return out

    @property
    def max_abs_drift(self) -> float:
        return float(np.max(np.abs(self.drift)))

    @property
    def max_z(self) -> float:
        return float(np.max(self.z_scores))

    def passed(self, z_critical: float = Z_99) -> bool:
        return bool(np.all(self.z_scores <= z_critical))


def _trace_arrays(scenario, policy, weights, *, blocks, seed, trial):
    """One linearized-mode trace as dense arrays (levels, arrived, consumed)."""
    _, recs = run_lifetime(scenario, policy, weights, mode="approx",
                           seed=seed, trial=trial,
                           outage_quorum=scenario.n_wds, max_blocks=blocks,
                           trace=True)
    if not recs:
        empty = np.zeros((0, scenario.n_wds))
        return empty, empty, empty
    level = np.array([r.energy_after for r in recs])
    arrived = np.array([r.arrived for r in recs])
    consumed = np.array([r.consumed for r in recs])
    return level, arrived, consumed


def _drift_samples(scenario, config, level, arrived, consumed, vector: bool):
    """Yield (stratum key, device, blocked, q, e) per live device-block.

    The level before block 0 is the initial energy; a device is live until
    the first block that leaves it at or below zero (that block included).
    """
    B, K = level.shape
    if B == 0:
        return
    x0 = np.full(K, float(scenario.initial_energy))
    before = np.vstack([x0, level[:-1]])
    states = np.clip(np.searchsorted(config.thresholds, before, side="left"),
                     1, config.n_states)
    # first block whose end level is <= 0; device is live through that block
    dead_at = np.full(K, B)
    for k in range(K):
        hits = np.flatnonzero(level[:, k] <= 0.0)
        if hits.size:
            dead_at[k] = hits[0]
    for b in range(B):
        key_vec = tuple(states[b]) if vector else None
        for k in range(K):
            if b > dead_at[k]:
                continue
            key = key_vec if vector else int(states[b, k])
            blocked = before[b, k] >= scenario.battery_capacity
            yield key, k, blocked, arrived[b, k], consumed[b, k]


def martingale_drift_check(scenario: NetworkScenario, policy: Policy,
                           weights: WeightingMatrix, *, blocks: int,
                           trials: int, seed=0,
                           conditioning: str = "per-wd",
                           min_stratum_samples: int = 25) -> DriftCheckResult:
    """Empirical one-step drift of the compensated process Z = X + Y.

    X follows the linearized battery dynamics. Y adds, per block, the
    conditional mean consumption minus the conditional mean harvest given the
    battery stratum (harvest term dropped for devices whose block started at
    or above capacity, which store nothing). If those conditional means are
    right, Z is drift-free; the means are calibrated on an independent
    pre-pass of equal size, so the main-pass drift is an unbiased zero-mean
    test statistic.

    ``conditioning`` is "per-wd" (each device's own battery state, the
    scalable default) or "vector" (the joint state of all devices, K <= 3).
    Strata the pre-pass visited fewer than ``min_stratum_samples`` times are
    skipped and reported.
    """
    if conditioning not in ("per-wd", "vector"):
        raise ValueError("conditioning must be 'per-wd' or 'vector'")
    vector = conditioning == "vector"
    if vector and scenario.n_wds > 3:
        raise ValueError("vector conditioning is for networks of up to 3 WDs")
    if blocks < 1 or trials < 1:
        raise ValueError("blocks and trials must be positive")

    base = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    pre_seed = np.random.SeedSequence(entropy=base.entropy,
                                      spawn_key=tuple(base.spawn_key) + (1,))
    main_seed = np.random.SeedSequence(entropy=base.entropy,
                                       spawn_key=tuple(base.spawn_key) + (2,))
    config = BatteryStateConfig.from_fractions(scenario.battery_capacity,
                                               weights.state_fractions)

    # pre-pass: conditional means of consumption (all live blocks) and of
    # harvest (unblocked blocks only). Running means stay exact when every
    # sample in a stratum is identical, which keeps the deterministic
    # zero-power case drift-free to the last bit.
    e_mean: dict = {}
    e_cnt: dict = {}
    q_mean: dict = {}
    q_cnt: dict = {}
    for t in range(trials):
        level, arrived, consumed = _trace_arrays(
            scenario, policy, weights, blocks=blocks, seed=pre_seed, trial=t)
        for key, k, blocked, q, e in _drift_samples(
                scenario, config, level, arrived, consumed, vector):
            s = (key, k)
            n = e_cnt.get(s, 0) + 1
            e_cnt[s] = n
            e_mean[s] = e_mean.get(s, 0.0) + (e - e_mean.get(s, 0.0)) / n
            if not blocked:
                n = q_cnt.get(s, 0) + 1
                q_cnt[s] = n
                q_mean[s] = q_mean.get(s, 0.0) \
                    + (q - q_mean.get(s, 0.0)) / n

    K = scenario.n_wds
    inc_sum = np.zeros(K)
    inc_sq = np.zeros(K)
    inc_n = np.zeros(K, dtype=np.int64)
    skipped: set = set()
    for t in range(trials):
        level, arrived, consumed = _trace_arrays(
            scenario, policy, weights, blocks=blocks, seed=main_seed, trial=t)
        for key, k, blocked, q, e in _drift_samples(
                scenario, config, level, arrived, consumed, vector):
            s = (key, k)
            if e_cnt.get(s, 0) < min_stratum_samples:
                skipped.add(s)
                continue
            if blocked:
                dz = -e + e_mean[s]
            else:
                if q_cnt.get(s, 0) < min_stratum_samples:
                    skipped.add(s)
                    continue
                dz = (q - e) + (e_mean[s] - q_mean[s])
            inc_sum[k] += dz
            inc_sq[k] += dz * dz
            inc_n[k] += 1

    drift = np.zeros(K)
    stderr = np.zeros(K)
    have = inc_n > 0
    drift[have] = inc_sum[have] / inc_n[have]
    two = inc_n > 1
    var = np.zeros(K)
    var[two] = (inc_sq[two] - inc_n[two] * drift[two] ** 2) / (inc_n[two] - 1)
    var = np.maximum(var, 0.0)
    stderr[two] = np.sqrt(var[two] / inc_n[two])
    return DriftCheckResult(drift=drift, stderr=stderr, n_samples=inc_n,
                            skipped_strata=tuple(sorted(skipped)),
                            conditioning=conditioning)


# ---------------------------------------------------------------------------
# exact-vs-linearized battery recursion on synthetic draws

@dataclasses.dataclass(frozen=True)
class ModelingErrorPoint:
    ratio: float                 # E[harvest] / E[consumption]
    error: float                 # |mean net-energy difference| / E[consumption]
    window_blocks: int           # blocks before either recursion would hit 0


def modeling_error_study(ratio_grid, *, blocks: int, seed=0,
                         capacity: float = 3600.0) -> list:
    """Exact-vs-linearized gap for i.i.d. exponential harvest and consumption.

    Per ratio, draws exponential consumption (mean 1e-3 * capacity) and
    harvest (mean ratio times that), runs both battery recursions on the same
    draws from capacity / 2, and compares mean per-block net energy over the
    window that ends just before either recursion would touch zero (where the
    linearized model stops being meaningful).
    """
    ratios = [float(r) for r in np.atleast_1d(np.asarray(ratio_grid))]
    if any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative")
    if blocks < 1:
        raise ValueError("blocks must be positive")
    mean_e = 1e-3 * capacity
    base = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    out = []
    for i, ratio in enumerate(ratios):
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=base.entropy, spawn_key=tuple(base.spawn_key) + (i,)))
        e_draws = rng.exponential(scale=mean_e, size=blocks)
        q_draws = rng.exponential(scale=ratio * mean_e, size=blocks) \
            if ratio > 0 else np.zeros(blocks)
        x_exact = x_lin = capacity / 2.0
        net_exact = net_lin = 0.0
        window = 0
        for l in range(blocks):
            q = q_draws[l]
            e = e_draws[l]
            raw = x_exact - e + q
            gained = 0.0 if x_lin >= capacity else q
            new_lin = x_lin - e + gained
            if raw <= 0.0 or new_lin <= 0.0:
                break
            new_exact = min(raw, capacity)
            net_exact += new_exact - x_exact
            net_lin += new_lin - x_lin
            window += 1
            x_exact, x_lin = new_exact, new_lin
        error = 0.0 if window == 0 else \
            abs(net_exact / window - net_lin / window) / mean_e
        out.append(ModelingErrorPoint(ratio=ratio, error=error,
                                      window_blocks=window))
    return out


# ---------------------------------------------------------------------------
# minimum transmit power for a lifetime target

class TargetUnachievableError(RuntimeError):
    """No power at or below the cap reaches the target in every trial."""

    def __init__(self, target_lifetime: float, power_cap: float):
        super().__init__(
            f"target lifetime {target_lifetime:g} s not reached by all "
            f"trials even at the {power_cap:g} W cap")
        self.target_lifetime = target_lifetime
        self.power_cap = power_cap


def min_power_search(scenario: NetworkScenario, policy: Policy,
                     weights: WeightingMatrix, *, target_lifetime: float,
                     trials: int, tolerance: float = 0.05, seed=0,
                     power_cap: float = 10.0, mode: str = "exact",
                     outage_quorum: int | None = None) -> float:
    """Smallest per-EN power whose lifetime reaches the target in all trials.

    Bisection on [0, power_cap]. A power level passes when every one of
    ``trials`` runs survives at least ``target_lifetime``; runs stop at the
    target, so passing probes cost a bounded number of blocks. All probes
    reuse the same master seed, i.e. they see identical channel and
    consumption draws and differ only in transmit power.
    """
    if tolerance <= 0.0 or power_cap <= 0.0:
        raise ValueError("tolerance and power_cap must be positive")
    if trials < 1:
        raise ValueError("trials must be positive")
    target_blocks = math.ceil(target_lifetime / scenario.block_seconds)

    def passes(p0: float) -> bool:
        probe = scenario.with_(p0=p0)
        result = monte_carlo(probe, policy, weights, trials=trials, seed=seed,
                             mode=mode, outage_quorum=outage_quorum,
                             max_blocks=target_blocks)
        return all(r.blocks >= target_blocks for r in result.runs)

    if target_lifetime <= 0.0 or passes(0.0):
        return 0.0
    if not passes(power_cap):
        raise TargetUnachievableError(target_lifetime, power_cap)
    lo, hi = 0.0, power_cap
    while hi - lo > tolerance:
        mid = 0.5 * (lo + hi)
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
