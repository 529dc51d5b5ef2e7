"""Block-level simulation engine.

A trial advances one network through fading blocks until the outage quorum is
met (network death) or a block budget runs out (censored). The hot path is a
compiled chunk kernel; :func:`step_block` exposes the same per-block logic in
plain numpy for inspection and tests, and an equivalence test pins the two
paths together.

Randomness is organised so results are reproducible and order-independent:
every (trial, chunk) pair owns a private generator derived from the master
seed by spawn key, and each chunk draws gains, activity uniforms, and
tie-break uniforms in one fixed order. Reruns, longer budgets, and parallel
execution therefore see bit-identical streams.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

from . import _kernel
from .device import BatteryStateConfig, classify_battery_state, top_channels
from .policy import (ALLOC_SINGLE, ALLOC_UNIFORM, Policy, TALLY_PRIORITIZED,
                     VoteSheet, WeightingMatrix, allocate_proportional,
                     allocate_single, tally_prioritized, tally_universal)
from .topology import NetworkScenario

CHUNK_BLOCKS = 1024
# spawn-key namespace for trial streams: (STREAM_TRIAL, trial, chunk)
STREAM_TRIAL = 0x57

MODES = ("exact", "approx")


def _as_seed_seq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _chunk_rng(seed_seq: np.random.SeedSequence, trial: int,
               chunk: int) -> np.random.Generator:
    """Generator for one (trial, chunk) cell, independent of call order."""
    child = np.random.SeedSequence(
        entropy=seed_seq.entropy,
        spawn_key=tuple(seed_seq.spawn_key) + (STREAM_TRIAL, trial, chunk))
    return np.random.default_rng(child)


def _presample(scenario: NetworkScenario, rng: np.random.Generator,
               blocks: int):
    """Draw one chunk of randomness in the canonical order.

    Order matters: gains first, then activity uniforms, then tie uniforms.
    Both execution paths consume these arrays positionally.
    """
    shape = (blocks, scenario.n_wds, scenario.n_subchannels)
    gains = rng.standard_exponential(shape)
    gains *= scenario.mean_gains
    active_u = rng.random((blocks, scenario.n_wds))
    tie_u = rng.random((blocks, scenario.n_ens))
    return gains, active_u, tie_u


def _effective_fractions(policy: Policy, scenario: NetworkScenario):
    """Block-share overheads actually paid: feedback-free schemes pay none."""
    if policy.uses_feedback:
        return scenario.alpha1, scenario.alpha2
    return 0.0, 0.0


def _policy_table(policy: Policy, weights: WeightingMatrix) -> np.ndarray:
    """Per-(state, rank) tally weights as a plain array for the kernel."""
    if policy.greedy:
        return np.ones_like(weights.entries)
    return policy.effective_weights(weights)


def harvested_energy(allocation: np.ndarray, gains_row: np.ndarray,
                     scenario: NetworkScenario) -> float:
    """Energy one device banks from one block given powers and its gains."""
    factor = (scenario.eta * (1.0 - scenario.alpha1 - scenario.alpha2)
              * scenario.block_seconds)
    return factor * float(np.dot(np.asarray(allocation, dtype=np.float64),
                                 np.asarray(gains_row, dtype=np.float64)))


# ---------------------------------------------------------------------------
# single-block reference path

@dataclasses.dataclass(frozen=True)
class NetworkState:
    """Battery levels and outage flags at a block boundary."""

    energy: np.ndarray           # (K,) joules; approx mode may go negative
    in_outage: np.ndarray        # (K,) bool, latched
    block_index: int = 0

    @property
    def alive(self) -> np.ndarray:
        return ~self.in_outage


def initial_network_state(scenario: NetworkScenario) -> NetworkState:
    energy = np.full(scenario.n_wds, float(scenario.initial_energy))
    return NetworkState(energy=energy, in_outage=energy <= 0.0, block_index=0)


@dataclasses.dataclass(frozen=True)
class BlockRecord:
    """What happened to every device during one block."""

    block_index: int
    states: np.ndarray           # (K,) reported battery state, 0 = silent
    votes_cast: np.ndarray       # (K,) number of votes sent
    allocation: np.ndarray       # (MN,) transmit power per sub-channel, W
    arrived: np.ndarray          # (K,) energy arriving at each device, J
    consumed: np.ndarray         # (K,) energy spent on activity + feedback, J
    energy_after: np.ndarray     # (K,) battery level at block end, J
    bsi_changed: np.ndarray      # (K,) True where the reported state is new


def _step_core(state: NetworkState, scenario: NetworkScenario,
               policy: Policy, weights: WeightingMatrix,
               config: BatteryStateConfig, mode: str,
               gains: np.ndarray, active_u: np.ndarray, tie_u: np.ndarray,
               prev_states: np.ndarray | None = None):
    """One block on pre-drawn randomness. Returns (state, BlockRecord)."""
    K = scenario.n_wds
    MN = scenario.n_subchannels
    capacity = scenario.battery_capacity
    votes_per_state = policy.votes_per_state(weights)

    states = np.zeros(K, dtype=np.int64)
    votes_cast = np.zeros(K, dtype=np.int64)
    alive = state.alive

    if policy.allocation == ALLOC_UNIFORM:
        allocation = np.full(MN, scenario.p0 / scenario.n_per_en)
    else:
        votes: list[np.ndarray] = []
        for k in range(K):
            if not alive[k]:
                votes.append(np.empty(0, dtype=np.int64))
                continue
            r = classify_battery_state(state.energy[k], config)
            states[k] = r
            nv = int(votes_per_state[r - 1])
            votes_cast[k] = nv
            votes.append(top_channels(gains[k], nv))
        sheet = VoteSheet(states=np.maximum(states, 1), votes=votes)
        allocation = np.empty(MN)
        for en in range(scenario.n_ens):
            scores = policy.tally_scores(sheet, weights, en, scenario)
            lo = en * scenario.n_per_en
            hi = lo + scenario.n_per_en
            if policy.allocation == ALLOC_SINGLE:
                allocation[lo:hi] = allocate_single(
                    scores, scenario.p0, tie_u=float(tie_u[en]))
            else:
                allocation[lo:hi] = allocate_proportional(scores, scenario.p0)

    a1, a2 = _effective_fractions(policy, scenario)
    factor = scenario.eta * (1.0 - a1 - a2) * scenario.block_seconds
    fb_energy = (scenario.consumption.feedback_tx_power * a2
                 * scenario.block_seconds)
    base_energy = scenario.consumption.active_power * scenario.block_seconds

    arrived = np.zeros(K)
    consumed = np.zeros(K)
    energy = state.energy.copy()
    in_outage = state.in_outage.copy()
    for k in range(K):
        if not alive[k]:
            continue
        q = factor * float(np.dot(allocation, gains[k]))
        e = fb_energy * votes_cast[k]
        if active_u[k] < scenario.consumption.active_probability:
            e += base_energy
        arrived[k] = q
        consumed[k] = e
        if mode == "exact":
            raw = energy[k] - e + q
            if raw <= 0.0:
                energy[k] = 0.0
                in_outage[k] = True
            else:
                energy[k] = min(raw, capacity)
        else:
            if energy[k] >= capacity:
                raw = energy[k] - e
            else:
                raw = energy[k] - e + q
            energy[k] = raw
            if raw <= 0.0:
                in_outage[k] = True

    if prev_states is None:
        bsi_changed = states > 0
    else:
        bsi_changed = (states != prev_states) & (states > 0)
    record = BlockRecord(block_index=state.block_index, states=states,
                         votes_cast=votes_cast, allocation=allocation,
                         arrived=arrived, consumed=consumed,
                         energy_after=energy.copy(), bsi_changed=bsi_changed)
    new_state = NetworkState(energy=energy, in_outage=in_outage,
                             block_index=state.block_index + 1)
    return new_state, record


def step_block(state: NetworkState, scenario: NetworkScenario,
               policy: Policy, weights: WeightingMatrix,
               rng: np.random.Generator, mode: str = "exact",
               prev_states: np.ndarray | None = None):
    """Advance one block, drawing randomness from ``rng``.

    Per block the draw order is fixed: one exponential gain per (device,
    sub-channel), one activity uniform per device, one tie-break uniform per
    EN. Returns ``(new_state, BlockRecord)``. The full-trial runner consumes
    the same kinds of draws but batches them per chunk, so the two paths are
    compared on identical pre-drawn arrays rather than on a shared stream.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    gains, active_u, tie_u = _presample(scenario, rng, 1)
    config = BatteryStateConfig.from_fractions(scenario.battery_capacity,
                                               weights.state_fractions)
    return _step_core(state, scenario, policy, weights, config, mode,
                      gains[0], active_u[0], tie_u[0],
                      prev_states=prev_states)


# ---------------------------------------------------------------------------
# full-trial runner

@dataclasses.dataclass(frozen=True)
class RunStatistics:
    """Outcome of one trial plus the energy ledger behind it."""

    scheme: str
    mode: str
    blocks: int
    lifetime: float              # seconds
    censored: bool
    initial_energy: float        # total across devices at block 0, J
    residual_energy: float       # total across devices at death/censor, J
    arrived: np.ndarray          # (K,) energy that reached each device, J
    consumed: np.ndarray         # (K,) energy each device spent, J
    wasted: np.ndarray           # (K,) arriving energy lost to a full battery
    forgiven: np.ndarray         # (K,) deficit erased by the empty-clamp
    final_energy: np.ndarray     # (K,)
    in_outage: np.ndarray        # (K,) bool

    @property
    def n_wds(self) -> int:
        return self.arrived.size

    @property
    def arrival_rates(self) -> np.ndarray:
        """Per-device mean arriving power over the lifetime, W."""
        if self.lifetime <= 0.0:
            return np.zeros_like(self.arrived)
        return self.arrived / self.lifetime

    @property
    def consumption_rates(self) -> np.ndarray:
        if self.lifetime <= 0.0:
            return np.zeros_like(self.consumed)
        return self.consumed / self.lifetime

    @property
    def overcharge_fractions(self) -> np.ndarray:
        """Share of arriving energy lost because the battery was full."""
        out = np.zeros_like(self.arrived)
        np.divide(self.wasted, self.arrived, out=out, where=self.arrived > 0.0)
        return out

    def ledger_error(self) -> float:
        """Worst per-device violation of energy conservation, in joules.

        Every trajectory must satisfy, per device:
        final = initial + arrived - consumed - wasted + forgiven.
        """
        start = self.initial_energy / self.n_wds
        expect = (start + self.arrived - self.consumed - self.wasted
                  + self.forgiven)
        return float(np.max(np.abs(expect - self.final_energy)))


def run_lifetime(scenario: NetworkScenario, policy: Policy,
                 weights: WeightingMatrix, *, mode: str = "exact",
                 seed=0, trial: int = 0, outage_quorum: int | None = None,
                 max_blocks: int = 200_000_000, trace: bool = False):
    """Simulate one trial to network death or the block budget.

    Returns ``RunStatistics``, or ``(RunStatistics, list[BlockRecord])`` when
    ``trace`` is set. ``seed``/``trial`` select the random streams; the same
    pair always reproduces the same trajectory, and a longer ``max_blocks``
    extends the same path rather than changing it.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    seed_seq = _as_seed_seq(seed)
    quorum = scenario.outage_quorum if outage_quorum is None else outage_quorum
    if not 1 <= quorum <= scenario.n_wds:
        raise ValueError("outage_quorum must lie in [1, n_wds]")
    if max_blocks < 0:
        raise ValueError("max_blocks must be non-negative")

    K = scenario.n_wds
    config = BatteryStateConfig.from_fractions(scenario.battery_capacity,
                                               weights.state_fractions)
    if config.n_states != weights.n_states:
        raise ValueError("weights and battery-state thresholds disagree")
    table = np.ascontiguousarray(_policy_table(policy, weights))
    votes_per_state = np.ascontiguousarray(policy.votes_per_state(weights))
    a1, a2 = _effective_fractions(policy, scenario)
    harvest_factor = scenario.eta * (1.0 - a1 - a2) * scenario.block_seconds
    fb_energy = (scenario.consumption.feedback_tx_power * a2
                 * scenario.block_seconds)
    base_energy = scenario.consumption.active_power * scenario.block_seconds

    x = np.full(K, float(scenario.initial_energy))
    in_outage = x <= 0.0
    arrived = np.zeros(K)
    consumed = np.zeros(K)
    wasted = np.zeros(K)
    forgiven = np.zeros(K)
    initial_total = float(x.sum())

    records: list[BlockRecord] = []
    prev_states = np.zeros(K, dtype=np.int64)
    empty_f = np.zeros((0, 0))
    empty_i = np.zeros((0, 0), dtype=np.int64)

    n_out = int(in_outage.sum())
    dead = n_out >= quorum
    blocks = 0
    chunk = 0
    while not dead and blocks < max_blocks:
        # always draw a full chunk: the stream position of every uniform must
        # not depend on max_blocks, so a longer budget extends the same path
        limit = min(CHUNK_BLOCKS, max_blocks - blocks)
        rng = _chunk_rng(seed_seq, trial, chunk)
        gains, active_u, tie_u = _presample(scenario, rng, CHUNK_BLOCKS)
        if trace:
            rec_states = np.zeros((limit, K), dtype=np.int64)
            rec_votes = np.zeros((limit, K), dtype=np.int64)
            rec_arrived = np.zeros((limit, K))
            rec_consumed = np.zeros((limit, K))
            rec_level = np.zeros((limit, K))
            rec_alloc = np.zeros((limit, scenario.n_subchannels))
        else:
            rec_states = rec_votes = empty_i
            rec_arrived = rec_consumed = rec_level = rec_alloc = empty_f
        done, n_out, dead = _kernel.advance_chunk(
            gains, active_u, tie_u, limit,
            x, in_outage, arrived, consumed, wasted, forgiven,
            config.thresholds, table, votes_per_state,
            float(scenario.p0), scenario.n_per_en, harvest_factor,
            base_energy, float(scenario.consumption.active_probability),
            fb_energy, float(scenario.battery_capacity),
            policy.tally == TALLY_PRIORITIZED, policy.allocation,
            quorum, mode == "exact", n_out,
            trace, rec_states, rec_votes, rec_arrived, rec_consumed,
            rec_level, rec_alloc)
        if trace:
            for b in range(done):
                changed = (rec_states[b] != prev_states) & (rec_states[b] > 0)
                records.append(BlockRecord(
                    block_index=blocks + b, states=rec_states[b].copy(),
                    votes_cast=rec_votes[b].copy(),
                    allocation=rec_alloc[b].copy(),
                    arrived=rec_arrived[b].copy(),
                    consumed=rec_consumed[b].copy(),
                    energy_after=rec_level[b].copy(),
                    bsi_changed=changed))
                prev_states = np.where(rec_states[b] > 0, rec_states[b],
                                       prev_states)
        blocks += done
        chunk += 1

    stats = RunStatistics(
        scheme=policy.name, mode=mode, blocks=blocks,
        lifetime=blocks * scenario.block_seconds, censored=not dead,
        initial_energy=initial_total, residual_energy=float(x.sum()),
        arrived=arrived, consumed=consumed, wasted=wasted, forgiven=forgiven,
        final_energy=x.copy(), in_outage=in_outage.copy())
    if trace:
        return stats, records
    return stats


# ---------------------------------------------------------------------------
# trial batches

@dataclasses.dataclass(frozen=True)
class MonteCarloResult:
    runs: list

    @property
    def lifetimes(self) -> np.ndarray:
        return np.array([r.lifetime for r in self.runs])

    @property
    def mean_lifetime(self) -> float:
        return float(self.lifetimes.mean())

    @property
    def std_lifetime(self) -> float:
        lifetimes = self.lifetimes
        if lifetimes.size < 2:
            return 0.0
        return float(lifetimes.std(ddof=1))

    @property
    def n_censored(self) -> int:
        return sum(r.censored for r in self.runs)


def _run_trial(args) -> RunStatistics:
    (scenario, policy, weights, mode, entropy, spawn_key, trial, quorum,
     max_blocks) = args
    seed_seq = np.random.SeedSequence(entropy=entropy, spawn_key=spawn_key)
    return run_lifetime(scenario, policy, weights, mode=mode, seed=seed_seq,
                        trial=trial, outage_quorum=quorum,
                        max_blocks=max_blocks)


def monte_carlo(scenario, policy: Policy, weights: WeightingMatrix, *,
                trials: int, mode: str = "exact", seed=0,
                outage_quorum: int | None = None,
                max_blocks: int = 200_000_000,
                n_jobs: int = 1) -> MonteCarloResult:
    """Run independent trials of one scheme.

    ``scenario`` is either a NetworkScenario or a callable
    ``trial -> NetworkScenario`` (for per-trial placements). Trial ``t`` uses
    random streams keyed by ``(seed, t)`` only, so results do not depend on
    ``trials``, ``n_jobs``, or scheduling order.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    seed_seq = _as_seed_seq(seed)
    scenario_for: Callable[[int], NetworkScenario]
    if callable(scenario):
        scenario_for = scenario
    else:
        scenario_for = lambda _t: scenario

    jobs = [(scenario_for(t), policy, weights, mode, seed_seq.entropy,
             tuple(seed_seq.spawn_key), t, outage_quorum, max_blocks)
            for t in range(trials)]
    if n_jobs == 1:
        runs = [_run_trial(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            runs = list(pool.map(_run_trial, jobs))
    return MonteCarloResult(runs=runs)
