"""Engine tests.

Proves:
 1. harvested_energy reproduces the hand-computed worked example.
 2. The compiled chunk kernel and the numpy single-block path agree
    block-for-block on decisions and to float tolerance on energies, for all
    nine schemes in both battery modes.
 3. Every run satisfies the per-device energy ledger
    final = initial + arrived - consumed - wasted + forgiven.
 4. Runs are deterministic in (seed, trial), runs with a longer block budget
    extend the same trajectory, and parallel Monte Carlo equals sequential.
 5. Outage-quorum semantics: the run stops the block the quorum is met, and
    larger quorums never shorten a run.
 6. With the uniform baseline, lifetime is monotone in transmit power on
    paired seeds (pathwise, not just on average).
 7. Degenerate inputs behave: zero budget, zero initial energy, dead-on-birth
    networks, bad mode strings.
"""

import numpy as np
import pytest

from wptsim import engine
from wptsim.device import BatteryStateConfig
from wptsim.engine import (BlockRecord, CHUNK_BLOCKS, MonteCarloResult,
                           NetworkState, harvested_energy,
                           initial_network_state, monte_carlo, run_lifetime,
                           step_block)
from wptsim.policy import SCHEME_NAMES, default_weights, make_policy
from wptsim.topology import NetworkScenario, generate_clustered_placement

W = default_weights()


def small_scenario(**overrides):
    """Tiny battery so deaths and overcharges happen within a few hundred blocks."""
    kw = dict(battery_capacity=1.0, initial_energy=0.6, outage_quorum=6)
    kw.update(overrides)
    return generate_clustered_placement(seed=3, **kw)


def reference_run(scn, policy, mode, seed, trial, max_blocks):
    """Drive the single-block numpy path over the same presampled chunks."""
    seq = engine._as_seed_seq(seed)
    config = BatteryStateConfig.from_fractions(scn.battery_capacity,
                                               W.state_fractions)
    state = initial_network_state(scn)
    prev_states = np.zeros(scn.n_wds, dtype=np.int64)
    blocks = 0
    chunk = 0
    recs = []
    while blocks < max_blocks:
        want = min(CHUNK_BLOCKS, max_blocks - blocks)
        rng = engine._chunk_rng(seq, trial, chunk)
        gains, active_u, tie_u = engine._presample(scn, rng, CHUNK_BLOCKS)
        stop = False
        for b in range(want):
            state, rec = engine._step_core(state, scn, policy, W, config,
                                           mode, gains[b], active_u[b],
                                           tie_u[b], prev_states=prev_states)
            prev_states = np.where(rec.states > 0, rec.states, prev_states)
            recs.append(rec)
            blocks += 1
            if int(state.in_outage.sum()) >= scn.outage_quorum:
                stop = True
                break
        chunk += 1
        if stop:
            break
    return state, recs


def test_harvested_energy_worked_example():
    # 1 W on a single sub-channel with gain 3.02e-4, default overheads:
    # 0.51 * (1 - 0.05) * 0.5 * 1.0 * 3.02e-4 = 7.31595e-5 J
    scn = generate_clustered_placement(seed=0)
    alloc = np.zeros(scn.n_subchannels)
    alloc[0] = 1.0
    gains = np.zeros(scn.n_subchannels)
    gains[0] = 3.02e-4
    q = harvested_energy(alloc, gains, scn)
    assert q == pytest.approx(7.31595e-5, rel=1e-12)
    assert harvested_energy(np.zeros_like(alloc), gains, scn) == 0.0


def test_harvested_energy_scales_linearly():
    scn = generate_clustered_placement(seed=1)
    rng = np.random.default_rng(0)
    alloc = rng.random(scn.n_subchannels)
    gains = rng.random(scn.n_subchannels) * 1e-4
    q = harvested_energy(alloc, gains, scn)
    assert harvested_energy(2.0 * alloc, gains, scn) == pytest.approx(2 * q)
    assert harvested_energy(alloc, 3.0 * gains, scn) == pytest.approx(3 * q)


@pytest.mark.parametrize("mode", ["exact", "approx"])
@pytest.mark.parametrize("name", SCHEME_NAMES)
def test_kernel_matches_reference_path(name, mode):
    scn = small_scenario()
    pol = make_policy(name)
    st, recs = reference_run(scn, pol, mode, seed=11, trial=2, max_blocks=3000)
    stats, krecs = run_lifetime(scn, pol, W, mode=mode, seed=11, trial=2,
                                max_blocks=3000, trace=True)
    assert stats.blocks == len(recs)
    assert not stats.censored
    for rr, kr in zip(recs, krecs):
        assert np.array_equal(rr.states, kr.states)
        assert np.array_equal(rr.votes_cast, kr.votes_cast)
        # same winners / same sparsity pattern, values to tolerance
        assert np.array_equal(rr.allocation != 0, kr.allocation != 0)
        assert np.allclose(rr.allocation, kr.allocation, rtol=1e-12, atol=0)
        assert np.allclose(rr.arrived, kr.arrived, rtol=1e-9, atol=1e-18)
        assert np.allclose(rr.energy_after, kr.energy_after,
                           rtol=1e-9, atol=1e-15)
        assert np.array_equal(rr.bsi_changed, kr.bsi_changed)
    assert np.allclose(st.energy, stats.final_energy, rtol=1e-9, atol=1e-12)
    assert np.array_equal(st.in_outage, stats.in_outage)


@pytest.mark.parametrize("mode", ["exact", "approx"])
@pytest.mark.parametrize("name", ["Singl-Univ", "Propo-Prio", "EqlPower"])
def test_energy_ledger_balances(name, mode):
    scn = small_scenario()
    stats = run_lifetime(scn, make_policy(name), W, mode=mode, seed=5,
                         trial=0, max_blocks=5000)
    assert stats.ledger_error() <= 1e-9 * stats.initial_energy


def test_exact_mode_keeps_levels_in_range():
    scn = small_scenario()
    stats, recs = run_lifetime(scn, make_policy("Propo-Univ"), W,
                               mode="exact", seed=2, trial=0,
                               max_blocks=2000, trace=True)
    levels = np.stack([r.energy_after for r in recs])
    assert np.all(levels >= 0.0)
    assert np.all(levels <= scn.battery_capacity)


def test_approx_mode_can_overshoot():
    scn = small_scenario()
    stats, recs = run_lifetime(scn, make_policy("Singl-Univ"), W,
                               mode="approx", seed=2, trial=0,
                               max_blocks=3000, trace=True)
    levels = np.stack([r.energy_after for r in recs])
    assert np.any(levels < 0.0) or np.any(levels > scn.battery_capacity)
    assert np.any(stats.wasted > 0.0)


def test_runs_deterministic_in_seed_and_trial():
    scn = small_scenario()
    pol = make_policy("Singl-Univ")
    a = run_lifetime(scn, pol, W, seed=42, trial=3, max_blocks=2000)
    b = run_lifetime(scn, pol, W, seed=42, trial=3, max_blocks=2000)
    assert a.blocks == b.blocks
    assert np.array_equal(a.final_energy, b.final_energy)
    assert np.array_equal(a.arrived, b.arrived)
    c = run_lifetime(scn, pol, W, seed=42, trial=4, max_blocks=2000)
    d = run_lifetime(scn, pol, W, seed=43, trial=3, max_blocks=2000)
    assert not np.array_equal(a.final_energy, c.final_energy)
    assert not np.array_equal(a.final_energy, d.final_energy)


def test_longer_budget_extends_same_trajectory():
    scn = small_scenario()
    pol = make_policy("Propo-Univ")
    short, recs_short = run_lifetime(scn, pol, W, seed=7, trial=1,
                                     max_blocks=300, trace=True)
    full, recs_full = run_lifetime(scn, pol, W, seed=7, trial=1,
                                   max_blocks=3000, trace=True)
    assert short.censored and not full.censored
    assert full.blocks > short.blocks
    for rs, rf in zip(recs_short, recs_full[:short.blocks]):
        assert np.array_equal(rs.energy_after, rf.energy_after)
        assert np.array_equal(rs.allocation, rf.allocation)


def test_trace_agrees_with_summary():
    scn = small_scenario()
    pol = make_policy("Singl-Prio")
    stats, recs = run_lifetime(scn, pol, W, seed=13, trial=0,
                               max_blocks=4000, trace=True)
    plain = run_lifetime(scn, pol, W, seed=13, trial=0, max_blocks=4000)
    assert stats.blocks == plain.blocks == len(recs)
    assert np.array_equal(stats.final_energy, plain.final_energy)
    arrived = np.sum([r.arrived for r in recs], axis=0)
    consumed = np.sum([r.consumed for r in recs], axis=0)
    assert np.allclose(arrived, stats.arrived, rtol=1e-12)
    assert np.allclose(consumed, stats.consumed, rtol=1e-12)
    assert np.array_equal(recs[-1].energy_after, stats.final_energy)
    # first block: every live voter reports a fresh state
    assert np.all(recs[0].bsi_changed == (recs[0].states > 0))


def test_uniform_baseline_reports_no_votes():
    scn = small_scenario()
    stats, recs = run_lifetime(scn, make_policy("EqlPower"), W, seed=1,
                               trial=0, max_blocks=500, trace=True)
    for r in recs[:20]:
        assert np.all(r.states == 0)
        assert np.all(r.votes_cast == 0)
        assert np.allclose(r.allocation, scn.p0 / scn.n_per_en)


def test_quorum_stops_run_when_met():
    scn = small_scenario(outage_quorum=1)
    pol = make_policy("Propo-Univ")
    prev_blocks = 0
    prev_dead = 0
    for quorum in (1, 3, 6, 9):
        stats = run_lifetime(scn, pol, W, seed=21, trial=0, max_blocks=20_000,
                             outage_quorum=quorum)
        dead = int(stats.in_outage.sum())
        assert not stats.censored
        # several WDs can die in the same block, so >= rather than ==
        assert dead >= quorum
        assert stats.blocks >= prev_blocks
        assert dead >= prev_dead
        prev_blocks, prev_dead = stats.blocks, dead
    # without an override the scenario's own quorum (1) applies
    plain = run_lifetime(scn, pol, W, seed=21, trial=0, max_blocks=20_000)
    override = run_lifetime(scn, pol, W, seed=21, trial=0, max_blocks=20_000,
                            outage_quorum=1)
    assert plain.blocks == override.blocks


def test_lifetime_monotone_in_power_on_paired_seeds():
    # pathwise property of the uniform baseline: more power, same draws,
    # never an earlier death
    pol = make_policy("EqlPower")
    base = small_scenario(outage_quorum=1)
    prev = None
    for p0 in (0.0, 0.05, 0.2, 0.8):
        scn = base.with_(p0=p0)
        stats = run_lifetime(scn, pol, W, seed=77, trial=0, max_blocks=20_000)
        if prev is not None:
            assert stats.blocks >= prev
        prev = stats.blocks


def test_zero_block_budget_and_dead_network():
    scn = small_scenario()
    pol = make_policy("Singl-Univ")
    empty = run_lifetime(scn, pol, W, seed=0, trial=0, max_blocks=0)
    assert empty.blocks == 0 and empty.censored
    born_dead = run_lifetime(scn.with_(initial_energy=0.0), pol, W, seed=0,
                             trial=0, max_blocks=100)
    assert born_dead.blocks == 0 and not born_dead.censored
    assert born_dead.lifetime == 0.0
    assert np.all(born_dead.arrival_rates == 0.0)


def test_run_lifetime_rejects_bad_inputs():
    scn = small_scenario()
    pol = make_policy("Singl-Univ")
    with pytest.raises(ValueError):
        run_lifetime(scn, pol, W, mode="fuzzy", seed=0)
    with pytest.raises(ValueError):
        run_lifetime(scn, pol, W, seed=0, outage_quorum=0)
    with pytest.raises(ValueError):
        run_lifetime(scn, pol, W, seed=0, outage_quorum=scn.n_wds + 1)
    with pytest.raises(ValueError):
        run_lifetime(scn, pol, W, seed=0, max_blocks=-1)


def test_step_block_is_deterministic_and_consistent():
    scn = small_scenario()
    pol = make_policy("Propo-Prio")
    state = initial_network_state(scn)
    a_state, a_rec = step_block(state, scn, pol, W, np.random.default_rng(31))
    b_state, b_rec = step_block(state, scn, pol, W, np.random.default_rng(31))
    assert np.array_equal(a_rec.allocation, b_rec.allocation)
    assert np.array_equal(a_state.energy, b_state.energy)
    assert a_state.block_index == 1
    # each EN spends exactly its budget
    for en in range(scn.n_ens):
        lo = en * scn.n_per_en
        spent = a_rec.allocation[lo:lo + scn.n_per_en].sum()
        assert spent == pytest.approx(scn.p0, rel=1e-12)
    # matches the core step on the same pre-drawn randomness
    rng = np.random.default_rng(31)
    gains, active_u, tie_u = engine._presample(scn, rng, 1)
    config = BatteryStateConfig.from_fractions(scn.battery_capacity,
                                               W.state_fractions)
    c_state, c_rec = engine._step_core(state, scn, pol, W, config, "exact",
                                       gains[0], active_u[0], tie_u[0])
    assert np.array_equal(a_rec.allocation, c_rec.allocation)
    assert np.array_equal(a_state.energy, c_state.energy)


def test_step_block_latches_outage():
    scn = small_scenario()
    pol = make_policy("Singl-Univ")
    energy = np.full(scn.n_wds, 1e-9)
    energy[0] = 0.5
    state = NetworkState(energy=energy, in_outage=energy <= 0.0)
    rng = np.random.default_rng(4)
    for _ in range(30):
        state, rec = step_block(state, scn, pol, W, rng)
    dead = state.in_outage.copy()
    assert dead[1:].any()
    state2, rec = step_block(state, scn, pol, W, rng)
    assert np.all(state2.in_outage >= dead)  # nobody comes back
    assert np.all(rec.arrived[dead] == 0.0)
    assert np.all(rec.consumed[dead] == 0.0)


def test_monte_carlo_parallel_matches_sequential():
    scn = small_scenario()
    pol = make_policy("Propo-Univ")
    seq = monte_carlo(scn, pol, W, trials=4, seed=101, max_blocks=1500)
    par = monte_carlo(scn, pol, W, trials=4, seed=101, max_blocks=1500,
                      n_jobs=2)
    assert np.array_equal(seq.lifetimes, par.lifetimes)
    for a, b in zip(seq.runs, par.runs):
        assert np.array_equal(a.final_energy, b.final_energy)
        assert np.array_equal(a.arrived, b.arrived)


def test_monte_carlo_results_independent_of_batch_size():
    scn = small_scenario()
    pol = make_policy("Singl-Univ")
    two = monte_carlo(scn, pol, W, trials=2, seed=9, max_blocks=1500)
    five = monte_carlo(scn, pol, W, trials=5, seed=9, max_blocks=1500)
    assert np.array_equal(two.lifetimes, five.lifetimes[:2])
    assert five.n_censored == sum(r.censored for r in five.runs)
    assert five.std_lifetime >= 0.0
    with pytest.raises(ValueError):
        monte_carlo(scn, pol, W, trials=0, seed=9)


def test_monte_carlo_accepts_per_trial_scenarios():
    pol = make_policy("EqlPower")
    scenarios = [small_scenario(outage_quorum=1),
                 generate_clustered_placement(seed=50, battery_capacity=1.0,
                                              initial_energy=0.6,
                                              outage_quorum=1)]
    res = monte_carlo(lambda t: scenarios[t], pol, W, trials=2, seed=3,
                      max_blocks=20_000)
    direct0 = run_lifetime(scenarios[0], pol, W, seed=3, trial=0,
                           max_blocks=20_000)
    direct1 = run_lifetime(scenarios[1], pol, W, seed=3, trial=1,
                           max_blocks=20_000)
    assert res.runs[0].blocks == direct0.blocks
    assert res.runs[1].blocks == direct1.blocks
