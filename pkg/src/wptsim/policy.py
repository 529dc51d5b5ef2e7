"""Vote weighting, tallying, and per-EN power allocation.

Each block, every live WD casts ranked votes for its strongest sub-channels;
how many votes it gets depends on its battery state through the weighting
matrix W: state r casts as many votes as row r has non-zero entries, and the
vote of rank t carries weight W[r, t]. ENs tally the votes that touch their
own sub-channels and split their transmit budget accordingly.

Two tallies:
* universal    — every vote counts at its weight.
* prioritized  — per EN, only votes from the worst (lowest) battery state
                 among that EN's voters count.

Two allocators:
* single       — whole budget on the top-scoring sub-channel (random tie
                 break); uniform if nobody voted.
* proportional — budget split proportionally to scores; uniform if all zero.

The nine named schemes combine these with three vote styles (weighted,
unweighted, greedy single-vote) plus the vote-free uniform baseline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .device import DEFAULT_STATE_FRACTIONS
from .topology import NetworkScenario


@dataclass(frozen=True)
class WeightingMatrix:
    """Vote-weight table W (I states x J vote ranks) plus state thresholds.

    Thresholds travel with W as fractions of battery capacity so that a run
    only needs (scenario, policy, weights) to be fully specified. Structural
    conventions — non-zero entries form a per-row prefix, weights fall with
    rank, row sums fall with state — are advisory: violations warn but are
    allowed, since sweep families must stay expressible for fractional
    parameters.
    """

    entries: np.ndarray
    state_fractions: tuple = DEFAULT_STATE_FRACTIONS

    def __post_init__(self):
        w = np.asarray(self.entries, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError("weights must be a 2-D (I, J) table")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        fr = tuple(float(f) for f in self.state_fractions)
        if len(fr) != w.shape[0] - 1:
            raise ValueError("need one interior threshold fraction per state boundary "
                             f"(I={w.shape[0]} states -> {w.shape[0] - 1} fractions)")
        if any(not 0.0 < f < 1.0 for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
            raise ValueError("state fractions must be ascending within (0, 1)")
        for r, row in enumerate(w, start=1):
            nz = np.flatnonzero(row)
            if nz.size and (nz[-1] != nz.size - 1):
                warnings.warn(f"weight row {r}: non-zero entries are not a prefix",
                              stacklevel=2)
            prefix = row[:nz.size] if nz.size else row[:0]
            if np.any(np.diff(prefix) > 0):
                warnings.warn(f"weight row {r}: weights increase with rank", stacklevel=2)
        sums = w.sum(axis=1)
        if np.any(np.diff(sums) > 0):
            warnings.warn("row sums increase with battery state", stacklevel=2)
        w.setflags(write=False)
        object.__setattr__(self, "entries", w)
        object.__setattr__(self, "state_fractions", fr)

    def __eq__(self, other):
        if not isinstance(other, WeightingMatrix):
            return NotImplemented
        return (self.state_fractions == other.state_fractions
                and np.array_equal(self.entries, other.entries))

    @property
    def n_states(self) -> int:
        return self.entries.shape[0]

    @property
    def max_rank(self) -> int:
        return self.entries.shape[1]

    def votes_per_state(self, state: int) -> int:
        """Votes a WD in ``state`` casts: non-zero entries in its row."""
        if not 1 <= state <= self.n_states:
            raise ValueError(f"battery state {state} outside 1..{self.n_states}")
        return int(np.count_nonzero(self.entries[state - 1]))

    def max_votes(self) -> int:
        """Largest per-state vote count; sets the feedback share alpha2."""
        return int(np.count_nonzero(self.entries, axis=1).max())

    def weight(self, state: int, rank: int) -> float:
        """Weight of the rank-th vote (1-based) from a WD in ``state``."""
        return float(self.entries[state - 1, rank - 1])


def default_weights() -> WeightingMatrix:
    """The reference 4-state table: strong bias toward nearly-empty WDs."""
    return WeightingMatrix(np.array([
        [63.0, 27.0, 0.0],
        [21.0, 9.0, 0.0],
        [6.0, 3.0, 1.0],
        [1.0, 0.0, 0.0],
    ]))


def power_family_weights(r: float) -> WeightingMatrix:
    """One-parameter family [[7r^2, 3r^2, 0], [7r, 3r, 0], [6, 3, 1], [1, 0, 0]].

    Larger r skews weight toward low battery states; r = 3 reproduces
    default_weights(). Only r > 1 keeps the row sums decreasing.
    """
    if r <= 1.0:
        raise ValueError("power family needs r > 1")
    return WeightingMatrix(np.array([
        [7.0 * r * r, 3.0 * r * r, 0.0],
        [7.0 * r, 3.0 * r, 0.0],
        [6.0, 3.0, 1.0],
        [1.0, 0.0, 0.0],
    ]))


# vote-count sweep: rows for states 1 and 2 at each feedback amount 1..5;
# states 3 and 4 keep the default [6, 3, 1] / [1] rows throughout.
_FEEDBACK_FAMILY_ROWS = {
    1: ([90.0], [30.0]),
    2: ([63.0, 27.0], [21.0, 9.0]),
    3: ([63.0, 27.0, 9.0], [21.0, 9.0, 3.0]),
    4: ([63.0, 27.0, 9.0, 3.0], [21.0, 9.0, 3.0, 1.0]),
    5: ([63.0, 27.0, 9.0, 3.0, 1.0], [21.0, 9.0, 3.0, 1.0, 1.0]),
}


def feedback_family_weights(max_feedback: int) -> WeightingMatrix:
    """Weighting table whose states 1-2 cast ``max_feedback`` votes (1..5)."""
    try:
        row1, row2 = _FEEDBACK_FAMILY_ROWS[max_feedback]
    except KeyError:
        raise ValueError("max_feedback must be in 1..5") from None
    width = max(len(row1), 3)
    rows = [row1, row2, [6.0, 3.0, 1.0], [1.0]]
    table = np.zeros((4, width))
    for i, row in enumerate(rows):
        table[i, :len(row)] = row
    return WeightingMatrix(table)


@dataclass(frozen=True)
class VoteSheet:
    """One block's votes from all WDs, as seen by the ENs.

    ``votes[k]`` lists WD k's sub-channel picks strongest-first (empty when
    silent); ``states[k]`` is the battery state it reported at the block
    boundary. Vote weights are *not* stored: tallies look them up from W via
    (state, rank), mirroring what an EN can reconstruct from feedback.
    """

    states: np.ndarray              # (K,) int
    votes: list = field(default_factory=list)   # K arrays of global indices

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        if states.ndim != 1 or len(self.votes) != states.size:
            raise ValueError("need one vote list and one state per WD")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "votes",
                           [np.asarray(v, dtype=np.int64) for v in self.votes])

    @property
    def n_wds(self) -> int:
        return self.states.size


def _weight_table(weights) -> np.ndarray:
    """Accept a WeightingMatrix or a raw (I, J) array of weights."""
    return np.asarray(getattr(weights, "entries", weights), dtype=np.float64)


def tally_universal(sheet: VoteSheet, weights, en: int,
                    scenario: NetworkScenario) -> np.ndarray:
    """Weighted vote totals for EN ``en``'s sub-channels (length N).

    Every WD's vote on one of this EN's sub-channels adds W[state, rank].
    """
    table = _weight_table(weights)
    channels = scenario.en_channels(en)
    lo, hi = channels[0], channels[-1]
    scores = np.zeros(channels.size)
    for k in range(sheet.n_wds):
        state = int(sheet.states[k])
        for rank, j in enumerate(sheet.votes[k], start=1):
            if lo <= j <= hi:
                scores[j - lo] += table[state - 1, rank - 1]
    return scores


def tally_prioritized(sheet: VoteSheet, weights, en: int,
                      scenario: NetworkScenario) -> np.ndarray:
    """Like tally_universal but only the neediest voters count.

    Among WDs with at least one vote on this EN's sub-channels, find the
    lowest battery state p; votes from WDs in states above p are discarded.
    Each EN computes its own p, so tampering with votes addressed elsewhere
    cannot change this EN's tally.
    """
    table = _weight_table(weights)
    channels = scenario.en_channels(en)
    lo, hi = channels[0], channels[-1]
    p = None
    for k in range(sheet.n_wds):
        if len(sheet.votes[k]) and np.any((sheet.votes[k] >= lo) & (sheet.votes[k] <= hi)):
            state = int(sheet.states[k])
            p = state if p is None else min(p, state)
    scores = np.zeros(channels.size)
    if p is None:
        return scores
    for k in range(sheet.n_wds):
        if int(sheet.states[k]) != p:
            continue
        for rank, j in enumerate(sheet.votes[k], start=1):
            if lo <= j <= hi:
                scores[j - lo] += table[p - 1, rank - 1]
    return scores


def allocate_single(scores: np.ndarray, p0: float,
                    rng: np.random.Generator | None = None,
                    tie_u: float | None = None) -> np.ndarray:
    """All of ``p0`` on the top-scoring sub-channel of one EN.

    No votes at all -> uniform p0/N. Ties for the top score break uniformly
    at random, either from ``rng`` or from a pre-drawn uniform ``tie_u``
    (the engine pre-draws one per EN per block to keep streams aligned).
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    out = np.zeros(n)
    if not scores.any():
        out[:] = p0 / n
        return out
    top = np.flatnonzero(scores == scores.max())
    if top.size == 1:
        out[top[0]] = p0
        return out
    if tie_u is None:
        if rng is None:
            raise ValueError("tie break needs rng or tie_u")
        tie_u = rng.random()
    out[top[min(int(tie_u * top.size), top.size - 1)]] = p0
    return out


def allocate_proportional(scores: np.ndarray, p0: float) -> np.ndarray:
    """Split ``p0`` across one EN's sub-channels proportionally to scores."""
    scores = np.asarray(scores, dtype=np.float64)
    total = scores.sum()
    if total <= 0.0:
        return np.full(scores.size, p0 / scores.size)
    return p0 * scores / total


# --- scheme registry ---------------------------------------------------------

TALLY_NONE, TALLY_UNIVERSAL, TALLY_PRIORITIZED = 0, 1, 2
ALLOC_UNIFORM, ALLOC_SINGLE, ALLOC_PROPORTIONAL = 0, 1, 2


@dataclass(frozen=True)
class Policy:
    """Declarative description of one charging-control scheme.

    Cheap to pickle, so Monte Carlo workers receive the descriptor and build
    their own machinery. ``uses_feedback`` distinguishes the vote-free uniform
    baseline (no pilots, no feedback, whole block harvests) from everything
    else.
    """

    name: str
    tally: int
    allocation: int
    weighted: bool = True
    greedy: bool = False
    uses_feedback: bool = True

    def effective_weights(self, weights: WeightingMatrix) -> np.ndarray:
        """Per-(state, rank) weight actually applied by the tally."""
        if self.weighted:
            return weights.entries
        return (weights.entries > 0).astype(np.float64)

    def votes_per_state(self, weights: WeightingMatrix) -> np.ndarray:
        """Votes cast per battery state (length I) under this scheme."""
        if not self.uses_feedback:
            return np.zeros(weights.n_states, dtype=np.int64)
        if self.greedy:
            return np.ones(weights.n_states, dtype=np.int64)
        return np.count_nonzero(weights.entries, axis=1).astype(np.int64)

    def tally_scores(self, sheet: VoteSheet, weights: WeightingMatrix, en: int,
                     scenario: NetworkScenario) -> np.ndarray:
        if self.greedy:
            # greedy voters always carry weight 1 regardless of rank/state
            table = np.ones_like(weights.entries)
        else:
            table = self.effective_weights(weights)
        if self.tally == TALLY_PRIORITIZED:
            return tally_prioritized(sheet, table, en, scenario)
        return tally_universal(sheet, table, en, scenario)

    def allocate(self, sheet: VoteSheet | None, weights: WeightingMatrix,
                 scenario: NetworkScenario,
                 rng: np.random.Generator | None = None) -> np.ndarray:
        """Full network allocation, shape (MN,); each EN spends exactly p0."""
        mn = scenario.n_subchannels
        n = scenario.n_per_en
        out = np.empty(mn)
        for en in range(scenario.n_ens):
            sl = slice(en * n, (en + 1) * n)
            if self.allocation == ALLOC_UNIFORM:
                out[sl] = scenario.p0 / n
                continue
            scores = self.tally_scores(sheet, weights, en, scenario)
            if self.allocation == ALLOC_SINGLE:
                out[sl] = allocate_single(scores, scenario.p0, rng=rng)
            else:
                out[sl] = allocate_proportional(scores, scenario.p0)
        return out


SCHEMES: dict[str, Policy] = {p.name: p for p in [
    Policy("Singl-Univ", TALLY_UNIVERSAL, ALLOC_SINGLE),
    Policy("Singl-Prio", TALLY_PRIORITIZED, ALLOC_SINGLE),
    Policy("Propo-Univ", TALLY_UNIVERSAL, ALLOC_PROPORTIONAL),
    Policy("Propo-Prio", TALLY_PRIORITIZED, ALLOC_PROPORTIONAL),
    Policy("Singl-Unwt", TALLY_UNIVERSAL, ALLOC_SINGLE, weighted=False),
    Policy("Propo-Unwt", TALLY_UNIVERSAL, ALLOC_PROPORTIONAL, weighted=False),
    Policy("Singl-Greedy", TALLY_UNIVERSAL, ALLOC_SINGLE, weighted=False, greedy=True),
    Policy("Propo-Greedy", TALLY_UNIVERSAL, ALLOC_PROPORTIONAL, weighted=False, greedy=True),
    Policy("EqlPower", TALLY_NONE, ALLOC_UNIFORM, uses_feedback=False),
]}

SCHEME_NAMES = tuple(SCHEMES)


def make_policy(name: str) -> Policy:
    """Look up a scheme by its registry name (case-sensitive)."""
    try:
        return SCHEMES[name]
    except KeyError:
        known = ", ".join(SCHEME_NAMES)
        raise ValueError(f"unknown scheme {name!r}; known schemes: {known}") from None
