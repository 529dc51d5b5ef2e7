"""Block-fading channel model.

Gains are i.i.d. across blocks, sub-channels, and WDs; within one block the
gain from sub-channel j (owned by EN i) to WD k is exponentially distributed
with mean beta * d(i, k)^(-delta) — Rayleigh fading on top of distance path
loss. The distribution family is pluggable through GainSampler so heavier
tails can be swapped in without touching the engine.
"""

from __future__ import annotations

import numpy as np

from .topology import NetworkScenario


class GainSampler:
    """Draws one block's (K, MN) gain matrix given per-pair means."""

    def sample(self, mean_gains: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError


class ExponentialGainSampler(GainSampler):
    """Default Rayleigh-fading sampler: gain ~ Exp(mean)."""

    def sample(self, mean_gains: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        # standard_exponential * mean rather than rng.exponential(mean): the
        # engine pre-draws whole chunks the same way, keeping streams aligned.
        return rng.standard_exponential(mean_gains.shape) * mean_gains


DEFAULT_SAMPLER = ExponentialGainSampler()


def sample_block(scenario: NetworkScenario,
                 rng: np.random.Generator,
                 sampler: GainSampler = DEFAULT_SAMPLER) -> np.ndarray:
    """One block's channel realization, shape (K, MN), strictly positive.

    Deterministic in the generator state: the same ``rng`` state yields a
    bit-identical matrix.
    """
    return sampler.sample(scenario.mean_gains, rng)
