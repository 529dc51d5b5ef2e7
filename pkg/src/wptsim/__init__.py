"""Discrete-time simulator for voting-based charging control in broadband WPT networks.

Subpackages follow the pipeline: topology (who is where) -> channel (block
fading) -> device (batteries, consumption, votes) -> policy (tallying and
power allocation) -> engine (block loop, Monte Carlo) -> analysis (lifetime
formula, drift checks, power search) -> config/experiments/cli (reproducible
experiment harness).
"""

__version__ = "0.1.0"
