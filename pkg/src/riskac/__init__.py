"""Variance-constrained actor-critic with an exact tabular oracle.

The learning loops run as numba kernels; setting ``RISKAC_DISABLE_NUMBA=1``
before import selects the pure-numpy path instead.
"""
from .actor import ActorState, PowerSchedule, StepSchedules
from .critic import CriticFeatures
from .driver import RunConfig, RunTrace, run, sweep
from .mdp import BoltzmannPolicy, TabularMdp
from .oracle import solve_average, solve_discounted
from .traffic import TrafficSpec, grid_spec

__version__ = "0.1.0"

__all__ = [
    "ActorState", "BoltzmannPolicy", "CriticFeatures", "PowerSchedule", "RunConfig",
    "RunTrace", "StepSchedules", "TabularMdp", "TrafficSpec", "grid_spec", "run",
    "solve_average", "solve_discounted", "sweep",
]
