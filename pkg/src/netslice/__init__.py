"""Admission control for network slicing as a semi-Markov decision process.

Submodules:

* :mod:`netslice.model`: slice classes, capacities, states and events.
* :mod:`netslice.markov`: uniformized chains, policy evaluation, optimal control.
* :mod:`netslice.sim`: event-driven simulator.
* :mod:`netslice.nn`: numpy multilayer perceptrons.
* :mod:`netslice.agents`: greedy, tabular Q-learning and deep Q agents.
* :mod:`netslice.estimators`: scikit-learn style wrappers.
* :mod:`netslice.config`, :mod:`netslice.cli`: experiment presets and commands.
"""
__version__ = "0.1.0"

from .model import (  # noqa: E402
    Action,
    Event,
    EventKind,
    InfeasibleAccept,
    ResourceCapacity,
    SliceClassSpec,
    SlicingProblem,
    SmdpState,
    StateSpaceTooLarge,
    enumerate_states,
    fits,
)
from .markov import PolicyTable, policy_average_reward, solve_optimal  # noqa: E402

__all__ = [
    "Action",
    "Event",
    "EventKind",
    "InfeasibleAccept",
    "ResourceCapacity",
    "SliceClassSpec",
    "SlicingProblem",
    "SmdpState",
    "StateSpaceTooLarge",
    "enumerate_states",
    "fits",
    "PolicyTable",
    "policy_average_reward",
    "solve_optimal",
]
