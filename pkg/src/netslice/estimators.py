"""scikit-learn style wrappers around the solvers and learning agents.

Each estimator is fitted on a :class:`SlicingProblem` and predicts
admission actions for decision states.  Hyperparameters live in
``__init__`` so ``get_params``/``set_params``/``clone`` work as usual;
fitted attributes end with an underscore.
"""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import agents
from .markov import PolicyTable, policy_average_reward, solve_optimal
from .model import SlicingProblem, SmdpState

__all__ = [
    "check_problem",
    "check_states",
    "GreedyAdmission",
    "OptimalAdmission",
    "TabularQAdmission",
    "DoubleDQNAdmission",
    "DuelingDQNAdmission",
]


def check_problem(problem) -> SlicingProblem:
    """Accept a :class:`SlicingProblem` or a ``(specs, capacity)`` pair."""
    if isinstance(problem, SlicingProblem):
        return problem
    if isinstance(problem, tuple) and len(problem) == 2:
        return SlicingProblem(*problem)
    raise TypeError(f"expected a SlicingProblem or (specs, capacity), got {type(problem).__name__}")


def check_states(states, problem: SlicingProblem) -> np.ndarray:
    """Flattened decision-state indices for a state, a list of states, or an int array."""
    if isinstance(states, SmdpState):
        states = [states]
    if len(states) and isinstance(states[0], SmdpState):
        return np.array([problem.encode(st) for st in states], dtype=np.int64)
    x = np.asarray(states)
    if x.ndim != 1 or not np.issubdtype(x.dtype, np.integer):
        raise ValueError("states must be SmdpState objects or a 1-D integer index array")
    if x.size and (x.min() < 0 or x.max() >= problem.n_decision_states):
        raise ValueError("decision-state index out of range")
    return x.astype(np.int64)


class _AdmissionMixin:
    """predict / score shared by every admission estimator."""

    def predict(self, states) -> np.ndarray:
        check_is_fitted(self, "policy_")
        x = check_states(states, self.problem_)
        s, e = np.divmod(x, self.problem_.n_events)
        out = np.zeros(len(x), dtype=np.int64)
        arr = e < self.problem_.n_classes
        out[arr] = self.policy_.accept[s[arr], e[arr]]
        return out

    def decision_function(self, states) -> np.ndarray:
        """Action values ``(n, 2)``; inadmissible accepts are ``-inf``."""
        check_is_fitted(self, "q_values_")
        x = check_states(states, self.problem_)
        q = np.array(self.q_values_[x], dtype=float)
        q[~agents.admissible_mask(self.problem_)[x, 1], 1] = -np.inf
        return q

    def score(self, problem=None) -> float:
        """Exact long-run reward per hour of the fitted policy."""
        check_is_fitted(self, "policy_")
        if problem is not None and check_problem(problem) is not self.problem_:
            policy = PolicyTable(check_problem(problem), self.policy_.accept)
        else:
            policy = self.policy_
        return policy_average_reward(policy)

    def act_index(self, s: int, e: int) -> int:
        return self.policy_.act_index(s, e)


class GreedyAdmission(_AdmissionMixin, BaseEstimator):
    """Accept every request that fits."""

    def fit(self, problem, y=None):
        self.problem_ = check_problem(problem)
        self.policy_ = PolicyTable.greedy(self.problem_)
        return self


class OptimalAdmission(_AdmissionMixin, BaseEstimator):
    """Average-reward optimal policy by relative value iteration."""

    def __init__(self, tol: float = 1e-10, max_iters: int = 200_000):
        self.tol = tol
        self.max_iters = max_iters

    def fit(self, problem, y=None):
        self.problem_ = check_problem(problem)
        sol = solve_optimal(self.problem_, self.tol, self.max_iters)
        self.solution_ = sol
        self.policy_ = sol.policy
        self.gain_ = sol.gain
        self.q_values_ = sol.q_values
        return self


_CFG_FIELDS = [f.name for f in fields(agents.TrainConfig)]


class _LearnedAdmission(_AdmissionMixin, BaseEstimator):
    kind = ""

    def _config(self) -> agents.TrainConfig:
        kw = {k: v for k, v in self.get_params().items() if k in _CFG_FIELDS}
        return agents.TrainConfig(**kw)

    def fit(self, problem, y=None):
        self.problem_ = check_problem(problem)
        res = agents.train(self.kind, self.problem_, self._config(), self.random_state, self.mode)
        self.result_ = res
        self.curve_ = res.curve
        self.q_values_ = res.q_values()
        self.policy_ = res.policy()
        return self


class TabularQAdmission(_LearnedAdmission):
    """Tabular Q-learning with polynomial step sizes."""

    kind = "tabular"

    def __init__(self, episodes: int = 1_000_000, gamma: float = 0.95, epsilon_start: float = 1.0,
                 epsilon_end: float = 0.1, epsilon_decay_fraction: float = 0.8,
                 alpha_exponent: float = 0.6, mode: str = "uniformized", random_state=None):
        self.episodes = episodes
        self.gamma = gamma
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_fraction = epsilon_decay_fraction
        self.alpha_exponent = alpha_exponent
        self.mode = mode
        self.random_state = random_state


class _DeepAdmission(_LearnedAdmission):
    def __init__(self, episodes: int = 20_000, gamma: float = 0.99, learning_rate: float = 0.01,
                 batch_size: int = 64, memory_size: int = 10_000, target_sync: int = 1_000,
                 hidden: int = 64, epsilon_start: float = 1.0, epsilon_end: float = 0.1,
                 epsilon_decay_fraction: float = 0.8, encoding: str = "onehot",
                 mode: str = "uniformized", random_state=None):
        self.episodes = episodes
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.memory_size = memory_size
        self.target_sync = target_sync
        self.hidden = hidden
        self.epsilon_start = epsilon_start
        self.epsilon_end = epsilon_end
        self.epsilon_decay_fraction = epsilon_decay_fraction
        self.encoding = encoding
        self.mode = mode
        self.random_state = random_state

    @property
    def params_(self):
        check_is_fitted(self, "result_")
        return self.result_.params


class DoubleDQNAdmission(_DeepAdmission):
    """Deep double Q-learning with replay and a periodically synced target net."""

    kind = "double"

    def __init__(self, episodes: int = 20_000, gamma: float = 0.99, learning_rate: float = 0.01,
                 batch_size: int = 64, memory_size: int = 10_000, target_sync: int = 1_000,
                 hidden: int = 64, epsilon_start: float = 1.0, epsilon_end: float = 0.1,
                 epsilon_decay_fraction: float = 0.8, encoding: str = "onehot",
                 double_variant: str = "as_printed", mode: str = "uniformized",
                 random_state=None):
        super().__init__(episodes, gamma, learning_rate, batch_size, memory_size, target_sync,
                         hidden, epsilon_start, epsilon_end, epsilon_decay_fraction, encoding,
                         mode, random_state)
        self.double_variant = double_variant


class DuelingDQNAdmission(_DeepAdmission):
    """Deep dueling Q-learning: separate value and advantage streams."""

    kind = "dueling"

    def __init__(self, episodes: int = 20_000, gamma: float = 0.99, learning_rate: float = 0.01,
                 batch_size: int = 64, memory_size: int = 10_000, target_sync: int = 1_000,
                 hidden: int = 64, epsilon_start: float = 1.0, epsilon_end: float = 0.1,
                 epsilon_decay_fraction: float = 0.8, encoding: str = "onehot",
                 combiner: str = "mean", mode: str = "uniformized", random_state=None):
        super().__init__(episodes, gamma, learning_rate, batch_size, memory_size, target_sync,
                         hidden, epsilon_start, epsilon_end, epsilon_decay_fraction, encoding,
                         mode, random_state)
        self.combiner = combiner
