"""Exact uniformized-chain machinery for small slicing instances.

Everything here works on a :class:`~netslice.model.SlicingProblem` and a
:class:`PolicyTable`.  Time is in hours, rates are per hour.  One epoch of
the uniformized chain lasts ``1/z`` hours on average.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import Event, EventKind, SlicingProblem, SmdpState

__all__ = [
    "ConvergenceError",
    "PolicyTable",
    "EmbeddedChain",
    "AverageRewardSolution",
    "event_rate",
    "uniform_rate",
    "event_distribution",
    "build_embedded_chain",
    "transient_probability",
    "transient_distribution",
    "limiting_matrix",
    "stationary_distribution",
    "epoch_rewards",
    "event_probability_matrix",
    "state_label",
    "policy_average_reward",
    "solve_optimal",
    "write_matrix_csv",
]


class ConvergenceError(RuntimeError):
    """An iterative computation did not reach its tolerance."""


def event_rate(occ: Sequence[int], specs) -> float:
    """Total event rate at ``occ``: the sum over classes of arrival plus active completions."""
    return float(sum(s.arrival_rate + n * s.completion_rate for s, n in zip(specs, occ)))


def uniform_rate(specs, cap) -> float:
    """Largest event rate over the feasible occupancies."""
    return SlicingProblem(specs, cap).uniform_rate


def event_distribution(occ: Sequence[int], specs, z: float) -> list[tuple[Event, float]]:
    """Probabilities of the next event of the uniformized chain at ``occ``.

    The trivial event gets the complement so the list sums to one.
    """
    zs = event_rate(occ, specs)
    if z < zs * (1 - 1e-12):
        raise ValueError(f"uniform rate {z} is below the event rate {zs} at {tuple(occ)}")
    out = [(Event.arrival(s.class_id), s.arrival_rate / z) for s in specs]
    out += [
        (Event.departure(s.class_id), n * s.completion_rate / z)
        for s, n in zip(specs, occ)
        if n > 0
    ]
    # complement, snapped to an exact zero where z_s attains z
    trivial = 0.0 if zs >= z * (1 - 1e-12) else 1.0 - sum(p for _, p in out)
    out.append((Event.trivial(), trivial))
    return out


@dataclass
class PolicyTable:
    """Accept/reject decision for every (occupancy, arriving class) pair.

    ``accept[s, c]`` is only meaningful where class ``c`` fits at occupancy
    ``s``; infeasible entries are forced to ``False``.
    """

    problem: SlicingProblem
    accept: np.ndarray

    def __post_init__(self):
        acc = np.asarray(self.accept, dtype=bool)
        shape = (self.problem.n_states, self.problem.n_classes)
        if acc.shape != shape:
            raise ValueError(f"policy shape {acc.shape} does not cover the {shape} arrival states")
        self.accept = acc & (self.problem.up >= 0)

    @classmethod
    def greedy(cls, problem: SlicingProblem) -> "PolicyTable":
        return cls(problem, problem.up >= 0)

    @classmethod
    def reject_all(cls, problem: SlicingProblem) -> "PolicyTable":
        return cls(problem, np.zeros((problem.n_states, problem.n_classes), dtype=bool))

    @classmethod
    def random(cls, problem: SlicingProblem, rng: np.random.Generator, p: float = 0.5):
        return cls(problem, rng.random((problem.n_states, problem.n_classes)) < p)

    @classmethod
    def from_mapping(cls, problem: SlicingProblem, mapping) -> "PolicyTable":
        """Build from ``{SmdpState: Action}``; every fitting arrival state must be present."""
        acc = np.zeros((problem.n_states, problem.n_classes), dtype=bool)
        seen = np.zeros_like(acc)
        for state, action in mapping.items():
            if state.event.kind != EventKind.ARRIVAL:
                continue
            s = problem.index[state.occupancy]
            acc[s, state.event.class_id] = bool(action)
            seen[s, state.event.class_id] = True
        missing = (problem.up >= 0) & ~seen
        if missing.any():
            s, c = np.argwhere(missing)[0]
            raise KeyError(f"policy is missing arrival of class {c} at {problem.states[s]}")
        return cls(problem, acc)

    def act(self, state: SmdpState) -> int:
        if state.event.kind != EventKind.ARRIVAL:
            return 0
        return int(self.accept[self.problem.index[state.occupancy], state.event.class_id])

    def act_index(self, s: int, e: int) -> int:
        if e >= self.problem.n_classes:
            return 0
        return int(self.accept[s, e])

    def to_mapping(self) -> dict:
        out = {}
        for s, occ in enumerate(self.problem.states):
            for c in range(self.problem.n_classes):
                out[SmdpState(occ, Event.arrival(c))] = int(self.accept[s, c])
        return out


@dataclass
class EmbeddedChain:
    states: list
    uniform_rate: float
    one_step: np.ndarray

    def __post_init__(self):
        rows = self.one_step.sum(axis=1)
        if not np.allclose(rows, 1.0, rtol=0, atol=1e-12):
            raise ValueError("one-step matrix is not row-stochastic")


@dataclass
class AverageRewardSolution:
    policy: PolicyTable
    gain: float
    bias: np.ndarray
    residual_span: float
    iterations: int = 0
    q_values: np.ndarray = field(default=None, repr=False)


def build_embedded_chain(policy: PolicyTable, specs=None, cap=None) -> EmbeddedChain:
    """Occupancy-to-occupancy transition matrix of the uniformized chain under ``policy``."""
    prob = policy.problem
    if specs is not None and tuple(specs) != prob.specs:
        raise ValueError("policy was built for different slice classes")
    if cap is not None and cap != prob.capacity:
        raise ValueError("policy was built for a different capacity")
    z = prob.uniform_rate
    S, C = prob.n_states, prob.n_classes
    P = np.zeros((S, S))
    rows = np.arange(S)
    for c in range(C):
        p_arr = prob.arrival_rates[c] / z
        acc = policy.accept[:, c]
        np.add.at(P, (rows[acc], prob.up[acc, c]), p_arr)
        np.add.at(P, (rows[~acc], rows[~acc]), p_arr)
        has = prob.down[:, c] >= 0
        np.add.at(P, (rows[has], prob.down[has, c]),
                  prob.counts[has, c] * prob.completion_rates[c] / z)
    P[rows, rows] += 1.0 - P.sum(axis=1)
    return EmbeddedChain(list(prob.states), z, P)


def _poisson_weights(mean: float, tail_tol: float):
    """Yield Poisson pmf values until the remaining tail mass drops below ``tail_tol``."""
    cum = 0.0
    n = 0
    log_mean = math.log(mean) if mean > 0 else -math.inf
    while True:
        if mean == 0:
            w = 1.0 if n == 0 else 0.0
        else:
            w = math.exp(-mean + n * log_mean - math.lgamma(n + 1))
        cum += w
        yield w
        if 1.0 - cum < tail_tol or (mean == 0):
            return
        n += 1
        if n > 50 * (mean + 10) + 1000:
            raise ConvergenceError("Poisson series did not reach the tail tolerance")


def transient_distribution(
    chain: EmbeddedChain, start: int, t: float, tail_tol: float = 1e-9
) -> np.ndarray:
    """Row ``start`` of the transition matrix at time ``t`` via the Poisson-weighted power series."""
    if tail_tol <= 0:
        raise ValueError("tail_tol must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    P = chain.one_step
    v = np.zeros(P.shape[0])
    v[start] = 1.0
    out = np.zeros_like(v)
    for w in _poisson_weights(chain.uniform_rate * t, tail_tol):
        out += w * v
        v = v @ P
    return out


def transient_probability(
    chain: EmbeddedChain, from_state: int, to_state: int, t: float, tail_tol: float = 1e-9
) -> float:
    return float(transient_distribution(chain, from_state, t, tail_tol)[to_state])


def limiting_matrix(P: np.ndarray, tol: float = 1e-12, max_iters: int = 200) -> np.ndarray:
    """Cesaro limit ``lim (1/N) sum_{n<N} P^n``.

    Averages over ``N = 2^k`` terms are doubled with
    ``A_{2N} = (A_N + P^N A_N) / 2`` until two successive averages differ by
    less than ``tol`` in max norm.
    """
    P = np.asarray(P, dtype=float)
    A = np.eye(P.shape[0])
    PN = P.copy()
    for _ in range(max_iters):
        A_next = 0.5 * (A + PN @ A)
        diff = np.max(np.abs(A_next - A))
        A = A_next
        PN = PN @ PN
        # squaring doubles any row-sum drift, so pull rows back onto the simplex
        PN /= PN.sum(axis=1, keepdims=True)
        if diff < tol:
            return A
    raise ConvergenceError(f"Cesaro averages did not settle below {tol} in {max_iters} doublings")


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Stationary row vector of a unichain stochastic matrix by a direct linear solve."""
    n = P.shape[0]
    A = np.vstack([P.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    return pi


def epoch_rewards(policy: PolicyTable) -> np.ndarray:
    """Expected reward per uniformized epoch at each occupancy under ``policy``."""
    prob = policy.problem
    return (policy.accept * (prob.arrival_rates * prob.rewards / prob.uniform_rate)).sum(axis=1)


def policy_average_reward(
    policy: PolicyTable, specs=None, cap=None, tol: float = 1e-12, start: int = 0
) -> float:
    """Long-run reward per hour of ``policy`` from the limiting matrix of its chain."""
    chain = build_embedded_chain(policy, specs, cap)
    L = limiting_matrix(chain.one_step, tol=tol)
    r = epoch_rewards(policy)
    # every epoch lasts 1/z hours on average
    y = np.full_like(r, 1.0 / chain.uniform_rate)
    return float((L @ r)[start] / (L @ y)[start])


def _decision_tables(prob: SlicingProblem):
    """Per decision state: occupancy after reject, after accept (-1 if not allowed), accept reward."""
    C, E = prob.n_classes, prob.n_events
    S = prob.n_states
    s_idx = np.repeat(np.arange(S), E)
    e_idx = np.tile(np.arange(E), S)
    nxt_rej = s_idx.copy()
    nxt_acc = np.full(S * E, -1, dtype=np.int64)
    r_acc = np.zeros(S * E)
    arr = e_idx < C
    nxt_acc[arr] = prob.up[s_idx[arr], e_idx[arr]]
    r_acc[arr] = prob.rewards[e_idx[arr]]
    dep = (e_idx >= C) & (e_idx < 2 * C)
    d = prob.down[s_idx[dep], e_idx[dep] - C]
    # departures from empty classes never occur; keep them as self-loops
    nxt_rej[dep] = np.where(d >= 0, d, s_idx[dep])
    return nxt_rej, nxt_acc, r_acc


def event_probability_matrix(prob: SlicingProblem) -> np.ndarray:
    """``(S, 2C+1)`` next-event probabilities of the uniformized chain."""
    z = prob.uniform_rate
    C = prob.n_classes
    E = np.zeros((prob.n_states, prob.n_events))
    E[:, :C] = prob.arrival_rates / z
    E[:, C:2 * C] = prob.counts * prob.completion_rates / z
    E[:, 2 * C] = np.maximum(0.0, 1.0 - E[:, :2 * C].sum(axis=1))
    return E


def solve_optimal(
    problem: SlicingProblem, tol: float = 1e-10, max_iters: int = 200_000
) -> AverageRewardSolution:
    """Relative value iteration over ``(occupancy, event)`` decision states.

    The reference state is the empty system with a trivial event.  Accept
    wins only when strictly better than reject.
    """
    E = event_probability_matrix(problem)
    nxt_rej, nxt_acc, r_acc = _decision_tables(problem)
    can_acc = nxt_acc >= 0
    acc_idx = np.where(can_acc, nxt_acc, 0)
    ref = 2 * problem.n_classes  # occupancy 0, trivial event
    h = np.zeros(problem.n_decision_states)
    span = math.inf
    for it in range(1, max_iters + 1):
        W = (E * h.reshape(problem.n_states, problem.n_events)).sum(axis=1)
        q_rej = W[nxt_rej]
        q_acc = np.where(can_acc, r_acc + W[acc_idx], -np.inf)
        Th = np.maximum(q_rej, q_acc)
        delta = Th - h
        span = float(delta.max() - delta.min())
        h = Th - Th[ref]
        if span < tol:
            break
    else:
        raise ConvergenceError(f"relative value iteration span {span:.3g} is above {tol}")
    g = 0.5 * (delta.max() + delta.min())
    W = (E * h.reshape(problem.n_states, problem.n_events)).sum(axis=1)
    q = np.column_stack([W[nxt_rej], np.where(can_acc, r_acc + W[acc_idx], -np.inf)])
    scale = max(1.0, float(np.abs(q[:, 0]).max()))
    accept_x = can_acc & (q[:, 1] > q[:, 0] + 1e-12 * scale)
    C = problem.n_classes
    accept = accept_x.reshape(problem.n_states, problem.n_events)[:, :C]
    return AverageRewardSolution(
        policy=PolicyTable(problem, accept),
        gain=float(g * problem.uniform_rate),
        bias=h,
        residual_span=span,
        iterations=it,
        q_values=q,
    )


def write_matrix_csv(path, matrix: np.ndarray, labels: Sequence[str]):
    """Write a square matrix row-major with a header of state labels."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state"] + list(labels))
        for lab, row in zip(labels, matrix):
            w.writerow([lab] + [repr(float(v)) for v in row])


def state_label(occ: Sequence[int]) -> str:
    return "(" + " ".join(str(n) for n in occ) + ")"
