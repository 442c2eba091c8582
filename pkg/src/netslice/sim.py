"""Trajectory generation for the slicing system.

Two views of the same dynamics share one interface:

* ``"uniformized"``: events arrive at the constant rate ``z``; the next
  event is drawn from the uniformized event distribution, trivial events
  included.  One epoch is one training iteration.
* ``"continuous"``: the original continuous-time chain, with sojourns at
  rate ``z_s`` and no trivial events.

Policies are anything with ``act_index(s, e) -> int`` where ``s`` is the
occupancy index and ``e`` the event code (see :class:`netslice.model.Event`).
"""
from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import Event, InfeasibleAccept, SlicingProblem, SmdpState

__all__ = [
    "MODES",
    "RNG_NAME",
    "TrajectoryStep",
    "RunMetrics",
    "RunResult",
    "Simulator",
    "sample_event",
    "run",
    "acceptance_profile",
    "sample_occupancy_at",
    "write_trajectory_csv",
]

MODES = ("uniformized", "continuous")
RNG_NAME = "numpy.random.PCG64"
_BLOCK = 4096


@dataclass(frozen=True)
class TrajectoryStep:
    state: SmdpState
    action: int
    reward: float
    next_state: SmdpState
    sojourn: float


@dataclass
class RunMetrics:
    total_reward: float
    total_time: float
    epochs: int
    offered: list
    accepted: list
    occupancy_time: list
    coerced: int = 0
    mode: str = "uniformized"
    rng: str = RNG_NAME
    profile_offered: list = field(default_factory=list, repr=False)
    profile_accepted: list = field(default_factory=list, repr=False)

    @property
    def average_reward(self) -> float:
        return self.total_reward / self.total_time if self.total_time > 0 else 0.0

    @property
    def running_occupancy_mean(self) -> list:
        if self.total_time <= 0:
            return [0.0] * len(self.occupancy_time)
        return [t / self.total_time for t in self.occupancy_time]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["average_reward"] = self.average_reward
        d["running_occupancy_mean"] = self.running_occupancy_mean
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


@dataclass
class RunResult:
    metrics: RunMetrics
    trajectory: list | None = None


class _Uniforms:
    """Block-buffered uniform draws; one stream per run."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.buf = rng.random(_BLOCK)
        self.i = 0

    def __call__(self) -> float:
        if self.i == _BLOCK:
            self.buf = self.rng.random(_BLOCK)
            self.i = 0
        u = self.buf[self.i]
        self.i += 1
        return float(u)


class Simulator:
    """Stateful event-driven environment over a :class:`SlicingProblem`.

    ``reset`` returns the first decision state ``(s, e)``; ``step(action)``
    resolves the pending event and returns
    ``(reward, s_next, e_next, sojourn, coerced)``.  An accept that does not
    fit is coerced to reject (``coerced=True``) and earns nothing.
    """

    def __init__(self, problem: SlicingProblem, rng=None, mode: str = "uniformized",
                 check: bool = False):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.problem = problem
        self.mode = mode
        self.check = check
        self.uniform = _Uniforms(np.random.default_rng(rng))
        C = problem.n_classes
        z = problem.uniform_rate
        rates = np.zeros((problem.n_states, 2 * C))
        rates[:, :C] = problem.arrival_rates
        rates[:, C:] = problem.counts * problem.completion_rates
        self._cum = []
        self._rate = []
        for s in range(problem.n_states):
            zs = problem.event_rates[s]
            denom = z if mode == "uniformized" else zs
            cum = np.cumsum(rates[s]) / denom
            if zs >= z * (1 - 1e-12) or mode == "continuous":
                cum[-1] = 1.0
            self._cum.append(cum.tolist() + [1.0])
            self._rate.append(float(denom))
        self._up = problem.up.tolist()
        self._down = problem.down.tolist()
        self._rewards = problem.rewards.tolist()
        self._C = C
        self.s = 0
        self.e = 2 * C

    def sample_event(self, s: int) -> tuple[int, float]:
        """Draw ``(event_code, sojourn_hours)`` for the next epoch out of occupancy ``s``."""
        e = bisect.bisect_right(self._cum[s], self.uniform())
        sojourn = -math.log(1.0 - self.uniform()) / self._rate[s]
        return e, sojourn

    def reset(self, s: int = 0) -> tuple[int, int]:
        self.s = s
        self.e, _ = self.sample_event(s)
        return self.s, self.e

    def step(self, action: int):
        s, e, C = self.s, self.e, self._C
        reward = 0.0
        coerced = False
        if e < C:
            if action:
                nxt = self._up[s][e]
                if nxt < 0:
                    coerced = True
                    nxt = s
                else:
                    reward = self._rewards[e]
            else:
                nxt = s
        elif e < 2 * C:
            nxt = self._down[s][e - C]
        else:
            nxt = s
        if self.check:
            self._check(nxt)
        self.s = nxt
        self.e, sojourn = self.sample_event(nxt)
        return reward, nxt, self.e, sojourn, coerced

    def _check(self, s: int):
        prob = self.problem
        used = prob.used[s]
        if np.any(used > np.array(prob.capacity.as_tuple())):
            raise InfeasibleAccept(f"occupancy {prob.states[s]} violates capacity")


def sample_event(occ, problem: SlicingProblem, rng, mode: str = "uniformized"):
    """One draw of ``(Event, sojourn_hours)`` out of occupancy ``occ``."""
    sim = rng if isinstance(rng, Simulator) else Simulator(problem, rng, mode)
    code, sojourn = sim.sample_event(problem.index[tuple(occ)])
    return Event.from_code(code, problem.n_classes), sojourn


def run(policy, problem: SlicingProblem, horizon: int, rng=None, mode: str = "uniformized",
        record: bool | int = False, check: bool = False) -> RunResult:
    """Fixed-policy run of ``horizon`` epochs from the empty system.

    Each epoch resolves one event; ``sojourn`` is the time until the next
    one and is spent in the post-decision occupancy.  ``record=True`` keeps
    every epoch in the trajectory, an integer keeps only that many leading
    epochs.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    keep = horizon if record is True else int(record)
    C = problem.n_classes
    sim = Simulator(problem, rng, mode, check)
    s, e = sim.reset()
    counts = problem.counts.tolist()
    max_head = int(max(problem.headroom(0, c) for c in range(C)))
    headroom = [[problem.headroom(i, c) for c in range(C)] for i in range(problem.n_states)]
    prof_off = [[0] * (max_head + 1) for _ in range(C)]
    prof_acc = [[0] * (max_head + 1) for _ in range(C)]
    offered = [0] * C
    accepted = [0] * C
    occ_time = [0.0] * C
    total_reward = 0.0
    total_time = 0.0
    coerced_n = 0
    traj = [] if record is not False else None
    act = policy.act_index
    for k in range(horizon):
        a = act(s, e) if e < C else 0
        reward, s2, e2, tau, coerced = sim.step(a)
        if e < C:
            offered[e] += 1
            h = headroom[s][e]
            prof_off[e][h] += 1
            if a and not coerced:
                accepted[e] += 1
                prof_acc[e][h] += 1
            coerced_n += coerced
        total_reward += reward
        total_time += tau
        row = counts[s2]
        for c in range(C):
            occ_time[c] += row[c] * tau
        if k < keep:
            traj.append((s, e, 0 if coerced else a, reward, s2, e2, tau))
        s, e = s2, e2
    metrics = RunMetrics(total_reward, total_time, horizon, offered, accepted, occ_time,
                         coerced_n, mode, RNG_NAME, prof_off, prof_acc)
    return RunResult(metrics, traj)


def acceptance_profile(policy, problem: SlicingProblem, horizon: int, rng=None,
                       mode: str = "uniformized", metrics: RunMetrics | None = None) -> dict:
    """Empirical P(accept | class, headroom) from one long run.

    Headroom is how many more slices of the arriving class fit.  Bins with
    no offered request are absent from the result.
    """
    if metrics is None:
        metrics = run(policy, problem, horizon, rng, mode).metrics
    out = {}
    for c, (off, acc) in enumerate(zip(metrics.profile_offered, metrics.profile_accepted)):
        out[c] = {h: acc[h] / off[h] for h in range(len(off)) if off[h] > 0}
    return out


def sample_occupancy_at(policy, problem: SlicingProblem, t: float, n_paths: int, rng=None,
                        start: int = 0) -> np.ndarray:
    """Occupancy index at time ``t`` of ``n_paths`` independent continuous-time paths.

    Vectorized simulation of the original chain (sojourn rate ``z_s``,
    no uniformization), used as an independent check of transient
    probabilities.
    """
    rng = np.random.default_rng(rng)
    C = problem.n_classes
    rates = np.zeros((problem.n_states, 2 * C))
    rates[:, :C] = problem.arrival_rates
    rates[:, C:] = problem.counts * problem.completion_rates
    cum = np.cumsum(rates, axis=1)
    total = cum[:, -1]
    accept = np.asarray(policy.accept, dtype=bool)
    up, down = problem.up, problem.down
    s = np.full(n_paths, start, dtype=np.int64)
    clock = np.zeros(n_paths)
    alive = np.arange(n_paths)
    while alive.size:
        cur = s[alive]
        clock[alive] += rng.exponential(1.0 / total[cur])
        moving = clock[alive] <= t
        alive = alive[moving]
        cur = cur[moving]
        u = rng.random(alive.size) * total[cur]
        ev = (cum[cur] <= u[:, None]).sum(axis=1)
        ev = np.minimum(ev, 2 * C - 1)
        nxt = cur.copy()
        arr = ev < C
        c_arr = ev[arr]
        ok = accept[cur[arr], c_arr]
        nxt_arr = cur[arr].copy()
        nxt_arr[ok] = up[cur[arr][ok], c_arr[ok]]
        nxt[arr] = nxt_arr
        dep = ~arr
        nxt[dep] = down[cur[dep], ev[dep] - C]
        s[alive] = nxt
    return s


def write_trajectory_csv(path, trajectory, problem: SlicingProblem) -> None:
    """Columns: epoch, n_1..n_C, event_kind, event_class, action, reward, sojourn_hours."""
    C = problem.n_classes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch"] + [f"n_{c + 1}" for c in range(C)]
                   + ["event_kind", "event_class", "action", "reward", "sojourn_hours"])
        for k, (s, e, a, r, _s2, _e2, tau) in enumerate(trajectory):
            ev = Event.from_code(e, C)
            cls = "" if ev.class_id is None else ev.class_id + 1
            w.writerow([k, *problem.states[s], ev.kind.name.lower(), cls, int(a),
                        repr(float(r)), repr(float(tau))])
