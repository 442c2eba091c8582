"""Admission agents: greedy, tabular Q-learning, deep double Q and deep dueling.

All learners train online against the uniformized simulator, one
environment step (epoch) per episode, and use a discount ``gamma`` as a
stand-in for the long-run average criterion.  Decision states are the
flattened ``(occupancy, event)`` indices of :class:`SlicingProblem`;
only arrivals offer a real choice, other events take the forced no-op
(action 0).  Actions are ``0 = reject`` and ``1 = accept``.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .markov import PolicyTable
from .model import Action, EventKind, SlicingProblem, SmdpState, fits
from .sim import Simulator

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "ReplayMemory",
    "QTable",
    "LearningCurve",
    "TrainResult",
    "greedy_act",
    "epsilon_greedy",
    "epsilon_at",
    "tabular_alpha",
    "q_update",
    "double_q_target",
    "dueling_target",
    "admissible_mask",
    "train",
    "AGENT_KINDS",
    "default_config",
    "CheckpointMismatch",
    "problem_digest",
    "dumps_qtable",
    "loads_qtable",
    "save_agent",
    "load_agent",
]

AGENT_KINDS = ("tabular", "double", "dueling")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_fraction: float = 0.8
    learning_rate: float = 0.01
    alpha_exponent: float = 0.6
    batch_size: int = 64
    memory_size: int = 10_000
    target_sync: int = 1_000
    episodes: int = 20_000
    hidden: int = 64
    warmup: int | None = None
    store_non_arrivals: bool = True
    double_variant: str = "as_printed"
    combiner: str = "mean"
    encoding: str = "onehot"
    curve_every: int = 100
    window: int = 1_000

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not 0 < self.epsilon_decay_fraction <= 1:
            raise ValueError("epsilon_decay_fraction must be in (0, 1]")
        if self.batch_size < 1 or self.batch_size > self.memory_size:
            raise ValueError("need 1 <= batch_size <= memory_size")
        if self.target_sync < 1:
            raise ValueError("target_sync must be >= 1")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.double_variant not in ("as_printed", "canonical"):
            raise ValueError(f"unknown double-Q variant {self.double_variant!r}")

    @property
    def warmup_steps(self) -> int:
        return self.batch_size if self.warmup is None else self.warmup


def epsilon_at(step: int, cfg: TrainConfig) -> float:
    """Linear decay from start to end over the first fraction of episodes, then flat."""
    horizon = max(1, int(round(cfg.epsilon_decay_fraction * cfg.episodes)))
    frac = min(1.0, step / horizon)
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


def greedy_act(state: SmdpState, specs, cap) -> Action:
    """Accept exactly when the arriving request fits."""
    if state.event.kind != EventKind.ARRIVAL:
        return Action.REJECT
    return Action.ACCEPT if fits(state.occupancy, state.event.class_id, specs, cap) else Action.REJECT


def epsilon_greedy(q_values, epsilon: float, rng: np.random.Generator) -> Action:
    """Uniform random action with probability ``epsilon``, else argmax (ties go to reject)."""
    if not 0 <= epsilon <= 1:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return Action(int(rng.integers(len(q_values))))
    return Action(int(np.argmax(q_values)))


def tabular_alpha(visits, exponent: float = 0.6, ceiling: float = 0.99):
    """Step size ``(1 + visits) ** -exponent``, capped below one."""
    if np.any(np.asarray(visits) < 0):
        raise ValueError("visits must be nonnegative")
    return np.minimum(ceiling, (1.0 + np.asarray(visits, dtype=float)) ** -exponent)


def admissible_mask(problem: SlicingProblem) -> np.ndarray:
    """``(n_decision_states, 2)``: reject always allowed, accept only for fitting arrivals."""
    C, E = problem.n_classes, problem.n_events
    mask = np.zeros((problem.n_states, E, 2), dtype=bool)
    mask[..., 0] = True
    mask[:, :C, 1] = problem.up >= 0
    return mask.reshape(-1, 2)


class ReplayMemory:
    """Fixed-capacity ring buffer of ``(state, action, reward, next_state)`` index tuples."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.state = np.zeros(capacity, dtype=np.int64)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.next_state = np.zeros(capacity, dtype=np.int64)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def push(self, state: int, action: int, reward: float, next_state: int):
        i = self._next
        self.state[i] = state
        self.action[i] = action
        self.reward[i] = reward
        self.next_state[i] = next_state
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty memory")
        return rng.integers(0, self._size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self.sample_indices(batch_size, rng)
        return self.state[idx], self.action[idx], self.reward[idx], self.next_state[idx]

    def contents(self):
        """Stored transitions, oldest first."""
        order = (np.arange(self._size) + (self._next - self._size)) % self.capacity
        return list(zip(self.state[order].tolist(), self.action[order].tolist(),
                        self.reward[order].tolist(), self.next_state[order].tolist()))


class QTable:
    """Dense Q-values over decision states, with per-pair visit counts.

    Non-arrival rows only use column 0 (the forced no-op); inadmissible
    entries are excluded from every max.
    """

    def __init__(self, problem: SlicingProblem):
        self.problem = problem
        self.mask = admissible_mask(problem)
        self.q = np.zeros(self.mask.shape)
        self.visits = np.zeros(self.mask.shape, dtype=np.int64)

    def value(self, x: int) -> float:
        row = self.q[x]
        return row[1] if self.mask[x, 1] and row[1] > row[0] else row[0]

    def __getitem__(self, state: SmdpState) -> np.ndarray:
        return self.q[self.problem.encode(state)]

    def policy(self) -> PolicyTable:
        return policy_from_q(self.problem, self.q)


def q_update(table: QTable, state: int, action: int, reward: float, next_state: int,
             gamma: float, alpha: float) -> QTable:
    """One temporal-difference update of ``Q(state, action)`` in place."""
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")
    td = reward + gamma * table.value(next_state) - table.q[state, action]
    table.q[state, action] += alpha * td
    return table


def _masked_max(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, q, -np.inf).max(axis=1)


def _masked_argmax(q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, q, -np.inf).argmax(axis=1)


def double_q_target(primary: nn.MlpParams, target: nn.MlpParams, next_features, reward,
                    gamma: float, mask=None, variant: str = "as_printed"):
    """Double-Q regression target for a batch (or one transition).

    ``"as_printed"`` picks the next action by the target network and scores
    it with the primary one; ``"canonical"`` swaps the two roles.
    """
    X = np.atleast_2d(next_features)
    q_primary = np.atleast_2d(nn.forward(primary, X))
    q_target = q_primary if target is primary else np.atleast_2d(nn.forward(target, X))
    if mask is None:
        mask = np.ones(q_primary.shape, dtype=bool)
    mask = np.atleast_2d(mask)
    if variant == "as_printed":
        select, evaluate = q_target, q_primary
    elif variant == "canonical":
        select, evaluate = q_primary, q_target
    else:
        raise ValueError(f"unknown double-Q variant {variant!r}")
    a_star = _masked_argmax(select, mask)
    y = np.asarray(reward, dtype=float) + gamma * evaluate[np.arange(len(X)), a_star]
    return y if np.ndim(next_features) > 1 else float(np.ravel(y)[0])


def dueling_target(target: nn.MlpParams, next_features, reward, gamma: float, mask=None):
    """``r + gamma * max_a Q_target(s', a)`` for a batch (or one transition)."""
    X = np.atleast_2d(next_features)
    q = np.atleast_2d(nn.forward(target, X))
    if mask is None:
        mask = np.ones(q.shape, dtype=bool)
    y = np.asarray(reward, dtype=float) + gamma * _masked_max(q, np.atleast_2d(mask))
    return y if np.ndim(next_features) > 1 else float(np.ravel(y)[0])


def policy_from_q(problem: SlicingProblem, q: np.ndarray) -> PolicyTable:
    """Accept where accept is admissible and strictly better than reject."""
    mask = admissible_mask(problem)
    acc = mask[:, 1] & (q[:, 1] > q[:, 0])
    return PolicyTable(problem, acc.reshape(problem.n_states, problem.n_events)[:, :problem.n_classes])


@dataclass
class LearningCurve:
    episode: list = field(default_factory=list)
    avg_reward: list = field(default_factory=list)
    window_reward: list = field(default_factory=list)
    epsilon: list = field(default_factory=list)
    loss: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.episode, self.avg_reward, self.window_reward, self.epsilon, self.loss))


@dataclass
class TrainResult:
    kind: str
    problem: SlicingProblem
    config: TrainConfig
    curve: LearningCurve
    q_table: QTable | None = None
    params: nn.MlpParams | None = None
    coerced: int = 0

    def q_values(self) -> np.ndarray:
        """Q over all decision states, shape ``(n_decision_states, 2)``."""
        if self.q_table is not None:
            return self.q_table.q
        feats = nn.feature_matrix(self.problem, self.config.encoding)
        return nn.forward(self.params, feats)

    def policy(self) -> PolicyTable:
        return policy_from_q(self.problem, self.q_values())


class _CurveTracker:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.curve = LearningCurve()
        self.total_reward = 0.0
        self.total_time = 0.0
        self.win_r = np.zeros(cfg.window)
        self.win_t = np.zeros(cfg.window)
        self.losses = []

    def record(self, step: int, reward: float, tau: float, eps: float, loss):
        self.total_reward += reward
        self.total_time += tau
        k = step % self.cfg.window
        self.win_r[k] = reward
        self.win_t[k] = tau
        if loss is not None:
            self.losses.append(loss)
        if (step + 1) % self.cfg.curve_every == 0 or step + 1 == self.cfg.episodes:
            c = self.curve
            c.episode.append(step + 1)
            c.avg_reward.append(self.total_reward / self.total_time if self.total_time else 0.0)
            wt = self.win_t.sum()
            c.window_reward.append(float(self.win_r.sum() / wt) if wt else 0.0)
            c.epsilon.append(eps)
            c.loss.append(float(np.mean(self.losses)) if self.losses else float("nan"))
            self.losses = []


def _train_tabular(problem, cfg, env, rng, tracker, callback=None):
    table = QTable(problem)
    C = problem.n_classes
    E = problem.n_events
    s, e = env.reset()
    coerced_n = 0
    for step in range(cfg.episodes):
        eps = epsilon_at(step, cfg)
        x = s * E + e
        if e < C:
            a = int(epsilon_greedy(table.q[x], eps, rng))
        else:
            a = 0
        r, s2, e2, tau, coerced = env.step(a)
        if coerced:
            a = 0
            coerced_n += 1
        x2 = s2 * E + e2
        alpha = float(tabular_alpha(table.visits[x, a], cfg.alpha_exponent))
        q_update(table, x, a, r, x2, cfg.gamma, alpha)
        table.visits[x, a] += 1
        tracker.record(step, r, tau, eps, None)
        if callback is not None:
            callback(step, table)
        s, e = s2, e2
    return table, coerced_n


def _init_net(kind, problem, cfg, rng):
    n_in = 3 + (problem.n_classes if cfg.encoding == "onehot" else 1)
    if kind == "double":
        return nn.init_single(n_in, 2, (cfg.hidden, cfg.hidden), rng)
    return nn.init_dueling(n_in, 2, (cfg.hidden,), (), rng, cfg.combiner)


def _train_deep(kind, problem, cfg, env, rng, tracker, params=None, callback=None):
    feats = nn.feature_matrix(problem, cfg.encoding)
    mask = admissible_mask(problem)
    primary = params.copy() if params is not None else _init_net(kind, problem, cfg, rng)
    target = primary.copy()
    memory = ReplayMemory(cfg.memory_size)
    C, E = problem.n_classes, problem.n_events
    B = cfg.batch_size
    rows = np.arange(B)
    s, e = env.reset()
    coerced_n = 0
    for step in range(cfg.episodes):
        eps = epsilon_at(step, cfg)
        x = s * E + e
        if e < C:
            a = int(epsilon_greedy(nn.forward(primary, feats[x]), eps, rng))
        else:
            a = 0
        r, s2, e2, tau, coerced = env.step(a)
        if coerced:
            a = 0
            coerced_n += 1
        x2 = s2 * E + e2
        if e < C or cfg.store_non_arrivals:
            memory.push(x, a, r, x2)
        loss = None
        if len(memory) >= max(cfg.warmup_steps, 1):
            xb, ab, rb, x2b = memory.sample(B, rng)
            if kind == "double":
                y = double_q_target(primary, target, feats[x2b], rb, cfg.gamma, mask[x2b],
                                    cfg.double_variant)
            else:
                y = dueling_target(target, feats[x2b], rb, cfg.gamma, mask[x2b])
            q, cache = nn.forward_cached(primary, feats[xb])
            err = q[rows, ab] - y
            grad_out = np.zeros_like(q)
            grad_out[rows, ab] = 2.0 * err / B
            grads = nn.backward(primary, None, grad_out, cache)
            nn.sgd_step_inplace(primary, grads, cfg.learning_rate)
            loss = float(np.mean(err ** 2))
            if not np.isfinite(loss):
                raise nn.TrainingDiverged(f"loss became non-finite at episode {step + 1}")
        if (step + 1) % cfg.target_sync == 0:
            target = primary.copy()
        tracker.record(step, r, tau, eps, loss)
        if callback is not None:
            callback(step, primary, target, memory)
        s, e = s2, e2
    return primary, coerced_n


def train(kind: str, problem: SlicingProblem, cfg: TrainConfig | None = None, rng=None,
          mode: str = "uniformized", params: nn.MlpParams | None = None,
          callback=None) -> TrainResult:
    """Train one agent for ``cfg.episodes`` environment steps.

    ``rng`` seeds two independent streams: one for the environment, one
    for exploration, replay sampling and weight initialization.
    ``callback`` is called after every step with ``(step, table)`` for the
    tabular agent and ``(step, primary, target, memory)`` for deep agents.
    """
    if kind not in AGENT_KINDS:
        raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
    cfg = cfg or default_config(kind)
    seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    env_seq, agent_seq = seq.spawn(2)
    env = Simulator(problem, np.random.default_rng(env_seq), mode)
    agent_rng = np.random.default_rng(agent_seq)
    tracker = _CurveTracker(cfg)
    if kind == "tabular":
        table, coerced = _train_tabular(problem, cfg, env, agent_rng, tracker, callback)
        result = TrainResult(kind, problem, cfg, tracker.curve, q_table=table, coerced=coerced)
    else:
        net, coerced = _train_deep(kind, problem, cfg, env, agent_rng, tracker, params, callback)
        result = TrainResult(kind, problem, cfg, tracker.curve, params=net, coerced=coerced)
    if coerced:
        log.info("%s agent: %d infeasible accepts coerced to reject", kind, coerced)
    return result


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)


# Tabular Q-learning with polynomial step sizes mixes too slowly at 0.99
# to settle within ~1e6 epochs; 0.95 keeps the same greedy policy here.
_KIND_DEFAULTS = {"tabular": {"gamma": 0.95, "episodes": 1_000_000}}


def default_config(kind: str, **overrides) -> TrainConfig:
    """Per-agent default hyperparameters, with optional overrides."""
    if kind not in AGENT_KINDS:
        raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
    kw = dict(_KIND_DEFAULTS.get(kind, {}))
    kw.update(overrides)
    return TrainConfig(**kw)


# -- checkpoints ------------------------------------------------------------

QTABLE_FORMAT = "netslice-qtable"
QTABLE_VERSION = 1


class CheckpointMismatch(ValueError):
    """Checkpoint, manifest and problem do not belong together."""


def problem_digest(problem: SlicingProblem) -> str:
    """SHA-256 over the slice classes and capacity."""
    doc = {"classes": [asdict(s) for s in problem.specs], "capacity": asdict(problem.capacity)}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def dumps_qtable(table: QTable) -> str:
    doc = {
        "format": QTABLE_FORMAT,
        "version": QTABLE_VERSION,
        "shape": list(table.q.shape),
        "q": [repr(float(v)) for v in table.q.ravel()],
        "visits": table.visits.ravel().tolist(),
    }
    return json.dumps(doc, indent=1)


def loads_qtable(text: str, problem: SlicingProblem) -> QTable:
    doc = json.loads(text)
    if doc.get("format") != QTABLE_FORMAT or doc.get("version") != QTABLE_VERSION:
        raise CheckpointMismatch("not a version-1 Q-table checkpoint")
    table = QTable(problem)
    if tuple(doc["shape"]) != table.q.shape:
        raise CheckpointMismatch(f"Q-table shape {doc['shape']} does not fit {table.q.shape}")
    table.q = np.array([float(v) for v in doc["q"]]).reshape(table.q.shape)
    table.visits = np.array(doc["visits"], dtype=np.int64).reshape(table.q.shape)
    return table


def save_agent(result: TrainResult, path, seed, **extra) -> str:
    """Write ``path`` (weights or Q-table) and ``<path stem>.manifest.json``; returns the manifest path."""
    if result.q_table is not None:
        text = dumps_qtable(result.q_table)
    else:
        text = nn.dumps_params(result.params)
    with open(path, "w") as fh:
        fh.write(text)
    manifest = {
        "agent": result.kind,
        "checkpoint": os.path.basename(path),
        "config": asdict(result.config),
        "problem_sha256": problem_digest(result.problem),
        "seed": seed,
    }
    manifest.update(extra)
    mpath = os.path.splitext(path)[0] + ".manifest.json"
    with open(mpath, "w") as fh:
        fh.write(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return mpath


def _manifest_path(path) -> str:
    if path.endswith(".manifest.json"):
        return path
    return os.path.splitext(path)[0] + ".manifest.json"


def load_agent(path, problem: SlicingProblem) -> TrainResult:
    """Load a checkpoint (or its manifest) written by :func:`save_agent`."""
    mpath = _manifest_path(str(path))
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CheckpointMismatch(f"no manifest next to checkpoint: {mpath}") from None
    if manifest.get("problem_sha256") != problem_digest(problem):
        raise CheckpointMismatch("checkpoint was trained on a different problem configuration")
    kind = manifest.get("agent")
    if kind not in AGENT_KINDS:
        raise CheckpointMismatch(f"manifest names unknown agent {kind!r}")
    cfg = TrainConfig(**manifest["config"])
    ckpt = os.path.join(os.path.dirname(mpath), manifest["checkpoint"])
    with open(ckpt) as fh:
        text = fh.read()
    if kind == "tabular":
        return TrainResult(kind, problem, cfg, LearningCurve(), q_table=loads_qtable(text, problem))
    try:
        params = nn.loads_params(text)
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatch(f"bad network checkpoint: {exc}") from None
    expected = nn.feature_matrix(problem, cfg.encoding).shape[1]
    want = "single" if kind == "double" else "dueling"
    if params.kind != want or params.n_inputs != expected:
        raise CheckpointMismatch("network architecture does not match the manifest")
    return TrainResult(kind, problem, cfg, LearningCurve(), params=params)
