"""Small numpy multilayer perceptrons with hand-written backpropagation.

Weights use the row-vector convention ``h = x @ W + b``.  Hidden layers are
rectified; output layers are linear.  Two architectures are supported:

* ``"single"``: one chain of layers ending in one output per action.
* ``"dueling"``: an optional shared chain, then a scalar state-value stream
  and a per-action advantage stream, combined as
  ``Q = V + (G - mean(G))`` (or ``- max(G)`` with ``combiner="max"``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import EventKind, SlicingProblem, SmdpState

Layer = tuple  # (W, b)

__all__ = [
    "MlpParams",
    "GradientSet",
    "TrainingDiverged",
    "init_single",
    "init_dueling",
    "forward",
    "forward_cached",
    "backward",
    "sgd_step",
    "encode_features",
    "feature_matrix",
    "save_checkpoint",
    "load_checkpoint",
    "dumps_params",
    "loads_params",
]

CHECKPOINT_FORMAT = "netslice-mlp"
CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    """A gradient or parameter became non-finite."""


@dataclass
class MlpParams:
    kind: str
    trunk: list = field(default_factory=list)
    value: list = field(default_factory=list)
    advantage: list = field(default_factory=list)
    combiner: str = "mean"

    def __post_init__(self):
        if self.kind not in ("single", "dueling"):
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.combiner not in ("mean", "max"):
            raise ValueError(f"unknown combiner {self.combiner!r}")
        if self.kind == "single" and (self.value or self.advantage or not self.trunk):
            raise ValueError("single-head nets keep all layers in the trunk")
        if self.kind == "dueling" and not (self.value and self.advantage):
            raise ValueError("dueling nets need both streams")
        for group in self.groups().values():
            for (W1, b1), (W2, _) in zip(group, group[1:]):
                if W1.shape[1] != W2.shape[0] or b1.shape != (W1.shape[1],):
                    raise ValueError("layer dimensions do not chain")
        if self.kind == "dueling":
            width = self.trunk[-1][0].shape[1] if self.trunk else None
            for stream in (self.value, self.advantage):
                if width is not None and stream[0][0].shape[0] != width:
                    raise ValueError("stream input does not match trunk output")
            if self.value[-1][0].shape[1] != 1:
                raise ValueError("value stream must end in one unit")

    def groups(self) -> dict:
        return {"trunk": self.trunk, "value": self.value, "advantage": self.advantage}

    def arrays(self) -> list:
        out = []
        for group in self.groups().values():
            for W, b in group:
                out += [W, b]
        return out

    def map(self, fn) -> "MlpParams":
        def each(group):
            return [(fn(W), fn(b)) for W, b in group]

        return MlpParams(self.kind, each(self.trunk), each(self.value), each(self.advantage),
                         self.combiner)

    def copy(self) -> "MlpParams":
        return self.map(np.array)

    @property
    def n_inputs(self) -> int:
        first = self.trunk or self.value
        return first[0][0].shape[0]

    @property
    def n_actions(self) -> int:
        last = self.trunk if self.kind == "single" else self.advantage
        return last[-1][0].shape[1]


# Gradients share the parameter layout.
GradientSet = MlpParams


def _layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    bound = 1.0 / np.sqrt(fan_in)
    return (rng.uniform(-bound, bound, size=(fan_in, fan_out)),
            rng.uniform(-bound, bound, size=fan_out))


def _chain(rng, sizes: Sequence[int]) -> list:
    return [_layer(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]


def init_single(n_inputs: int, n_actions: int, hidden: Sequence[int] = (64, 64),
                rng: np.random.Generator | None = None) -> MlpParams:
    rng = np.random.default_rng(rng)
    return MlpParams("single", _chain(rng, [n_inputs, *hidden, n_actions]))


def init_dueling(n_inputs: int, n_actions: int, stream_hidden: Sequence[int] = (64,),
                 shared: Sequence[int] = (), rng: np.random.Generator | None = None,
                 combiner: str = "mean") -> MlpParams:
    rng = np.random.default_rng(rng)
    trunk = _chain(rng, [n_inputs, *shared]) if shared else []
    width = shared[-1] if shared else n_inputs
    value = _chain(rng, [width, *stream_hidden, 1])
    advantage = _chain(rng, [width, *stream_hidden, n_actions])
    return MlpParams("dueling", trunk, value, advantage, combiner)


def _run_chain(layers, h, relu_last: bool, acts: list):
    for i, (W, b) in enumerate(layers):
        acts.append(h)
        h = h @ W + b
        if relu_last or i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def forward_cached(params: MlpParams, features):
    """Forward pass returning ``(Q, cache)``; ``features`` is ``(d,)`` or ``(B, d)``."""
    X = np.asarray(features, dtype=float)
    single_row = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != params.n_inputs:
        raise ValueError(f"expected {params.n_inputs} features, got {X.shape[1]}")
    cache = {"single_row": single_row, "trunk": [], "value": [], "advantage": []}
    if params.kind == "single":
        Q = _run_chain(params.trunk, X, False, cache["trunk"])
    else:
        h = _run_chain(params.trunk, X, True, cache["trunk"]) if params.trunk else X
        cache["shared"] = h
        V = _run_chain(params.value, h, False, cache["value"])
        G = _run_chain(params.advantage, h, False, cache["advantage"])
        if params.combiner == "mean":
            Q = V + (G - G.mean(axis=1, keepdims=True))
        else:
            k = G.argmax(axis=1)
            cache["argmax"] = k
            Q = V + (G - G[np.arange(len(G)), k][:, None])
        cache["V"], cache["G"] = V, G
    return (Q[0] if single_row else Q), cache


def forward(params: MlpParams, features) -> np.ndarray:
    return forward_cached(params, features)[0]


def _back_chain(layers, acts, delta):
    """Backpropagate ``delta``, the gradient at the last pre-activation.

    Returns per-layer ``(dW, db)`` and the gradient at the chain input.
    """
    grads = [None] * len(layers)
    for i in reversed(range(len(layers))):
        W, _ = layers[i]
        a_in = acts[i]
        grads[i] = (a_in.T @ delta, delta.sum(axis=0))
        delta = delta @ W.T
        if i > 0:
            # a_in is the rectified output of layer i - 1
            delta = delta * (a_in > 0)
    return grads, delta


def backward(params: MlpParams, features, grad_out, cache=None) -> GradientSet:
    """Gradient of ``sum(grad_out * Q)`` with respect to every parameter.

    ``grad_out`` has the shape of the forward output.  For a batch the
    per-row contributions are summed, so pass ``dL/dQ`` of the batch loss.
    """
    if cache is None:
        _, cache = forward_cached(params, features)
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    if params.kind == "single":
        tg, _ = _back_chain(params.trunk, cache["trunk"], g)
        return GradientSet("single", tg, [], [], params.combiner)
    n_act = g.shape[1]
    dV = g.sum(axis=1, keepdims=True)
    if params.combiner == "mean":
        dG = g - g.sum(axis=1, keepdims=True) / n_act
    else:
        dG = g.copy()
        dG[np.arange(len(g)), cache["argmax"]] -= g.sum(axis=1)
    vg, dh_v = _back_chain(params.value, cache["value"], dV)
    ag, dh_a = _back_chain(params.advantage, cache["advantage"], dG)
    tg = []
    if params.trunk:
        dh = (dh_v + dh_a) * (cache["shared"] > 0)
        tg, _ = _back_chain(params.trunk, cache["trunk"], dh)
    return GradientSet("dueling", tg, vg, ag, params.combiner)


def sgd_step(params: MlpParams, grads: Sequence[GradientSet], learning_rate: float) -> MlpParams:
    """Plain SGD on the average of ``grads``; returns new parameters."""
    if not grads:
        raise ValueError("need at least one gradient set")
    mean = [sum(parts) / len(grads) for parts in zip(*(g.arrays() for g in grads))]
    for arr in mean:
        if not np.all(np.isfinite(arr)):
            raise TrainingDiverged("non-finite gradient")
    it = iter(mean)
    return params.map(lambda p: p - learning_rate * next(it))


def sgd_step_inplace(params: MlpParams, grad: GradientSet, learning_rate: float) -> None:
    """Single-gradient SGD that updates ``params`` arrays in place (training hot path)."""
    for p, g in zip(params.arrays(), grad.arrays()):
        p -= learning_rate * g
    if not np.isfinite(params.arrays()[-2]).all():
        raise TrainingDiverged("non-finite parameters after update")


# -- features ---------------------------------------------------------------

def encode_features(state: SmdpState, problem: SlicingProblem, encoding: str = "onehot"):
    """Normalized resource usage followed by the event trigger.

    ``"onehot"`` gives ``3 + C`` entries (all-zero block unless an arrival);
    ``"index"`` gives 4 entries with the arriving class as ``(c + 1) / C``.
    """
    used = np.asarray(state.occupancy, dtype=float) @ problem.demands
    frac = used / np.array(problem.capacity.as_tuple(), dtype=float)
    C = problem.n_classes
    if encoding == "onehot":
        trig = np.zeros(C)
        if state.event.kind == EventKind.ARRIVAL:
            trig[state.event.class_id] = 1.0
    elif encoding == "index":
        trig = np.zeros(1)
        if state.event.kind == EventKind.ARRIVAL:
            trig[0] = (state.event.class_id + 1) / C
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    return np.concatenate([frac, trig])


def feature_matrix(problem: SlicingProblem, encoding: str = "onehot") -> np.ndarray:
    """Features of every flattened decision state, shape ``(S * (2C+1), d)``."""
    frac = problem.used / np.array(problem.capacity.as_tuple(), dtype=float)
    C, E = problem.n_classes, problem.n_events
    if encoding == "onehot":
        trig = np.zeros((E, C))
        trig[np.arange(C), np.arange(C)] = 1.0
    elif encoding == "index":
        trig = np.zeros((E, 1))
        trig[:C, 0] = (np.arange(C) + 1) / C
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    S = problem.n_states
    # rows for impossible departures are included so indices line up
    return np.hstack([np.repeat(frac, E, axis=0), np.tile(trig, (S, 1))])


# -- checkpoints ------------------------------------------------------------

def _layer_json(W, b):
    return {
        "shape": list(W.shape),
        "weights": [repr(float(v)) for v in W.ravel()],
        "bias": [repr(float(v)) for v in b],
    }


def dumps_params(params: MlpParams) -> str:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": params.kind,
        "combiner": params.combiner,
        "groups": {name: [_layer_json(W, b) for W, b in group]
                   for name, group in params.groups().items()},
    }
    return json.dumps(doc, indent=1)


def loads_params(text: str) -> MlpParams:
    doc = json.loads(text)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a network checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")

    def group(items):
        out = []
        for it in items:
            W = np.array([float(v) for v in it["weights"]]).reshape(it["shape"])
            b = np.array([float(v) for v in it["bias"]])
            out.append((W, b))
        return out

    g = doc["groups"]
    return MlpParams(doc["kind"], group(g["trunk"]), group(g["value"]),
                     group(g["advantage"]), doc["combiner"])


def save_checkpoint(params: MlpParams, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_params(params))


def load_checkpoint(path) -> MlpParams:
    with open(path) as fh:
        return loads_params(fh.read())
