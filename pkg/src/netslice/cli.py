"""Command-line entry point: ``netslice {solve,train,simulate,sweep-reward,preset-dump}``.

Every command writes a ``manifest.json`` (config hash, seeds, version)
next to its outputs.  Outputs depend only on the configuration and the
seeds, so re-running a manifest reproduces them byte for byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__, agents
from .config import ConfigError, ExperimentConfig, dumps_config, load_config, parse_config, preset
from .markov import (
    ConvergenceError,
    PolicyTable,
    build_embedded_chain,
    limiting_matrix,
    policy_average_reward,
    solve_optimal,
    state_label,
    write_matrix_csv,
)
from .model import StateSpaceTooLarge
from .nn import TrainingDiverged
from .sim import MODES, RNG_NAME, acceptance_profile, run, write_trajectory_csv

log = logging.getLogger("netslice")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SWEEP_AGENTS = ("greedy", "tabular", "dueling")


# -- shared plumbing --------------------------------------------------------

def _seed_list(text: str) -> tuple:
    try:
        seeds = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError("seeds must be nonnegative integers")
    return seeds


def _float_list(text: str) -> tuple:
    try:
        vals = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _resolve(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    cfg = load_config(args.config) if args.config else preset(args.preset or "small")
    kw = {}
    if args.seed is not None:
        kw["seeds"] = args.seed
    if args.out is not None:
        kw["out"] = args.out
    if args.mode is not None:
        kw["mode"] = args.mode
    if getattr(args, "agent", None):
        kw["agent"] = args.agent
    if getattr(args, "horizon", None) is not None:
        kw["horizon"] = args.horizon
    if getattr(args, "r3", None) is not None:
        kw["r3_values"] = args.r3
    train = dict(cfg.train)
    if args.episodes is not None:
        train["episodes"] = args.episodes
    cfg = replace(cfg, train=train, **kw)
    # round-trip through the text form so file and flag configs validate alike
    return replace(parse_config(dumps_config(cfg)), out=cfg.out)


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_manifest(out: str, command: str, cfg: ExperimentConfig, **extra) -> None:
    doc = {
        "command": command,
        "config": dumps_config(cfg, include_out=False),
        "config_sha256": cfg.digest(),
        "seeds": list(cfg.seeds),
        "rng": RNG_NAME,
        "version": __version__,
    }
    doc.update(extra)
    _write_json(os.path.join(out, "manifest.json"), doc)


def _num(v) -> str:
    return repr(float(v))


def _eval_seed(seed: int) -> np.random.SeedSequence:
    # third child: training already uses the first two for env and agent
    return np.random.SeedSequence(seed).spawn(3)[2]


def _mean_stderr(values):
    a = np.asarray(values, dtype=float)
    se = float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0
    return float(a.mean()), se


def _map(fn, jobs: int, items: list) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


# -- solve ------------------------------------------------------------------

def write_policy_csv(path, policy: PolicyTable) -> None:
    """One row per (occupancy, arriving class): state label, class (1-based), action."""
    prob = policy.problem
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state", "arriving_class", "action"])
        for s, occ in enumerate(prob.states):
            for c in range(prob.n_classes):
                w.writerow([state_label(occ), c + 1, int(policy.accept[s, c])])


def cmd_solve(cfg: ExperimentConfig, matrices: bool = False) -> dict:
    problem = cfg.problem()
    sol = solve_optimal(problem)
    greedy = policy_average_reward(PolicyTable.greedy(problem))
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    write_policy_csv(os.path.join(out, "policy.csv"), sol.policy)
    doc = {
        "gain": sol.gain,
        "greedy_gain": greedy,
        "residual_span": sol.residual_span,
        "iterations": sol.iterations,
        "n_states": problem.n_states,
        "uniform_rate": problem.uniform_rate,
    }
    _write_json(os.path.join(out, "gain.json"), doc)
    if matrices:
        chain = build_embedded_chain(sol.policy)
        labels = [state_label(o) for o in problem.states]
        write_matrix_csv(os.path.join(out, "one_step.csv"), chain.one_step, labels)
        write_matrix_csv(os.path.join(out, "limiting.csv"), limiting_matrix(chain.one_step), labels)
    _write_manifest(out, "solve", cfg)
    return doc


# -- train ------------------------------------------------------------------

def _train_one(cfg_text: str, kind: str, seed: int, mode: str):
    cfg = parse_config(cfg_text)
    problem = cfg.problem()
    return agents.train(kind, problem, cfg.train_config(kind), seed, mode)


def _write_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "avg_reward", "window_reward", "epsilon", "loss"])
        for ep, avg, win, eps, loss in curve.rows():
            w.writerow([ep, _num(avg), _num(win), _num(eps), _num(loss)])


def cmd_train(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    kind = cfg.agent
    if kind not in agents.AGENT_KINDS:
        raise ConfigError(f"train needs a learning agent {agents.AGENT_KINDS}, got {kind!r}")
    problem = cfg.problem()
    text = dumps_config(cfg)
    results = _map(_train_one, jobs, [(text, kind, s, cfg.mode) for s in cfg.seeds])
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    optimal = solve_optimal(problem).gain
    per_seed = []
    for seed, res in zip(cfg.seeds, results):
        _write_curve(os.path.join(out, f"curve_seed{seed}.csv"), res.curve)
        agents.save_agent(res, os.path.join(out, f"checkpoint_seed{seed}.json"), seed,
                          config_sha256=cfg.digest(), mode=cfg.mode, version=__version__)
        gain = policy_average_reward(res.policy())
        per_seed.append({
            "seed": seed,
            "policy_gain": gain,
            "ratio_to_optimal": gain / optimal if optimal > 0 else float("nan"),
            "final_avg_reward": res.curve.avg_reward[-1] if res.curve.avg_reward else 0.0,
            "coerced": res.coerced,
        })
    # aggregate learning curves across seeds
    curves = [r.curve for r in results]
    with open(os.path.join(out, "curve_mean.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "mean_avg_reward", "stderr_avg_reward",
                    "mean_window_reward", "stderr_window_reward"])
        for i, ep in enumerate(curves[0].episode):
            m, se = _mean_stderr([c.avg_reward[i] for c in curves])
            mw, sew = _mean_stderr([c.window_reward[i] for c in curves])
            w.writerow([ep, _num(m), _num(se), _num(mw), _num(sew)])
    mean, se = _mean_stderr([p["policy_gain"] for p in per_seed])
    doc = {"agent": kind, "optimal_gain": optimal, "mean_policy_gain": mean,
           "stderr_policy_gain": se, "seeds": per_seed}
    _write_json(os.path.join(out, "summary.json"), doc)
    _write_manifest(out, "train", cfg, agent=kind)
    return doc


# -- simulate ---------------------------------------------------------------

def _named_policy(name: str, problem) -> PolicyTable:
    if name == "greedy":
        return PolicyTable.greedy(problem)
    if name == "reject":
        return PolicyTable.reject_all(problem)
    if name == "optimal":
        return solve_optimal(problem).policy
    raise ConfigError(f"unknown policy {name!r}; use greedy, reject, optimal or --checkpoint")


def cmd_simulate(cfg: ExperimentConfig, policy: str = "greedy", checkpoint: str | None = None) -> dict:
    problem = cfg.problem()
    if checkpoint:
        try:
            pol = agents.load_agent(checkpoint, problem).policy()
        except agents.CheckpointMismatch as exc:
            raise ConfigError(f"checkpoint/manifest mismatch: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot load checkpoint: {exc}") from None
        source = os.path.basename(checkpoint)
    else:
        pol = _named_policy(policy, problem)
        source = policy
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    summary = {}
    for seed in cfg.seeds:
        res = run(pol, problem, cfg.horizon, np.random.default_rng(seed), cfg.mode,
                  record=cfg.trajectory_limit)
        with open(os.path.join(out, f"metrics_seed{seed}.json"), "w") as fh:
            fh.write(res.metrics.to_json() + "\n")
        write_trajectory_csv(os.path.join(out, f"trajectory_seed{seed}.csv"), res.trajectory, problem)
        summary[seed] = res.metrics.average_reward
    _write_manifest(out, "simulate", cfg, policy=source)
    return summary


# -- sweep-reward -----------------------------------------------------------

def _sweep_one(cfg_text: str, kind: str, seed: int):
    """Train (if needed) and evaluate one agent; returns a row dict and the acceptance profile."""
    cfg = parse_config(cfg_text)
    problem = cfg.problem()
    if kind == "greedy":
        pol = PolicyTable.greedy(problem)
    else:
        pol = agents.train(kind, problem, cfg.train_config(kind), seed, cfg.mode).policy()
    res = run(pol, problem, cfg.horizon, np.random.default_rng(_eval_seed(seed)), cfg.mode)
    m = res.metrics
    row = {
        "avg_reward": m.average_reward,
        "exact_gain": policy_average_reward(pol),
        "occupancy": m.running_occupancy_mean,
        "acceptance": [a / o if o else 0.0 for a, o in zip(m.accepted, m.offered)],
    }
    profile = [(c, h, m.profile_offered[c][h], m.profile_accepted[c][h])
               for c in range(problem.n_classes) for h in range(len(m.profile_offered[c]))
               if m.profile_offered[c][h]]
    return row, profile


def cmd_sweep_reward(cfg: ExperimentConfig, kinds=SWEEP_AGENTS, jobs: int = 1) -> list:
    if not cfg.r3_values:
        raise ConfigError("r3 values must be nonempty")
    if len(cfg.classes) < 3:
        raise ConfigError("reward sweep varies class 3 and needs at least three classes")
    for k in kinds:
        if k not in ("greedy",) + agents.AGENT_KINDS:
            raise ConfigError(f"unknown sweep agent {k!r}")
    cfg.problem()  # fail early on oversized state spaces
    jobs_list, keys = [], []
    for r3 in cfg.r3_values:
        text = dumps_config(cfg.with_reward(2, r3))
        for kind in kinds:
            for seed in cfg.seeds:
                jobs_list.append((text, kind, seed))
                keys.append((r3, kind, seed))
    results = _map(_sweep_one, jobs, jobs_list)
    C = len(cfg.classes)
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r3", "agent", "seed", "avg_reward", "exact_gain"]
                   + [f"n_{c + 1}" for c in range(C)] + [f"accept_{c + 1}" for c in range(C)])
        for (r3, kind, seed), (row, _) in zip(keys, results):
            w.writerow([_num(r3), kind, seed, _num(row["avg_reward"]), _num(row["exact_gain"])]
                       + [_num(v) for v in row["occupancy"]] + [_num(v) for v in row["acceptance"]])
    with open(os.path.join(out, "profile.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r3", "agent", "seed", "class", "headroom", "offered", "accepted", "p_accept"])
        for (r3, kind, seed), (_, prof) in zip(keys, results):
            for c, h, off, acc in prof:
                w.writerow([_num(r3), kind, seed, c + 1, h, off, acc, _num(acc / off)])
    _write_manifest(out, "sweep-reward", cfg, agents=list(kinds))
    return [dict(r3=k[0], agent=k[1], seed=k[2], **r[0]) for k, r in zip(keys, results)]


# -- preset-dump ------------------------------------------------------------

def cmd_preset_dump(cfg: ExperimentConfig, to_dir: bool) -> str:
    text = dumps_config(cfg, include_out=False)
    if to_dir:
        os.makedirs(cfg.out, exist_ok=True)
        with open(os.path.join(cfg.out, f"{cfg.scenario}.cfg"), "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(cfg.out, "preset-dump", cfg)
    return text


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key-value config file")
    common.add_argument("--preset", metavar="NAME", help="small, medium or large (default small)")
    common.add_argument("--seed", type=_seed_list, metavar="N[,N...]", help="seed or seed list")
    common.add_argument("--episodes", type=int, metavar="N", help="training episodes (epochs)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--mode", choices=MODES, help="simulator time model")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes for seed fan-out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="netslice", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"netslice {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="exact optimal policy and gain")
    s.add_argument("--matrices", action="store_true", help="also write one-step and limiting matrices")

    t = sub.add_parser("train", parents=[common], help="train a learning agent per seed")
    t.add_argument("--agent", choices=agents.AGENT_KINDS)

    m = sub.add_parser("simulate", parents=[common], help="evaluate a fixed policy by simulation")
    m.add_argument("--policy", default="greedy", help="greedy, reject or optimal")
    m.add_argument("--checkpoint", metavar="PATH", help="trained agent checkpoint or manifest")
    m.add_argument("--horizon", type=int, metavar="N", help="epochs per run")

    w = sub.add_parser("sweep-reward", parents=[common], help="vary the class-3 reward")
    w.add_argument("--r3", type=_float_list, metavar="R[,R...]")
    w.add_argument("--agents", default=",".join(SWEEP_AGENTS), help="comma-separated agent kinds")
    w.add_argument("--horizon", type=int, metavar="N", help="evaluation epochs per run")

    sub.add_parser("preset-dump", parents=[common], help="print a preset in config-file form")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        to_dir = args.out is not None
        cfg = _resolve(args)
        if args.command == "solve":
            doc = cmd_solve(cfg, args.matrices)
            print(f"gain {doc['gain']:.6f}  greedy {doc['greedy_gain']:.6f}")
        elif args.command == "train":
            doc = cmd_train(cfg, args.jobs)
            print(f"{doc['agent']}: mean policy gain {doc['mean_policy_gain']:.6f} "
                  f"(optimal {doc['optimal_gain']:.6f})")
        elif args.command == "simulate":
            for seed, avg in cmd_simulate(cfg, args.policy, args.checkpoint).items():
                print(f"seed {seed}: average reward {avg:.6f}")
        elif args.command == "sweep-reward":
            kinds = tuple(k.strip() for k in args.agents.split(",") if k.strip())
            cmd_sweep_reward(cfg, kinds, args.jobs)
            print(f"wrote {os.path.join(cfg.out, 'sweep.csv')}")
        elif args.command == "preset-dump":
            sys.stdout.write(cmd_preset_dump(cfg, to_dir))
    except (ConfigError, StateSpaceTooLarge, agents.CheckpointMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
