"""Acceptance criteria, one test each, at their stated tolerances.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary.  Running this file directly prints the same lines without pytest:

    python3 tests/test_acceptance.py
"""
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from netslice import agents, nn  # noqa: E402
from netslice.config import preset  # noqa: E402
from netslice.markov import (  # noqa: E402
    PolicyTable,
    build_embedded_chain,
    policy_average_reward,
    solve_optimal,
    transient_distribution,
)
from netslice.sim import acceptance_profile, run, sample_occupancy_at  # noqa: E402

from nn_helpers import max_fd_error, random_net  # noqa: E402

RESULTS = []


def report(number, title, ok, detail):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


def small_problem(r3=4.0):
    return preset("small").with_reward(2, r3).problem()


def test_c01_uniformization_exact():
    prob = small_problem()
    pol = PolicyTable.greedy(prob)
    t0 = time.perf_counter()
    exact = transient_distribution(build_embedded_chain(pol), 0, 0.1)
    final = sample_occupancy_at(pol, prob, 0.1, 1_000_000, np.random.default_rng(2024))
    emp = np.bincount(final, minlength=prob.n_states) / len(final)
    tv = 0.5 * np.abs(exact - emp).sum()
    report(1, "uniformized transient vs continuous-time paths", tv < 0.01,
           f"TV = {tv:.5f} (< 0.01), {time.perf_counter() - t0:.1f}s")


def test_c02_average_reward_consistency():
    prob = small_problem()
    pol = PolicyTable.greedy(prob)
    exact = policy_average_reward(pol)
    est = run(pol, prob, 1_000_000, np.random.default_rng(7)).metrics.average_reward
    rel = abs(est - exact) / exact
    report(2, "greedy exact gain vs 1e6 uniformized epochs", rel < 0.01,
           f"exact {exact:.4f}, simulated {est:.4f}, rel err {rel:.4%} (< 1%)")


def test_c03_optimality_dominance():
    prob = small_problem()
    gain = solve_optimal(prob).gain
    rng = np.random.default_rng(3)
    policies = [PolicyTable.greedy(prob), PolicyTable.reject_all(prob)]
    policies += [PolicyTable.random(prob, rng) for _ in range(50)]
    values = [policy_average_reward(p) for p in policies]
    worst = min(gain - v for v in values)
    report(3, "optimal gain dominates greedy, reject-all, 50 random", worst >= -1e-9 * gain,
           f"optimal {gain:.4f}, best other {max(values):.4f}, min margin {worst:.3g}")


def test_c04_tabular_optimality():
    prob = small_problem()
    opt = solve_optimal(prob).gain
    res = agents.train("tabular", prob, agents.default_config("tabular", episodes=1_000_000), 0)
    ratio = policy_average_reward(res.policy()) / opt
    report(4, "tabular Q after 1e6 epochs", ratio >= 0.98, f"{ratio:.4f} of optimal (>= 0.98)")


def test_c05_dueling_convergence():
    prob = small_problem()
    opt = solve_optimal(prob).gain
    cfg = agents.default_config("dueling", episodes=20_000)
    ratios = [policy_average_reward(agents.train("dueling", prob, cfg, s).policy()) / opt
              for s in range(5)]
    mean = float(np.mean(ratios))
    report(5, "dueling at 20k episodes, 5 seeds", mean >= 0.95,
           f"mean {mean:.4f} of optimal (>= 0.95); per seed {np.round(ratios, 4).tolist()}")


def test_c06_algorithm_ordering():
    prob = preset("medium").problem()
    greedy = policy_average_reward(PolicyTable.greedy(prob))
    means = {}
    for kind in ("double", "dueling"):
        cfg = agents.default_config(kind, episodes=20_000)
        means[kind] = float(np.mean([policy_average_reward(agents.train(kind, prob, cfg, s).policy())
                                     for s in range(5)]))
    ok = means["dueling"] >= means["double"] > greedy and means["dueling"] > greedy
    report(6, "medium preset ordering dueling >= double > greedy", ok,
           f"dueling {means['dueling']:.4f}, double {means['double']:.4f}, greedy {greedy:.4f}; "
           f"dueling margin over greedy {means['dueling'] / greedy - 1:.1%}")


def test_c07_policy_structure():
    prob = small_problem(6.0)
    sol = solve_optimal(prob)
    near = [s for s in range(prob.n_states) if prob.headroom(s, 0) == 1]
    rejects = not sol.policy.accept[near, 0].any()
    res = agents.train("dueling", prob, agents.default_config("dueling", episodes=20_000), 0)
    prof = acceptance_profile(res.policy(), prob, 200_000, np.random.default_rng(1))
    low = min(h for h in prof[0] if h >= 1)
    p = prof[0][low]
    report(7, "r3 = 6: class-1 rejected near saturation", rejects and p < 0.15,
           f"optimal rejects class 1 in all {len(near)} one-slice-from-full states: {rejects}; "
           f"dueling class-1 acceptance at headroom {low}: {p:.3f} (< 0.15)")


def test_c08_greedy_reward_invariance():
    blobs = []
    for r3 in range(1, 7):
        prob = small_problem(float(r3))
        m = run(PolicyTable.greedy(prob), prob, 200_000, np.random.default_rng(8)).metrics
        blobs.append(np.array(m.running_occupancy_mean).tobytes() + np.array(m.accepted).tobytes())
    report(8, "greedy running counts identical for r3 in 1..6", len(set(blobs)) == 1,
           f"{len(set(blobs))} distinct byte strings over 6 reward settings")


def test_c09_gradient_correctness():
    rng = np.random.default_rng(99)
    worst = {}
    for kind in ("single", "dueling-mean"):
        worst[kind] = max(max_fd_error(random_net(kind, rng), rng) for _ in range(100))
    ok = max(worst.values()) < 1e-4
    report(9, "backward vs central differences, 100 nets each", ok,
           f"max relative error single {worst['single']:.2e}, dueling {worst['dueling-mean']:.2e} (< 1e-4)")


def test_c10_dueling_identifiability():
    rng = np.random.default_rng(10)
    worst_mean, worst_shift = 0.0, 0.0
    for _ in range(100):
        p = random_net("dueling-mean", rng)
        X = rng.normal(size=(8, p.n_inputs))
        Q, cache = nn.forward_cached(p, X)
        worst_mean = max(worst_mean, float(np.abs((Q - cache["V"]).mean(axis=1)).max()))
        shifted = p.copy()
        W, b = shifted.advantage[-1]
        shifted.advantage[-1] = (W, b + rng.normal() * 10)
        worst_shift = max(worst_shift, float(np.abs(nn.forward(shifted, X) - Q).max()))
    ok = worst_mean <= 1e-12 and worst_shift <= 1e-12
    report(10, "dueling mean-centred advantage", ok,
           f"max |mean advantage| {worst_mean:.1e}, max shift change {worst_shift:.1e} (<= 1e-12)")


def test_c11_double_q_target():
    const = lambda q: nn.MlpParams("single", [(np.zeros((1, 2)), np.array(q, dtype=float))])  # noqa: E731
    y = agents.double_q_target(const([5.0, 2.0]), const([1.0, 3.0]), [0.0], 1.0, 0.9)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        net = nn.init_single(6, 2, (16, 16), rng)
        X = rng.normal(size=(32, 6))
        r = rng.normal(size=32)
        single = r + 0.9 * nn.forward(net, X).max(axis=1)
        worst = max(worst, float(np.abs(agents.double_q_target(net, net, X, r, 0.9) - single).max()))
    ok = y == 1 + 0.9 * 2 and abs(y - 2.8) < 1e-15 and worst == 0.0
    report(11, "double-Q target", ok,
           f"worked example y = {y!r} (2.8); primary = target max deviation {worst}")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
