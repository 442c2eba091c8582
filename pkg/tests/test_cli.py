import json
import os

import pytest

from netslice import cli
from netslice.config import ConfigError, dumps_config, parse_config, preset
from netslice.model import StateSpaceTooLarge


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def tree(d):
    return {f: read(os.path.join(d, f)) for f in sorted(os.listdir(d))}


# -- presets and config text ------------------------------------------------

def test_presets():
    s = preset("small")
    assert s.capacity.radio == 400
    assert s.problem().n_states == 35
    assert preset("large").classes[0].arrival_rate == 48.0
    m = preset("medium")
    assert [c.arrival_rate for c in m.classes] == [48.0, 32.0, 40.0]
    assert m.capacity.as_tuple() == (1000, 20, 10)
    assert {c.completion_rate for c in m.classes} == {2.0}
    with pytest.raises(ConfigError):
        preset("huge")


@pytest.mark.parametrize("name", ["small", "medium", "large"])
def test_config_round_trip(name):
    cfg = preset(name)
    back = parse_config(dumps_config(cfg))
    assert back == cfg
    assert back.digest() == cfg.digest()


def test_parse_overrides_and_base_preset():
    cfg = parse_config("run.preset = small\nclass3.reward = 6\ntrain.episodes = 123\nrun.seeds = 1,2\n")
    assert cfg.classes[2].reward == 6.0
    assert cfg.train == {"episodes": 123}
    assert cfg.seeds == (1, 2)
    assert cfg.train_config("tabular").episodes == 123


@pytest.mark.parametrize("text", [
    "capacity.radio = 400",                             # incomplete
    "run.preset = small\nclass1.arrival_rate = -1",     # violates model invariant
    "run.preset = small\ncapacity.compute = 0",
    "run.preset = small\nfoo.bar = 1",
    "run.preset = small\nrun.mode = discrete",
    "run.preset = small\ntrain.gamma = 1.5",
    "run.preset = small\ntrain.batch_size = many",
    "run.preset = small\nclass5.reward = 1",
    "run.preset = small\nagent.kind = sarsa",
    "run.preset = small\nnonsense line",
    "run.preset = small\nrun.seeds = 1\nrun.seeds = 2",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_comments_and_blank_lines():
    cfg = parse_config("# hi\n\nrun.preset = medium   # trailing\n")
    assert cfg.scenario == "medium"


def test_state_ceiling_is_enforced():
    cfg = parse_config("run.preset = large\nrun.max_states = 100\n")
    with pytest.raises(StateSpaceTooLarge):
        cfg.problem()


# -- commands ---------------------------------------------------------------

def test_solve(tmp_path):
    out = tmp_path / "solve"
    assert cli.main(["solve", "--preset", "small", "--out", str(out), "--matrices"]) == 0
    gain = json.loads((out / "gain.json").read_text())
    assert gain["gain"] >= gain["greedy_gain"]
    assert gain["gain"] == pytest.approx(31.2087912, rel=1e-7)
    rows = (out / "policy.csv").read_text().splitlines()
    assert rows[0] == "state,arriving_class,action" and len(rows) == 1 + 35 * 3
    man = json.loads((out / "manifest.json").read_text())
    assert set(man) >= {"config_sha256", "seeds", "version"}
    assert (out / "one_step.csv").exists() and (out / "limiting.csv").exists()


def test_solve_accepts_all_when_rewards_equal_and_capacity_heavy(tmp_path):
    text = dumps_config(preset("small"))
    for c in (1, 2, 3):
        text = text.replace(f"class{c}.reward = {float([1, 2, 4][c - 1])!r}", f"class{c}.reward = 4.0")
    text = text.replace("capacity.radio = 400", "capacity.radio = 2000")
    text = text.replace("capacity.compute = 8", "capacity.compute = 40")
    text = text.replace("capacity.storage = 4", "capacity.storage = 20")
    path = tmp_path / "heavy.cfg"
    path.write_text(text)
    out = tmp_path / "o"
    assert cli.main(["solve", "--config", str(path), "--out", str(out)]) == 0
    rows = [r.split(",") for r in (out / "policy.csv").read_text().splitlines()[1:]]
    cfg = parse_config(text)
    prob = cfg.problem()
    for (label, c, a) in rows:
        occ = tuple(int(v) for v in label.strip("()").split())
        assert int(a) == int(prob.up[prob.index[occ], int(c) - 1] >= 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path):
    assert cli.main(["solve", "--preset", "nope", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("run.preset = small\nclass1.completion_rate = 0\n")
    assert cli.main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 2
    big = tmp_path / "big.cfg"
    big.write_text("run.preset = large\nrun.max_states = 50\n")
    assert cli.main(["solve", "--config", str(big), "--out", str(tmp_path)]) == 2
    assert cli.main(["solve", "--config", str(bad), "--preset", "small"]) == 2
    diverge = tmp_path / "div.cfg"
    diverge.write_text("run.preset = small\ntrain.learning_rate = 80\ntrain.batch_size = 8\n")
    assert cli.main(["train", "--config", str(diverge), "--episodes", "3000",
                     "--out", str(tmp_path / "d")]) == 3
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve", "--mode", "discrete"])
    assert exc.value.code == 2


def test_train_outputs_and_determinism(tmp_path):
    args = ["train", "--preset", "small", "--agent", "dueling", "--episodes", "600", "--seed", "0,1"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert tree(a) == tree(b)
    files = set(os.listdir(a))
    assert {"curve_seed0.csv", "curve_seed1.csv", "curve_mean.csv", "checkpoint_seed0.json",
            "checkpoint_seed0.manifest.json", "summary.json", "manifest.json"} <= files
    header = (a / "curve_seed0.csv").read_text().splitlines()[0]
    assert header == "episode,avg_reward,window_reward,epsilon,loss"
    man = json.loads((a / "checkpoint_seed1.manifest.json").read_text())
    assert man["agent"] == "dueling" and man["seed"] == 1 and man["config"]["episodes"] == 600


def test_train_parallel_matches_serial(tmp_path):
    args = ["train", "--preset", "small", "--agent", "tabular", "--episodes", "3000", "--seed", "0,1"]
    assert cli.main(args + ["--out", str(tmp_path / "s")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    assert tree(tmp_path / "s") == tree(tmp_path / "p")


def _train_summary(tmp_path, kind, episodes, seeds="0,1,2"):
    out = tmp_path / f"{kind}{episodes}"
    assert cli.main(["train", "--agent", kind, "--episodes", str(episodes), "--seed", seeds,
                     "--out", str(out)]) == 0
    return json.loads((out / "summary.json").read_text())


def test_tabular_2k_visibly_below_dueling_plateau(tmp_path):
    tab = _train_summary(tmp_path, "tabular", 2000)
    duel = _train_summary(tmp_path, "dueling", 20000, "0")
    assert duel["mean_policy_gain"] >= 0.95 * duel["optimal_gain"]
    assert tab["mean_policy_gain"] < 0.95 * duel["mean_policy_gain"]
    final = [s["final_avg_reward"] for s in tab["seeds"]]
    assert max(final) < 0.95 * duel["optimal_gain"]


@pytest.mark.xfail(strict=True, reason="at 2k epochs the dueling target net has synced twice and "
                                       "its policy is still the greedy baseline")
def test_tabular_2k_below_dueling_2k(tmp_path):
    tab = _train_summary(tmp_path, "tabular", 2000)
    duel = _train_summary(tmp_path, "dueling", 2000)
    assert tab["mean_policy_gain"] < duel["mean_policy_gain"]


def test_train_rejects_fixed_policies(tmp_path):
    cfg = tmp_path / "g.cfg"
    cfg.write_text("run.preset = small\nagent.kind = greedy\n")
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_simulate_named_and_checkpoint(tmp_path):
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--policy", "reject", "--horizon", "5000", "--out", str(out)]) == 0
    m = json.loads((out / "metrics_seed0.json").read_text())
    assert m["average_reward"] == 0.0
    lines = (out / "trajectory_seed0.csv").read_text().splitlines()
    assert lines[0].startswith("epoch,n_1,n_2,n_3,event_kind")
    assert len(lines) == 5001

    tr = tmp_path / "tr"
    assert cli.main(["train", "--agent", "double", "--episodes", "300", "--out", str(tr)]) == 0
    ck = str(tr / "checkpoint_seed0.json")
    assert cli.main(["simulate", "--checkpoint", ck, "--horizon", "2000", "--out", str(tmp_path / "s2")]) == 0
    assert cli.main(["simulate", "--preset", "medium", "--checkpoint", ck,
                     "--out", str(tmp_path / "s3")]) == 2
    assert cli.main(["simulate", "--policy", "magic", "--out", str(tmp_path / "s4")]) == 2


def test_simulate_optimal_beats_greedy(tmp_path):
    avg = {}
    for pol in ("optimal", "greedy"):
        out = tmp_path / pol
        assert cli.main(["simulate", "--policy", pol, "--horizon", "200000", "--out", str(out)]) == 0
        avg[pol] = json.loads((out / "metrics_seed0.json").read_text())["average_reward"]
    assert avg["optimal"] >= avg["greedy"]
    assert avg["optimal"] == pytest.approx(31.2088, rel=0.02)


def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--policy", "greedy", "--horizon", "3000", "--seed", "4", "--mode", "continuous"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_sweep_reward(tmp_path):
    out = tmp_path / "sw"
    assert cli.main(["sweep-reward", "--agents", "greedy,dueling", "--episodes", "500",
                     "--horizon", "20000", "--r3", "1,6", "--out", str(out)]) == 0
    rows = [r.split(",") for r in (out / "sweep.csv").read_text().splitlines()]
    head = rows[0]
    assert head[:5] == ["r3", "agent", "seed", "avg_reward", "exact_gain"]
    greedy = [r for r in rows[1:] if r[1] == "greedy"]
    n_cols = [head.index(f"n_{c}") for c in (1, 2, 3)]
    assert [greedy[0][i] for i in n_cols] == [greedy[1][i] for i in n_cols]
    by = {(r[0], r[1]): float(r[3]) for r in rows[1:]}
    for agent in ("greedy", "dueling"):
        assert by[("6.0", agent)] > by[("1.0", agent)]
    prof = (out / "profile.csv").read_text().splitlines()
    assert prof[0] == "r3,agent,seed,class,headroom,offered,accepted,p_accept"


def test_preset_dump(tmp_path, capsys):
    assert cli.main(["preset-dump", "--preset", "medium"]) == 0
    text = capsys.readouterr().out
    assert parse_config(text) == preset("medium")
    assert cli.main(["preset-dump", "--preset", "small", "--out", str(tmp_path / "p")]) == 0
    assert parse_config((tmp_path / "p" / "small.cfg").read_text()).scenario == "small"
