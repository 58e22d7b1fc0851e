import json
import math

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from occgrasp.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from occgrasp.config import ConfigError, RunConfig, defaults_table, format_defaults
from occgrasp.sac import CHECKPOINT_VERSION, agent_from_checkpoint, policy_act

TINY = {
    "rl": {"hidden": [16, 16], "batch_size": 16, "episodes": 3, "warmup_episodes": 1},
    "eval": {"episodes": 2, "eval_every": 2},
    "io": {"checkpoint_every": 2},
}


@pytest.fixture
def tiny(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(yaml.safe_dump(TINY))
    return p


# ------------------------------------------------------------------ config


def test_defaults_match_reference_values():
    c = RunConfig()
    assert (c.rl.gamma, c.rl.tau, c.rl.batch_size, c.rl.buffer_capacity) == (0.99, 0.005, 256, 1_000_000)
    assert (c.rl.lr_policy, c.rl.lr_q, c.rl.her_rollout_goal_fraction) == (1e-3, 5e-4, 0.4)
    assert c.rl.hidden == [512, 512, 512]
    assert (c.env.reward_alpha1, c.env.reward_alpha2, c.env.reward_beta) == (50.0, 2.0, 200.0)
    assert (c.env.success_translation, c.env.success_rotation_deg, c.env.episode_steps) == (0.03, 10.0, 40)
    assert (c.curriculum.expansion_step, c.curriculum.success_threshold) == (0.25, 0.8)
    assert (c.eval.n_candidates, c.eval.n_environments, c.eval.episodes) == (50, 100, 10)


def test_default_round_trip():
    c = RunConfig()
    assert RunConfig.from_yaml(c.to_yaml()) == c


@given(
    st.floats(0.5, 0.999), st.floats(1e-4, 1.0), st.lists(st.integers(1, 64), min_size=1, max_size=4),
    st.floats(0.0, 1.0), st.floats(0.1, 0.5), st.sampled_from(["ArgmaxQ", "PoseDiff-t0", "Uniform"]),
    st.booleans(), st.integers(0, 2 ** 31),
)
def test_round_trip_property(gamma, tau, hidden, her, friction, strategy, adr, seed):
    d = {"rl": {"gamma": gamma, "tau": tau, "hidden": hidden, "her_rollout_goal_fraction": her},
         "env": {"domain": {"table_friction": friction}, "ablation": {"no_wall": adr}},
         "curriculum": {"adr": adr}, "eval": {"strategy": strategy}, "io": {"seed": seed}}
    c = RunConfig.from_dict(d)
    again = RunConfig.from_yaml(c.to_yaml())
    assert again == c and again.to_yaml() == c.to_yaml()


@pytest.mark.parametrize("doc, path", [
    ({"rl": {"gamma": 1.5}}, "rl.gamma"),
    ({"rl": {"gammma": 0.9}}, "rl.gammma"),
    ({"rl": {"hidden": [16, "x"]}}, "rl.hidden[1]"),
    ({"rl": {"batch_size": 2.5}}, "rl.batch_size"),
    ({"env": {"domain": {"table_friction": -1.0}}}, "env.domain"),
    ({"eval": {"strategy": "Best"}}, "eval.strategy"),
    ({"curriculum": {"grasp_lo": 3.0, "grasp_hi": 1.0}}, "curriculum"),
    ({"io": {"workers": 0}}, "io.workers"),
    ({"mode": "fly"}, "mode"),
    ({"env": 3}, "env"),
])
def test_validation_names_field(doc, path):
    with pytest.raises(ConfigError) as e:
        RunConfig.from_dict(doc)
    assert e.value.path == path


def test_bad_yaml():
    with pytest.raises(ConfigError):
        RunConfig.from_yaml("rl: [unclosed")
    with pytest.raises(ConfigError):
        RunConfig.from_yaml("- a list")


def test_defaults_table_marks_sources():
    rows = {k: src for k, _, src in defaults_table()}
    assert rows["rl.gamma"] == "reference" and rows["io.workers"] == "local"
    assert "table_friction" in format_defaults()


# --------------------------------------------------------------------- cli


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == EXIT_OK
    assert "rl.gamma" in capsys.readouterr().out
    assert main(["eval", "--print-defaults"]) == EXIT_OK


def test_no_command_is_config_error():
    assert main([]) == EXIT_CONFIG


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("rl:\n  gamma: 2.0\n")
    assert main(["train", "--config", str(p)]) == EXIT_CONFIG
    assert "rl.gamma" in capsys.readouterr().err
    assert main(["train", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_train_zero_episodes(tiny, tmp_path):
    out = tmp_path / "z"
    assert main(["train", "--config", str(tiny), "--out-dir", str(out), "--episodes", "0"]) == EXIT_OK
    assert len((out / "metrics.csv").read_text().splitlines()) == 1
    assert sorted(p.name for p in out.glob("ckpt_*.ogck")) == ["ckpt_000000.ogck"]
    assert RunConfig.load(out / "config.yaml").rl.episodes == 0


def test_train_is_deterministic(tiny, tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--config", str(tiny), "--out-dir", str(tmp_path / name), "--seed", "4"]) == EXIT_OK
    a, b = (tmp_path / "a" / "metrics.csv").read_text(), (tmp_path / "b" / "metrics.csv").read_text()
    assert a == b and len(a.splitlines()) == 3


@pytest.fixture
def trained(tiny, tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny), "--out-dir", str(out)]) == EXIT_OK
    return out / "latest.ogck"


def test_eval_of_saved_checkpoint(trained, tiny, tmp_path, capsys):
    out = tmp_path / "ev"
    assert main(["eval", "--config", str(tiny), "--checkpoint", str(trained), "--out-dir", str(out)]) == EXIT_OK
    summary = json.loads((out / "eval_summary.json").read_text())
    assert summary["episodes"] == 2
    assert list((out / "traces").glob("*.jsonl"))


def test_checkpoint_round_trip_policy(trained):
    a, _ = agent_from_checkpoint(trained)
    b, _ = agent_from_checkpoint(trained)
    obs = np.random.default_rng(0).normal(size=(100, 12))
    assert np.array_equal(policy_act(obs, None, True, a.nets.policy), policy_act(obs, None, True, b.nets.policy))


def test_eval_errors(trained, tiny, tmp_path):
    base = ["eval", "--config", str(tiny), "--out-dir", str(tmp_path / "ev")]
    assert main(base) == EXIT_CONFIG
    assert main(base + ["--checkpoint", str(tmp_path / "nope.ogck")]) == EXIT_RUNTIME
    raw = trained.read_bytes()
    (tmp_path / "cut.ogck").write_bytes(raw[: len(raw) // 2])
    assert main(base + ["--checkpoint", str(tmp_path / "cut.ogck")]) == EXIT_RUNTIME
    newer = raw[:4] + (CHECKPOINT_VERSION + 1).to_bytes(4, "little") + raw[8:]
    (tmp_path / "new.ogck").write_bytes(newer)
    assert main(base + ["--checkpoint", str(tmp_path / "new.ogck")]) == EXIT_RUNTIME


def test_uniform_singleton_equals_plain_eval(trained):
    from occgrasp.curriculum import GraspRange
    from occgrasp.env import DomainParams
    from occgrasp.evaluation import run_eval

    agent, _ = agent_from_checkpoint(trained)
    plain = run_eval(agent.nets, DomainParams(), 1.5, 2, seed=9)
    sel = run_eval(agent.nets, DomainParams(), GraspRange.single(1.5), 2, "Uniform", seed=9, n_candidates=1)
    key = lambda r: [(e.success, e.final_distance, e.episode_return) for e in r.episodes]
    assert key(plain) == key(sel)


def test_sweep_command(trained, tmp_path):
    cfg = dict(TINY, eval={"episodes": 1, "sweep_param": "table_friction", "sweep_values": [0.2, 0.4]})
    p = tmp_path / "sweep.yaml"
    p.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(p), "--checkpoint", str(trained), "--out-dir", str(out)]) == EXIT_OK
    curve = json.loads((out / "sweep_table_friction.json").read_text())
    assert curve["values"] == [0.2, 0.4] and (out / "sweep_table_friction.svg").exists()
    p.write_text(yaml.safe_dump(dict(TINY, eval={"sweep_param": "gravity"})))
    assert main(["sweep", "--config", str(p), "--checkpoint", str(trained), "--out-dir", str(out)]) == EXIT_CONFIG


def test_replay_command(tmp_path, capsys):
    from occgrasp.evaluation import ScriptedPushPolicy, run_eval

    run_eval(ScriptedPushPolicy(), n_episodes=1, seed=3, trace_dir=tmp_path / "tr", label="s")
    trace = next((tmp_path / "tr").glob("*.jsonl"))
    assert main(["replay", "--trace", str(trace), "--out-dir", str(tmp_path / "rp")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["recorded_success"] is True and out["success_rate"] == 1.0
    assert main(["replay", "--out-dir", str(tmp_path / "rp")]) == EXIT_CONFIG
    trace.write_text("\n".join(trace.read_text().splitlines()[:5]))
    assert main(["replay", "--trace", str(trace), "--out-dir", str(tmp_path / "rp")]) == EXIT_RUNTIME
