import io
import json
import math

import numpy as np
import pytest

from occgrasp.curriculum import GraspRange
from occgrasp.env import DomainParams, EnvConfig, OccludedGraspEnv, grasp_from_id
from occgrasp.evaluation import (
    EpisodeSpec,
    EvalReport,
    OpenLoopPolicy,
    RandomPolicy,
    ScriptedPushPolicy,
    TraceVersionMismatch,
    TruncatedTrace,
    UnknownParameter,
    episode_seeds,
    read_trace,
    replay_open_loop,
    run_episode,
    run_eval,
    sensitivity_sweep,
    verify_lift,
    weld_check,
    write_curve_svg,
    write_report,
)
from occgrasp.sac import SacConfig, SacNetworks

D = DomainParams()


@pytest.fixture(scope="module")
def scripted_trace(tmp_path_factory):
    d = tmp_path_factory.mktemp("traces")
    rep = run_eval(ScriptedPushPolicy(), n_episodes=1, seed=3, trace_dir=d, label="t")
    assert rep.episodes[0].success
    return next(d.glob("*.jsonl"))


def test_random_policy_rarely_succeeds():
    rep = run_eval(RandomPolicy(), n_episodes=40, seed=0)
    assert rep.success_rate < 0.05


def test_scripted_policy_succeeds_and_lifts():
    rep = run_eval(ScriptedPushPolicy(), n_episodes=4, seed=11, check_lift=True)
    assert rep.success_rate == 1.0 and rep.lift_rate() == 1.0
    assert rep.outcome_counts()["success"] == 4


def test_empty_report():
    rep = run_eval(RandomPolicy(), n_episodes=0)
    s = rep.summary()
    assert s["episodes"] == 0 and s["success_rate"] == 0.0 and s["lift_rate"] is None
    with pytest.raises(ValueError):
        run_eval(RandomPolicy(), n_episodes=-1)


def test_episode_seeds_are_stable_and_distinct():
    a = episode_seeds(7, 50)
    assert a == episode_seeds(7, 50) and len(set(a)) == 50
    assert episode_seeds(7, 10) == a[:10]


def _strip(rep):
    return [e.row() for e in rep.episodes]


def test_eval_deterministic_across_workers():
    nets = SacNetworks(SacConfig(hidden=(32, 32)), np.random.default_rng(0))
    one = run_eval(nets, D, GraspRange(1.0, 2.0), 4, "ArgmaxQ", seed=5, n_candidates=8, workers=1)
    two = run_eval(nets, D, GraspRange(1.0, 2.0), 4, "ArgmaxQ", seed=5, n_candidates=8, workers=3)
    assert _strip(one) == _strip(two)


def test_selection_requires_range():
    with pytest.raises(ValueError):
        run_eval(RandomPolicy(), D, 1.5, 1, "Uniform")


def test_trace_round_trip_replays_to_same_outcome(scripted_trace):
    tr = read_trace(scripted_trace)
    assert tr.success and len(tr.records) == tr.header["episode_steps"] == 40
    rep = replay_open_loop(scripted_trace)
    assert rep.episodes[0].success
    assert rep.episodes[0].final_distance == pytest.approx(tr.records[-1]["info"]["distance"], abs=1e-12)


def test_replay_in_shifted_domain_changes_nothing_structural(scripted_trace):
    rep = replay_open_loop(scripted_trace, DomainParams(table_friction=0.5))
    assert rep.n_episodes == 1 and rep.episodes[0].domain["table_friction"] == 0.5


def test_trace_errors(scripted_trace):
    lines = scripted_trace.read_text().splitlines()
    with pytest.raises(TruncatedTrace):
        read_trace(lines[:-1])
    with pytest.raises(TruncatedTrace):
        read_trace([])
    with pytest.raises(TruncatedTrace):
        read_trace(lines[:2] + ["{not json"])
    bad = json.loads(lines[0])
    bad["version"] = -1
    with pytest.raises(TraceVersionMismatch):
        read_trace(io.StringIO("\n".join([json.dumps(bad)] + lines[1:])))
    with pytest.raises(TruncatedTrace):
        read_trace([lines[0], lines[2]])


def test_open_loop_policy_holds_last_action():
    p = OpenLoopPolicy([np.zeros(3), np.ones(3)])
    p.reset(None, None)
    out = [p(None, None, None) for _ in range(4)]
    assert np.array_equal(out[0], np.zeros(3)) and all(np.array_equal(o, np.ones(3)) for o in out[1:])


def test_value_sweep_shape_and_determinism():
    kw = dict(n_episodes=2, seed=1)
    c = sensitivity_sweep([RandomPolicy(), RandomPolicy()], "table_friction", [0.1, 0.5], **kw)
    assert c.mode == "value" and c.values == [0.1, 0.5] and len(c.mean) == 2
    assert all(set(p) == {0, 1} for p in c.per_seed)
    assert c.as_dict() == sensitivity_sweep([RandomPolicy(), RandomPolicy()], "table_friction", [0.1, 0.5], **kw).as_dict()


def test_noise_sweep_and_unknown_parameter():
    c = sensitivity_sweep(RandomPolicy(), "object_theta", noise_sigmas=[0.0, 0.1], n_episodes=1)
    assert c.mode == "noise" and len(c.std) == 2
    with pytest.raises(UnknownParameter):
        sensitivity_sweep(RandomPolicy(), "gravity", [1.0])
    with pytest.raises(UnknownParameter):
        sensitivity_sweep(RandomPolicy(), "object_y", noise_sigmas=[0.1])
    with pytest.raises(ValueError):
        sensitivity_sweep(RandomPolicy(), "table_friction")


def test_lift_rejected_when_gripper_is_far():
    env = OccludedGraspEnv()
    env.reset(D, grasp_from_id(D, 1.5), seed=0)
    assert not weld_check(env.world, env.obj, env.grip)
    assert verify_lift(env) is False


def scripted_success():
    env = OccludedGraspEnv()
    goal = grasp_from_id(D, 1.5)
    obs = env.reset(D, goal, seed=3)
    pol = ScriptedPushPolicy()
    rng = np.random.default_rng(0)
    pol.reset(env, rng)
    for _ in range(40):
        res = env.step(pol(obs, goal, rng))
        obs = res.observation
        if res.done:
            break
    assert res.info["success"]
    return env


def test_lift_accepted_after_scripted_grasp():
    env = scripted_success()
    z0 = env.world.pose[env.obj, 1]
    assert weld_check(env.world, env.obj, env.grip) and verify_lift(env)
    assert env.world.pose[env.obj, 1] == z0  # the check runs on a copy


def test_lift_rejected_when_object_is_pinned():
    env = scripted_success()
    w = env.world
    w.dyn[env.obj] = 0  # wedged against the wall: immovable
    w.W[env.obj] = 0.0
    assert weld_check(w, env.obj, env.grip) and not verify_lift(env)


def test_zero_noise_equals_clean_eval():
    clean = run_eval(ScriptedPushPolicy(), n_episodes=2, seed=6)
    noisy = run_eval(ScriptedPushPolicy(), n_episodes=2, seed=6, obs_noise=(0, 0.0))
    assert _strip(clean) == _strip(noisy)
    c = sensitivity_sweep(ScriptedPushPolicy(), "object_x", noise_sigmas=[0.0], n_episodes=2, seed=6)
    assert c.mean == [clean.success_rate]


def test_sweep_at_default_matches_eval():
    c = sensitivity_sweep(ScriptedPushPolicy(), "table_friction", [D.table_friction], n_episodes=2, seed=8)
    assert c.mean == [run_eval(ScriptedPushPolicy(), D, 1.5, 2, seed=8).success_rate]


def test_large_noise_degrades_success():
    c = sensitivity_sweep(ScriptedPushPolicy(), "object_x", noise_sigmas=[0.0, 0.2], n_episodes=6, seed=2)
    assert c.mean[1] < c.mean[0]


def test_reports_written(tmp_path):
    rep = run_eval(RandomPolicy(), n_episodes=3, seed=2, config_label="rand").merge(
        run_eval(RandomPolicy(), n_episodes=2, seed=4, seed_index=1, config_label="rand"))
    paths = write_report(rep, tmp_path, "r")
    rows = paths["csv"].read_text().splitlines()
    assert rows[0].startswith("config,seed,episodes,successes,success_rate") and len(rows) == 3
    assert len(paths["episodes"].read_text().splitlines()) == 6
    summary = json.loads(paths["summary"].read_text())
    assert summary["episodes"] == 5 and summary["seeds"] == 2
    c = sensitivity_sweep(RandomPolicy(), "table_friction", [0.2, 0.4], n_episodes=1)
    svg = write_curve_svg(c, tmp_path / "c.svg")
    assert svg.read_text().lstrip().startswith("<?xml") and "<svg" in svg.read_text()


def test_report_statistics():
    from occgrasp.evaluation import EpisodeResult

    def ep(si, ok):
        return EpisodeResult(si, 0, 0, 1.5, ok, "success" if ok else "timeout", 0.0, 0.0, 40, {})

    rep = EvalReport([ep(0, True), ep(0, False), ep(1, True), ep(1, True)])
    assert rep.success_rate == 0.75 and rep.per_seed() == {0: 0.5, 1: 1.0}
    assert rep.summary()["success_rate_seed_std"] == pytest.approx(0.25)
