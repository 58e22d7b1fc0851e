import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from occgrasp import autodiff as ad
from occgrasp.env import ACHIEVED_SLICE, OBS_DIM, GraspGoal, RewardParams, compute_reward, Observation
from occgrasp.geometry import Pose2
from occgrasp.nn import Adam, Mlp
from occgrasp.sac import (
    CHECKPOINT_VERSION,
    MAGIC,
    CheckpointMismatch,
    CheckpointVersionError,
    ReplayBuffer,
    SacAgent,
    SacConfig,
    SacNetworks,
    Transition,
    agent_from_checkpoint,
    alpha_loss,
    critic_losses,
    critic_targets,
    her_relabel,
    load_checkpoint,
    min_q,
    policy_act,
    policy_loss,
    q_value,
    sac_update,
    save_checkpoint,
)

TOY = SacConfig(hidden=(4, 4), batch_size=8)


def toy_nets(seed=0, hidden=(4, 4)):
    return SacNetworks(SacConfig(hidden=hidden), np.random.default_rng(seed), dtype=np.float64)


def toy_batch(rng, n=6):
    return {
        "obs": rng.normal(size=(n, OBS_DIM)),
        "action": rng.uniform(-1, 1, size=(n, 3)),
        "reward": -rng.uniform(0, 5, size=n),
        "next_obs": rng.normal(size=(n, OBS_DIM)),
        "done": (rng.random(n) < 0.3).astype(np.float64),
    }


def fd_check(loss_fn, tensors, h=1e-6):
    """Worst norm-relative error between reverse-mode and central-difference gradients."""
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else np.array(t.grad, dtype=np.float64)
        numeric = np.zeros_like(t.data, dtype=np.float64)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(loss_fn().data)
            flat[i] = old - h
            dn = float(loss_fn().data)
            flat[i] = old
            numeric.reshape(-1)[i] = (up - dn) / (2 * h)
        err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# --------------------------------------------------------------- gradients


def test_q_output_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    net = Mlp([OBS_DIM + 3, 4, 4, 1], rng, np.float64)
    for _ in range(10):
        x = rng.normal(size=(1, OBS_DIM + 3))
        assert fd_check(lambda: ad.sum(net(x)), net.params) < 1e-4


def test_critic_loss_gradient():
    rng = np.random.default_rng(2)
    nets = toy_nets()
    batch = toy_batch(rng)
    y = critic_targets(nets, batch, rng.normal(size=(6, 3)), TOY)
    assert fd_check(lambda: critic_losses(nets, batch, y)[0], nets.q1.params) < 1e-4


def test_policy_loss_gradient_two_unit_net():
    rng = np.random.default_rng(3)
    nets = toy_nets(hidden=(2, 2))
    obs = rng.normal(size=(5, OBS_DIM))
    eps = rng.normal(size=(5, 3))
    nets.q1.set_requires_grad(False)
    nets.q2.set_requires_grad(False)
    assert fd_check(lambda: policy_loss(nets, obs, eps)[0], nets.policy.params) < 1e-4


def test_alpha_loss_gradient():
    nets = toy_nets()
    logp = np.random.default_rng(4).normal(size=7)
    assert fd_check(lambda: alpha_loss(nets.log_alpha, logp, -3.0), [nets.log_alpha]) < 1e-4


def test_squash_log_density_matches_change_of_variables():
    from occgrasp.sac import squashed_sample

    rng = np.random.default_rng(5)
    mean, log_std, eps = rng.normal(size=(4, 3)), rng.normal(scale=0.3, size=(4, 3)), rng.normal(size=(4, 3))
    a, logp = squashed_sample(ad.Tensor(mean), ad.Tensor(log_std), eps)
    u = mean + np.exp(log_std) * eps
    gauss = -0.5 * eps ** 2 - log_std - 0.5 * math.log(2 * math.pi)
    ref = (gauss - np.log(1 - np.tanh(u) ** 2)).sum(axis=1)
    assert np.allclose(logp.data, ref, atol=1e-9)
    assert np.allclose(a.data, np.tanh(u))


def test_adam_first_step_is_sign_scaled():
    p = ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    assert p.data == pytest.approx([0.9, -1.9], abs=1e-7)


# ------------------------------------------------------------------ policy


def test_policy_actions():
    nets = SacNetworks(SacConfig(hidden=(64, 64)), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    obs = rng.normal(size=(1000, OBS_DIM)).astype(np.float32)
    a1 = policy_act(obs, None, True, nets.policy)
    assert np.array_equal(a1, policy_act(obs, None, True, nets.policy))
    assert np.abs(a1).max() < 0.5
    s = policy_act(obs, None, False, nets.policy, rng)
    assert s.shape == (1000, 3) and np.all(np.abs(s) < 1.0)
    with pytest.raises(ValueError):
        policy_act(obs[0], None, False, nets.policy)


def test_goal_argument_replaces_goal_slice():
    nets = SacNetworks(SacConfig(hidden=(16,)), np.random.default_rng(0))
    obs = np.random.default_rng(1).normal(size=OBS_DIM)
    goal = np.array([0.1, 0.2, 0.3])
    expect = obs.copy()
    expect[:3] = goal
    assert np.array_equal(policy_act(obs, goal, True, nets.policy), policy_act(expect, None, True, nets.policy))


@given(st.integers(0, 2 ** 16))
def test_min_q_is_below_each_critic(seed):
    nets = SacNetworks(SacConfig(hidden=(8,)), np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    obs, act = rng.normal(size=(5, OBS_DIM)), rng.uniform(-1, 1, size=(5, 3))
    m = min_q(obs, act, None, nets)
    assert np.all(m <= q_value(obs, act, None, nets.q1)) and np.all(m <= q_value(obs, act, None, nets.q2))
    assert np.array_equal(q_value(obs, act, None, nets.q1), q_value(obs, act, None, nets.q1))


def test_parameter_count_matches_architecture():
    net = Mlp([15, 512, 512, 512, 1], np.random.default_rng(0))
    assert net.n_params == 15 * 512 + 512 + 2 * (512 * 512 + 512) + 512 + 1


# ------------------------------------------------------------------ targets


@given(st.integers(0, 2 ** 16), st.floats(1.0, 100.0))
def test_targets_within_feasible_returns(seed, rmax):
    cfg = SacConfig(hidden=(8,), reward_max=rmax)
    nets = SacNetworks(cfg, np.random.default_rng(seed), dtype=np.float64)
    for p in nets.q1_target.params + nets.q2_target.params:
        p.data *= 1e4  # wild critics to exercise the clamp
    rng = np.random.default_rng(seed)
    batch = toy_batch(rng, 32)
    batch["reward"] = -rng.uniform(0, rmax, size=32)
    y = critic_targets(nets, batch, rng.normal(size=(32, 3)), cfg)
    assert np.all(y <= 0.0) and np.all(y >= -rmax / (1 - cfg.gamma))


def filled_buffer(n, rng, reward=None, done=None):
    buf = ReplayBuffer(n)
    g = GraspGoal(Pose2(), 1.5)
    for _ in range(n):
        buf.add(Transition(rng.normal(size=OBS_DIM), rng.uniform(-1, 1, 3),
                           float(-rng.uniform(0, 3)) if reward is None else reward,
                           rng.normal(size=OBS_DIM), bool(rng.random() < 0.2) if done is None else done, g))
    return buf


def test_polyak_update_is_exact():
    cfg = SacConfig(hidden=(8, 8), batch_size=16)
    agent = SacAgent(cfg, np.random.default_rng(0), dtype=np.float64)
    for p in agent.nets.q1_target.params:
        p.data += 0.1  # make target and online differ
    before = [p.data.copy() for p in agent.nets.q1_target.params]
    sac_update(filled_buffer(64, np.random.default_rng(1)), cfg, agent, np.random.default_rng(2))
    for b, t, q in zip(before, agent.nets.q1_target.params, agent.nets.q1.params):
        assert np.array_equal(t.data, 0.995 * b + 0.005 * q.data)


def test_degenerate_fixed_point():
    cfg = SacConfig(hidden=(16, 16), batch_size=16)
    agent = SacAgent(cfg, np.random.default_rng(0), dtype=np.float64)
    rng = np.random.default_rng(1)
    tr = Transition(rng.normal(size=OBS_DIM), np.zeros(3), 0.0, rng.normal(size=OBS_DIM), True, GraspGoal(Pose2(), 1.5))
    buf = ReplayBuffer(32)
    buf.extend([tr] * 32)
    batch = buf.sample(16, rng)
    assert np.all(critic_targets(agent.nets, batch, rng.normal(size=(16, 3)), cfg) == 0.0)
    q0 = abs(q_value(tr.obs, tr.action, None, agent.nets.q1))
    for _ in range(200):
        sac_update(buf, cfg, agent, rng)
    q1 = abs(q_value(tr.obs, tr.action, None, agent.nets.q1))
    assert q1 < 0.1 * q0 and q1 < 1e-2


def test_update_requires_full_batch():
    cfg = SacConfig(hidden=(8,), batch_size=16)
    with pytest.raises(ValueError):
        sac_update(filled_buffer(8, np.random.default_rng(0)), cfg, SacAgent(cfg, np.random.default_rng(0)),
                   np.random.default_rng(0))


def test_training_determinism_100_updates():
    cfg = SacConfig(hidden=(32, 32), batch_size=32)

    def run():
        agent = SacAgent(cfg, np.random.default_rng(0))
        buf = filled_buffer(256, np.random.default_rng(1))
        rng = np.random.default_rng(2)
        return [sac_update(buf, cfg, agent, rng).as_dict() for _ in range(100)]

    assert run() == run()


# ------------------------------------------------------------------- replay


def test_replay_sampling_uniform():
    from scipy import stats

    buf = filled_buffer(100, np.random.default_rng(0))
    idx = buf.sample_indices(100_000, np.random.default_rng(1))
    counts = np.bincount(idx, minlength=100)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_ring_buffer_capacity():
    buf = filled_buffer(10, np.random.default_rng(0))
    first = buf.obs[0].copy()
    rng = np.random.default_rng(2)
    for _ in range(3):
        buf.add(Transition(rng.normal(size=OBS_DIM), np.zeros(3), 0.0, rng.normal(size=OBS_DIM), False,
                           GraspGoal(Pose2(), 1.5)))
    assert len(buf) == 10 and not np.array_equal(buf.obs[0], first)


# ---------------------------------------------------------------------- HER


def episode(rng, T=40, table_z=-10.0):
    g = GraspGoal(Pose2(-0.055, 0.0, 0.0), 1.5)
    obs = [Observation(g.pose_in_object, Pose2(*rng.normal(size=3)), Pose2(*rng.normal(size=3))).as_array()
           for _ in range(T + 1)]
    return [Transition(obs[t], rng.uniform(-1, 1, 3), -1.0, obs[t + 1], t == T - 1, g, t, table_z) for t in range(T)]


def test_her_fraction_zero_is_identity():
    ep = episode(np.random.default_rng(0))
    assert her_relabel(ep, 0.0, np.random.default_rng(1)) == ep


def test_her_self_relabel_of_last_step():
    ep = episode(np.random.default_rng(0))
    last = her_relabel(ep, 1.0, np.random.default_rng(1))[-1]
    achieved = ep[-1].next_obs[ACHIEVED_SLICE]
    assert np.array_equal(last.obs[:3], achieved) and np.array_equal(last.next_obs[:3], achieved)
    _, D, occ = compute_reward(Pose2(*achieved), Observation.from_array(last.next_obs), -10.0)
    assert D == pytest.approx(0.0, abs=1e-12) and occ == 0.0
    assert last.reward == pytest.approx(0.0, abs=1e-9)


def test_her_share_and_validity():
    rng = np.random.default_rng(0)
    total = relabelled = 0
    for _ in range(250):
        ep = episode(rng)
        out = her_relabel(ep, 0.4, rng, RewardParams())
        for t, tr in enumerate(out):
            total += 1
            if math.isnan(tr.goal.grasp_id):
                relabelled += 1
                futures = [ep[f].next_obs[ACHIEVED_SLICE] for f in range(t, len(ep))]
                assert any(np.array_equal(tr.obs[:3], a) for a in futures)
                r, _, _ = compute_reward(Pose2(*tr.obs[:3]), Observation.from_array(tr.next_obs), tr.table_z)
                assert tr.reward == pytest.approx(r)
            else:
                assert tr is ep[t]
    assert total == 10_000
    assert abs(relabelled / total - 0.4) <= 0.02


def test_her_rejects_empty_episode():
    with pytest.raises(ValueError):
        her_relabel([], 0.4, np.random.default_rng(0))


# --------------------------------------------------------------- checkpoint


def trained_agent():
    cfg = SacConfig(hidden=(16, 16), batch_size=16)
    agent = SacAgent(cfg, np.random.default_rng(0))
    buf = filled_buffer(64, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    for _ in range(5):
        sac_update(buf, cfg, agent, rng)
    return agent


def test_checkpoint_round_trip(tmp_path):
    agent = trained_agent()
    path = tmp_path / "a.ogck"
    save_checkpoint(path, agent, {"episodes": 7}, {"note": "x"}, {"curriculum": {"lo": 1.0, "hi": 2.0}})
    assert path.read_bytes()[:4] == MAGIC
    clone, header = agent_from_checkpoint(path)
    assert header["counters"] == {"updates": 5, "episodes": 7}
    assert header["extra"]["curriculum"] == {"lo": 1.0, "hi": 2.0}
    for (n, a), (_, b) in zip(agent.nets.named_tensors(), clone.nets.named_tensors()):
        assert np.array_equal(a.data, b.data), n
    assert clone.opt_q.t == agent.opt_q.t
    assert all(np.array_equal(x, y) for x, y in zip(agent.opt_q.state(), clone.opt_q.state()))
    obs = np.random.default_rng(3).normal(size=(100, OBS_DIM))
    assert np.array_equal(policy_act(obs, None, True, agent.nets.policy),
                          policy_act(obs, None, True, clone.nets.policy))


def test_checkpoint_rejects_mismatch_and_corruption(tmp_path):
    agent = trained_agent()
    path = tmp_path / "a.ogck"
    save_checkpoint(path, agent)
    other = SacAgent(SacConfig(hidden=(16, 8)), np.random.default_rng(0))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path, other)
    raw = path.read_bytes()
    (tmp_path / "short.ogck").write_bytes(raw[:-4])
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "short.ogck", agent)
    (tmp_path / "long.ogck").write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "long.ogck", agent)
    (tmp_path / "magic.ogck").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "magic.ogck", agent)
    newer = raw[:4] + (CHECKPOINT_VERSION + 1).to_bytes(4, "little") + raw[8:]
    (tmp_path / "newer.ogck").write_bytes(newer)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "newer.ogck", agent)


def test_config_validation():
    for bad in (dict(gamma=1.0), dict(tau=0.0), dict(her_rollout_goal_fraction=1.5)):
        with pytest.raises(ValueError):
            SacConfig(**bad)
    assert SacConfig().entropy_target == -3.0
    assert SacConfig().target_floor == pytest.approx(-100 / 0.01)
