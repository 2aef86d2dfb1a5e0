import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillgen import groups
from distillgen.envs import common, micro
from distillgen.envs import fourrooms as fr
from distillgen.envs import reacher as rc
from distillgen.errors import ConfigError, NumericError
from distillgen.teachers import GridPlanner, IKReacher


def _links(coords, cfg):
    c = np.asarray(coords).reshape(-1, 6)
    upper = np.hypot(c[:, 2] - c[:, 0], c[:, 3] - c[:, 1])
    fore = np.hypot(c[:, 4] - c[:, 2], c[:, 5] - c[:, 3])
    return upper - cfg.link1, fore - cfg.link2


# ---------------------------------------------------------------- reacher

def test_reset_rigid_links_and_zero_velocity():
    env = rc.ReacherEnv()
    s = env.reset(rc.ReacherContext(1.3, (0.4, 2.0)))
    du, df = _links(s.coords, env.cfg)
    assert abs(du[0]) < 1e-9 and abs(df[0]) < 1e-9
    assert np.array_equal(s.vel, np.zeros(2))
    assert np.hypot(s.coords[0], s.coords[1]) == pytest.approx(env.cfg.circle_radius, abs=1e-12)


def test_reset_rotation_relation():
    env = rc.ReacherEnv()
    s0 = env.reset(rc.ReacherContext(0.0)).coords
    s1 = env.reset(rc.ReacherContext(np.pi / 2)).coords
    assert np.allclose(groups.apply(np.pi / 2, s0), s1, atol=1e-12)


def test_default_pose_geometry():
    env = rc.ReacherEnv()
    c = env.reset(rc.ReacherContext(0.0)).coords
    shoulder, elbow, hand = c[:2], c[2:4], c[4:]
    to_target = -shoulder
    upper = elbow - shoulder
    fore = hand - elbow
    ang = lambda u, v: np.arctan2(u[0] * v[1] - u[1] * v[0], u @ v)
    assert ang(to_target, upper) == pytest.approx(np.pi / 4, abs=1e-12)      # counter-clockwise
    assert ang(upper, fore) == pytest.approx(-np.pi / 2, abs=1e-12)          # clockwise


def test_joint_coords_roundtrip(rng):
    cfg = rc.ReacherConfig()
    phi, q1, q2 = rng.uniform(-3, 3, (3, 50))
    p2, a2, b2 = rc.coords_joints(rc.joint_coords(phi, q1, q2, cfg))
    wrap = lambda x: np.mod(x + np.pi, 2 * np.pi) - np.pi
    assert np.allclose(wrap(p2 - phi), 0, atol=1e-12)
    assert np.allclose(wrap(a2 - q1), 0, atol=1e-12)
    assert np.allclose(wrap(b2 - q2), 0, atol=1e-12)


def test_reward_examples():
    assert rc.reacher_reward(0.01, 0.5, True) == 1.0
    assert rc.reacher_reward(1.0, 1.2, False) == pytest.approx(0.005, abs=1e-15)
    assert rc.reacher_reward(1.0, 1.0, False) == 0.0


def test_zero_torque_keeps_pose():
    env = rc.ReacherEnv()
    ctx = rc.ReacherContext(0.7)
    s = env.reset(ctx)
    res = env.step(s, ctx, np.zeros(2))
    assert np.allclose(res.state.coords, s.coords, atol=1e-12)
    # the hand did not get closer than at reset, so no shaping reward
    assert res.reward == 0.0 and not res.done


def test_torque_clamped():
    env = rc.ReacherEnv()
    ctx = rc.ReacherContext(0.7)
    s = env.reset(ctx)
    a = env.step(s, ctx, np.array([50.0, -50.0])).state.coords
    b = env.step(s, ctx, np.array([2.0, -2.0])).state.coords
    assert np.array_equal(a, b)


def test_nan_action_rejected():
    env = rc.ReacherEnv()
    ctx = rc.ReacherContext(0.0)
    with pytest.raises(NumericError):
        env.step(env.reset(ctx), ctx, np.array([np.nan, 0.0]))


def test_goal_terminates_with_reward_one():
    cfg = rc.ReacherConfig()
    env = rc.ReacherEnv(cfg)
    # links sum to the circle radius, so the straight arm puts the hand on the target
    ctx = rc.ReacherContext(0.0, (0.1, 0.0))
    s = env.reset(ctx)
    res = env.step(s, ctx, np.array([-0.1 / cfg.dt, 0.0]))
    assert np.hypot(res.state.coords[4], res.state.coords[5]) <= cfg.goal_radius
    assert res.terminated and res.reward == 1.0


def test_truncation_at_max_steps():
    env = rc.ReacherEnv(rc.ReacherConfig(max_steps=3))
    ctx = rc.ReacherContext(0.0)
    s = env.reset(ctx)
    for _ in range(3):
        res = env.step(s, ctx, np.zeros(2))
        s = res.state
    assert res.truncated and not res.terminated


@pytest.mark.parametrize("j", range(8))
def test_rollout_rotation_equivariance(j):
    g = 2 * np.pi * j / 8
    ctx = rc.ReacherContext(0.3, (0.9, -1.1))
    teacher = IKReacher()
    a = rc.rollout_batch(teacher, [ctx], record=True)
    b = rc.rollout_batch(teacher, [ctx.rotated(g)], record=True)
    assert a.lengths[0] == b.lengths[0]
    assert np.allclose(groups.apply(g, a.states[0]), b.states[0], atol=1e-6)
    assert np.allclose(a.actions[0], b.actions[0], atol=1e-6)
    assert a.returns[0] == pytest.approx(b.returns[0], abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(phi=st.floats(0, 6.3), q1=st.floats(-3, 3), q2=st.floats(-3, 3),
       a1=st.floats(-3, 3), a2=st.floats(-3, 3), damping=st.sampled_from([1.0, 0.5]))
def test_step_preserves_rigid_links(phi, q1, q2, a1, a2, damping):
    cfg = rc.ReacherConfig(damping=damping)
    env = rc.ReacherEnv(cfg)
    ctx = rc.ReacherContext(phi, (q1, q2))
    s = env.reset(ctx)
    for _ in range(3):
        s = env.step(s, ctx, np.array([a1, a2])).state
    du, df = _links(s.coords, cfg)
    assert abs(du[0]) < 1e-9 and abs(df[0]) < 1e-9


def test_rollout_batch_matches_single_env():
    contexts = [rc.ReacherContext(a, (0.3 * a, -1.0)) for a in (0.0, 1.0, 2.5)]
    teacher = IKReacher()
    batch = rc.rollout_batch(teacher, contexts, gamma=0.9)
    env = rc.ReacherEnv()
    for i, ctx in enumerate(contexts):
        tr = common.rollout(env, ctx, teacher, None, gamma=0.9)
        assert tr.ret == pytest.approx(batch.returns[i], abs=1e-12)
        assert tr.discounted_ret == pytest.approx(batch.discounted[i], abs=1e-12)


# ---------------------------------------------------------------- four rooms

def _ctx(goal=(3, 1), start=(1, 1, 0)):
    walls = fr.four_rooms_walls(13, (1, 2, 3, 4))
    return fr.FourRoomsContext(walls, start, goal)


def test_four_rooms_layout():
    w = _ctx().wall_array()
    assert w.shape == (13, 13)
    assert w[0].all() and w[-1].all() and w[:, 0].all() and w[:, -1].all()
    # four doorways in the internal walls
    assert (~w[6, 1:-1]).sum() == 2 and (~w[1:-1, 6]).sum() == 2


def test_forward_into_wall_is_noop():
    ctx = _ctx()
    res = fr.fourrooms_step(fr.GridState(1, 1, 3), ctx, fr.FORWARD)   # facing north into the border
    assert (res.state.col, res.state.row) == (1, 1) and res.reward == 0.0


def test_four_rights_restore_facing():
    ctx = _ctx()
    s = fr.GridState(2, 2, 1)
    for _ in range(4):
        s = fr.fourrooms_step(s, ctx, fr.RIGHT).state
    assert s.dir == 1 and s.t == 4
    assert fr.fourrooms_step(fr.GridState(2, 2, 0), ctx, fr.LEFT).state.dir == 3


def test_goal_step_rewards_and_terminates():
    ctx = _ctx(goal=(2, 1))
    res = fr.fourrooms_step(fr.GridState(1, 1, 0), ctx, fr.FORWARD)
    assert res.reward == 1.0 and res.terminated


def test_truncation():
    ctx = _ctx()
    res = fr.fourrooms_step(fr.GridState(1, 1, 0, 199), ctx, fr.LEFT, max_steps=200)
    assert res.truncated and not res.terminated


def test_generate_deterministic_disjoint_solvable():
    a = fr.fourrooms_generate(3, 10, 4, 10)
    b = fr.fourrooms_generate(3, 10, 4, 10)
    assert a == b
    flat = [c for split in a for c in split]
    assert len(set(flat)) == 24
    assert all(fr.solvable(c) and tuple(c.start[:2]) != tuple(c.goal) for c in flat)
    assert fr.fourrooms_generate(4, 10, 4, 10) != a


def test_generate_errors():
    with pytest.raises(ConfigError):
        fr.fourrooms_generate(0, 0, 1, 1)
    with pytest.raises(ConfigError):
        fr.fourrooms_generate(0, 1, 1, 1, size=8)
    with pytest.raises(ConfigError):
        fr.fourrooms_generate(0, 5000, 5000, 5000, size=9, max_attempts=2000)


def test_context_json_roundtrip():
    c = fr.fourrooms_generate(0, 1, 1, 1)[0][0]
    assert fr.FourRoomsContext.from_dict(c.to_dict()) == c


def test_encodings_dimensions():
    c = _ctx()
    g = fr.encode(c, [1], [1], [0])
    e = fr.encode_egocentric(c, [1], [1], [0])
    assert g.shape == (1, fr.obs_dim("global", 13)) == (1, 511)
    assert e.shape == (1, fr.obs_dim("egocentric", 13)) == (1, 1250)
    assert g.sum() == c.wall_array().sum() + 3
    assert e[0, 625:].sum() == 1


def test_egocentric_is_heading_aligned():
    ctx = _ctx(goal=(5, 5))
    span = 25
    # the cell straight ahead sits at window offset (v=-1, u=0) for every heading
    for d in range(4):
        c, r = 3, 3
        x = fr.encode_egocentric(ctx, [c], [r], [d]).reshape(2, span, span)
        fc, frow = fr.forward_cell(c, r, d)
        assert x[0, 12 - 1, 12] == float(not ctx.is_wall(fc, frow))
    # turning the agent and the world together leaves the view unchanged on a symmetric layout
    sym = fr.FourRoomsContext(fr.four_rooms_walls(13, (2, 2, 2, 2)), (3, 3, 0), (9, 9))
    v0 = fr.encode_egocentric(sym, [3], [3], [0])
    v1 = fr.encode_egocentric(sym, [9], [9], [2])
    assert v0[0, :625].sum() == v1[0, :625].sum()


def test_env_rejects_unknown_encoding():
    with pytest.raises(ConfigError):
        fr.FourRoomsEnv(encoding="pixels")


def test_rollout_returns():
    env = fr.FourRoomsEnv()
    ctx = fr.fourrooms_generate(1, 1, 1, 1)[0][0]

    class Spin:
        def action(self, env, state, ctx, rng):
            return fr.LEFT

    tr = common.rollout(env, ctx, Spin(), None)
    assert tr.ret == 0.0 and len(tr.actions) == env.max_steps
    tr = common.rollout(env, ctx, GridPlanner(0.0), np.random.default_rng(0))
    assert tr.ret == 1.0 and tr.terminated
    a = common.rollout(env, ctx, GridPlanner(1.0), np.random.default_rng(5))
    b = common.rollout(env, ctx, GridPlanner(1.0), np.random.default_rng(5))
    assert a.actions == b.actions


# ---------------------------------------------------------------- micro MDP

def test_micro_examples():
    r = micro.micro_mdp_step(0.0, 0.0)
    assert r.state[0] == 0.0 and r.reward == 1.0 and not r.terminated
    r = micro.micro_mdp_step(1.0, 1.0)
    assert r.state[0] == 1.0 and r.reward == 0.0
    assert micro.micro_mdp_step(0.0, 0.0, t=29).truncated


def test_micro_lipschitz_ratios(rng):
    s, a = rng.uniform(-1, 1, (2, 100_000))
    s2, a2 = rng.uniform(-1, 1, (2, 100_000))
    d = np.abs(s - s2) + np.abs(a - a2)
    t_ratio = np.abs(micro.micro_transition(s, a) - micro.micro_transition(s2, a2)) / d
    r_ratio = np.abs(micro.micro_reward(s, a) - micro.micro_reward(s2, a2)) / d
    assert t_ratio.max() <= micro.L_T + 1e-9
    assert r_ratio.max() <= micro.L_R + 1e-9


def test_micro_returns_vectorised_matches_env():
    env = micro.MicroMDP()
    ret, states = micro.micro_returns(micro.optimal_action, np.array([0.8, -0.3]), 0.5)
    for i, s0 in enumerate((0.8, -0.3)):
        state, total = env.reset(s0), 0.0
        for t in range(micro.HORIZON):
            res = env.step(state, s0, float(micro.optimal_action(state[0])))
            total += 0.5 ** t * res.reward
            state = res.state
        assert total == pytest.approx(ret[i], abs=1e-12)
    assert states.shape == (micro.HORIZON, 2)
