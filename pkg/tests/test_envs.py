import numpy as np
import pytest

from rgvf import envs
from rgvf.envs import ACTIONS, EmptyRoom, VectorEmptyRoom, exact_model

UP, DOWN, LEFT, RIGHT = range(4)


def test_step_onto_goal_pays_reward():
    env = EmptyRoom(goal=(1, 6), start=(2, 6))
    env.reset()
    obs, reward, blocked, _ = env.step(UP)
    assert reward == 1.0 and not blocked
    assert envs.decode_position(obs) == (1, 6)


def test_staying_on_goal_does_not_pay_by_default():
    env = EmptyRoom(goal=(1, 6), start=(1, 6))
    env.reset()
    assert env.step(UP)[1] == 0.0
    env = EmptyRoom(goal=(1, 6), start=(1, 6), reward_on_stay=True)
    env.reset()
    assert env.step(UP)[1] == 1.0


def test_reentering_goal_pays_again():
    env = EmptyRoom(goal=(1, 6), start=(1, 6))
    env.reset()
    assert env.step(LEFT)[1] == 0.0
    assert env.step(RIGHT)[1] == 1.0


def test_corner_left_is_blocked():
    env = EmptyRoom(start=(1, 1))
    env.reset()
    obs, reward, blocked, transition = env.step(LEFT)
    assert blocked and reward == 0.0
    assert env.position == (1, 1)
    assert transition.blocked and transition.action == LEFT
    np.testing.assert_array_equal(transition.observation, transition.next_observation)


def test_default_layout():
    env = EmptyRoom()
    state, obs = env.reset()
    assert env.position == (7, 1) and env.goal == (1, 6)
    assert obs.shape == (162,)
    planes = obs.reshape(2, 9, 9)
    assert planes[0].sum() == 32 and planes[0, 1:-1, 1:-1].sum() == 0
    assert planes[1].sum() == 1 and planes[1, 7, 1] == 1


def test_bad_action_and_cells():
    env = EmptyRoom()
    env.reset()
    with pytest.raises(ValueError):
        env.step(4)
    with pytest.raises(ValueError):
        EmptyRoom(goal=(0, 3))


def test_random_start_is_seeded():
    a = EmptyRoom(random_start=True)
    b = EmptyRoom(random_start=True)
    starts_a = [a.reset(seed=s)[0] for s in range(20)]
    starts_b = [b.reset(seed=s)[0] for s in range(20)]
    assert starts_a == starts_b
    assert len(set(starts_a)) > 1


def test_random_rollout_invariants():
    env = EmptyRoom()
    env.reset()
    rng = np.random.default_rng(0)
    for a in rng.integers(4, size=10_000):
        obs, _, _, _ = env.step(int(a))
        r, c = env.position
        assert 1 <= r <= 7 and 1 <= c <= 7
        planes = obs.reshape(2, 9, 9)
        assert planes[1].sum() == 1.0
        assert envs.decode_position(obs) == (r, c)


# exact model

def test_model_rows_are_stochastic():
    model = exact_model(EmptyRoom())
    np.testing.assert_array_equal(model.P.sum(axis=2), 1.0)
    np.testing.assert_allclose(model.P_pi, model.P.mean(axis=0))


def test_center_has_four_successors():
    model = exact_model(EmptyRoom())
    s = envs.state_index(4, 4)
    row = model.P_pi[s]
    assert sorted(row[row > 0].tolist()) == [0.25] * 4
    assert row[s] == 0.0


def test_corner_self_transition_is_half():
    model = exact_model(EmptyRoom())
    for cell in [(1, 1), (1, 7), (7, 1), (7, 7)]:
        s = envs.state_index(*cell)
        assert model.P_pi[s, s] == 0.5


def test_model_reward_and_blocked_flags():
    model = exact_model(EmptyRoom())
    below_goal = envs.state_index(2, 6)
    assert model.rewards[below_goal, UP] == 1.0
    assert model.rewards.sum() == 3.0   # from below, left and right of the goal
    assert model.r_pi[below_goal] == 0.25
    assert model.blocked.sum() == 4 * 7
    assert model.blocked[envs.state_index(1, 3), UP]


def test_model_matches_simulator_frequencies():
    model = exact_model(EmptyRoom())
    # 1000 chains x 1000 steps of the simulator's move rule
    n_chains, n_steps = 1000, 1000
    rng = np.random.default_rng(1)
    rows = rng.integers(1, 8, size=n_chains)
    cols = rng.integers(1, 8, size=n_chains)
    src, dst = [], []
    for _ in range(n_steps):
        nr, nc, _ = envs.move(rows, cols, rng.integers(4, size=n_chains))
        src.append(envs.state_index(rows, cols))
        dst.append(envs.state_index(nr, nc))
        rows, cols = nr, nc
    src, dst = np.concatenate(src), np.concatenate(dst)
    counts = np.zeros((49, 49))
    np.add.at(counts, (src, dst), 1)
    visits = counts.sum(axis=1, keepdims=True)
    freq = counts / visits
    p = model.P_pi
    se = np.sqrt(np.maximum(p * (1 - p), 1e-300) / visits)
    z = np.where(p > 0, np.abs(freq - p) / se, 0.0)
    assert (counts[p == 0] == 0).all()
    # 3-SE agreement per entry, allowing the expected tail of ~0.27% over ~180 entries
    assert (z > 3).sum() <= 3, np.sort(z.ravel())[-5:]


# vector env

def test_vector_env_shapes():
    venv = VectorEmptyRoom(8, seed=0)
    obs = venv.reset()
    assert obs.shape == (8, 162)
    obs, rewards, blocked, states = venv.step(venv.sample_actions())
    assert obs.shape == (8, 162) and rewards.shape == (8,) and blocked.shape == (8,)
    assert states.shape == (8,)


def test_identical_actor_seeds_give_identical_trajectories():
    venv = VectorEmptyRoom(8, seeds=[5] * 8)
    venv.reset()
    for _ in range(100):
        obs, *_ = venv.step(venv.sample_actions())
        assert (obs == obs[0]).all()


def test_distinct_actor_seeds_diverge():
    venv = VectorEmptyRoom(8, seed=1)
    venv.reset()
    for _ in range(100):
        venv.step(venv.sample_actions())
    assert len(set(venv.states.tolist())) > 1


def test_vector_env_is_deterministic():
    def run(seed):
        venv = envs.vector_env(4, seed=seed, random_start=True)
        venv.reset()
        return np.array([venv.step(venv.sample_actions())[3] for _ in range(2000)])

    np.testing.assert_array_equal(run(3), run(3))
    assert not np.array_equal(run(3), run(4))


def test_vector_step_matches_single_env():
    venv = VectorEmptyRoom(3, seed=2)
    venv.reset()
    singles = [EmptyRoom() for _ in range(3)]
    for s in singles:
        s.reset()
    for _ in range(300):
        acts = venv.sample_actions()
        _, rewards, blocked, _ = venv.step(acts)
        for k, env in enumerate(singles):
            _, r, b, _ = env.step(int(acts[k]))
            assert (r, b) == (rewards[k], blocked[k])
            assert env.state == venv.states[k]


def test_vector_env_rejects_bad_input():
    with pytest.raises(ValueError):
        VectorEmptyRoom(0)
    with pytest.raises(ValueError):
        VectorEmptyRoom(2, seeds=[1])
    venv = VectorEmptyRoom(2)
    venv.reset()
    with pytest.raises(ValueError):
        venv.step([0, 1, 2])


def test_actions_order():
    assert ACTIONS == ("up", "down", "left", "right")
