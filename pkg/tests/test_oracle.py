import itertools

import numpy as np
import pytest

from rgvf import envs, oracle, qnet
from rgvf.exceptions import NumericError, UnsupportedFeatureError
from rgvf.features import RandomLinearFeatures, TouchFeature

UP, DOWN, LEFT, RIGHT = range(4)


@pytest.fixture(scope="module")
def model():
    return envs.exact_model(envs.EmptyRoom())


# true values

def test_zero_reward_gives_zero_values(model):
    np.testing.assert_array_equal(oracle.true_values(model, 0.98, rewards=np.zeros(49)), 0.0)


def test_zero_discount_gives_rewards(model):
    np.testing.assert_allclose(oracle.true_values(model, 0.0), model.r_pi, atol=1e-15)


def test_true_values_satisfy_bellman(model):
    v = oracle.true_values(model, 0.98)
    residual = np.abs((np.eye(49) - 0.98 * model.P_pi) @ v - model.r_pi).max()
    assert residual < 1e-10
    assert np.abs(v - oracle.value_iteration(model, 0.98)).max() < 1e-8


def test_goal_cell_value(model):
    v = oracle.true_values(model, 0.98)
    goal = envs.state_index(1, 6)
    assert v[goal] == pytest.approx(oracle.value_iteration(model, 0.98)[goal], abs=1e-8)
    grid = oracle.value_grid(model, v)
    # values peak next to the goal and bottom out in the far corner
    best = np.unravel_index(np.argmax(grid), grid.shape)
    assert abs(best[0] - 0) + abs(best[1] - 5) <= 1
    assert grid[6, 0] == grid.min()


def test_true_values_reject_bad_gamma(model):
    with pytest.raises(NumericError):
        oracle.true_values(model, 1.0)


def test_policy_values_match_uniform(model):
    uniform = np.full((49, 4), 0.25)
    np.testing.assert_allclose(oracle.true_values(model, 0.9, policy=uniform),
                               oracle.true_values(model, 0.9), atol=1e-12)


# exact GVF answers

def test_depth_one_up_node_on_top_row(model):
    net = qnet.new_full_tree(envs.ACTIONS, 1)
    Y = oracle.exact_gvf_values(net, model, TouchFeature())
    for c in range(1, 8):
        assert Y[envs.state_index(1, c), UP] == 1.0
    assert Y[envs.state_index(4, 4)].tolist() == [0.0] * 4


def test_depth_one_table_marks_wall_adjacent_pairs(model):
    Y = oracle.exact_gvf_values(qnet.new_full_tree(envs.ACTIONS, 1), model, TouchFeature())
    np.testing.assert_array_equal(Y, model.blocked.astype(float))


def test_discounted_sum_layer_zero_solve(model):
    net = qnet.new_discounted_sum(1, 0.8)
    Y = oracle.exact_gvf_values(net, model, TouchFeature())
    f_bar = model.blocked.mean(axis=1)
    expected = np.linalg.solve(np.eye(49) - 0.8 * model.P_pi, f_bar)
    np.testing.assert_allclose(Y[:, 0], expected, atol=1e-13)


def brute_force_tree(model, net):
    """Enumerate every two-step action path of a depth-2 full tree."""
    Y = np.zeros((49, net.n_predictions))
    blocked = model.blocked.astype(float)
    for i, node in enumerate(net.predictions):
        a0 = envs.ACTIONS.index(node.condition)
        for s in range(49):
            s1 = model.successor[s, a0]
            if node.layer == 1:
                Y[s, i] = blocked[s, a0]
                continue
            parent = net.predictions[node.edges[0].target.index]
            a1 = envs.ACTIONS.index(parent.condition)
            Y[s, i] = blocked[s, a0] + blocked[s1, a1]
    return Y


def test_full_tree_depth_two_brute_force(model):
    net = qnet.new_full_tree(envs.ACTIONS, 2)
    Y = oracle.exact_gvf_values(net, model, TouchFeature())
    np.testing.assert_allclose(Y, brute_force_tree(model, net), atol=1e-12)


def test_global_fixed_point(model):
    net = qnet.generate_random(qnet.GeneratorConfig(2, 0.8, envs.ACTIONS, 2, 3, seed=4))
    feats = RandomLinearFeatures(2, random_state=4)
    Y = oracle.exact_gvf_values(net, model, feats)
    F = oracle.feature_table(feats, model)
    assert oracle.gvf_residual(net, model, F, Y) < 1e-10


def mirror_state(s):
    r, c = envs.state_position(s)
    return envs.state_index(r, 8 - c)


def test_full_tree_mirror_symmetry(model):
    net = qnet.new_full_tree(envs.ACTIONS, 3)
    Y = oracle.exact_gvf_values(net, model, TouchFeature())
    swap = {"up": "up", "down": "down", "left": "right", "right": "left"}

    def path(i):
        out = []
        while True:
            node = net.predictions[i]
            out.append(node.condition)
            parents = [e.target.index for e in node.edges if e.target.kind == qnet.PREDICTION]
            if not parents:
                return tuple(out)
            i = parents[0]

    index = {path(i): i for i in range(net.n_predictions)}
    for i in range(net.n_predictions):
        j = index[tuple(swap[a] for a in path(i))]
        for s in range(49):
            assert Y[mirror_state(s), j] == pytest.approx(Y[s, i], abs=1e-12)


def test_unsupported_features(model):
    with pytest.raises(UnsupportedFeatureError):
        oracle.exact_gvf_values(qnet.new_discounted_sum(1, 0.8), model, object())
    with pytest.raises(UnsupportedFeatureError):
        oracle.exact_gvf_values(qnet.new_discounted_sum(2, 0.8), model, TouchFeature())


def test_unknown_action_is_unsupported(model):
    net = qnet.new_full_tree(("a", "b"), 1)
    with pytest.raises(UnsupportedFeatureError):
        oracle.exact_gvf_values(net, model, TouchFeature())


# Monte Carlo

def test_monte_carlo_deterministic_node_is_exact(model):
    net = qnet.new_full_tree(envs.ACTIONS, 1)
    est = oracle.monte_carlo_gvf(net, TouchFeature(), n_rollouts=5, seed=0)
    np.testing.assert_array_equal(est.mean, model.blocked.astype(float))
    np.testing.assert_array_equal(est.stderr, 0.0)


def test_monte_carlo_discounted_sum_within_three_se(model):
    net = qnet.new_discounted_sum(1, 0.8)
    exact = oracle.exact_gvf_values(net, model, TouchFeature())
    # about 10^5 visited transitions per start state
    est = oracle.monte_carlo_gvf(net, TouchFeature(), n_rollouts=2000, seed=1)
    z = np.abs(est.mean - exact) / est.stderr
    assert z.max() < 3.0, z.max()
    assert np.abs(est.mean - exact)[envs.state_index(4, 4)].max() < 1e-2


def test_monte_carlo_is_reproducible():
    net = qnet.new_full_tree(envs.ACTIONS, 2)
    a = oracle.monte_carlo_gvf(net, TouchFeature(), n_rollouts=20, seed=3)
    b = oracle.monte_carlo_gvf(net, TouchFeature(), n_rollouts=20, seed=3)
    np.testing.assert_array_equal(a.mean, b.mean)


def test_monte_carlo_with_policy(model):
    policy = np.tile([0.7, 0.1, 0.1, 0.1], (49, 1))
    net = qnet.new_discounted_sum(1, 0.5)
    exact = oracle.exact_gvf_values(net, model, TouchFeature(), policy=policy)
    est = oracle.monte_carlo_gvf(net, TouchFeature(), n_rollouts=2000, seed=2, policy=policy)
    assert np.abs(est.mean - exact).max() < 5 * est.stderr.max()


# tabular TD

def test_tabular_td_converges_on_small_tree(model):
    net = qnet.new_full_tree(envs.ACTIONS, 2)
    exact = oracle.exact_gvf_values(net, model, TouchFeature())
    learned = oracle.tabular_td_gvf(net, model, TouchFeature(), n_steps=100_000, seed=0)
    assert np.abs(learned - exact).max() < 1e-2


def test_tabular_td_batch_mode(model):
    net = qnet.new_discounted_sum(1, 0.8)
    exact = oracle.exact_gvf_values(net, model, TouchFeature())
    learned = oracle.tabular_td_gvf(net, model, TouchFeature(), n_steps=200_000, mode="batch")
    assert np.abs(learned - exact).max() < 1e-10


def test_tabular_td_rejects_mode(model):
    with pytest.raises(ValueError):
        oracle.tabular_td_gvf(qnet.new_discounted_sum(1, 0.8), model, TouchFeature(), mode="x")


# output

def test_solution_csv(tmp_path, model):
    net = qnet.new_full_tree(envs.ACTIONS, 1)
    Y = oracle.exact_gvf_values(net, model, TouchFeature())
    path = tmp_path / "sol.csv"
    oracle.write_solution_csv(path, model, Y)
    lines = path.read_text().splitlines()
    assert lines[0] == "state_row,state_col,node_id,value"
    assert len(lines) == 1 + 49 * 4
    assert lines[1] == "1,1,0,1.0"


def test_value_grid_layout(model):
    grid = oracle.value_grid(model, np.arange(49.0))
    assert grid.shape == (7, 7)
    assert grid[0, 0] == 0 and grid[0, 6] == 6 and grid[6, 6] == 48


def test_feature_table_random_linear(model):
    feats = RandomLinearFeatures(3, random_state=0)
    F = oracle.feature_table(feats, model)
    assert F.shape == (49, 4, 3)
    s = envs.state_index(1, 1)
    np.testing.assert_array_equal(F[s, UP], 0.0)
    moved = feats.transition_features(model.observations[s], model.observations[s + 1])[0]
    np.testing.assert_allclose(F[s, RIGHT], moved)


def test_brute_force_helper_covers_all_paths():
    # sanity: every two-step path appears exactly once in the depth-2 tree
    net = qnet.new_full_tree(envs.ACTIONS, 2)
    seen = set()
    for node in net.predictions:
        if node.layer == 2:
            parent = net.predictions[node.edges[0].target.index]
            seen.add((node.condition, parent.condition))
    assert seen == set(itertools.product(envs.ACTIONS, repeat=2))
