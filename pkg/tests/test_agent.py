import math

import numpy as np
import pytest
from sklearn.base import clone

from rgvf import envs, oracle, qnet
from rgvf.agent import (AgentNet, ActorCriticAgent, PolicyEvaluationAgent, TrainConfig,
                        train_config_dict)
from rgvf.exceptions import ConfigError, ShapeError
from rgvf.targets import answer_loss, compute_targets

SMALL = dict(total_frames=2048, eval_period=512)


def small_agent(**kw):
    return PolicyEvaluationAgent(**{**SMALL, **kw})


# config

def test_train_config_defaults():
    cfg = TrainConfig()
    assert (cfg.n_actors, cfg.rollout_len, cfg.gamma, cfg.lr) == (8, 8, 0.98, 1e-3)
    assert cfg.validate() is cfg


def test_train_config_reports_every_problem():
    with pytest.raises(ConfigError) as err:
        TrainConfig(n_actors=0, gamma=1.0, lr=-1.0, optimizer="sgd").validate()
    msg = str(err.value)
    for name in ("n_actors", "gamma", "lr", "optimizer"):
        assert name in msg


def test_question_net_feature_mismatch():
    net = qnet.new_discounted_sum(2, 0.8)
    with pytest.raises(ConfigError):
        small_agent(question_net=net, features="touch").fit()


# network

def test_agent_net_shapes():
    net = AgentNet(envs.OBS_DIM, n_answers=5, n_policy=4, seed=0)
    s, v, y, pi = net.predict(envs.observation_table())
    assert s.shape == (49, 32) and v.shape == (49,) and y.shape == (49, 5)
    np.testing.assert_allclose(pi.sum(axis=1), 1.0)
    assert set(net.nets()) == {"repr", "rl_head", "answer_head"}


def test_agent_net_seed_sequence():
    a = AgentNet(envs.OBS_DIM, seed=np.random.SeedSequence(3))
    b = AgentNet(envs.OBS_DIM, seed=3)
    np.testing.assert_array_equal(a.repr.params, b.repr.params)


# estimator protocol

def test_get_params_and_clone():
    agent = small_agent(question_net=qnet.new_full_tree(envs.ACTIONS, 1), seed=4)
    params = agent.get_params()
    assert params["seed"] == 4 and params["stop_gradient"] is True
    twin = clone(agent)
    assert twin.get_params()["total_frames"] == SMALL["total_frames"]
    assert not hasattr(twin, "net_")


def test_train_config_dict():
    cfg = train_config_dict(small_agent(lr=5e-4))
    assert cfg["lr"] == 5e-4 and cfg["total_frames"] == SMALL["total_frames"]


def test_unfitted_predict_raises():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        PolicyEvaluationAgent().predict(envs.observation_table())


# determinism and outputs

@pytest.fixture(scope="module")
def fitted():
    net = qnet.new_full_tree(envs.ACTIONS, 2)
    return small_agent(question_net=net, seed=1).fit()


def test_predict_is_finite_and_deterministic(fitted):
    obs = envs.observation_table()
    v1, v2 = fitted.predict(obs), fitted.predict(obs)
    assert np.isfinite(v1).all()
    np.testing.assert_array_equal(v1, v2)
    assert fitted.transform(obs).shape == (49, 32)
    assert fitted.predict_answers(obs).shape == (49, 20)


def test_predict_rejects_bad_width(fitted):
    with pytest.raises(ShapeError):
        fitted.predict(np.zeros((2, 10)))


def test_training_is_reproducible(fitted):
    again = clone(fitted).fit()
    np.testing.assert_equal(again.metrics_, fitted.metrics_)
    np.testing.assert_array_equal(again.net_.repr.params, fitted.net_.repr.params)


def test_metrics_schedule(fitted):
    assert [r["frames"] for r in fitted.metrics_] == [0, 512, 1024, 1536, 2048]
    assert math.isnan(fitted.metrics_[0]["answer_loss"])
    assert fitted.final_mse == fitted.metrics_[-1]["value_mse"]


def test_reported_mse_matches_recomputation(fitted):
    model = envs.exact_model(envs.EmptyRoom())
    v_true = oracle.true_values(model, 0.98)
    v = fitted.predict(envs.observation_table())
    assert fitted.final_mse == pytest.approx(np.mean((v - v_true) ** 2), rel=1e-12)


def test_callback_sees_every_row():
    rows = []
    agent = small_agent(callback=rows.append).fit()
    assert rows == agent.metrics_


# gradient routing

def test_zero_learning_rate_keeps_mse_constant():
    agent = small_agent(question_net=qnet.new_full_tree(envs.ACTIONS, 1), lr=0.0).fit()
    values = {r["value_mse"] for r in agent.metrics_}
    assert len(values) == 1


class NoRLAgent(PolicyEvaluationAgent):
    """Same agent with the RL optimizer's learning rate pinned to zero."""

    def _setup(self, n_policy):
        cfg = super()._setup(n_policy)
        self.rl_opt_.lr = 0.0
        return cfg


def test_stop_gradient_isolates_representation():
    kw = dict(question_net=qnet.new_full_tree(envs.ACTIONS, 2), seed=2, **SMALL)
    normal = PolicyEvaluationAgent(**kw).fit()
    frozen_rl = NoRLAgent(**kw).fit()
    np.testing.assert_array_equal(normal.net_.repr.params, frozen_rl.net_.repr.params)
    np.testing.assert_array_equal(normal.net_.answer_head.params,
                                  frozen_rl.net_.answer_head.params)
    assert not np.array_equal(normal.net_.rl_head.params, frozen_rl.net_.rl_head.params)


def test_without_stop_gradient_rl_reaches_representation():
    kw = dict(question_net=qnet.new_full_tree(envs.ACTIONS, 2), seed=2,
              stop_gradient=False, **SMALL)
    normal = PolicyEvaluationAgent(**kw).fit()
    frozen_rl = NoRLAgent(**kw).fit()
    assert not np.array_equal(normal.net_.repr.params, frozen_rl.net_.repr.params)


def test_stop_gradient_without_questions_leaves_representation_untouched():
    agent = small_agent(question_net=None, stop_gradient=True, seed=5)
    initial = AgentNet(envs.OBS_DIM, seed=np.random.SeedSequence(5).spawn(3)[1])
    agent.fit()
    np.testing.assert_array_equal(agent.net_.repr.params, initial.repr.params)


def test_frozen_representation_baseline():
    agent = small_agent(question_net=qnet.new_full_tree(envs.ACTIONS, 1), seed=6,
                        freeze_representation=True, stop_gradient=False)
    initial = AgentNet(envs.OBS_DIM, 4, seed=np.random.SeedSequence(6).spawn(3)[1])
    agent.fit()
    np.testing.assert_array_equal(agent.net_.repr.params, initial.repr.params)


def test_answer_gradient_is_semi_gradient():
    # one-state chain: bumping into the top-left corner keeps the agent in place
    net = qnet.new_discounted_sum(1, 0.8)
    agent = small_agent(question_net=net, total_frames=64, eval_period=64, seed=7).fit()
    head = agent.net_.answer_head
    x = envs.EmptyRoom().observation(envs.state_index(1, 1))[None]
    S, s_tape = agent.net_.repr.forward(x)
    up = np.array([envs.ACTIONS.index("up")])
    _, grad, _ = agent._answer_step(S, s_tape, x, x, S, np.array([True]), up)
    frozen = compute_targets(net, [[1.0]], head(S), [0])

    def loss_at(theta, bootstrap):
        saved = head.params.copy()
        head.params[:] = theta
        try:
            y = head(S)
            batch = compute_targets(net, [[1.0]], y, [0]) if bootstrap else frozen
            return answer_loss(y, batch)[0]
        finally:
            head.params[:] = saved

    theta = head.params.copy()
    eps = 1e-6
    semi, full = np.zeros_like(theta), np.zeros_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = eps
        semi[k] = (loss_at(theta + e, False) - loss_at(theta - e, False)) / (2 * eps)
        full[k] = (loss_at(theta + e, True) - loss_at(theta - e, True)) / (2 * eps)
    np.testing.assert_allclose(grad, semi, rtol=1e-5, atol=1e-9)
    # the full gradient differs by the bootstrap factor (1 - gamma)
    np.testing.assert_allclose(full, (1 - 0.8) * semi, rtol=1e-4, atol=1e-9)
    assert np.abs(grad - full).max() > 1e-3 * np.abs(grad).max()


def test_answer_batch_uses_mapped_actions():
    net = qnet.new_full_tree(("left", "up"), 1)
    agent = small_agent(question_net=net, total_frames=64, eval_period=64).fit()
    assert agent.action_map_.tolist() == [1, -1, 0, -1]


# control

def test_actor_critic_huge_entropy_stays_uniform():
    agent = ActorCriticAgent(total_frames=20_000, eval_period=2000, entropy_coef=1e4, seed=0).fit()
    for row in agent.metrics_[1:]:
        assert abs(row["policy_entropy"] - math.log(4)) <= 0.01 * math.log(4)


def test_actor_critic_beats_random_policy():
    model = envs.exact_model(envs.EmptyRoom())
    # uniform random walk on the room is doubly stochastic, so its stationary law is uniform
    random_return = float(model.r_pi.mean())
    agent = ActorCriticAgent(total_frames=200_000, eval_period=20_000, seed=0).fit()
    assert agent.metrics_[-1]["return"] > random_return
    assert agent.metrics_[-1]["return"] > 10 * random_return


def test_actor_critic_with_questions_records_answer_loss():
    agent = ActorCriticAgent(question_net=qnet.new_full_tree(envs.ACTIONS, 1),
                             total_frames=1024, eval_period=512, seed=1).fit()
    assert set(agent.metrics_[-1]) == {"frames", "value_mse", "answer_loss",
                                       "policy_entropy", "return"}
    assert np.isfinite(agent.metrics_[-1]["answer_loss"])
    np.testing.assert_allclose(agent.policy_table().sum(axis=1), 1.0)

