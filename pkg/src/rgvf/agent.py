"""Agents with a representation module, an RL head and an answer head.

``PolicyEvaluationAgent`` learns the state values of the uniform random
policy in the empty room with one-step TD while an answer head learns the
question network's predictions from the shared representation.
``ActorCriticAgent`` is the control variant (advantage actor-critic).

With ``stop_gradient=True`` the RL loss only trains the RL head; the
representation is shaped by the answer loss alone. Both estimators follow the
scikit-learn protocol: hyperparameters live in ``__init__``, ``fit`` trains
against the environment, ``predict`` maps observations to values and
``transform`` maps observations to the state vector.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import envs, oracle
from .exceptions import ConfigError, ShapeError
from .features import FeatureSpec
from .targets import answer_loss, compute_targets
from .tinynn import DenseNet, make_optimizer

log = logging.getLogger(__name__)

METRIC_FIELDS = ("frames", "value_mse", "answer_loss")
CONTROL_FIELDS = METRIC_FIELDS + ("policy_entropy", "return")


@dataclass
class TrainConfig:
    n_actors: int = 8
    rollout_len: int = 8
    gamma: float = 0.98
    lr: float = 1e-3
    total_frames: int = 1_000_000
    eval_period: int = 10_000
    seed: int = 0
    c: float = 1.0
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    optimizer: str = "adam"

    def validate(self):
        bad = []
        for name in ("n_actors", "rollout_len", "total_frames", "eval_period"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                bad.append(f"{name} must be a positive integer (got {value!r})")
        if not 0.0 <= self.gamma < 1.0:
            bad.append(f"gamma must lie in [0, 1) (got {self.gamma!r})")
        for name in ("lr", "c", "entropy_coef", "value_coef"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value) or value < 0:
                bad.append(f"{name} must be a nonnegative number (got {value!r})")
        if self.optimizer not in ("adam", "rmsprop"):
            bad.append(f"optimizer must be 'adam' or 'rmsprop' (got {self.optimizer!r})")
        if not isinstance(self.seed, (int, np.integer)):
            bad.append("seed must be an integer")
        if bad:
            raise ConfigError("; ".join(bad))
        return self


class AgentNet:
    """Representation module, RL head and optional answer head.

    The RL head emits the value in column 0 followed by ``n_policy`` policy
    logits. All hidden layers use ReLU; the representation output is ReLU'd
    as well since it is a hidden layer of the composed network.
    """

    def __init__(self, n_inputs, n_answers=0, n_policy=0, repr_sizes=(64, 64, 32),
                 head_hidden=32, stop_gradient=True, seed=None):
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rngs = [np.random.default_rng(s) for s in root.spawn(3)]
        repr_sizes = tuple(repr_sizes)
        self.repr = DenseNet((n_inputs,) + repr_sizes, seed=rngs[0])
        self.rl_head = DenseNet((repr_sizes[-1], head_hidden, 1 + n_policy),
                                ("relu", "identity"), seed=rngs[1])
        self.answer_head = None
        if n_answers:
            self.answer_head = DenseNet((repr_sizes[-1], head_hidden, n_answers),
                                        ("relu", "identity"), seed=rngs[2])
        self.n_policy = n_policy
        self.stop_gradient = stop_gradient

    def nets(self):
        out = {"repr": self.repr, "rl_head": self.rl_head}
        if self.answer_head is not None:
            out["answer_head"] = self.answer_head
        return out

    def predict(self, obs):
        """Returns ``(state, value, answers, policy)``; missing heads give ``None``."""
        s = self.repr(obs)
        head = self.rl_head(s)
        answers = self.answer_head(s) if self.answer_head is not None else None
        policy = softmax(head[:, 1:]) if self.n_policy else None
        return s, head[:, 0], answers, policy

    @classmethod
    def from_nets(cls, nets, stop_gradient=True):
        agent = cls.__new__(cls)
        agent.repr = nets["repr"]
        agent.rl_head = nets["rl_head"]
        agent.answer_head = nets.get("answer_head")
        agent.n_policy = agent.rl_head.n_outputs - 1
        agent.stop_gradient = stop_gradient
        return agent


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_obs(X, width):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    if X.ndim != 2 or X.shape[1] != width:
        raise ShapeError(f"expected observations of width {width}, got {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("observations contain non-finite values")
    return X


def _feature_object(features):
    if features is None:
        return None
    if isinstance(features, FeatureSpec):
        return features.build()
    if isinstance(features, dict):
        return FeatureSpec.from_dict(features).build()
    if isinstance(features, str):
        return FeatureSpec(variant=features).build()
    return features


class _BaseAgent(BaseEstimator, TransformerMixin):
    """Shared plumbing for the two agents."""

    def _train_config(self):
        fields = TrainConfig.__dataclass_fields__
        return TrainConfig(**{k: getattr(self, k) for k in fields if hasattr(self, k)}).validate()

    def _setup(self, n_policy):
        cfg = self._train_config()
        if self.question_net is not None and self.features is None:
            raise ConfigError("a question network needs a feature set")
        env_kwargs = dict(self.env_kwargs or {})
        root = np.random.SeedSequence(cfg.seed)
        env_seed, net_seed, policy_seed = root.spawn(3)
        self.venv_ = envs.VectorEmptyRoom(cfg.n_actors, seed=env_seed, **env_kwargs)
        self.model_ = envs.exact_model(self.venv_.env)
        self.observations_ = self.model_.observations
        n_answers = 0
        self.features_ = None
        if self.question_net is not None:
            self.features_ = oracle.ensure_fitted(_feature_object(self.features), self.observations_)
            n_f = getattr(self.features_, "n_features_out", None)
            if n_f != self.question_net.n_features:
                raise ConfigError(f"feature set yields {n_f} features but the question network "
                                  f"has {self.question_net.n_features}")
            lookup = {a: k for k, a in enumerate(self.question_net.actions)}
            self.action_map_ = np.array([lookup.get(a, -1) for a in envs.ACTIONS])
            n_answers = self.question_net.n_predictions
        self.net_ = AgentNet(envs.OBS_DIM, n_answers, n_policy, self.repr_sizes, self.head_hidden,
                             self.stop_gradient, seed=net_seed)
        self.policy_rng_ = np.random.default_rng(policy_seed)
        opt_kwargs = {"lr": cfg.lr}
        self.rl_opt_ = make_optimizer(cfg.optimizer, **opt_kwargs)
        self.ans_opt_ = make_optimizer(cfg.optimizer, lr=cfg.lr * (1.0 if self.stop_gradient else cfg.c))
        self.metrics_ = []
        return cfg

    def _repr_trainable(self):
        return not self.freeze_representation

    def _answer_step(self, S, s_tape, X, Xn, Sn, blocked, actions):
        """Answer-loss gradients; returns ``(loss, grad_head, grad_state)``."""
        head = self.net_.answer_head
        y, tape = head.forward(S)
        y_next = head(Sn)
        f = self.features_.transition_features(X, Xn, blocked)
        batch = compute_targets(self.question_net, f, y_next, self.action_map_[actions])
        loss, g_y = answer_loss(y, batch)
        grad, g_s = head.backward(tape, g_y)
        return loss, grad, g_s

    def _apply(self, rl_grad, rl_gs, s_tape, ans=None):
        """Run both optimizers; ``ans`` is ``(grad_head, grad_state)`` or ``None``."""
        net = self.net_
        params, grads = [net.rl_head.params], [rl_grad]
        train_repr = self._repr_trainable()
        if train_repr and not self.stop_gradient:
            params.append(net.repr.params)
            grads.append(net.repr.backward(s_tape, rl_gs)[0])
        self.rl_opt_.apply_gradients(params, grads)
        if ans is not None:
            params, grads = [net.answer_head.params], [ans[0]]
            if train_repr:
                params.append(net.repr.params)
                grads.append(net.repr.backward(s_tape, ans[1])[0])
            self.ans_opt_.apply_gradients(params, grads)

    def transform(self, X):
        check_is_fitted(self, "net_")
        return self.net_.repr(_check_obs(X, envs.OBS_DIM))

    def predict(self, X):
        """State values for a batch of observations."""
        check_is_fitted(self, "net_")
        return self.net_.predict(_check_obs(X, envs.OBS_DIM))[1]

    def predict_answers(self, X):
        check_is_fitted(self, "net_")
        return self.net_.predict(_check_obs(X, envs.OBS_DIM))[2]

    def value_grid(self):
        check_is_fitted(self, "net_")
        return oracle.value_grid(self.model_, self.predict(self.observations_))


class PolicyEvaluationAgent(_BaseAgent):
    """TD policy evaluation of the uniform random policy with GVF auxiliary answers.

    Parameters
    ----------
    question_net : QuestionNetwork or None
        Auxiliary questions; ``None`` trains the value function alone.
    features : FeatureSpec, dict, str or fitted transformer
        Feature set the question network is defined over.
    stop_gradient : bool
        Block value-loss gradients from reaching the representation.
    freeze_representation : bool
        Keep the randomly initialized representation fixed (baseline).
    c : float
        Answer learning-rate multiplier, used only when ``stop_gradient`` is False.
    """

    def __init__(self, question_net=None, features="touch", stop_gradient=True,
                 freeze_representation=False, repr_sizes=(64, 64, 32), head_hidden=32,
                 lr=1e-3, c=1.0, n_actors=8, rollout_len=8, gamma=0.98,
                 total_frames=1_000_000, eval_period=10_000, seed=0, optimizer="adam",
                 env_kwargs=None, callback=None):
        self.question_net = question_net
        self.features = features
        self.stop_gradient = stop_gradient
        self.freeze_representation = freeze_representation
        self.repr_sizes = repr_sizes
        self.head_hidden = head_hidden
        self.lr = lr
        self.c = c
        self.n_actors = n_actors
        self.rollout_len = rollout_len
        self.gamma = gamma
        self.total_frames = total_frames
        self.eval_period = eval_period
        self.seed = seed
        self.optimizer = optimizer
        self.env_kwargs = env_kwargs
        self.callback = callback

    def evaluate(self):
        """Mean squared error of the learned values against the true values over all states."""
        v = self.predict(self.observations_)
        return float(np.mean((v - self.true_values_) ** 2))

    def fit(self, X=None, y=None):
        """Train for ``total_frames`` environment frames; ``X`` and ``y`` are ignored."""
        cfg = self._setup(n_policy=0)
        self.true_values_ = oracle.true_values(self.model_, cfg.gamma)
        venv, net = self.venv_, self.net_
        N, T = cfg.n_actors, cfg.rollout_len
        per_update = N * T
        n_updates = cfg.total_frames // per_update
        obs = venv.reset()
        D = obs.shape[1]
        X = np.empty((T, N, D))
        Xn = np.empty((T, N, D))
        rewards = np.empty((T, N))
        blocked = np.empty((T, N), dtype=bool)
        actions = np.empty((T, N), dtype=np.int64)
        window = []
        self._record(0, window)
        next_eval = cfg.eval_period
        for update in range(1, n_updates + 1):
            for t in range(T):
                acts = venv.sample_actions()
                X[t] = obs
                obs, rewards[t], blocked[t], _ = venv.step(acts)
                Xn[t] = obs
                actions[t] = acts
            loss = self._update(X.reshape(-1, D), Xn.reshape(-1, D), rewards.ravel(),
                                blocked.ravel(), actions.ravel(), cfg.gamma)
            if loss is not None:
                window.append(loss)
            frames = update * per_update
            if frames >= next_eval or update == n_updates:
                self._record(frames, window)
                window = []
                while next_eval <= frames:
                    next_eval += cfg.eval_period
        return self

    def _update(self, X, Xn, r, blocked, actions, gamma):
        net = self.net_
        S, s_tape = net.repr.forward(X)
        Sn = net.repr(Xn)
        v, rl_tape = net.rl_head.forward(S)
        target = r + gamma * net.rl_head(Sn)[:, 0]
        B = len(r)
        g_v = (2.0 / B) * (v[:, 0] - target)
        rl_grad, rl_gs = net.rl_head.backward(rl_tape, g_v[:, None])
        ans = None
        loss = None
        if net.answer_head is not None:
            loss, g_head, g_s = self._answer_step(S, s_tape, X, Xn, Sn, blocked, actions)
            ans = (g_head, g_s)
        self._apply(rl_grad, rl_gs, s_tape, ans)
        return loss

    def _record(self, frames, window):
        row = {"frames": int(frames), "value_mse": self.evaluate(),
               "answer_loss": float(np.mean(window)) if window else float("nan")}
        self.metrics_.append(row)
        log.debug("frames=%d value_mse=%.6g", frames, row["value_mse"])
        if self.callback is not None:
            self.callback(row)

    @property
    def final_mse(self):
        check_is_fitted(self, "metrics_")
        return self.metrics_[-1]["value_mse"]


class ActorCriticAgent(_BaseAgent):
    """Advantage actor-critic on the empty room's goal reward.

    Returns are bootstrapped over each rollout (n-step) from the value of the
    last observation. The policy loss is ``-log pi(a|s) * advantage``
    (advantage held constant), the value loss is weighted by ``value_coef``
    and the entropy bonus by ``entropy_coef``.
    """

    def __init__(self, question_net=None, features="touch", stop_gradient=False,
                 freeze_representation=False, repr_sizes=(64, 64, 32), head_hidden=32,
                 lr=1e-3, c=1.0, entropy_coef=0.01, value_coef=0.5, n_actors=8,
                 rollout_len=8, gamma=0.98, total_frames=1_000_000, eval_period=10_000,
                 seed=0, optimizer="adam", env_kwargs=None, callback=None):
        self.question_net = question_net
        self.features = features
        self.stop_gradient = stop_gradient
        self.freeze_representation = freeze_representation
        self.repr_sizes = repr_sizes
        self.head_hidden = head_hidden
        self.lr = lr
        self.c = c
        self.entropy_coef = entropy_coef
        self.value_coef = value_coef
        self.n_actors = n_actors
        self.rollout_len = rollout_len
        self.gamma = gamma
        self.total_frames = total_frames
        self.eval_period = eval_period
        self.seed = seed
        self.optimizer = optimizer
        self.env_kwargs = env_kwargs
        self.callback = callback

    def policy(self, X):
        """Action probabilities for a batch of observations."""
        check_is_fitted(self, "net_")
        return self.net_.predict(_check_obs(X, envs.OBS_DIM))[3]

    def policy_table(self):
        return self.policy(self.observations_)

    def exact_policy_values(self):
        """True discounted values of the current policy (linear solve)."""
        return oracle.true_values(self.model_, self.gamma, policy=self.policy_table())

    def fit(self, X=None, y=None):
        cfg = self._setup(n_policy=len(envs.ACTIONS))
        venv = self.venv_
        N, T = cfg.n_actors, cfg.rollout_len
        n_updates = cfg.total_frames // (N * T)
        obs = venv.reset()
        D = obs.shape[1]
        Xb = np.empty((T, N, D))
        Xn = np.empty((T, N, D))
        rewards = np.empty((T, N))
        blocked = np.empty((T, N), dtype=bool)
        actions = np.empty((T, N), dtype=np.int64)
        window = {"answer_loss": [], "entropy": [], "reward": []}
        self._record(0, window)
        next_eval = cfg.eval_period
        for update in range(1, n_updates + 1):
            for t in range(T):
                _, _, _, probs = self.net_.predict(obs)
                u = self.policy_rng_.random(N)[:, None]
                acts = np.minimum((u > np.cumsum(probs, axis=1)).sum(axis=1), probs.shape[1] - 1)
                Xb[t] = obs
                obs, rewards[t], blocked[t], _ = venv.step(acts)
                Xn[t] = obs
                actions[t] = acts
            self._update(Xb, Xn, rewards, blocked, actions, cfg, window)
            frames = update * N * T
            if frames >= next_eval or update == n_updates:
                self._record(frames, window)
                window = {k: [] for k in window}
                while next_eval <= frames:
                    next_eval += cfg.eval_period
        return self

    def _update(self, Xb, Xn, rewards, blocked, actions, cfg, window):
        net = self.net_
        T, N, D = Xb.shape
        X = Xb.reshape(-1, D)
        S, s_tape = net.repr.forward(X)
        head, rl_tape = net.rl_head.forward(S)
        v = head[:, 0]
        logits = head[:, 1:]
        # n-step returns bootstrapped from the value after the last step
        bootstrap = net.rl_head(net.repr(Xn[-1]))[:, 0]
        returns = np.empty((T, N))
        running = bootstrap
        for t in range(T - 1, -1, -1):
            running = rewards[t] + cfg.gamma * running
            returns[t] = running
        returns = returns.ravel()
        adv = returns - v
        B = len(v)
        probs = softmax(logits)
        logp = np.log(probs + 1e-300)
        a = actions.ravel()
        onehot = np.zeros_like(probs)
        onehot[np.arange(B), a] = 1.0
        entropy = -(probs * logp).sum(axis=1)
        # d/dlogits of -mean(logp[a] * adv) - entropy_coef * mean(H) + value_coef * mean((R - v)^2)
        g_logits = -(onehot - probs) * adv[:, None] / B
        g_entropy = probs * (logp + entropy[:, None])  # dH/dlogits = -p * (logp + H)
        g_logits += cfg.entropy_coef * g_entropy / B
        g_v = cfg.value_coef * 2.0 * (v - returns) / B
        g_head = np.concatenate([g_v[:, None], g_logits], axis=1)
        rl_grad, rl_gs = net.rl_head.backward(rl_tape, g_head)
        ans = None
        if net.answer_head is not None:
            Sn = net.repr(Xn.reshape(-1, D))
            loss, g_ans, g_s = self._answer_step(S, s_tape, X, Xn.reshape(-1, D), Sn,
                                                 blocked.ravel(), a)
            window["answer_loss"].append(loss)
            ans = (g_ans, g_s)
        self._apply(rl_grad, rl_gs, s_tape, ans)
        window["entropy"].append(float(entropy.mean()))
        window["reward"].append(float(rewards.mean()))

    def _record(self, frames, window):
        v = self.predict(self.observations_)
        v_true = self.exact_policy_values()
        row = {
            "frames": int(frames),
            "value_mse": float(np.mean((v - v_true) ** 2)),
            "answer_loss": float(np.mean(window["answer_loss"])) if window["answer_loss"] else float("nan"),
            "policy_entropy": float(np.mean(window["entropy"])) if window["entropy"] else float("nan"),
            "return": float(np.mean(window["reward"])) if window["reward"] else float("nan"),
        }
        self.metrics_.append(row)
        if self.callback is not None:
            self.callback(row)


def train_config_dict(agent):
    """Training hyperparameters of an agent as a plain dict."""
    return asdict(agent._train_config())
