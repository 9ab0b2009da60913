"""Ground truth for the empty room: true values and exact GVF answers.

Three independent routes are provided for question-network answers:

* :func:`exact_gvf_values` solves the fixed-point equations node by node
  (dense 49x49 solves for self-looped nodes, direct evaluation otherwise);
* :func:`monte_carlo_gvf` samples rollouts of the simulator, unrolling each
  node's target along the trajectory;
* :func:`tabular_td_gvf` runs one-step TD on a lookup table driven by
  :func:`rgvf.targets.compute_targets`.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import envs
from .exceptions import NumericError, UnsupportedFeatureError
from .features import TouchFeature
from .targets import compute_targets


def true_values(model, gamma_env, rewards=None, policy=None):
    """Solve ``(I - gamma P_pi) v = r_pi`` for the state values of ``policy``.

    ``policy`` is an ``(S, A)`` table; the uniform random policy by default.
    """
    if not 0.0 <= gamma_env < 1.0:
        raise NumericError(f"gamma_env must lie in [0, 1), got {gamma_env}")
    if policy is None:
        P, r = model.P_pi, model.r_pi
    else:
        P = model.policy_matrix(policy)
        r = (policy * model.rewards).sum(axis=1)
    if rewards is not None:
        r = np.asarray(rewards, dtype=np.float64)
    A = np.eye(model.n_states) - gamma_env * P
    try:
        v = np.linalg.solve(A, r)
    except np.linalg.LinAlgError as exc:
        raise NumericError(str(exc)) from exc
    residual = np.abs(A @ v - r).max()
    if not residual < 1e-10:
        raise NumericError(f"linear solve residual {residual:.3e} exceeds 1e-10")
    return v


def value_iteration(model, gamma_env, tol=1e-13, max_iter=100_000):
    """Iterate ``v <- r_pi + gamma P_pi v`` until the update is below ``tol``."""
    P, r = model.P_pi, model.r_pi
    v = np.zeros(model.n_states)
    for _ in range(max_iter):
        new = r + gamma_env * (P @ v)
        if np.abs(new - v).max() < tol:
            return new
        v = new
    raise NumericError("value iteration did not converge")


def ensure_fitted(features, observations):
    """Fit random features on ``observations`` unless they are already fitted."""
    if isinstance(features, TouchFeature) or hasattr(features, "weights_"):
        return features
    try:
        return features.fit(observations)
    except Exception as exc:  # noqa: BLE001 - reported as an unsupported feature
        raise UnsupportedFeatureError(str(exc)) from exc


def feature_table(features, model):
    """Feature values of every ``(state, action)`` pair, shape ``(S, A, n_f)``."""
    if not hasattr(features, "transition_features"):
        raise UnsupportedFeatureError(f"{type(features).__name__} has no transition_features")
    ensure_fitted(features, model.observations)
    S, A = model.successor.shape
    obs = np.repeat(model.observations, A, axis=0)
    nxt = model.observations[model.successor.ravel()]
    try:
        values = features.transition_features(obs, nxt, model.blocked.ravel())
    except Exception as exc:  # noqa: BLE001
        raise UnsupportedFeatureError(str(exc)) from exc
    return np.asarray(values, dtype=np.float64).reshape(S, A, -1)


def _uniform(model):
    return np.full(model.successor.shape, 1.0 / model.successor.shape[1])


def _action_index(net, model):
    # Question-network actions must name environment actions.
    lookup = {a: k for k, a in enumerate(model.actions)}
    try:
        return np.array([lookup[a] for a in net.actions], dtype=np.int64)
    except KeyError as exc:
        raise UnsupportedFeatureError(f"question-network action {exc} is not an env action") from exc


def gvf_bellman(net, model, F, Y, policy=None):
    """Apply every node's target operator to the answer table ``Y`` of shape ``(S, n_p)``."""
    policy = _uniform(model) if policy is None else policy
    env_idx = _action_index(net, model)
    n_actions = model.P.shape[0]
    per_action = np.stack([
        model.P[a] @ Y @ net.prediction_weights.T + F[:, a, :] @ net.feature_weights.T
        for a in range(n_actions)
    ], axis=1)  # (S, A, n_p)
    out = np.einsum("sa,san->sn", policy, per_action)
    cond = net.condition_index
    for i in np.flatnonzero(cond >= 0):
        out[:, i] = per_action[:, env_idx[cond[i]], i]
    return out


def gvf_residual(net, model, F, Y, policy=None):
    return float(np.abs(gvf_bellman(net, model, F, Y, policy) - Y).max()) if Y.size else 0.0


def exact_gvf_values(net, model, features, policy=None):
    """Exact answers of every prediction node in every state, shape ``(S, n_p)``.

    Nodes are solved in layer order. A self-looped node with loop weight ``w``
    solves ``(I - w P_i) y_i = b_i``, where ``P_i`` follows the node's
    conditioning action (or the policy) and ``b_i`` collects its feature edges
    and edges into already-solved nodes.
    """
    F = feature_table(features, model)
    if F.shape[2] != net.n_features:
        raise UnsupportedFeatureError(
            f"feature set yields {F.shape[2]} features, network expects {net.n_features}")
    policy = _uniform(model) if policy is None else policy
    env_idx = _action_index(net, model)
    S = model.n_states
    Y = np.zeros((S, net.n_predictions))
    Wp, Wf = net.prediction_weights, net.feature_weights
    order = sorted(range(net.n_predictions), key=lambda i: net.predictions[i].layer)
    for i in order:
        pi = policy
        if net.condition_index[i] >= 0:
            pi = np.zeros_like(policy)
            pi[:, env_idx[net.condition_index[i]]] = 1.0
        P_i = model.policy_matrix(pi)
        others = Wp[i].copy()
        loop = others[i]
        others[i] = 0.0
        feat = np.einsum("sa,sak->sk", pi, F) @ Wf[i]
        b = feat + P_i @ (Y @ others)
        if loop != 0.0:
            A = np.eye(S) - loop * P_i
            try:
                Y[:, i] = np.linalg.solve(A, b)
            except np.linalg.LinAlgError as exc:
                raise NumericError(f"node {i}: {exc}") from exc
        else:
            Y[:, i] = b
    residual = gvf_residual(net, model, F, Y, policy)
    if not residual < 1e-10:
        raise NumericError(f"fixed-point residual {residual:.3e} exceeds 1e-10")
    return Y


@dataclass
class MonteCarloEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    n_rollouts: int


def monte_carlo_gvf(net, features, n_rollouts=1000, seed=0, policy=None, cutoff=1e-13):
    """Rollout estimate of every node's answer from every interior state.

    Each rollout unrolls a node's target along a simulated trajectory: the
    first action is the node's condition (or drawn from ``policy``), feature
    edges accumulate the observed features, and prediction edges recurse from
    the next state. Self-loops continue the trajectory with their weight as a
    discount until it falls below ``cutoff``.
    """
    rng = np.random.default_rng(seed)
    obs_table = envs.observation_table()
    ensure_fitted(features, obs_table)
    action_ids = {a: k for k, a in enumerate(envs.ACTIONS)}
    cond = [None if p.condition is None else action_ids[p.condition] for p in net.predictions]
    cdf = None if policy is None else np.cumsum(policy, axis=1)
    Wf = net.feature_weights
    n_act = len(envs.ACTIONS)

    def draw(rows, cols, i):
        if cond[i] is not None:
            return np.full(rows.shape, cond[i])
        if cdf is None:
            return rng.integers(n_act, size=rows.shape)
        u = rng.random(rows.shape)[:, None]
        return (u > cdf[envs.state_index(rows, cols)]).sum(axis=1)

    def observe(s, s_next, blocked):
        # Evaluate features once per distinct (s, s', blocked) and scatter back.
        code = (s * envs.N_STATES + s_next) * 2 + blocked
        uniq, inverse = np.unique(code, return_inverse=True)
        us, rest = np.divmod(uniq, 2 * envs.N_STATES)
        un, ub = np.divmod(rest, 2)
        f = features.transition_features(obs_table[us], obs_table[un], ub.astype(bool))
        return np.asarray(f)[inverse.ravel()]

    def sample(i, rows, cols):
        node = net.predictions[i]
        loop = sum(e.weight for e in node.edges
                   if e.target.kind == "prediction" and e.target.index == i)
        children = [(e.target.index, e.weight) for e in node.edges
                    if e.target.kind == "prediction" and e.target.index != i]
        total = np.zeros(rows.shape)
        discount = 1.0
        while True:
            acts = draw(rows, cols, i)
            nr, nc, blocked = envs.move(rows, cols, acts)
            f = observe(envs.state_index(rows, cols), envs.state_index(nr, nc), blocked)
            step = f @ Wf[i]
            for j, w in children:
                step = step + w * sample(j, nr, nc)
            total += discount * step
            discount *= loop
            if discount < cutoff:
                return total
            rows, cols = nr, nc

    S = envs.N_STATES
    starts = np.repeat(np.arange(S), n_rollouts)
    rows0 = starts // envs.INTERIOR + 1
    cols0 = starts % envs.INTERIOR + 1
    mean = np.zeros((S, net.n_predictions))
    stderr = np.zeros_like(mean)
    for i in range(net.n_predictions):
        samples = sample(i, rows0, cols0).reshape(S, n_rollouts)
        # centre on the first sample so constant samples give an exact mean and zero spread
        shift = samples[:, :1]
        centred = samples - shift
        mean[:, i] = shift[:, 0] + centred.mean(axis=1)
        stderr[:, i] = centred.std(axis=1, ddof=1) / np.sqrt(n_rollouts) if n_rollouts > 1 else 0.0
    return MonteCarloEstimate(mean, stderr, n_rollouts)


def tabular_td_gvf(net, model, features, n_steps=1_000_000, seed=0, mode="online",
                   step_size=1.0, visit_scale=10.0):
    """Learn a lookup table of answers (one entry per state and node) with TD(0).

    Transitions arrive in sweeps that contain every ``(state, action)`` pair
    exactly once, in a random order; each transition's targets and update
    mask come from :func:`compute_targets`. ``n_steps`` counts transitions.

    ``mode="online"`` updates after every block of 49 transitions (one per
    state) with per-entry step sizes ``visit_scale / (visits + visit_scale)``.
    ``mode="batch"`` accumulates the masked TD errors of a whole sweep and
    applies their per-entry mean scaled by ``step_size`` (batch updating).
    """
    if mode not in ("batch", "online"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    F = feature_table(features, model)
    env_idx = _action_index(net, model)
    to_net_action = np.full(model.P.shape[0], -1)
    to_net_action[env_idx] = np.arange(len(env_idx))
    S, A = model.successor.shape
    Y = np.zeros((S, net.n_predictions))
    visits = np.zeros_like(Y)
    states = np.arange(S)
    n_sweeps = max(1, n_steps // (S * A))
    for _ in range(n_sweeps):
        perm = rng.permuted(np.tile(np.arange(A), (S, 1)), axis=1)
        if mode == "batch":
            err = np.zeros_like(Y)
            count = np.zeros_like(Y)
        for k in range(A):
            acts = perm[:, k]
            nxt = model.successor[states, acts]
            batch = compute_targets(net, F[states, acts], Y[nxt], to_net_action[acts])
            delta = np.where(batch.mask, batch.targets - Y, 0.0)
            if mode == "batch":
                err += delta
                count += batch.mask
            else:
                visits += batch.mask
                Y += visit_scale / (visits + visit_scale) * delta
        if mode == "batch":
            Y += step_size * err / np.maximum(count, 1.0)
    return Y


def write_solution_csv(path, model, Y):
    """Long-format dump with columns ``state_row,state_col,node_id,value``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state_row", "state_col", "node_id", "value"])
        for s, (r, c) in enumerate(model.positions):
            for i in range(Y.shape[1]):
                w.writerow([r, c, i, repr(float(Y[s, i]))])


def value_grid(model, v):
    """Reshape a per-state vector into the 7x7 interior grid."""
    grid = np.zeros((envs.INTERIOR, envs.INTERIOR))
    for s, (r, c) in enumerate(model.positions):
        grid[r - 1, c - 1] = v[s]
    return grid
