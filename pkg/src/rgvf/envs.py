"""The empty-room grid world, its exact transition model, and a lock-step actor pool.

The room is a 9x9 grid whose border cells are walls, leaving a 7x7 interior.
Rows count from the top. The agent moves up/down/left/right; moving into a
wall leaves it in place and raises the ``blocked`` flag. Entering the goal
cell pays reward 1. The task never terminates.
"""

from dataclasses import dataclass, field

import numpy as np

from .features import Transition

ACTIONS = ("up", "down", "left", "right")
MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)], dtype=np.int64)
GRID = 9
INTERIOR = 7
N_STATES = INTERIOR * INTERIOR
OBS_SHAPE = (2, GRID, GRID)
OBS_DIM = 2 * GRID * GRID
DEFAULT_GOAL = (1, 6)
DEFAULT_START = (7, 1)


def state_index(row, col):
    return (row - 1) * INTERIOR + (col - 1)


def state_position(state):
    return divmod(int(state), INTERIOR)[0] + 1, int(state) % INTERIOR + 1


def _wall_plane():
    plane = np.ones((GRID, GRID))
    plane[1:-1, 1:-1] = 0.0
    return plane


def observation_table():
    """Observation of every interior state, shape ``(49, 162)``."""
    obs = np.zeros((N_STATES,) + OBS_SHAPE)
    obs[:, 0] = _wall_plane()
    for s in range(N_STATES):
        r, c = state_position(s)
        obs[s, 1, r, c] = 1.0
    return obs.reshape(N_STATES, OBS_DIM)


_OBS_TABLE = observation_table()
_OBS_TABLE.setflags(write=False)


def decode_position(observation):
    """Recover ``(row, col)`` from the agent plane of an observation."""
    plane = np.asarray(observation).reshape(OBS_SHAPE)[1]
    r, c = np.unravel_index(int(np.argmax(plane)), plane.shape)
    return int(r), int(c)


def move(rows, cols, actions):
    """Vectorized dynamics: returns ``(next_rows, next_cols, blocked)``."""
    d = MOVES[np.asarray(actions)]
    nr = np.asarray(rows) + d[..., 0]
    nc = np.asarray(cols) + d[..., 1]
    blocked = (nr < 1) | (nr > INTERIOR) | (nc < 1) | (nc > INTERIOR)
    return np.where(blocked, rows, nr), np.where(blocked, cols, nc), blocked


def _check_cell(cell, name):
    r, c = (int(v) for v in cell)
    if not (1 <= r <= INTERIOR and 1 <= c <= INTERIOR):
        raise ValueError(f"{name} {cell} is not an interior cell")
    return r, c


class EmptyRoom:
    """Single empty-room environment.

    Parameters
    ----------
    goal, start : (row, col)
        Interior cells; rows and columns are 1..7 on the 9x9 grid.
    random_start : bool
        Draw the start cell uniformly on every reset instead of using ``start``.
    reward_on_stay : bool
        Also pay the reward when a blocked move leaves the agent on the goal.
    """

    actions = ACTIONS
    n_states = N_STATES
    observation_dim = OBS_DIM

    def __init__(self, goal=DEFAULT_GOAL, start=DEFAULT_START, random_start=False,
                 reward_on_stay=False, seed=None):
        self.goal = _check_cell(goal, "goal")
        self.start = _check_cell(start, "start")
        self.random_start = random_start
        self.reward_on_stay = reward_on_stay
        self._rng = np.random.default_rng(seed)
        self.position = self.start

    @property
    def state(self):
        return state_index(*self.position)

    def observation(self, state=None):
        return _OBS_TABLE[self.state if state is None else state].copy()

    def reward(self, row, col, next_row, next_col):
        """Vectorized reward of moving from ``(row, col)`` to ``(next_row, next_col)``."""
        on_goal = (np.asarray(next_row) == self.goal[0]) & (np.asarray(next_col) == self.goal[1])
        if not self.reward_on_stay:
            on_goal = on_goal & ((np.asarray(next_row) != row) | (np.asarray(next_col) != col))
        return on_goal.astype(np.float64)

    def reset(self, seed=None):
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        if self.random_start:
            self.position = state_position(int(self._rng.integers(N_STATES)))
        else:
            self.position = self.start
        return self.state, self.observation()

    def step(self, action):
        if not 0 <= int(action) < len(ACTIONS):
            raise ValueError(f"action must be an index into {ACTIONS}")
        obs = self.observation()
        r, c = self.position
        nr, nc, blocked = move(r, c, int(action))
        self.position = (int(nr), int(nc))
        reward = float(self.reward(r, c, nr, nc))
        next_obs = self.observation()
        transition = Transition(obs, int(action), next_obs, reward, bool(blocked), False)
        return next_obs, reward, bool(blocked), transition


@dataclass
class ExactModel:
    """Tabular model of the empty room under the uniform random policy."""

    actions: tuple
    positions: list
    successor: np.ndarray          # (S, A) next-state index
    blocked: np.ndarray            # (S, A) bool
    rewards: np.ndarray            # (S, A) reward of taking a in s
    P: np.ndarray                  # (A, S, S)
    observations: np.ndarray = field(repr=False)

    @property
    def n_states(self):
        return len(self.positions)

    @property
    def P_pi(self):
        return self.P.mean(axis=0)

    @property
    def r_pi(self):
        return self.rewards.mean(axis=1)

    def policy_matrix(self, policy):
        """``sum_a policy[s, a] P_a[s, :]`` for a per-state action distribution."""
        return np.einsum("sa,ast->st", policy, self.P)


def exact_model(env):
    """Enumerate the 49 interior states and simulate every action once."""
    positions = [state_position(s) for s in range(N_STATES)]
    rows = np.array([p[0] for p in positions])[:, None].repeat(len(ACTIONS), 1)
    cols = np.array([p[1] for p in positions])[:, None].repeat(len(ACTIONS), 1)
    acts = np.arange(len(ACTIONS))[None, :].repeat(N_STATES, 0)
    nr, nc, blocked = move(rows, cols, acts)
    successor = state_index(nr, nc)
    rewards = env.reward(rows, cols, nr, nc)
    P = np.zeros((len(ACTIONS), N_STATES, N_STATES))
    for a in range(len(ACTIONS)):
        P[a, np.arange(N_STATES), successor[:, a]] = 1.0
    return ExactModel(ACTIONS, positions, successor, blocked, rewards, P, _OBS_TABLE)


class VectorEmptyRoom:
    """``n_actors`` independent rooms stepped in lock-step.

    Each actor owns a random stream (spawned from ``seed`` or given explicitly
    through ``seeds``) used for random starts and for the uniform random
    behaviour policy exposed by :meth:`sample_actions`.
    """

    _BUFFER = 1024

    def __init__(self, n_actors, seed=None, seeds=None, **env_kwargs):
        if n_actors < 1:
            raise ValueError("n_actors must be >= 1")
        self.n_actors = int(n_actors)
        self.env = EmptyRoom(**env_kwargs)
        if seeds is None:
            root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
            streams = root.spawn(self.n_actors)
        else:
            if len(seeds) != self.n_actors:
                raise ValueError("one seed per actor is required")
            streams = list(seeds)
        self._rngs = [np.random.default_rng(s) for s in streams]
        self._actions = np.zeros((self.n_actors, self._BUFFER), dtype=np.int64)
        self._cursor = self._BUFFER
        self.rows = np.zeros(self.n_actors, dtype=np.int64)
        self.cols = np.zeros(self.n_actors, dtype=np.int64)

    @property
    def states(self):
        return state_index(self.rows, self.cols)

    def reset(self):
        for i, rng in enumerate(self._rngs):
            if self.env.random_start:
                self.rows[i], self.cols[i] = state_position(int(rng.integers(N_STATES)))
            else:
                self.rows[i], self.cols[i] = self.env.start
        return _OBS_TABLE[self.states]

    def sample_actions(self):
        """One uniform random action per actor."""
        if self._cursor == self._BUFFER:
            for i, rng in enumerate(self._rngs):
                self._actions[i] = rng.integers(len(ACTIONS), size=self._BUFFER)
            self._cursor = 0
        acts = self._actions[:, self._cursor].copy()
        self._cursor += 1
        return acts

    def step(self, actions):
        """Returns ``(observations, rewards, blocked, next_states)``."""
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (self.n_actors,):
            raise ValueError(f"expected {self.n_actors} actions")
        nr, nc, blocked = move(self.rows, self.cols, actions)
        rewards = self.env.reward(self.rows, self.cols, nr, nc)
        self.rows, self.cols = nr, nc
        states = self.states
        return _OBS_TABLE[states], rewards, blocked, states


def vector_env(n_actors, seed=None, **kwargs):
    return VectorEmptyRoom(n_actors, seed=seed, **kwargs)
