"""Transition features ``f(O_t, A_t, O_{t+1})``.

Random features follow the scikit-learn transformer protocol: ``fit`` draws
the random functionals for the observed input shape (deterministically from
``random_state``), ``transform`` evaluates the raw functionals ``g(O)``, and
``transition_features`` applies the change transform ``|g(O') - g(O)|``.
"""

from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, ShapeError


@dataclass(frozen=True)
class Transition:
    observation: np.ndarray
    action: int
    next_observation: np.ndarray
    reward: float = 0.0
    blocked: bool = False
    terminal: bool = False


class TouchFeature(BaseEstimator, TransformerMixin):
    """1 when the attempted move was blocked by a wall, else 0."""

    n_features_out = 1

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        raise TypeError("touch depends on the blocked flag; use transition_features")

    def transition_features(self, obs, next_obs, blocked):
        if blocked is None:
            raise ShapeError("touch needs the blocked flag of each transition")
        blocked = np.atleast_1d(np.asarray(blocked, dtype=np.float64))
        return blocked.reshape(-1, 1)


class RandomLinearFeatures(BaseEstimator, TransformerMixin):
    """``n_features`` random linear functionals of the flattened observation.

    Weights are i.i.d. uniform on ``[low, high]``.
    """

    def __init__(self, n_features=64, low=-1.0, high=1.0, random_state=0):
        self.n_features = n_features
        self.low = low
        self.high = high
        self.random_state = random_state

    @property
    def n_features_out(self):
        return self.n_features

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim < 2:
            raise ShapeError("fit expects a batch of observations")
        if self.n_features < 1:
            raise ConfigError("n_features must be positive")
        self.input_shape_ = X.shape[1:]
        n_in = int(np.prod(self.input_shape_))
        rng = np.random.default_rng(self.random_state)
        self.weights_ = rng.uniform(self.low, self.high, size=(n_in, self.n_features))
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape == self.input_shape_:
            X = X[None]
        flat_ok = X.ndim == 2 and X.shape[1] == self.weights_.shape[0]
        if X.shape[1:] != self.input_shape_ and not flat_ok:
            raise ShapeError(f"observation shape {X.shape[1:]} != fitted {self.input_shape_}")
        return X.reshape(len(X), -1) @ self.weights_

    def transition_features(self, obs, next_obs, blocked=None):
        return np.abs(self.transform(next_obs) - self.transform(obs))


class RandomPatchFeatures(BaseEstimator, TransformerMixin):
    """Shared random functionals applied to each cell of a patch grid.

    The image (``(H, W)`` or ``(H, W, C)``) is cut into ``patch_rows x
    patch_cols`` disjoint patches. Function ``j`` is one random linear map
    shared by every patch; output column ``p * functions_per_patch + j`` holds
    function ``j`` on patch ``p`` (patches in row-major order).
    """

    def __init__(self, patch_rows=4, patch_cols=4, functions_per_patch=1,
                 low=-1.0, high=1.0, random_state=0):
        self.patch_rows = patch_rows
        self.patch_cols = patch_cols
        self.functions_per_patch = functions_per_patch
        self.low = low
        self.high = high
        self.random_state = random_state

    @property
    def n_features_out(self):
        return self.patch_rows * self.patch_cols * self.functions_per_patch

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim not in (3, 4):
            raise ShapeError("fit expects a batch of (H, W) or (H, W, C) images")
        h, w = X.shape[1:3]
        if h % self.patch_rows or w % self.patch_cols:
            raise ShapeError(f"image {h}x{w} is not divisible into a "
                             f"{self.patch_rows}x{self.patch_cols} patch grid")
        self.image_shape_ = X.shape[1:]
        self.patch_shape_ = (h // self.patch_rows, w // self.patch_cols) + X.shape[3:]
        rng = np.random.default_rng(self.random_state)
        self.weights_ = rng.uniform(self.low, self.high,
                                    size=(self.functions_per_patch,) + self.patch_shape_)
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape == self.image_shape_:
            X = X[None]
        if X.shape[1:] != self.image_shape_:
            raise ShapeError(f"image shape {X.shape[1:]} != fitted {self.image_shape_}")
        ph, pw = self.patch_shape_[:2]
        n = len(X)
        tiles = X.reshape((n, self.patch_rows, ph, self.patch_cols, pw) + X.shape[3:])
        tiles = np.moveaxis(tiles, 3, 2)  # (n, rows, cols, ph, pw, ...)
        tiles = tiles.reshape(n, self.patch_rows * self.patch_cols, -1)
        out = tiles @ self.weights_.reshape(self.functions_per_patch, -1).T
        return out.reshape(n, -1)

    def transition_features(self, obs, next_obs, blocked=None):
        return np.abs(self.transform(next_obs) - self.transform(obs))


@dataclass(frozen=True)
class FeatureSpec:
    """Serializable description of a feature set.

    ``variant`` is ``touch``, ``random_linear`` or ``random_patch_linear``.
    """

    variant: str = "touch"
    count: int = 1
    seed: int = 0
    low: float = -1.0
    high: float = 1.0
    patch_rows: int = 4
    patch_cols: int = 4
    functions_per_patch: int = 1

    @property
    def n_features(self):
        if self.variant == "touch":
            return 1
        if self.variant == "random_linear":
            return self.count
        return self.patch_rows * self.patch_cols * self.functions_per_patch

    def build(self):
        if self.variant == "touch":
            return TouchFeature()
        if self.variant == "random_linear":
            if self.count < 1:
                raise ConfigError("random_linear needs count >= 1")
            return RandomLinearFeatures(self.count, self.low, self.high, self.seed)
        if self.variant == "random_patch_linear":
            return RandomPatchFeatures(self.patch_rows, self.patch_cols, self.functions_per_patch,
                                       self.low, self.high, self.seed)
        raise ConfigError(f"unknown feature variant {self.variant!r}")

    def to_dict(self):
        d = asdict(self)
        if self.variant == "touch":
            return {"variant": "touch"}
        if self.variant == "random_linear":
            for k in ("patch_rows", "patch_cols", "functions_per_patch"):
                d.pop(k)
        else:
            d.pop("count")
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown feature fields: {sorted(unknown)}")
        spec = cls(**d)
        spec.build()
        return spec


def touch(transition):
    return float(bool(transition.blocked))


def random_linear_features(features, transition):
    """Feature vector of one transition for a fitted :class:`RandomLinearFeatures`."""
    return features.transition_features(transition.observation, transition.next_observation)[0]


def random_patch_linear_features(features, transition):
    return features.transition_features(transition.observation, transition.next_observation)[0]
