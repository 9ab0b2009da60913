"""A small dense network engine with reverse-mode gradients.

Parameters of a :class:`DenseNet` live in one contiguous float64 vector; the
per-layer weight and bias arrays are views into it. This keeps optimizer
updates to a handful of vector operations and makes finite-difference checks
trivial to write.
"""

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ParseError, ShapeError

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_VERSION = 1


class DenseNet:
    """Stack of affine layers, each followed by ``relu`` or ``identity``.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including the input, e.g. ``(162, 64, 64, 32)``.
    activations : sequence of str, optional
        One entry per affine layer. Defaults to ``relu`` everywhere.
    seed : int or numpy Generator, optional
        Initialization seed. Weights are drawn uniformly with fan-in scaling
        (He bound ``sqrt(6 / fan_in)`` for ReLU layers, ``sqrt(3 / fan_in)``
        for identity layers); biases start at zero.
    """

    def __init__(self, sizes, activations=None, seed=None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"need at least two positive layer sizes, got {sizes}")
        if activations is None:
            activations = ("relu",) * (len(sizes) - 1)
        activations = tuple(activations)
        if len(activations) != len(sizes) - 1:
            raise ValueError("one activation per affine layer is required")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        self.sizes = sizes
        self.activations = activations
        self.n_params = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        self.params = np.zeros(self.n_params)
        self.weights, self.biases = self._views(self.params)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        for w, act in zip(self.weights, activations):
            gain = 6.0 if act == "relu" else 3.0
            bound = np.sqrt(gain / w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)

    def _views(self, flat):
        weights, biases = [], []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = flat[offset:offset + fan_out]
            offset += fan_out
            weights.append(w)
            biases.append(b)
        return weights, biases

    @property
    def n_inputs(self):
        return self.sizes[0]

    @property
    def n_outputs(self):
        return self.sizes[-1]

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ShapeError(f"expected input of width {self.n_inputs}, got shape {x.shape}")
        return x

    def __call__(self, x):
        h = self._check_input(x)
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = h @ w + b
            if act == "relu":
                np.maximum(h, 0.0, out=h)
        return h

    def forward(self, x):
        """Return ``(output, tape)``; the tape feeds :meth:`backward`."""
        h = self._check_input(x)
        tape = []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = h @ w + b
            tape.append((h, z))
            h = np.maximum(z, 0.0) if act == "relu" else z
        return h, tape

    def backward(self, tape, grad_output):
        """Backpropagate ``grad_output`` through a recorded forward pass.

        Returns ``(grad_params, grad_input)`` where ``grad_params`` is laid out
        like :attr:`params`. The ReLU derivative at exactly zero is taken as 0.
        """
        if len(tape) != len(self.weights):
            raise ShapeError("tape does not come from this network")
        g = np.asarray(grad_output, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != tape[-1][1].shape:
            raise ShapeError(f"output gradient shape {g.shape} != {tape[-1][1].shape}")
        grad = np.empty(self.n_params)
        gw, gb = self._views(grad)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in, z = tape[i]
            if self.activations[i] == "relu":
                g = g * (z > 0.0)
            np.dot(h_in.T, g, out=gw[i])
            gb[i][...] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grad, g

    def activation_pattern(self, x):
        """Boolean ReLU on/off pattern for input ``x`` (used to skip kinks in FD checks)."""
        _, tape = self.forward(x)
        return np.concatenate([(z > 0.0).ravel() for (_, z), act in zip(tape, self.activations)
                               if act == "relu"] or [np.zeros(0, bool)])

    def copy(self):
        other = DenseNet.__new__(DenseNet)
        other.sizes = self.sizes
        other.activations = self.activations
        other.n_params = self.n_params
        other.params = self.params.copy()
        other.weights, other.biases = other._views(other.params)
        return other

    def to_dict(self):
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "layers": [{"weight": w.tolist(), "bias": b.tolist()}
                       for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            net = cls(data["sizes"], data["activations"], seed=0)
            layers = data["layers"]
            if len(layers) != len(net.weights):
                raise ParseError("layer count does not match sizes")
            for i, layer in enumerate(layers):
                w = np.asarray(layer["weight"], dtype=np.float64)
                b = np.asarray(layer["bias"], dtype=np.float64)
                if w.shape != net.weights[i].shape or b.shape != net.biases[i].shape:
                    raise ParseError(f"layers[{i}]: parameter shape mismatch")
                net.weights[i][...] = w
                net.biases[i][...] = b
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad network description: {exc}") from exc
        return net

    def __repr__(self):
        return f"DenseNet(sizes={self.sizes}, activations={self.activations})"


class _Optimizer:
    def __init__(self):
        self.t = 0
        self._state = None

    def _init_state(self, params):
        raise NotImplementedError

    def apply_gradients(self, params, grads):
        """Update each array in ``params`` in place using the matching gradient."""
        params = list(params)
        grads = list(grads)
        if len(params) != len(grads):
            raise ShapeError("one gradient per parameter array is required")
        if self._state is None:
            self._state = [self._init_state(p) for p in params]
        if len(self._state) != len(params):
            raise ShapeError("optimizer was created for a different parameter list")
        for p, g, s in zip(params, grads, self._state):
            if p.shape != g.shape or p.shape != s[0].shape:
                raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        self.t += 1
        for p, g, s in zip(params, grads, self._state):
            self._update(p, g, s)


class Adam(_Optimizer):
    """Adam with bias correction."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__()
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def _init_state(self, params):
        return (np.zeros_like(params), np.zeros_like(params))

    def _update(self, p, g, state):
        m, v = state
        m *= self.beta1
        m += (1.0 - self.beta1) * g
        v *= self.beta2
        v += (1.0 - self.beta2) * (g * g)
        m_hat = m / (1.0 - self.beta1 ** self.t)
        v_hat = v / (1.0 - self.beta2 ** self.t)
        p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class RMSProp(_Optimizer):
    """RMSProp; ``eps`` is added outside the square root."""

    def __init__(self, lr=7e-4, decay=0.99, eps=1e-5):
        super().__init__()
        self.lr = lr
        self.decay = decay
        self.eps = eps

    def _init_state(self, params):
        return (np.zeros_like(params),)

    def _update(self, p, g, state):
        (ms,) = state
        ms *= self.decay
        ms += (1.0 - self.decay) * (g * g)
        p -= self.lr * g / (np.sqrt(ms) + self.eps)


def make_optimizer(kind, **kwargs):
    if kind == "adam":
        return Adam(**kwargs)
    if kind == "rmsprop":
        return RMSProp(**kwargs)
    raise ValueError(f"unknown optimizer {kind!r}")


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    n_checked: int
    n_excluded: int
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def grad_check(loss_and_grad, params, *, tolerance=1e-4, eps=1e-5, floor=1e-6,
               pattern=None, indices=None):
    """Compare analytic gradients with central finite differences.

    ``loss_and_grad(params)`` must return ``(loss, grad)`` for a flat float64
    vector; ``params`` is perturbed in place and restored. The relative error
    per coordinate is ``|a - n| / max(|a|, |n|, floor)``. If ``pattern`` is
    given (a callable returning the ReLU on/off pattern), coordinates whose
    perturbation flips any unit across its kink are excluded.
    """
    params = np.asarray(params)
    _, analytic = loss_and_grad(params)
    analytic = np.array(analytic, dtype=np.float64, copy=True)
    base_pattern = pattern() if pattern is not None else None
    if indices is None:
        indices = range(params.size)
    worst, worst_i, n_checked, n_excluded = 0.0, -1, 0, 0
    for i in indices:
        old = params[i]
        params[i] = old + eps
        f_plus, _ = loss_and_grad(params)
        kink = pattern is not None and not np.array_equal(pattern(), base_pattern)
        params[i] = old - eps
        f_minus, _ = loss_and_grad(params)
        kink = kink or (pattern is not None and not np.array_equal(pattern(), base_pattern))
        params[i] = old
        if kink:
            n_excluded += 1
            continue
        numeric = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), floor)
        n_checked += 1
        if err > worst:
            worst, worst_i = err, i
    return GradCheckReport(worst, worst_i, n_checked, n_excluded, tolerance)


def grad_check_net(net, x, loss_fn, *, tolerance=1e-4, eps=1e-5, floor=1e-6, backward=None):
    """Gradient-check ``loss_fn(net_output) -> (loss, d loss / d output)`` through ``net``.

    ``backward`` may replace :meth:`DenseNet.backward` (used to test the checker).
    """
    backward = backward or net.backward

    def loss_and_grad(_params):
        out, tape = net.forward(x)
        loss, g_out = loss_fn(out)
        grad, _ = backward(tape, g_out)
        return loss, grad

    return grad_check(loss_and_grad, net.params, tolerance=tolerance, eps=eps, floor=floor,
                      pattern=lambda: net.activation_pattern(x))


def save_checkpoint(path, nets, meta=None):
    """Write named networks (and JSON-serializable ``meta``) to ``path`` as JSON."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "nets": {name: net.to_dict() for name, net in nets.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Return ``(nets, meta)`` from a file written by :func:`save_checkpoint`."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version")
    try:
        nets = {name: DenseNet.from_dict(d) for name, d in doc["nets"].items()}
    except (KeyError, AttributeError) as exc:
        raise ParseError(f"{path}: missing field {exc}") from exc
    return nets, doc.get("meta", {})
