"""Question networks: data model, constructors, random generator, validation, I/O.

A question network is a layered graph of feature nodes and prediction nodes.
Each prediction node owns a list of weighted edges (a row of the adjacency
matrix) and may be conditioned on an action. Node order is canonical:
prediction nodes are sorted by ``(layer, action index, creation order)``.
"""

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .exceptions import ConfigError, InfeasibleSamplingError, ParseError

FORMAT_VERSION = 1
FEATURE = "feature"
PREDICTION = "prediction"


@dataclass(frozen=True, order=True)
class NodeId:
    kind: str
    index: int

    def __post_init__(self):
        if self.kind not in (FEATURE, PREDICTION):
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.index < 0:
            raise ValueError("node indices are nonnegative")

    def __str__(self):
        return f"{'f' if self.kind == FEATURE else 'p'}{self.index}"


@dataclass(frozen=True)
class Edge:
    target: NodeId
    weight: float = 1.0


@dataclass(frozen=True)
class PredictionNode:
    edges: tuple
    condition: object = None
    layer: int = 0

    @property
    def prediction_targets(self):
        return [e.target.index for e in self.edges if e.target.kind == PREDICTION]


@dataclass(frozen=True)
class QuestionNetwork:
    n_features: int
    actions: tuple
    predictions: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "predictions", tuple(self.predictions))

    @property
    def n_predictions(self):
        return len(self.predictions)

    @property
    def depth(self):
        return max((p.layer for p in self.predictions), default=0)

    def layer_of(self, i):
        return self.predictions[i].layer

    def layer_sizes(self):
        sizes = [0] * (self.depth + 1)
        for p in self.predictions:
            sizes[p.layer] += 1
        return sizes

    @cached_property
    def prediction_weights(self):
        """Dense ``(n_p, n_p)`` block of the adjacency matrix."""
        w = np.zeros((self.n_predictions, self.n_predictions))
        for i, node in enumerate(self.predictions):
            for e in node.edges:
                if e.target.kind == PREDICTION:
                    w[i, e.target.index] += e.weight
        w.setflags(write=False)
        return w

    @cached_property
    def feature_weights(self):
        """Dense ``(n_p, n_f)`` block of the adjacency matrix."""
        w = np.zeros((self.n_predictions, self.n_features))
        for i, node in enumerate(self.predictions):
            for e in node.edges:
                if e.target.kind == FEATURE:
                    w[i, e.target.index] += e.weight
        w.setflags(write=False)
        return w

    @cached_property
    def edge_matrix(self):
        """Sparse ``(n_p, n_p + n_f)`` matrix ``[W_pred | W_feat]`` in CSR form."""
        rows, cols, vals = [], [], []
        for i, node in enumerate(self.predictions):
            for e in node.edges:
                offset = 0 if e.target.kind == PREDICTION else self.n_predictions
                rows.append(i)
                cols.append(offset + e.target.index)
                vals.append(e.weight)
        shape = (self.n_predictions, self.n_predictions + self.n_features)
        return sparse.csr_matrix((vals, (rows, cols)), shape=shape)

    @cached_property
    def condition_index(self):
        """Index into :attr:`actions` per prediction node, ``-1`` if unconditioned."""
        lookup = {a: k for k, a in enumerate(self.actions)}
        idx = np.array([-1 if p.condition is None else lookup.get(p.condition, -2)
                        for p in self.predictions], dtype=np.int64)
        idx.setflags(write=False)
        return idx

    def summary(self):
        sizes = ", ".join(f"L{l}={n}" for l, n in enumerate(self.layer_sizes()))
        return (f"{self.n_features} features, {self.n_predictions} predictions, "
                f"{len(self.actions)} actions; layers: {sizes}")


def _check_gamma(gamma):
    if not (isinstance(gamma, (int, float)) and math.isfinite(gamma) and 0.0 < gamma <= 1.0):
        raise ConfigError(f"gamma must lie in (0, 1], got {gamma!r}")
    return float(gamma)


def new_discounted_sum(n_features, gamma):
    """One self-looped discounted-sum prediction per feature."""
    gamma = _check_gamma(gamma)
    if not isinstance(n_features, (int, np.integer)) or n_features < 1:
        raise ConfigError(f"n_features must be a positive integer, got {n_features!r}")
    preds = [
        PredictionNode(edges=(Edge(NodeId(FEATURE, k), 1.0), Edge(NodeId(PREDICTION, k), gamma)))
        for k in range(n_features)
    ]
    return QuestionNetwork(int(n_features), (), preds)


def new_full_tree(actions, depth):
    """Full action-conditional tree over a single feature.

    Every internal node has one child per action. Nodes below the first level
    also keep a skip edge to the feature node.
    """
    actions = tuple(actions)
    if not actions:
        raise ConfigError("actions must be nonempty")
    if len(set(actions)) != len(actions):
        raise ConfigError("actions must be distinct")
    if not isinstance(depth, (int, np.integer)) or depth < 1:
        raise ConfigError(f"depth must be a positive integer, got {depth!r}")
    feature = NodeId(FEATURE, 0)
    preds = []
    previous = []
    for d in range(1, depth + 1):
        current = []
        for a in actions:
            if d == 1:
                preds.append(PredictionNode((Edge(feature, 1.0),), a, 1))
                current.append(len(preds) - 1)
                continue
            for parent in previous:
                edges = (Edge(NodeId(PREDICTION, parent), 1.0), Edge(feature, 1.0))
                preds.append(PredictionNode(edges, a, d))
                current.append(len(preds) - 1)
        previous = current
    return QuestionNetwork(1, actions, preds)


@dataclass(frozen=True)
class GeneratorConfig:
    """Arguments of the random question-network generator."""

    n_features: int
    gamma: float
    actions: tuple
    depth: int
    repeat: int
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))

    def check(self):
        if not isinstance(self.n_features, (int, np.integer)) or self.n_features < 1:
            raise ConfigError("n_features must be a positive integer")
        _check_gamma(self.gamma)
        if not self.actions:
            raise ConfigError("actions must be nonempty")
        if len(set(self.actions)) != len(self.actions):
            raise ConfigError("actions must be distinct")
        if not isinstance(self.depth, (int, np.integer)) or self.depth < 0:
            raise ConfigError("depth must be a nonnegative integer")
        if not isinstance(self.repeat, (int, np.integer)) or self.repeat < 1:
            raise ConfigError("repeat must be a positive integer")
        if self.depth > 0 and self.repeat > 2 * self.n_features:
            raise InfeasibleSamplingError(1, self.repeat, 2 * self.n_features)
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must fit in 64 unsigned bits")


def _sample_without_replacement(rng, population, k):
    # Fisher-Yates prefix: the first k slots of a partial shuffle.
    pool = list(population)
    for i in range(k):
        j = i + int(rng.integers(len(pool) - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:k]


def generate_random(config):
    """Sample a random question network.

    Layer 0 holds one discounted-sum node per feature. Each deeper layer holds
    ``repeat`` nodes per action, each pointing at a distinct parent drawn from
    the previous layer (features and layer-0 predictions for layer 1) plus a
    uniformly drawn feature. When the parent is itself the drawn feature the
    two edges coincide and a single weight-1 edge is kept.
    """
    config.check()
    rng = np.random.Generator(np.random.PCG64(int(config.seed)))
    n_f, gamma = config.n_features, float(config.gamma)
    roots = [NodeId(FEATURE, k) for k in range(n_f)]
    preds = []
    leaves = []
    for k in range(n_f):
        leaves.append(roots[k])
        preds.append(PredictionNode((Edge(roots[k], 1.0), Edge(NodeId(PREDICTION, k), gamma))))
        leaves.append(NodeId(PREDICTION, k))
    for layer in range(1, config.depth + 1):
        if config.repeat > len(leaves):
            raise InfeasibleSamplingError(layer, config.repeat, len(leaves))
        expanded = []
        for a in config.actions:
            for parent in _sample_without_replacement(rng, leaves, config.repeat):
                root = roots[int(rng.integers(n_f))]
                if parent == root:
                    edges = (Edge(root, 1.0),)
                else:
                    edges = (Edge(parent, 1.0), Edge(root, 1.0))
                preds.append(PredictionNode(edges, a, layer))
                expanded.append(NodeId(PREDICTION, len(preds) - 1))
        leaves = expanded
    return QuestionNetwork(n_f, config.actions, preds)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "ok" if self.ok else "\n".join(self.violations)


def validate(net):
    """Check structural invariants; never raises, returns a :class:`ValidationReport`."""
    report = ValidationReport()
    bad = report.violations
    n_p, n_f = net.n_predictions, net.n_features
    actions = set(net.actions)
    loop_weights = set()
    for i, node in enumerate(net.predictions):
        for e in node.edges:
            if e.target.kind == PREDICTION and e.target.index == i:
                loop_weights.add(e.weight)
    refs_ok = True
    for i, node in enumerate(net.predictions):
        if not node.edges:
            bad.append(f"p{i}: no outgoing edges")
        if node.condition is not None and node.condition not in actions:
            bad.append(f"p{i}: condition {node.condition!r} is not a known action")
        for e in node.edges:
            t = e.target
            limit = n_f if t.kind == FEATURE else n_p
            if t.index >= limit:
                bad.append(f"p{i}: dangling reference to {t}")
                refs_ok = False
                continue
            if not math.isfinite(e.weight):
                bad.append(f"p{i}: non-finite weight on edge to {t}")
            elif t.kind == PREDICTION and t.index == i:
                if node.layer != 0:
                    bad.append(f"p{i}: self-loop outside layer 0 (layer {node.layer})")
                if not 0.0 < e.weight <= 1.0:
                    bad.append(f"p{i}: self-loop weight {e.weight} outside (0, 1]")
            elif e.weight != 1.0:
                bad.append(f"p{i}: weight {e.weight} on edge to {t} is outside {{1, gamma}}")
            if t.kind == PREDICTION and t.index != i and t.index < n_p:
                if net.predictions[t.index].layer >= node.layer:
                    bad.append(f"p{i}: edge to {t} does not point to a lower layer")
    if not refs_ok:
        return report
    # Grounding: with self-loops removed, every prediction must reach a feature.
    grounded = {}

    def reaches_feature(i, stack):
        if i in grounded:
            return grounded[i]
        if i in stack:
            return False
        stack.add(i)
        result = False
        for e in net.predictions[i].edges:
            if e.target.kind == FEATURE:
                result = True
            elif e.target.index != i and reaches_feature(e.target.index, stack):
                result = True
        stack.discard(i)
        grounded[i] = result
        return result

    for i in range(n_p):
        if not reaches_feature(i, set()):
            bad.append(f"p{i}: not grounded on any feature")
    seen = {}
    for i, node in enumerate(net.predictions):
        if node.condition is None or node.layer == 0 or not node.edges:
            continue
        key = (node.layer, node.condition, node.edges[0].target)
        if key in seen:
            bad.append(f"p{i}: duplicate prediction (layer {node.layer}, action "
                       f"{node.condition!r}, parent {key[2]}) already used by p{seen[key]}")
        else:
            seen[key] = i
    return report


def _sort_key(net, i):
    node = net.predictions[i]
    action = -1 if node.condition is None else net.actions.index(node.condition)
    return (node.layer, action, i)


def canonicalize(net):
    """Return an equivalent network with prediction nodes in canonical order."""
    order = sorted(range(net.n_predictions), key=lambda i: _sort_key(net, i))
    if order == list(range(net.n_predictions)):
        return net
    remap = {old: new for new, old in enumerate(order)}
    preds = []
    for old in order:
        node = net.predictions[old]
        edges = tuple(
            Edge(NodeId(PREDICTION, remap[e.target.index]) if e.target.kind == PREDICTION
                 else e.target, e.weight)
            for e in node.edges)
        preds.append(PredictionNode(edges, node.condition, node.layer))
    return QuestionNetwork(net.n_features, net.actions, preds)


def to_dict(net):
    net = canonicalize(net)
    preds = []
    for node in net.predictions:
        entry = {
            "layer": node.layer,
            "edges": [{"target_kind": e.target.kind, "target_index": e.target.index,
                       "weight": float(e.weight)} for e in node.edges],
        }
        if node.condition is not None:
            entry["condition"] = node.condition
        preds.append(entry)
    return {"version": FORMAT_VERSION, "n_features": net.n_features,
            "actions": list(net.actions), "predictions": preds}


def serialize(net):
    """Canonical JSON text of ``net`` (sorted keys, canonical node order)."""
    return json.dumps(to_dict(net), sort_keys=True, indent=1) + "\n"


def _field(obj, key, path, kind):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{path}: missing field {key!r}")
    value = obj[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ParseError(f"{path}.{key}: expected integer, got {value!r}")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ParseError(f"{path}.{key}: expected number, got {value!r}")
    if kind is list and not isinstance(value, list):
        raise ParseError(f"{path}.{key}: expected list")
    return value


def from_dict(doc):
    version = _field(doc, "version", "$", int)
    if version != FORMAT_VERSION:
        raise ParseError(f"$.version: unsupported version {version}")
    n_f = _field(doc, "n_features", "$", int)
    if n_f < 1:
        raise ParseError("$.n_features: must be positive")
    actions = _field(doc, "actions", "$", list)
    for j, a in enumerate(actions):
        if not isinstance(a, (str, int)) or isinstance(a, bool):
            raise ParseError(f"$.actions[{j}]: action ids must be strings or integers")
    if len(set(actions)) != len(actions):
        raise ParseError("$.actions: duplicate action id")
    raw = _field(doc, "predictions", "$", list)
    preds = []
    for i, entry in enumerate(raw):
        path = f"$.predictions[{i}]"
        layer = _field(entry, "layer", path, int)
        if layer < 0:
            raise ParseError(f"{path}.layer: must be nonnegative")
        condition = entry.get("condition")
        if condition is not None and condition not in actions:
            raise ParseError(f"{path}.condition: unknown action id {condition!r}")
        edges = []
        for j, e in enumerate(_field(entry, "edges", path, list)):
            epath = f"{path}.edges[{j}]"
            kind = _field(e, "target_kind", epath, str)
            if kind not in (FEATURE, PREDICTION):
                raise ParseError(f"{epath}.target_kind: unknown kind {kind!r}")
            index = _field(e, "target_index", epath, int)
            limit = n_f if kind == FEATURE else len(raw)
            if not 0 <= index < limit:
                raise ParseError(f"{epath}.target_index: {index} out of range")
            weight = float(_field(e, "weight", epath, float))
            edges.append(Edge(NodeId(kind, index), weight))
        preds.append(PredictionNode(tuple(edges), condition, layer))
    return QuestionNetwork(n_f, tuple(actions), preds)


def deserialize(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_dict(doc)


def save(net, path):
    with open(path, "w") as fh:
        fh.write(serialize(net))


def load(path):
    with open(path) as fh:
        return deserialize(fh.read())


def to_dot(net):
    """Graphviz description; squares are features, circles are predictions."""
    lines = ["digraph question_network {", "  rankdir=BT;"]
    for k in range(net.n_features):
        lines.append(f'  f{k} [shape=box, label="f{k}"];')
    for i, node in enumerate(net.predictions):
        label = f"{i}" if node.condition is None else f"{i}\\n{node.condition}"
        lines.append(f'  p{i} [shape=circle, label="{label}"];')
    for i, node in enumerate(net.predictions):
        for e in node.edges:
            attrs = f' [label="{e.weight:g}"]' if (
                e.target.kind == PREDICTION and e.target.index == i) else ""
            lines.append(f"  p{i} -> {e.target}{attrs};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def unroll(net, i):
    """Expand node ``i`` into feature terms ``{(step, feature): coefficient}``.

    Only valid for networks without self-loops (finite unroll). Steps count
    from 1 (the feature observed on the next transition).
    """
    terms = {}

    def expand(j, step, coef):
        for e in net.predictions[j].edges:
            if e.target.kind == FEATURE:
                key = (step, e.target.index)
                terms[key] = terms.get(key, 0.0) + coef * e.weight
            elif e.target.index == j:
                raise ValueError("cannot unroll a self-loop")
            else:
                expand(e.target.index, step + 1, coef * e.weight)

    expand(i, 1, 1.0)
    return terms
