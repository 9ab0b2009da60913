"""Command-line entry point: ``rgvf generate | train | heatmap | oracle``.

Experiments are described by a versioned JSON document::

    {
      "version": 1,
      "kind": "eval",                  # or "control"
      "seed": 0,                       # mandatory
      "env": {"goal": [1, 6]},
      "question_net": {"constructor": "full_tree", "depth": 3},
      "features": {"variant": "touch"},
      "agent": {"total_frames": 1000000},
      "output_dir": "runs/depth3"
    }

``question_net`` may be ``null``, a constructor (``discounted_sum`` or
``full_tree``), ``{"generator": {...}}`` or ``{"path": "net.json"}``.
``--set key.sub=value`` overrides any field (values are parsed as JSON).

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
"""

import argparse
import copy
import csv
import inspect
import json
import logging
import os
import sys

from . import __version__, envs, oracle, qnet
from .agent import (CONTROL_FIELDS, METRIC_FIELDS, ActorCriticAgent, AgentNet,
                    PolicyEvaluationAgent, TrainConfig)
from .exceptions import ConfigError, NumericError, ParseError, ShapeError, UnsupportedFeatureError
from .features import FeatureSpec
from .tinynn import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

ENV_DEFAULTS = {"goal": list(envs.DEFAULT_GOAL), "start": list(envs.DEFAULT_START),
                "random_start": False, "reward_on_stay": False}
_AGENT_CLASSES = {"eval": PolicyEvaluationAgent, "control": ActorCriticAgent}
# estimator parameters that are filled from other config sections
_WIRED = {"question_net", "features", "env_kwargs", "callback", "seed"}
# code_version is written into snapshots and ignored on reload
_TOP_LEVEL = {"version", "kind", "seed", "env", "question_net", "features", "agent", "output_dir",
              "code_version"}


def agent_defaults(kind):
    sig = inspect.signature(_AGENT_CLASSES[kind].__init__)
    out = {}
    for name, p in sig.parameters.items():
        if name == "self" or name in _WIRED:
            continue
        value = p.default
        out[name] = list(value) if isinstance(value, tuple) else value
    return out


def _set_path(doc, dotted, value):
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def apply_overrides(doc, assignments):
    """Apply ``key.sub=value`` strings; values are JSON, falling back to plain strings."""
    doc = copy.deepcopy(doc)
    for item in assignments or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(doc, key.strip(), value)
    return doc


def _resolve_question_net(spec, base_dir, problems):
    """Materialize defaults of a question-net source; returns ``(resolved, net)``."""
    if spec is None:
        return None, None
    if not isinstance(spec, dict):
        problems.append("question_net: expected an object or null")
        return spec, None
    spec = dict(spec)
    try:
        if "path" in spec:
            path = spec["path"]
            full = path if os.path.isabs(path) else os.path.join(base_dir, path)
            return spec, qnet.load(full)
        if "generator" in spec:
            g = dict(spec["generator"])
            g.setdefault("actions", list(envs.ACTIONS))
            g.setdefault("seed", 0)
            missing = {"n_features", "gamma", "depth", "repeat"} - set(g)
            if missing:
                problems.append(f"question_net.generator: missing {sorted(missing)}")
                return spec, None
            cfg = qnet.GeneratorConfig(**g)
            return {"generator": g}, qnet.generate_random(cfg)
        kind = spec.get("constructor")
        if kind == "discounted_sum":
            spec.setdefault("n_features", 1)
            spec.setdefault("gamma", 0.8)
            return spec, qnet.new_discounted_sum(spec["n_features"], spec["gamma"])
        if kind == "full_tree":
            spec.setdefault("actions", list(envs.ACTIONS))
            if "depth" not in spec:
                problems.append("question_net.depth: required for full_tree")
                return spec, None
            return spec, qnet.new_full_tree(spec["actions"], spec["depth"])
        problems.append(f"question_net: unknown source {spec!r}")
    except (ConfigError, ParseError, TypeError) as exc:
        problems.append(f"question_net: {exc}")
    except OSError as exc:
        problems.append(f"question_net.path: {exc}")
    return spec, None


def resolve_config(doc, base_dir="."):
    """Validate ``doc`` and return ``(resolved_doc, agent)``.

    Every problem found is reported together in one :class:`ConfigError`.
    """
    problems = []
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _TOP_LEVEL
    if unknown:
        problems.append(f"unknown top-level fields {sorted(unknown)}")
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        problems.append(f"version: unsupported {doc.get('version')!r} (expected {CONFIG_VERSION})")
    kind = doc.get("kind", "eval")
    if kind not in _AGENT_CLASSES:
        problems.append(f"kind: must be 'eval' or 'control' (got {kind!r})")
        kind = "eval"
    if "seed" not in doc:
        problems.append("seed: required")
    elif not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool) or doc["seed"] < 0:
        problems.append(f"seed: must be a nonnegative integer (got {doc['seed']!r})")

    env = dict(ENV_DEFAULTS)
    extra = set(doc.get("env") or {}) - set(ENV_DEFAULTS)
    if extra:
        problems.append(f"env: unknown fields {sorted(extra)}")
    env.update({k: v for k, v in (doc.get("env") or {}).items() if k in ENV_DEFAULTS})
    try:
        envs.EmptyRoom(**env)
    except (ValueError, TypeError) as exc:
        problems.append(f"env: {exc}")

    agent = agent_defaults(kind)
    extra = set(doc.get("agent") or {}) - set(agent)
    if extra:
        problems.append(f"agent: unknown fields {sorted(extra)}")
    agent.update({k: v for k, v in (doc.get("agent") or {}).items() if k in agent})

    features = doc.get("features", {"variant": "touch"})
    feature_spec = None
    if features is not None:
        try:
            feature_spec = FeatureSpec.from_dict(features)
            features = feature_spec.to_dict()
        except (ConfigError, TypeError) as exc:
            problems.append(f"features: {exc}")

    qn_doc, net = _resolve_question_net(doc.get("question_net"), base_dir, problems)
    if net is not None and feature_spec is not None and net.n_features != feature_spec.n_features:
        problems.append(f"question_net has {net.n_features} features but the feature set "
                        f"yields {feature_spec.n_features}")

    resolved = {
        "version": CONFIG_VERSION,
        "kind": kind,
        "seed": doc.get("seed"),
        "env": env,
        "question_net": qn_doc,
        "features": features,
        "agent": agent,
        "output_dir": doc.get("output_dir", "runs/default"),
    }
    train_fields = {k: agent[k] for k in TrainConfig.__dataclass_fields__ if k in agent}
    try:
        TrainConfig(**train_fields).validate()
    except ConfigError as exc:
        problems.extend(f"agent: {msg}" for msg in str(exc).split("; "))
    if problems:
        raise ConfigError("invalid config:\n  - " + "\n  - ".join(problems))
    params = dict(agent, repr_sizes=tuple(agent["repr_sizes"]))
    estimator = _AGENT_CLASSES[kind](question_net=net, features=feature_spec,
                                     env_kwargs=env, seed=resolved["seed"], **params)
    return resolved, estimator


def load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc


def write_metrics_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([row[fields[0]]] + [repr(float(row[f])) for f in fields[1:]])


def write_grid_csv(path, grid):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in grid:
            w.writerow([repr(float(v)) for v in row])


def _dump_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_generate(args):
    if args.actions.isdigit():
        actions = tuple(f"a{k}" for k in range(int(args.actions)))
    else:
        actions = tuple(a.strip() for a in args.actions.split(",") if a.strip())
    cfg = qnet.GeneratorConfig(args.features, args.gamma, actions, args.depth, args.repeat, args.seed)
    net = qnet.generate_random(cfg)
    text = qnet.serialize(net)
    summary = (f"{net.n_predictions} predictions; layer sizes "
               + " ".join(str(n) for n in net.layer_sizes()))
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
        print(summary)
    else:
        sys.stdout.write(text)
        print(summary, file=sys.stderr)
    return EXIT_OK


def cmd_train(args):
    doc = apply_overrides(load_config(args.config), args.set)
    if args.output_dir:
        doc["output_dir"] = args.output_dir
    resolved, agent = resolve_config(doc, os.path.dirname(os.path.abspath(args.config)))
    out = resolved["output_dir"]
    os.makedirs(out, exist_ok=True)
    resolved_out = dict(resolved, code_version=__version__)
    _dump_json(os.path.join(out, "resolved_config.json"), resolved_out)
    if agent.question_net is not None:
        qnet.save(agent.question_net, os.path.join(out, "question_net.json"))
    agent.fit()
    fields = METRIC_FIELDS if resolved["kind"] == "eval" else CONTROL_FIELDS
    write_metrics_csv(os.path.join(out, "metrics.csv"), agent.metrics_, fields)
    meta = {"kind": resolved["kind"], "gamma": agent.gamma, "env": resolved["env"],
            "stop_gradient": agent.stop_gradient, "code_version": __version__}
    save_checkpoint(os.path.join(out, "checkpoint.json"), agent.net_.nets(), meta)
    last = agent.metrics_[-1]
    print(f"{out}: frames={last['frames']} value_mse={last['value_mse']:.6g}")
    return EXIT_OK


def _oracle_grid(env_kwargs, gamma, policy=None):
    model = envs.exact_model(envs.EmptyRoom(**env_kwargs))
    return model, oracle.value_grid(model, oracle.true_values(model, gamma, policy=policy))


def cmd_heatmap(args):
    if args.oracle_only:
        env_kwargs = dict(ENV_DEFAULTS)
        _, grid = _oracle_grid(env_kwargs, args.gamma)
        write_grid_csv(args.output, grid)
        return EXIT_OK
    if not args.checkpoint:
        raise ConfigError("a checkpoint is required unless --oracle-only is given")
    try:
        nets, meta = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise ConfigError(f"{args.checkpoint}: {exc.strerror}") from exc
    if "repr" not in nets or "rl_head" not in nets:
        raise ParseError(f"{args.checkpoint}: missing repr or rl_head network")
    net = AgentNet.from_nets(nets, meta.get("stop_gradient", True))
    env_kwargs = dict(ENV_DEFAULTS, **meta.get("env", {}))
    gamma = meta.get("gamma", args.gamma)
    model = envs.exact_model(envs.EmptyRoom(**env_kwargs))
    _, v, _, policy = net.predict(model.observations)
    write_grid_csv(args.output, oracle.value_grid(model, v))
    oracle_path = args.oracle_output or _sibling(args.output, "oracle")
    _, grid = _oracle_grid(env_kwargs, gamma, policy if meta.get("kind") == "control" else None)
    write_grid_csv(oracle_path, grid)
    print(f"wrote {args.output} and {oracle_path}")
    return EXIT_OK


def _sibling(path, tag):
    root, ext = os.path.splitext(path)
    return f"{root}_{tag}{ext or '.csv'}"


def cmd_oracle(args):
    if args.net:
        try:
            net = qnet.load(args.net)
        except OSError as exc:
            raise ConfigError(f"{args.net}: {exc.strerror}") from exc
    elif args.constructor == "discounted_sum":
        net = qnet.new_discounted_sum(args.n_features, args.gamma)
    elif args.constructor == "full_tree":
        net = qnet.new_full_tree(envs.ACTIONS, args.depth)
    else:
        raise ConfigError("give --net FILE or --constructor")
    spec = FeatureSpec(args.feature_variant, args.feature_count, args.feature_seed)
    if spec.n_features != net.n_features:
        raise ConfigError(f"feature set yields {spec.n_features} features but the network "
                          f"has {net.n_features}")
    model = envs.exact_model(envs.EmptyRoom())
    Y = oracle.exact_gvf_values(net, model, spec.build())
    oracle.write_solution_csv(args.output, model, Y)
    if args.values:
        v = oracle.true_values(model, args.env_gamma)
        with open(args.values, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state_row", "state_col", "value"])
            for s, (r, c) in enumerate(model.positions):
                w.writerow([r, c, repr(float(v[s]))])
    print(f"{net.n_predictions} nodes x {model.n_states} states -> {args.output}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="rgvf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a random question network")
    p.add_argument("--features", type=int, required=True, help="number of feature nodes")
    p.add_argument("--actions", default="up,down,left,right",
                   help="action count or comma-separated action names")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--repeat", type=int, required=True)
    p.add_argument("--gamma", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", help="network file (stdout if omitted)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--output-dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("heatmap", help="7x7 value grid of a checkpoint next to the true values")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--oracle-output", help="defaults to <output>_oracle.csv")
    p.add_argument("--oracle-only", action="store_true", help="write only the true-value grid")
    p.add_argument("--gamma", type=float, default=0.98)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("oracle", help="exact answers of a question network")
    p.add_argument("--net", help="network file")
    p.add_argument("--constructor", choices=("discounted_sum", "full_tree"))
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--n-features", type=int, default=1)
    p.add_argument("--gamma", type=float, default=0.8, help="discount of discounted_sum nodes")
    p.add_argument("--feature-variant", default="touch",
                   choices=("touch", "random_linear", "random_patch_linear"))
    p.add_argument("--feature-count", type=int, default=1)
    p.add_argument("--feature-seed", type=int, default=0)
    p.add_argument("--values", help="also write true state values here")
    p.add_argument("--env-gamma", type=float, default=0.98)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError, ShapeError, UnsupportedFeatureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
