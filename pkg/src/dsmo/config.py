"""Strict JSON experiment configs.

Every block is a dataclass; parsing rejects unknown keys and type mismatches
with a :class:`ConfigError` whose ``pointer`` is the JSON pointer of the
offending field.  ``resolved(cfg)`` returns the config with every default
materialized, which is what run manifests record.
"""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field

from dsmo.errors import ConfigError, DSMOError, InvalidParam
from dsmo.network import KINDS, SCHEMES, build_topology, mixing_matrix

ALGOS = ("dsmo", "dbsa", "dsgd")
PROBLEM_TAGS = ("synthetic", "policy_eval", "hyperparam", "risk_averse")


@dataclass
class SyntheticParams:
    dims: list[int] = field(default_factory=lambda: [64, 16, 8])
    heterogeneity: float = 0.5
    noise: float = 0.1
    seed: int = 0
    mu_g: float = 0.5
    L_g: float = 1.0
    lam: float = 1.0
    b_scale: float = 0.5


@dataclass
class PolicyEvalParams:
    num_states: int = 100
    feat_dim: int = 5
    gamma: float = 0.9
    lam: float = 1.0
    seed: int = 0
    reward_noise: float = 1.0
    reward_scale: float = 1.0


@dataclass
class HyperparamParams:
    train_path: typing.Optional[str] = None
    val_path: typing.Optional[str] = None
    n_train: int = 500
    n_val: int = 190
    n_features: int = 14
    data_seed: int = 0
    seed: int = 0
    base_reg: typing.Optional[float] = None


@dataclass
class RiskAverseParams:
    feat_dim: int = 10
    kappa: float = 0.5
    lam: float = 1.0
    p: int = 2
    n_data: int = 10000
    seed: int = 0
    noise_var: float = 0.2


PROBLEM_PARAMS = {
    "synthetic": SyntheticParams,
    "policy_eval": PolicyEvalParams,
    "hyperparam": HyperparamParams,
    "risk_averse": RiskAverseParams,
}


@dataclass
class NetworkConfig:
    kind: str = "ring"
    K: int = 5
    edge_prob: typing.Optional[float] = None
    scheme: str = "uniform_ring"
    seed: int = 0


@dataclass
class ScheduleConfig:
    regime: str = "constant"
    C0: float = 0.1
    beta_scale: float = 1.0
    C1: float = 50.0
    mu: typing.Optional[float] = None  # None: the problem's PL constant
    eta_c: float = 1.0  # DBSA inner step constant


@dataclass
class BRuleConfig:
    rule: str = "fixed"
    b: int = 10


@dataclass
class ExperimentConfig:
    problem: dict
    network: NetworkConfig = field(default_factory=NetworkConfig)
    algo: str = "dsmo"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    T: int = 1000
    b_rule: BRuleConfig = field(default_factory=BRuleConfig)
    reps: int = 1
    base_seed: int = 0
    eval_every: typing.Optional[int] = None
    output_path: str = "runs"
    independent_outer_draws: bool = False


# -- generic strict parsing --------------------------------------------------

def _check_type(tp, value, ptr):
    origin = typing.get_origin(tp)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _check_type(args[0], value, ptr)
    if origin is list:
        (inner,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(ptr, f"expected a list, got {type(value).__name__}")
        return [_check_type(inner, v, f"{ptr}/{i}") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(ptr, f"expected a boolean, got {json.dumps(value)}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(ptr, f"expected an integer, got {json.dumps(value)}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(ptr, f"expected a number, got {json.dumps(value)}")
        if not math.isfinite(value):
            raise ConfigError(ptr, "expected a finite number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(ptr, f"expected a string, got {json.dumps(value)}")
        return value
    if tp is dict:
        if not isinstance(value, dict):
            raise ConfigError(ptr, f"expected an object, got {json.dumps(value)}")
        return value
    if dataclasses.is_dataclass(tp):
        return parse_block(tp, value, ptr)
    raise TypeError(f"unsupported config type {tp!r}")  # pragma: no cover


def parse_block(cls, data, ptr=""):
    """Build dataclass ``cls`` from ``data``; unknown keys and type errors raise :class:`ConfigError`."""
    if not isinstance(data, dict):
        raise ConfigError(ptr, f"expected an object, got {json.dumps(data)}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{ptr}/{key}", "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{ptr}/{f.name}"
        if f.name in data:
            kwargs[f.name] = _check_type(hints[f.name], data[f.name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(sub, "missing required key")
    return cls(**kwargs)


def _choice(value, options, ptr):
    if value not in options:
        raise ConfigError(ptr, f"must be one of {', '.join(options)}; got {value!r}")


def _positive(value, ptr, allow_zero=False):
    if value < 0 or (value == 0 and not allow_zero):
        raise ConfigError(ptr, f"must be {'non-negative' if allow_zero else 'positive'}, got {value}")


def parse_network(data, ptr="/network") -> NetworkConfig:
    net = parse_block(NetworkConfig, data, ptr)
    _choice(net.kind, KINDS, f"{ptr}/kind")
    _choice(net.scheme, SCHEMES, f"{ptr}/scheme")
    _positive(net.K, f"{ptr}/K")
    return net


def parse_problem(data, ptr="/problem"):
    """Return ``(tag, params)`` for the problem block."""
    if not isinstance(data, dict):
        raise ConfigError(ptr, "expected an object")
    if "tag" not in data:
        raise ConfigError(f"{ptr}/tag", "missing required key")
    tag = data["tag"]
    if not isinstance(tag, str):
        raise ConfigError(f"{ptr}/tag", "expected a string")
    _choice(tag, PROBLEM_TAGS, f"{ptr}/tag")
    params = parse_block(PROBLEM_PARAMS[tag], {k: v for k, v in data.items() if k != "tag"}, ptr)
    return tag, params


def parse_config(data) -> ExperimentConfig:
    cfg = parse_block(ExperimentConfig, data, "")
    cfg.problem = parse_problem(cfg.problem)
    cfg.network = parse_network(dataclasses.asdict(cfg.network))
    _choice(cfg.algo, ALGOS, "/algo")
    _choice(cfg.schedule.regime, ("constant", "diminishing"), "/schedule/regime")
    _choice(cfg.b_rule.rule, ("theory", "fixed"), "/b_rule/rule")
    _positive(cfg.b_rule.b, "/b_rule/b", allow_zero=True)
    _positive(cfg.T, "/T", allow_zero=True)
    _positive(cfg.reps, "/reps", allow_zero=True)
    if cfg.eval_every is not None:
        _positive(cfg.eval_every, "/eval_every")
    for name in ("C0", "beta_scale", "C1", "eta_c"):
        _positive(getattr(cfg.schedule, name), f"/schedule/{name}")
    if cfg.schedule.mu is not None:
        _positive(cfg.schedule.mu, "/schedule/mu")
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read and validate a config file (``OSError`` propagates for I/O failures)."""
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return parse_config(data)


def resolved(cfg: ExperimentConfig, mu=None) -> dict:
    """Plain-dict config with defaults materialized (``mu`` filled in when known)."""
    out = dataclasses.asdict(dataclasses.replace(cfg, problem={}))
    tag, params = cfg.problem
    out["problem"] = {"tag": tag, **dataclasses.asdict(params)}
    if out["schedule"]["mu"] is None and mu is not None:
        out["schedule"]["mu"] = float(mu)
    return out


# -- builders ----------------------------------------------------------------

def build_gossip(net: NetworkConfig, ptr="/network"):
    try:
        topo = build_topology(net.kind, net.K, edge_prob=net.edge_prob, seed=net.seed)
        return topo, mixing_matrix(topo, net.scheme)
    except InvalidParam as exc:
        raise ConfigError(ptr, str(exc)) from None
    except DSMOError as exc:
        raise ConfigError(ptr, f"{type(exc).__name__}: {exc}") from None


def build_problem(problem, K, ptr="/problem"):
    """Instantiate the problem described by ``(tag, params)`` for ``K`` agents."""
    from dsmo.problems.hyperparam import hyperparam_problem
    from dsmo.problems.libsvm import read_libsvm, synthetic_classification
    from dsmo.problems.policy_eval import policy_eval_problem
    from dsmo.problems.risk_averse import risk_averse_problem
    from dsmo.problems.synthetic import synthetic_quadratic

    tag, p = problem
    try:
        if tag == "synthetic":
            return synthetic_quadratic(p.dims, K, heterogeneity=p.heterogeneity, noise=p.noise, seed=p.seed,
                                       mu_g=p.mu_g, L_g=p.L_g, lam=p.lam, b_scale=p.b_scale)
        if tag == "policy_eval":
            return policy_eval_problem(p.num_states, p.feat_dim, p.gamma, p.lam, K, seed=p.seed,
                                       reward_noise=p.reward_noise, reward_scale=p.reward_scale)
        if tag == "hyperparam":
            if (p.train_path is None) != (p.val_path is None):
                raise ConfigError(ptr, "train_path and val_path must be given together")
            if p.train_path is not None:
                train = read_libsvm(p.train_path)
                val = read_libsvm(p.val_path, n_features=train.n_features)
            else:
                train = synthetic_classification(p.n_train, p.n_features, seed=p.data_seed)
                val = synthetic_classification(p.n_val, p.n_features, seed=p.data_seed + 1)
            return hyperparam_problem(train, val, K, seed=p.seed, base_reg=p.base_reg)
        return risk_averse_problem(p.feat_dim, K, kappa=p.kappa, lam=p.lam, p=p.p, n_data=p.n_data,
                                   seed=p.seed, noise_var=p.noise_var)
    except ConfigError:
        raise
    except DSMOError as exc:
        raise ConfigError(ptr, f"{type(exc).__name__}: {exc}") from None


def build_schedule(cfg: ExperimentConfig, problem):
    from dsmo.algorithms.schedule import StepSchedule

    s = cfg.schedule
    mu = s.mu if s.mu is not None else problem.pl_mu
    if s.regime == "diminishing" and mu is None:
        raise ConfigError("/schedule/mu", "the problem has no known PL constant; set mu explicitly")
    if s.regime == "constant" and cfg.T > 0 and s.beta_scale * math.sqrt(cfg.network.K / cfg.T) > 1.0:
        raise ConfigError("/T", f"beta_scale * sqrt(K/T) exceeds 1 for K={cfg.network.K}; increase T")
    try:
        return StepSchedule(regime=s.regime, C0=s.C0, T=max(cfg.T, 1) if s.regime == "constant" else None,
                            beta_scale=s.beta_scale, C1=s.C1, mu=mu, b_rule=cfg.b_rule.rule, b=cfg.b_rule.b)
    except InvalidParam as exc:
        raise ConfigError("/schedule", str(exc)) from None
