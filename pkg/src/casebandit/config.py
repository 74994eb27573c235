"""Strict JSON experiment configuration.

Every field has a default, so ``{}`` is a runnable config. Unknown keys and
wrongly typed values are rejected with the dotted path of the offending key.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import MISSING, asdict, dataclass, field, fields

from .bandit import METRIC_KINDS, POLICY_KINDS, TheoryParams, make_policy
from .env import CoverageEnv, LatentArmEnv
from .errors import CaseBanditError, ConfigError


@dataclass
class EnvBlock:
    kind: str = "coverage"
    d_q: int = 2
    L_Q: float = 2.0
    p_min: float = 0.1
    embed_noise: float = 0.0
    d: int = 8
    arms: int = 10
    m: int = 16
    depth: int = 2
    d_hidden: int = 8
    M: float = 3.0


@dataclass
class TheoryBlock:
    nu: float = 0.5
    M: float = 1.0
    delta: float = 0.1
    kappa_sigma: float = 0.1


@dataclass
class PolicyBlock:
    kind: str = "NeuralLinLogUCB"
    alpha: float = 0.1
    eta: float = 0.01
    lam: float = 0.1
    head_lambda: float | None = None
    H: int = 32
    K: int = 32
    k: int = 1
    m: int = 64
    depth: int = 2
    d_out: int = 16
    encoder_eta: float = 0.05
    encoder_steps: int = 1
    encoder_reg: float = 0.0
    encoder_data: str = "epoch"
    head_mode: str = "sgd"
    design_mode: str = "frozen"
    theory: TheoryBlock | None = None


@dataclass
class RunBlock:
    T: int = 1000
    seeds: list = field(default_factory=lambda: [0])
    window: int = 200


@dataclass
class DiscoveryBlock:
    metric_kind: str = "Exploit"
    budget: float = 0.10


@dataclass
class OutputBlock:
    directory: str | None = None
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    env: EnvBlock = field(default_factory=EnvBlock)
    policy: PolicyBlock = field(default_factory=PolicyBlock)
    run: RunBlock = field(default_factory=RunBlock)
    discovery: DiscoveryBlock | None = None
    output: OutputBlock = field(default_factory=OutputBlock)

    def to_dict(self) -> dict:
        return asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


_NESTED = {
    (PolicyBlock, "theory"): TheoryBlock,
    (ExperimentConfig, "env"): EnvBlock,
    (ExperimentConfig, "policy"): PolicyBlock,
    (ExperimentConfig, "run"): RunBlock,
    (ExperimentConfig, "discovery"): DiscoveryBlock,
    (ExperimentConfig, "output"): OutputBlock,
}


def _check_scalar(value, default, annotation, path):
    ann = str(annotation)
    if value is None:
        if "None" in ann:
            return None
        raise ConfigError("may not be null", path)
    if ann.startswith("list"):
        if not isinstance(value, list):
            raise ConfigError("expected a list", path)
        return list(value)
    if isinstance(value, (list, dict)):
        raise ConfigError(
            "expected a single value (parameter grids belong to the sweep command)", path
        )
    if ann.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return value
    if ann.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        return float(value)
    if ann.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
        return value
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path or "<root>")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)
    kwargs = {}
    for name, f in known.items():
        sub = f"{path}.{name}" if path else name
        if name not in data:
            continue
        nested = _NESTED.get((cls, name))
        if nested is not None:
            kwargs[name] = None if data[name] is None else _build(nested, data[name], sub)
            if data[name] is None and "None" not in str(f.type):
                raise ConfigError("may not be null", sub)
        else:
            default = f.default if f.default is not MISSING else None
            kwargs[name] = _check_scalar(data[name], default, f.type, sub)
    return cls(**kwargs)


def parse_config(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Read a config file, or the ``config`` section of a run manifest."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc})", str(path)) from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config ({exc.strerror})", str(path)) from exc
    if isinstance(data, dict) and data.get("format") == "casebandit-manifest/1":
        data = data["config"]
    return parse_config(data)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.env.kind not in ("coverage", "latent"):
        raise ConfigError(f"unknown environment kind {cfg.env.kind!r}", "env.kind")
    if cfg.policy.kind not in POLICY_KINDS:
        raise ConfigError(f"unknown policy kind {cfg.policy.kind!r}", "policy.kind")
    if cfg.run.T < 1:
        raise ConfigError("must be >= 1", "run.T")
    if not cfg.run.seeds or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0
                                    for s in cfg.run.seeds):
        raise ConfigError("must be a nonempty list of nonnegative integers", "run.seeds")
    if cfg.run.window < 1:
        raise ConfigError("must be >= 1", "run.window")
    if not 1 <= cfg.policy.k <= cfg.policy.K:
        raise ConfigError("need 1 <= k <= K", "policy.k")
    if cfg.discovery is not None:
        if cfg.discovery.metric_kind not in METRIC_KINDS:
            raise ConfigError(f"unknown metric {cfg.discovery.metric_kind!r}", "discovery.metric_kind")
        if not 0 <= cfg.discovery.budget <= 1:
            raise ConfigError("must lie in [0, 1]", "discovery.budget")
        if cfg.env.kind != "coverage":
            raise ConfigError("discovery requires the coverage environment", "discovery")
    for fmt in cfg.output.formats:
        if fmt not in ("csv", "json"):
            raise ConfigError(f"unknown format {fmt!r}", "output.formats")
    try:
        build_env(cfg, 0)
    except CaseBanditError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "env") from exc
    try:
        build_policy(cfg, build_env(cfg, 0), 0)
    except CaseBanditError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "policy") from exc


def build_env(cfg: ExperimentConfig, seed: int):
    e = cfg.env
    if e.kind == "coverage":
        return CoverageEnv(e.d_q, e.L_Q, e.p_min, seed, e.embed_noise)
    return LatentArmEnv(e.d, e.arms, e.m, e.depth, e.d_hidden, e.M, seed)


def build_policy(cfg: ExperimentConfig, env, seed: int):
    p = cfg.policy
    theory = None
    if p.theory is not None:
        d = env.context_dim if p.kind == "LinLogUCB" else p.d_out
        theory = TheoryParams(p.theory.nu, p.theory.M, p.theory.delta, p.theory.kappa_sigma,
                              p.depth, d, p.lam)
    return make_policy(
        p.kind, env.context_dim, alpha=p.alpha, eta=p.eta, lam=p.lam, head_lambda=p.head_lambda,
        H=p.H, m=p.m, depth=p.depth, d_out=p.d_out, encoder_eta=p.encoder_eta,
        encoder_steps=p.encoder_steps, encoder_reg=p.encoder_reg, encoder_data=p.encoder_data,
        head_mode=p.head_mode, design_mode=p.design_mode, theory=theory, seed=seed,
    )
