"""Synthetic environments with oracle access to expected utility.

``CoverageEnv`` draws queries uniformly from the unit cube; conditioning the
mock generator on a case solved at ``q_c`` succeeds with probability
``clamp(1 - L_Q * |q - q_c|, p_min, 1)``. ``LatentArmEnv`` is a plain
K-armed contextual bandit whose success probabilities come from a hidden
ReLU network and linear head.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bandit import sigmoid
from .encoder import EncoderConfig, EncoderWeights, forward, init_gaussian
from .errors import DataCorruptionError, InvalidArgumentError

# stream tags for per-purpose RNGs derived from one run seed
QUERY_STREAM = 1
REWARD_STREAM = 2
CONTEXT_STREAM = 3
GATE_STREAM = 4


def stream_rng(seed: int, stream: int, t: int | None = None) -> np.random.Generator:
    key = [int(seed), int(stream)] if t is None else [int(seed), int(stream), int(t)]
    return np.random.default_rng(key)


def encode_point(q) -> str:
    return ",".join(repr(float(v)) for v in q)


def decode_point(payload: str, dim: int) -> np.ndarray:
    try:
        vals = np.array([float(s) for s in str(payload).split(",")], dtype=np.float64)
    except ValueError as exc:
        raise DataCorruptionError(f"cannot decode query payload {payload!r}") from exc
    if vals.shape != (dim,) or not np.all(np.isfinite(vals)):
        raise DataCorruptionError(f"payload {payload!r} is not a point in {dim} dimensions")
    return vals


@dataclass
class CoverageEnv:
    d_q: int = 2
    L_Q: float = 2.0
    p_min: float = 0.1
    rng_seed: int = 0
    embed_noise: float = 0.0

    kind = "coverage"

    def __post_init__(self):
        if self.d_q < 1:
            raise InvalidArgumentError("d_q must be positive")
        if not self.L_Q > 0:
            raise InvalidArgumentError("L_Q must be positive")
        if not 0 < self.p_min < 1:
            raise InvalidArgumentError("p_min must lie in (0, 1)")
        if not 0 <= self.embed_noise <= 1:
            raise InvalidArgumentError("embed_noise must lie in [0, 1]")
        self.n_hidden = math.ceil(self.embed_noise * self.d_q - 1e-12)
        if self.n_hidden >= self.d_q:
            raise InvalidArgumentError("embed_noise hides every coordinate")

    @property
    def embedding_dim(self) -> int:
        return self.d_q

    @property
    def view_dim(self) -> int:
        return self.d_q + 1

    @property
    def context_dim(self) -> int:
        return 4 * self.view_dim

    def embed(self, q) -> np.ndarray:
        """Observable embedding: trailing hidden coordinates zeroed, then unit-normalised."""
        e = np.array(q, dtype=np.float64)
        if self.n_hidden:
            e[self.d_q - self.n_hidden:] = 0.0
        n = np.linalg.norm(e)
        if n == 0.0:
            e[0] = 1.0
            return e
        return e / n

    def rerank_view(self, Q) -> np.ndarray:
        """Injective unit-norm lift ``(2q - 1, 1) / |.|`` of full query payloads.

        The reranker reads whole payloads; only recall is restricted to the
        observable embedding.
        """
        Q = np.asarray(Q, dtype=np.float64)
        single = Q.ndim == 1
        Q2 = np.atleast_2d(Q)
        V = np.hstack([2.0 * Q2 - 1.0, np.ones((Q2.shape[0], 1))])
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        return V[0] if single else V

    def utilities(self, q, case_queries) -> np.ndarray:
        """Vectorised expected utility of each case query for the query ``q``."""
        C = np.atleast_2d(np.asarray(case_queries, dtype=np.float64))
        if C.shape[0] == 0:
            return np.empty(0)
        dist = np.sqrt(np.sum((C - q) ** 2, axis=1))
        return np.clip(1.0 - self.L_Q * dist, self.p_min, 1.0)


def sample_query(env: CoverageEnv, rng):
    """A uniform query on the unit cube and its observable embedding."""
    q = rng.random(env.d_q)
    return q, env.embed(q)


def _case_point(env: CoverageEnv, c) -> np.ndarray:
    if isinstance(c, np.ndarray):
        return c
    payload = getattr(c, "query_payload", c)
    return decode_point(payload, env.d_q)


def expected_utility(env: CoverageEnv, q, c) -> float:
    """Success probability on ``q`` given case ``c`` (None means no case: ``p_min``)."""
    if c is None:
        return env.p_min
    qc = _case_point(env, c)
    return float(env.utilities(np.asarray(q, dtype=np.float64), qc[None, :])[0])


def step(env: CoverageEnv, q, c, rng) -> int:
    """Bernoulli reward with mean :func:`expected_utility`."""
    return int(rng.random() < expected_utility(env, q, c))


def oracle_terms(env: CoverageEnv, q, bank, case_queries=None):
    """``(coverage_gap, best_case_utility)`` for ``q`` against the whole bank.

    ``case_queries`` may pass the decoded bank queries (row per case) to skip
    payload parsing.
    """
    if case_queries is None:
        case_queries = np.array([_case_point(env, c) for c in bank]).reshape(-1, env.d_q)
    u = env.utilities(np.asarray(q, dtype=np.float64), case_queries)
    best = max(env.p_min, float(u.max())) if u.size else env.p_min
    return 1.0 - best, best


@dataclass
class MockGenerator:
    """Stands in for the frozen generator: success depends only on the case used."""

    env: CoverageEnv
    rng: np.random.Generator | None = None

    def generate(self, q, c, rng=None):
        """Return ``(solution_payload, reward)``; the solution is ``q`` itself."""
        rng = rng or self.rng
        return encode_point(q), step(self.env, q, c, rng)


@dataclass
class LatentArmEnv:
    d: int = 8
    K: int = 10
    m: int = 16
    depth: int = 2
    d_hidden: int = 8
    M: float = 3.0
    rng_seed: int = 0
    hidden: EncoderWeights | None = field(default=None, repr=False)
    theta_star: np.ndarray | None = field(default=None, repr=False)

    kind = "latent"

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise InvalidArgumentError("feature dim d must be even and >= 2")
        if self.K < 1:
            raise InvalidArgumentError("K must be positive")
        if self.hidden is None:
            cfg = EncoderConfig(self.d, self.m, self.depth, self.d_hidden, None, self.rng_seed)
            self.hidden = init_gaussian(cfg, np.random.default_rng([self.rng_seed, 0x41D]))
        if self.theta_star is None:
            g = np.random.default_rng([self.rng_seed, 0x7E7A]).normal(size=self.hidden.config.d_out)
            self.theta_star = self.M * g / np.linalg.norm(g)

    @property
    def context_dim(self) -> int:
        return self.d


def latent_contexts(env: LatentArmEnv, t: int, rng=None) -> np.ndarray:
    """``K`` unit-norm contexts with equal halves; a function of ``(seed, t)`` only."""
    rng = rng or stream_rng(env.rng_seed, CONTEXT_STREAM, t)
    raw = rng.normal(size=(env.K, env.d // 2))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    X = np.hstack([raw, raw]) / math.sqrt(2.0)
    return X


def latent_truth(env: LatentArmEnv, x, at_init: bool = False):
    """``sigmoid(theta* . f*(x))``; ``at_init`` evaluates the hidden net at its symmetric start."""
    net = env.hidden
    if at_init:
        net = EncoderWeights(net.config, net.init_layers, net.init_layers)
    logits = forward(net, x) @ env.theta_star
    return sigmoid(logits) if np.ndim(logits) else float(sigmoid(float(logits)))
