"""The online retrieve / reuse / retain loop with oracle regret bookkeeping."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import astuple, dataclass, field, fields

import numpy as np

from . import bandit as bd
from .casebank import CaseBank, context_features_batch, recall_indices, retain
from .env import (
    GATE_STREAM,
    QUERY_STREAM,
    REWARD_STREAM,
    CoverageEnv,
    LatentArmEnv,
    MockGenerator,
    encode_point,
    latent_contexts,
    latent_truth,
    sample_query,
    stream_rng,
)
from .errors import CaseBanditError, ConfigError, ConsistencyError, InvalidArgumentError

IDENTITY_TOL = 1e-9


@dataclass
class StepRecord:
    t: int
    query_id: int
    candidate_ids: tuple
    chosen_id: int | None
    exploit: float
    explore: float
    ucb: float
    reward: int
    oracle_delta: float
    oracle_rho: float
    chosen_utility: float
    best_bank_utility: float
    best_pool_utility: float
    bank_size_after: int
    discovery: bool

    @property
    def rho_pool(self) -> float:
        """Reranker-only regret: best recalled candidate minus the chosen one."""
        return self.best_pool_utility - self.chosen_utility

    @property
    def recall_gap(self) -> float:
        return self.best_bank_utility - self.best_pool_utility


CSV_COLUMNS = [f.name for f in fields(StepRecord)]


@dataclass
class RunTrace:
    config: dict
    seed: int
    env_kind: str
    records: list = field(default_factory=list)
    wall_time: float = 0.0

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)


def run(env, policy: bd.BanditState, gate: bd.DiscoveryGate | None = None, T: int = 1000,
        seed: int = 0, K: int = 32, k: int = 1, config: dict | None = None) -> RunTrace:
    """Execute ``T`` rounds and return the full trace.

    Every random draw comes from a stream keyed on ``(seed, purpose[, t])``, so
    two policies facing the same seed see the same queries.
    """
    if T < 1:
        raise InvalidArgumentError("T must be >= 1")
    if policy.d_in != env.context_dim:
        raise ConfigError(
            f"policy expects contexts of dim {policy.d_in}, environment emits {env.context_dim}",
            "policy",
        )
    if K < 1 or k < 1 or k > K:
        raise ConfigError(f"need 1 <= k <= K (got k={k}, K={K})", "policy")
    trace = RunTrace(config or {}, seed, env.kind)
    if not isinstance(env, (CoverageEnv, LatentArmEnv)):
        raise ConfigError(f"unsupported environment {type(env).__name__}", "env")
    if isinstance(env, LatentArmEnv) and gate is not None:
        raise ConfigError("discovery needs a case bank; not available for the latent env", "discovery")
    start = time.perf_counter()
    try:
        if isinstance(env, CoverageEnv):
            _run_coverage(env, policy, gate, T, seed, K, k, trace)
        else:
            _run_latent(env, policy, T, seed, trace)
    except CaseBanditError as exc:
        exc.partial_trace = trace
        raise
    trace.wall_time = time.perf_counter() - start
    return trace


def _run_coverage(env: CoverageEnv, policy, gate, T, seed, K, k, trace):
    bank = CaseBank(env.embedding_dim)
    gen = MockGenerator(env)
    qrng = stream_rng(seed, QUERY_STREAM)
    queries = np.empty((T, env.d_q))    # decoded case queries, row per bank entry
    views = np.empty((T, env.view_dim))
    n = 0
    for t in range(1, T + 1):
        q, emb = sample_query(env, qrng)
        view_q = env.rerank_view(q)
        idx = recall_indices(bank, emb, K)
        pool_u = env.utilities(q, queries[idx]) if len(idx) else np.empty(0)
        bank_u = env.utilities(q, queries[:n]) if n else np.empty(0)
        best_bank = max(env.p_min, float(bank_u.max())) if n else env.p_min
        best_pool = max(env.p_min, float(pool_u.max())) if len(idx) else env.p_min
        score = bd.ScoreBreakdown(0.0, 0.0, 0.0)
        chosen = []
        if len(idx):
            X = context_features_batch(view_q, views[idx])
            exploit, explore, ucb, Z = bd.score_batch(policy, X)
        discovered = False
        if gate is not None:
            gscore = None
            if len(idx):
                j = bd.best_for_metric(gate.metric_kind, exploit, explore, ucb)
                gscore = bd.ScoreBreakdown(float(exploit[j]), float(explore[j]), float(ucb[j]))
            discovered = bd.discovery_decide(gate, gscore, stream_rng(seed, GATE_STREAM, t))
        rrng = stream_rng(seed, REWARD_STREAM, t)
        if discovered:
            # the oracle supplies a case solved at q itself; it joins the bank before use
            utility, reward = 1.0, 1
            best_bank = best_pool = 1.0
        elif len(idx):
            if k == 1:
                chosen = [bd._pick(policy, ucb, None)]
            elif policy.kind == "Random":
                chosen = list(policy.rng.permutation(len(idx))[:k])
            elif policy.kind == "NPCBR":
                chosen = list(range(min(k, len(idx))))
            else:
                chosen = [int(i) for i in np.lexsort((np.arange(len(idx)), -ucb))[:k]]
            i0 = chosen[0]
            score = bd.ScoreBreakdown(float(exploit[i0]), float(explore[i0]), float(ucb[i0]))
            # with several cases in context the most useful one drives success
            used = max(chosen, key=lambda i: (pool_u[i], -i))
            utility = float(pool_u[used])
            _, reward = gen.generate(q, queries[idx[used]], rrng)
            for i in chosen:
                bd.observe(policy, X[i], Z[i], reward)
        else:
            utility = env.p_min
            _, reward = gen.generate(q, None, rrng)
        if reward == 1:
            payload = encode_point(q)
            retain(bank, payload, payload, 1, emb, t)
            queries[n] = q
            views[n] = view_q
            n += 1
        delta = 1.0 - best_bank
        rho = best_bank - utility
        trace.records.append(StepRecord(
            t=t, query_id=t, candidate_ids=tuple(int(bank.cases[i].id) for i in idx),
            chosen_id=None if (discovered or not chosen) else int(bank.cases[idx[chosen[0]]].id),
            exploit=score.exploit, explore=score.explore, ucb=score.ucb, reward=int(reward),
            oracle_delta=delta, oracle_rho=rho, chosen_utility=utility,
            best_bank_utility=best_bank, best_pool_utility=best_pool,
            bank_size_after=len(bank), discovery=discovered,
        ))
    trace.bank = bank


def _run_latent(env: LatentArmEnv, policy, T, seed, trace):
    for t in range(1, T + 1):
        X = latent_contexts(env, t)
        truth = latent_truth(env, X)
        exploit, explore, ucb, Z = bd.score_batch(policy, X)
        i = bd._pick(policy, ucb, None)
        best = float(truth.max())
        u = float(truth[i])
        reward = int(stream_rng(seed, REWARD_STREAM, t).random() < u)
        bd.observe(policy, X[i], Z[i], reward)
        trace.records.append(StepRecord(
            t=t, query_id=t, candidate_ids=tuple(range(len(X))), chosen_id=i,
            exploit=float(exploit[i]), explore=float(explore[i]), ucb=float(ucb[i]), reward=reward,
            oracle_delta=0.0, oracle_rho=best - u, chosen_utility=u,
            best_bank_utility=best, best_pool_utility=best, bank_size_after=0, discovery=False,
        ))


# --- metrics -------------------------------------------------------------------

def pseudo_regret(trace: RunTrace) -> np.ndarray:
    """Cumulative expected shortfall against the oracle, one entry per step."""
    if trace.env_kind == "coverage":
        inc = 1.0 - trace.column("chosen_utility")
    else:
        inc = trace.column("best_bank_utility") - trace.column("chosen_utility")
    return np.cumsum(inc)


def decompose(trace: RunTrace):
    """Per-step ``(coverage_gap, retrieval_regret)`` series, checking they add up."""
    delta = trace.column("oracle_delta")
    rho = trace.column("oracle_rho")
    if trace.env_kind == "coverage":
        resid = np.abs(delta + rho - (1.0 - trace.column("chosen_utility")))
        if resid.size and resid.max() > IDENTITY_TOL:
            bad = int(np.argmax(resid)) + 1
            raise ConsistencyError(f"regret decomposition off by {resid.max():.3e} at step {bad}")
    return delta, rho


def success_curve(trace: RunTrace, window: int) -> np.ndarray:
    """Sliding-window mean reward (``T - window + 1`` points)."""
    T = len(trace.records)
    if not 1 <= window <= T:
        raise InvalidArgumentError(f"window must lie in [1, {T}]")
    r = trace.column("reward")
    c = np.concatenate([[0.0], np.cumsum(r)])
    return (c[window:] - c[:-window]) / window


def summary(trace: RunTrace, window: int) -> dict:
    delta, rho = decompose(trace)
    R = pseudo_regret(trace)
    rewards = trace.column("reward")
    w = min(window, len(trace.records))
    return {
        "seed": trace.seed,
        "T": len(trace.records),
        "success_rate": float(rewards.mean()),
        "final_window_success": float(rewards[-w:].mean()),
        "R_T": float(R[-1]),
        "sum_delta": float(delta.sum()),
        "sum_rho": float(rho.sum()),
        "sum_rho_pool": float(sum(r.rho_pool for r in trace.records)),
        "discovery_steps": int(sum(r.discovery for r in trace.records)),
        "final_bank_size": int(trace.records[-1].bank_size_after),
    }


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(str(x) for x in v)
    return str(v)


def trace_to_csv(trace: RunTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in trace.records:
        w.writerow([_fmt(v) for v in astuple(rec)])
    return buf.getvalue()


def trace_from_csv(text: str, config=None, seed=0, env_kind="coverage") -> RunTrace:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_COLUMNS:
        raise InvalidArgumentError("trace CSV header does not match the documented column order")
    trace = RunTrace(config or {}, seed, env_kind)
    for row in rows[1:]:
        d = dict(zip(CSV_COLUMNS, row))
        trace.records.append(StepRecord(
            t=int(d["t"]), query_id=int(d["query_id"]),
            candidate_ids=tuple(int(x) for x in d["candidate_ids"].split()),
            chosen_id=int(d["chosen_id"]) if d["chosen_id"] else None,
            exploit=float(d["exploit"]), explore=float(d["explore"]), ucb=float(d["ucb"]),
            reward=int(d["reward"]), oracle_delta=float(d["oracle_delta"]),
            oracle_rho=float(d["oracle_rho"]), chosen_utility=float(d["chosen_utility"]),
            best_bank_utility=float(d["best_bank_utility"]),
            best_pool_utility=float(d["best_pool_utility"]),
            bank_size_after=int(d["bank_size_after"]), discovery=d["discovery"] == "1",
        ))
    return trace
