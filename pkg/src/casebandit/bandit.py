"""Contextual-bandit rerankers with binary feedback.

``NeuralLinLogUCB`` scores a candidate context ``x`` as

    exploit = theta . f(x; w)
    explore = || f(x; w) ||_{A^{-1}}
    ucb     = exploit + alpha * explore

where ``f`` is the ReLU encoder, ``theta`` a logistic head and ``A`` the
regularised design matrix of the features of previously chosen cases (taken
at selection time). The baselines reuse the same machinery with one piece
swapped out; see :data:`POLICY_KINDS`.
"""
from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .encoder import (
    EncoderConfig,
    EncoderWeights,
    encoder_epoch_update,
    forward,
    grad_scalar,
    init_symmetric,
    read_weights,
    write_weights,
)
from .errors import ConvergenceError, InvalidArgumentError, ParseError
from .linalg import PDInverse, as_vec, design_init, mahalanobis_rows, rank_one_update

POLICY_KINDS = (
    "NeuralLinLogUCB",  # learned encoder + logistic linear head + UCB on the head
    "LinLogUCB",        # identity features, logistic head
    "NeuralLogUCB",     # whole-network gradient features for exploration
    "NeuralLinUCB",     # learned encoder + squared-loss head
    "NPCBR",            # first recalled candidate, no learning
    "Random",
    "Greedy",           # NeuralLinLogUCB with alpha = 0
)
_NEURAL_LINEAR = ("NeuralLinLogUCB", "NeuralLinUCB", "Greedy")
_LEARNING = _NEURAL_LINEAR + ("LinLogUCB", "NeuralLogUCB")

METRIC_KINDS = ("Explore", "Exploit", "UCB", "Random")
SIGMOID_LIPSCHITZ = 0.25


def sigmoid(x):
    """Logistic function without overflow for large |x|."""
    if np.isscalar(x):
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _check_reward(r):
    if isinstance(r, (bool, np.bool_)):
        return int(r)
    if r in (0, 1) and float(r) == int(r):
        return int(r)
    raise InvalidArgumentError(f"reward must be 0 or 1, got {r!r}")


@dataclass
class ScoreBreakdown:
    exploit: float
    explore: float
    ucb: float


@dataclass
class TheoryParams:
    """Constants of the confidence-width schedule."""

    nu: float
    M: float
    delta: float
    kappa_sigma: float
    L: int
    d: int
    lam: float

    def __post_init__(self):
        for name in ("nu", "M", "delta", "kappa_sigma", "L", "d", "lam"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.delta >= 1:
            raise InvalidArgumentError("delta must lie in (0, 1)")
        if self.kappa_sigma > SIGMOID_LIPSCHITZ:
            raise InvalidArgumentError("kappa_sigma cannot exceed the sigmoid Lipschitz constant 1/4")


def theoretical_alpha(t: int, p: TheoryParams) -> float:
    """Exploration width ``(nu*sqrt(2(d log(1+L t^2/lam) + log(1/delta))) + sqrt(lam) M) / kappa``."""
    if t < 1:
        raise InvalidArgumentError("t must be >= 1")
    inner = p.d * math.log1p(p.L * t * t / p.lam) + math.log(1.0 / p.delta)
    return (p.nu * math.sqrt(2.0 * inner) + math.sqrt(p.lam) * p.M) / p.kappa_sigma


@dataclass
class BanditState:
    kind: str
    d_in: int
    theta: np.ndarray
    design: PDInverse
    encoder: EncoderWeights | None = None
    alpha: float = 0.1
    eta: float = 0.01
    head_lambda: float = 0.1
    H: int = 32
    encoder_eta: float = 0.05
    encoder_steps: int = 1
    encoder_reg: float = 0.0
    encoder_data: str = "epoch"      # "epoch" (current interval) or "history" (all rounds)
    head_mode: str = "sgd"           # "sgd" single step, or "full" regularised refit
    design_mode: str = "frozen"      # "frozen" selection-time features, or "recompute"
    theory: TheoryParams | None = None
    readout: np.ndarray | None = None
    t: int = 0
    epoch_buffer: list = field(default_factory=list)
    history_x: list = field(default_factory=list)
    history_z: list = field(default_factory=list)
    history_r: list = field(default_factory=list)
    rng: np.random.Generator | None = None
    seed: int = 0

    @property
    def lam(self) -> float:
        return self.design.lam

    def current_alpha(self) -> float:
        if self.kind == "Greedy":
            return 0.0
        if self.theory is not None:
            return theoretical_alpha(self.t + 1, self.theory)
        return self.alpha


def make_policy(kind: str, d_in: int, *, alpha=0.1, eta=0.01, lam=0.1, head_lambda=None, H=32,
                m=64, depth=2, d_out=16, scale=None, encoder_eta=0.05, encoder_steps=1,
                encoder_reg=0.0, encoder_data="epoch", head_mode="sgd", design_mode="frozen",
                theory=None, seed=0) -> BanditState:
    """Build a fresh policy of the given kind for contexts of dimension ``d_in``."""
    if kind not in POLICY_KINDS:
        raise InvalidArgumentError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
    if alpha < 0 or eta <= 0 or H < 1:
        raise InvalidArgumentError("need alpha >= 0, eta > 0, H >= 1")
    if head_mode not in ("sgd", "full") or design_mode not in ("frozen", "recompute") \
            or encoder_data not in ("epoch", "history"):
        raise InvalidArgumentError("bad head_mode / design_mode / encoder_data")
    head_lambda = lam if head_lambda is None else head_lambda
    rng = np.random.default_rng([seed, 0xB4D17])
    encoder = readout = None
    if kind in _NEURAL_LINEAR or kind == "NeuralLogUCB":
        encoder = init_symmetric(EncoderConfig(d_in, m, depth, d_out, scale, seed))
    if kind in _NEURAL_LINEAR:
        dim = d_out
        theta = rng.normal(0.0, math.sqrt(1.0 / d_out), size=d_out)
    elif kind == "LinLogUCB":
        dim = d_in
        theta = np.zeros(d_in)
    elif kind == "NeuralLogUCB":
        dim = encoder.config.n_params
        readout = rng.normal(0.0, math.sqrt(1.0 / d_out), size=d_out)
        theta = readout.copy()
    else:
        dim = 1
        theta = np.zeros(1)
    return BanditState(
        kind=kind, d_in=d_in, theta=theta, design=design_init(dim, lam), encoder=encoder,
        alpha=alpha, eta=eta, head_lambda=head_lambda, H=H, encoder_eta=encoder_eta,
        encoder_steps=encoder_steps, encoder_reg=encoder_reg, encoder_data=encoder_data,
        head_mode=head_mode, design_mode=design_mode, theory=theory, readout=readout,
        rng=rng, seed=seed,
    )


# --- scoring ---------------------------------------------------------------

def features(state: BanditState, X) -> np.ndarray:
    """Design-space feature rows for a batch of contexts."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != state.d_in:
        raise InvalidArgumentError(f"context dim {X.shape[1]} does not match policy d_in {state.d_in}")
    if state.kind in _NEURAL_LINEAR:
        return forward(state.encoder, X)
    if state.kind == "LinLogUCB":
        return np.array(X, copy=True)
    if state.kind == "NeuralLogUCB":
        return grad_scalar(state.encoder, state.readout, X) / math.sqrt(state.encoder.config.m)
    return np.zeros((X.shape[0], 1))


def score_batch(state: BanditState, X):
    """Return ``(exploit, explore, ucb, Z)`` arrays for every row of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if state.kind in ("NPCBR", "Random"):
        if X.shape[1] != state.d_in:
            raise InvalidArgumentError(f"context dim {X.shape[1]} does not match policy d_in {state.d_in}")
        zero = np.zeros(X.shape[0])
        return zero, zero.copy(), zero.copy(), np.zeros((X.shape[0], 1))
    Z = features(state, X)
    if state.kind == "NeuralLogUCB":
        exploit = forward(state.encoder, X) @ state.readout
    else:
        exploit = Z @ state.theta
    explore = mahalanobis_rows(state.design, Z)
    ucb = exploit + state.current_alpha() * explore
    return exploit, explore, ucb, Z


def ucb_score(state: BanditState, x) -> ScoreBreakdown:
    x = as_vec(x, state.d_in, "context")
    exploit, explore, ucb, _ = score_batch(state, x[None, :])
    return ScoreBreakdown(float(exploit[0]), float(explore[0]), float(ucb[0]))


def _pick(state: BanditState, ucb: np.ndarray, rng) -> int:
    if state.kind == "Random":
        return int((rng or state.rng).integers(len(ucb)))
    if state.kind == "NPCBR":
        return 0
    return int(np.argmax(ucb))  # first maximum, i.e. lowest index on ties


def select(state: BanditState, candidates, rng=None):
    """Index of the highest-UCB candidate and its score breakdown."""
    X = np.asarray(candidates, dtype=np.float64)
    if X.size == 0 or len(X) == 0:
        raise InvalidArgumentError("cannot select from an empty candidate list")
    exploit, explore, ucb, _ = score_batch(state, X)
    i = _pick(state, ucb, rng)
    return i, ScoreBreakdown(float(exploit[i]), float(explore[i]), float(ucb[i]))


def select_top_k(state: BanditState, candidates, k: int) -> list:
    """``k`` distinct indices by descending UCB, ties by ascending index."""
    X = np.asarray(candidates, dtype=np.float64)
    n = 0 if X.size == 0 else len(X)
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k={k} must be in [1, {n}]")
    _, _, ucb, _ = score_batch(state, X)
    return [int(i) for i in np.lexsort((np.arange(n), -ucb))[:k]]


# --- learning --------------------------------------------------------------

def update_head_sgd(state: BanditState, z, r, x=None) -> BanditState:
    """One gradient step on the head for the observed (feature, reward) pair.

    Also folds ``z`` into the design inverse, buffers ``(x, r)`` for the next
    encoder epoch and advances the step counter.
    """
    r = _check_reward(r)
    z = as_vec(z, state.theta.shape[0], "z")
    if state.kind == "NeuralLinUCB":
        resid = float(state.theta @ z) - r
    else:
        resid = sigmoid(float(state.theta @ z)) - r
    state.theta = state.theta - state.eta * (resid * z + state.head_lambda * state.theta)
    _record(state, z, r, x)
    return state


def _record(state: BanditState, z, r, x):
    state.design = rank_one_update(state.design, z)
    if x is not None:
        state.epoch_buffer.append((np.asarray(x, dtype=np.float64), r))
        state.history_x.append(np.asarray(x, dtype=np.float64))
    if state.head_mode == "full":
        state.history_z.append(z)
    state.history_r.append(r)
    state.t += 1


def fit_head_full(history, lam: float, theta0=None, tol: float = 1e-8, max_iter: int = 100):
    """Minimise ``sum CE(sigmoid(theta.z_s), r_s) + (lam/2)|theta|^2`` by damped Newton.

    ``history`` is a list of ``(z, r)`` pairs or a ``(Z, r)`` tuple of arrays.
    Stops when the gradient inf-norm is at most ``tol``.
    """
    if isinstance(history, tuple) and len(history) == 2 and np.ndim(history[0]) == 2:
        Z = np.ascontiguousarray(history[0], dtype=np.float64)
        r = np.ascontiguousarray(history[1], dtype=np.float64)
    else:
        history = list(history)
        if not history:
            raise InvalidArgumentError("history must be nonempty")
        Z = np.ascontiguousarray(np.vstack([np.asarray(z, dtype=np.float64) for z, _ in history]))
        r = np.array([float(_check_reward(rr)) for _, rr in history])
    if Z.shape[0] == 0:
        raise InvalidArgumentError("history must be nonempty")
    if not lam > 0:
        raise InvalidArgumentError("lambda must be positive")
    d = Z.shape[1]
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=np.float64)
    loss, grad = kernels.logistic_objective(theta, Z, r, lam)
    for _ in range(max_iter):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= tol:
            return theta
        p = sigmoid(Z @ theta)
        hess = (Z * (p * (1.0 - p))[:, None]).T @ Z + lam * np.eye(d)
        step = np.linalg.solve(hess, grad)
        s = 1.0
        while True:
            cand = theta - s * step
            c_loss, c_grad = kernels.logistic_objective(cand, Z, r, lam)
            if c_loss <= loss - 1e-4 * s * float(grad @ step) or s < 1e-10:
                break
            s *= 0.5
        if np.array_equal(cand, theta):
            break
        theta, loss, grad = cand, c_loss, c_grad
    gnorm = float(np.max(np.abs(grad)))
    if gnorm <= tol:
        return theta
    raise ConvergenceError("logistic head fit did not reach tolerance", gnorm)


def observe(state: BanditState, x, z, r) -> BanditState:
    """Full post-reward update for any policy kind, then the encoder if due."""
    r = _check_reward(r)
    if state.kind in ("NPCBR", "Random"):
        state.t += 1
        return state
    if state.kind == "NeuralLogUCB":
        _record(state, np.asarray(z, dtype=np.float64), r, x)
    elif state.head_mode == "full":
        _record(state, as_vec(z, state.theta.shape[0], "z"), r, x)
        state.theta = fit_head_full(
            (np.vstack(state.history_z), np.asarray(state.history_r, dtype=np.float64)),
            state.lam, theta0=state.theta,
        )
    else:
        update_head_sgd(state, z, r, x)
    update_encoder_if_due(state)
    return state


def update_encoder_if_due(state: BanditState) -> BanditState:
    """Run the encoder epoch when ``t % H == 0`` and data is buffered; the head is left as is."""
    if state.encoder is None:
        state.epoch_buffer.clear()
        return state
    if state.t % state.H != 0 or not state.epoch_buffer:
        return state
    if state.encoder_data == "history" and state.history_x:
        X = np.vstack(state.history_x)
        r = np.asarray(state.history_r[-len(state.history_x):], dtype=np.float64)
    else:
        X = np.vstack([x for x, _ in state.epoch_buffer])
        r = np.array([float(rr) for _, rr in state.epoch_buffer])
    head = state.readout if state.kind == "NeuralLogUCB" else state.theta
    loss = "squared" if state.kind == "NeuralLinUCB" else "logistic"
    state.encoder = encoder_epoch_update(
        state.encoder, head, (X, r), state.encoder_eta, state.encoder_reg, state.encoder_steps, loss
    )
    state.epoch_buffer.clear()
    if state.design_mode == "recompute" and state.history_x:
        Z = features(state, np.vstack(state.history_x))
        inv = np.linalg.inv(state.lam * np.eye(Z.shape[1]) + Z.T @ Z)
        state.design = PDInverse(state.design.dim, 0.5 * (inv + inv.T), state.lam,
                                 state.design.update_count)
    return state


# --- discovery gate ----------------------------------------------------------

@dataclass
class DiscoveryGate:
    """Decides when to spend budget on an oracle case instead of retrieving one."""

    metric_kind: str = "Exploit"
    budget_fraction: float = 0.10
    queue_len: int = 16
    percentile: float = 10.0
    queue: deque = field(default_factory=deque)
    used: int = 0
    total: int = 0

    def __post_init__(self):
        if self.metric_kind not in METRIC_KINDS:
            raise InvalidArgumentError(f"unknown discovery metric {self.metric_kind!r}")
        if not 0 <= self.budget_fraction <= 1:
            raise InvalidArgumentError("budget_fraction must lie in [0, 1]")
        self.queue = deque(self.queue, maxlen=self.queue_len)

    def threshold(self):
        """Nearest-rank percentile of the queued metric values, or None if empty."""
        if not self.queue:
            return None
        vals = sorted(self.queue)
        rank = max(1, math.ceil(self.percentile / 100.0 * len(vals) - 1e-12))
        return vals[rank - 1]

    def budget_available(self) -> bool:
        """Whether one more discovery keeps ``used <= budget_fraction * total`` (total incl. this step)."""
        return self.used + 1 <= self.budget_fraction * (self.total + 1) + 1e-9


def metric_value(kind: str, score: ScoreBreakdown | None) -> float:
    if score is None:
        return -math.inf
    return {"Explore": score.explore, "Exploit": score.exploit, "UCB": score.ucb}[kind]


def discovery_decide(gate: DiscoveryGate, score: ScoreBreakdown | None, rng) -> bool:
    """Return True when this step should be a discovery step.

    ``score`` is the breakdown of the pool's best candidate under the gate's
    metric, or None when the candidate pool is empty.
    """
    budget_ok = gate.budget_available()
    if gate.metric_kind == "Random":
        fire = bool(rng.random() < gate.budget_fraction)
    else:
        value = metric_value(gate.metric_kind, score)
        thr = gate.threshold()
        fire = thr is not None and value < thr
        if math.isfinite(value):
            gate.queue.append(value)
    gate.total += 1
    decision = fire and budget_ok
    if decision:
        gate.used += 1
    return decision


def best_for_metric(kind: str, exploit, explore, ucb) -> int:
    """Candidate index maximising the gate's metric (UCB for the Random gate)."""
    arr = {"Explore": explore, "Exploit": exploit}.get(kind, ucb)
    return int(np.argmax(arr))


# --- checkpoints -------------------------------------------------------------

_SCALARS = ("kind", "d_in", "alpha", "eta", "head_lambda", "H", "encoder_eta", "encoder_steps",
            "encoder_reg", "encoder_data", "head_mode", "design_mode", "t", "seed")


def save_policy(state: BanditState, directory) -> None:
    """Write ``manifest.json``, ``arrays.npz`` and (if neural) ``encoder.bin``."""
    os.makedirs(directory, exist_ok=True)
    manifest = {k: getattr(state, k) for k in _SCALARS}
    manifest["format"] = "casebandit-policy/1"
    manifest["lam"] = state.design.lam
    manifest["design_update_count"] = state.design.update_count
    manifest["theory"] = None if state.theory is None else vars(state.theory)
    manifest["rng_state"] = state.rng.bit_generator.state if state.rng is not None else None
    manifest["has_encoder"] = state.encoder is not None
    arrays = {
        "theta": state.theta,
        "design_inv": state.design.inv,
        "buffer_r": np.array([r for _, r in state.epoch_buffer], dtype=np.int64),
        "history_r": np.array(state.history_r, dtype=np.int64),
    }
    if state.epoch_buffer:
        arrays["buffer_x"] = np.vstack([x for x, _ in state.epoch_buffer])
    if state.history_x:
        arrays["history_x"] = np.vstack(state.history_x)
    if state.history_z:
        arrays["history_z"] = np.vstack(state.history_z)
    if state.readout is not None:
        arrays["readout"] = state.readout
    with open(os.path.join(directory, "arrays.npz"), "wb") as fh:
        np.savez(fh, **arrays)
    if state.encoder is not None:
        with open(os.path.join(directory, "encoder.bin"), "wb") as fh:
            write_weights(state.encoder, fh)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_policy(directory) -> BanditState:
    try:
        with open(os.path.join(directory, "manifest.json")) as fh:
            man = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad policy manifest: {exc}", exc.lineno) from exc
    with np.load(os.path.join(directory, "arrays.npz")) as z:
        arrays = {k: z[k] for k in z.files}
    encoder = None
    if man["has_encoder"]:
        with open(os.path.join(directory, "encoder.bin"), "rb") as fh:
            encoder = read_weights(fh)
    inv = arrays["design_inv"]
    state = BanditState(
        kind=man["kind"], d_in=man["d_in"], theta=arrays["theta"],
        design=PDInverse(inv.shape[0], inv, man["lam"], man["design_update_count"]),
        encoder=encoder, readout=arrays.get("readout"),
        theory=TheoryParams(**man["theory"]) if man["theory"] else None,
        **{k: man[k] for k in _SCALARS if k not in ("kind", "d_in")},
    )
    bx = arrays.get("buffer_x")
    state.epoch_buffer = [(bx[i], int(r)) for i, r in enumerate(arrays["buffer_r"])] if bx is not None else []
    state.history_r = [int(r) for r in arrays["history_r"]]
    state.history_x = list(arrays["history_x"]) if "history_x" in arrays else []
    state.history_z = list(arrays["history_z"]) if "history_z" in arrays else []
    if man["rng_state"] is not None:
        state.rng = np.random.default_rng()
        state.rng.bit_generator.state = man["rng_state"]
    return state
