"""Fully connected ReLU encoder ``f(x; w) = scale * relu(W_L relu(... relu(W_1 x)))``.

Parameters are ordered as ``[vec(W_1), ..., vec(W_L)]`` where ``vec`` is the
row-major (C-order) flattening. Every gradient in this module is analytic;
``tests/test_encoder.py`` checks them against central finite differences.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ParseError


_MAGIC = b"CBENC1\n"


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int
    m: int = 64
    depth: int = 2
    d_out: int = 16
    scale: float | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("d_in", "m", "d_out"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {v!r}")
        if self.d_in % 2 or self.m % 2:
            raise InvalidArgumentError(
                f"d_in and m must be even for the block-symmetric start (got {self.d_in}, {self.m})"
            )
        if self.depth < 2:
            raise InvalidArgumentError(f"depth must be >= 2, got {self.depth}")
        if self.seed < 0:
            raise InvalidArgumentError("seed must be nonnegative")

    @property
    def output_scale(self) -> float:
        return float(np.sqrt(self.m)) if self.scale is None else float(self.scale)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        shapes = [(self.m, self.d_in)]
        shapes += [(self.m, self.m)] * (self.depth - 2)
        shapes.append((self.d_out, self.m))
        return shapes

    @property
    def n_params(self) -> int:
        return self.m * self.d_in + self.m * self.m * (self.depth - 2) + self.d_out * self.m

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in, "m": self.m, "depth": self.depth,
            "d_out": self.d_out, "scale": self.scale, "seed": self.seed,
        }


@dataclass
class EncoderWeights:
    config: EncoderConfig
    layers: list
    init_layers: list = field(default_factory=list)

    def copy(self) -> "EncoderWeights":
        return EncoderWeights(
            self.config, [w.copy() for w in self.layers], [w.copy() for w in self.init_layers]
        )

    def flat(self) -> np.ndarray:
        return flatten(self.layers)

    def flat_init(self) -> np.ndarray:
        return flatten(self.init_layers)


def flatten(layers) -> np.ndarray:
    return np.concatenate([w.ravel() for w in layers])


def unflatten(cfg: EncoderConfig, vec) -> list:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (cfg.n_params,):
        raise InvalidArgumentError(f"expected {cfg.n_params} parameters, got {vec.shape}")
    out, pos = [], 0
    for r, c in cfg.shapes:
        out.append(vec[pos:pos + r * c].reshape(r, c).copy())
        pos += r * c
    return out


def init_symmetric(cfg: EncoderConfig) -> EncoderWeights:
    """Block-symmetric Gaussian start under which duplicated-half inputs map to 0.

    Hidden layers are ``[[W, 0], [0, W]]`` with ``W ~ N(0, 4/m)``; the output
    layer is ``[W^T, -W^T]`` with ``W ~ N(0, 2/m)``.
    """
    rng = np.random.default_rng(cfg.seed)
    m, h = cfg.m, cfg.m // 2
    layers = []
    fan_in = cfg.d_in // 2
    for _ in range(cfg.depth - 1):
        w = rng.normal(0.0, np.sqrt(4.0 / m), size=(h, fan_in))
        full = np.zeros((m, 2 * fan_in))
        full[:h, :fan_in] = w
        full[h:, fan_in:] = w
        layers.append(full)
        fan_in = h
    w = rng.normal(0.0, np.sqrt(2.0 / m), size=(h, cfg.d_out))
    layers.append(np.hstack([w.T, -w.T]))
    return EncoderWeights(cfg, layers, [w.copy() for w in layers])


def init_gaussian(cfg: EncoderConfig, rng=None) -> EncoderWeights:
    """Unstructured Gaussian weights (same variances as the symmetric start).

    The ``init_layers`` snapshot is still the symmetric start for ``cfg.seed``,
    so the hidden ground-truth networks in ``env`` keep a reference point.
    """
    base = init_symmetric(cfg)
    rng = np.random.default_rng(cfg.seed + 1) if rng is None else rng
    m = cfg.m
    layers = []
    for i, (r, c) in enumerate(cfg.shapes):
        var = 2.0 / m if i == cfg.depth - 1 else 4.0 / m
        layers.append(rng.normal(0.0, np.sqrt(var), size=(r, c)))
    return EncoderWeights(cfg, layers, base.init_layers)


def _relu_grad(pre):
    # subgradient 0 at the kink
    return (pre > 0).astype(np.float64)


def _check_input(w: EncoderWeights, x):
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.ndim != 2 or X2.shape[1] != w.config.d_in:
        raise InvalidArgumentError(
            f"input dim {X2.shape[-1] if X2.ndim else 0} does not match encoder d_in {w.config.d_in}"
        )
    return X2, single


def _forward_cache(layers, X):
    pres, acts = [], [X]
    a = X
    for W in layers:
        pre = a @ W.T
        a = np.maximum(pre, 0.0)
        pres.append(pre)
        acts.append(a)
    return pres, acts


def forward(w: EncoderWeights, x) -> np.ndarray:
    """Feature vector(s) for one input (1-D) or a batch of row inputs (2-D)."""
    X, single = _check_input(w, x)
    a = X
    for W in w.layers:
        a = np.maximum(a @ W.T, 0.0)
    out = w.config.output_scale * a
    return out[0] if single else out


def _backprop(layers, pres, acts, upstream):
    """Gradients w.r.t. every layer given dLoss/d(pre_L) rows ``upstream``.

    ``upstream`` has shape (n, d_out); returned per-layer gradients are summed
    over the n rows.
    """
    grads = [None] * len(layers)
    delta = upstream
    for i in range(len(layers) - 1, -1, -1):
        grads[i] = delta.T @ acts[i]
        if i:
            delta = (delta @ layers[i]) * _relu_grad(pres[i - 1])
    return grads


def grad_params(w: EncoderWeights, x) -> np.ndarray:
    """Jacobian ``d f_j / d w`` as a (d_out, n_params) array for a single input."""
    X, single = _check_input(w, x)
    if not single:
        raise InvalidArgumentError("grad_params takes a single input vector")
    pres, acts = _forward_cache(w.layers, X)
    s = w.config.output_scale
    d_out = w.config.d_out
    gL = _relu_grad(pres[-1])[0]
    jac = np.empty((d_out, w.config.n_params))
    for j in range(d_out):
        up = np.zeros((1, d_out))
        up[0, j] = s * gL[j]
        jac[j] = flatten(_backprop(w.layers, pres, acts, up))
    return jac


def grad_scalar(w: EncoderWeights, v, X) -> np.ndarray:
    """Rows of ``d (v^T f(x_i; w)) / d w`` for a batch, shape (n, n_params)."""
    X, _ = _check_input(w, X)
    v = np.asarray(v, dtype=np.float64)
    s = w.config.output_scale
    out = np.empty((X.shape[0], w.config.n_params))
    for i in range(X.shape[0]):
        pres, acts = _forward_cache(w.layers, X[i:i + 1])
        up = s * v[None, :] * _relu_grad(pres[-1])
        out[i] = flatten(_backprop(w.layers, pres, acts, up))
    return out


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def epoch_loss(w: EncoderWeights, theta, X, r, reg_lambda=0.0, loss="logistic"):
    """Mean per-item loss of the head ``theta`` on encoder features, plus the
    ``(reg_lambda/2)|w - w0|^2`` proximity term; returns ``(value, layer_grads)``."""
    X, _ = _check_input(w, X)
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n = X.shape[0]
    pres, acts = _forward_cache(w.layers, X)
    s = w.config.output_scale
    feats = s * acts[-1]
    logits = feats @ theta
    if loss == "logistic":
        value = float(np.mean(np.logaddexp(0.0, logits) - r * logits))
        resid = _sigmoid(logits) - r
    elif loss == "squared":
        value = float(np.mean(0.5 * (logits - r) ** 2))
        resid = logits - r
    else:
        raise InvalidArgumentError(f"unknown loss {loss!r}")
    up = (resid[:, None] * theta[None, :]) * s * _relu_grad(pres[-1]) / n
    grads = _backprop(w.layers, pres, acts, up)
    if reg_lambda:
        for i, (W, W0) in enumerate(zip(w.layers, w.init_layers)):
            diff = W - W0
            value += 0.5 * reg_lambda * float(np.sum(diff * diff))
            grads[i] = grads[i] + reg_lambda * diff
    return value, grads


def encoder_epoch_update(w: EncoderWeights, theta, batch, eta: float, reg_lambda: float = 0.0,
                         steps: int = 1, loss: str = "logistic") -> EncoderWeights:
    """Plain gradient descent on :func:`epoch_loss` with the head held fixed.

    ``batch`` is a sequence of ``(x, r)`` pairs or an ``(X, r)`` tuple of arrays.
    """
    X, r = _unpack_batch(batch)
    if X.shape[0] == 0:
        raise InvalidArgumentError("encoder update needs a nonempty batch")
    if steps < 1:
        raise InvalidArgumentError("steps must be positive")
    out = w.copy()
    for _ in range(steps):
        _, grads = epoch_loss(out, theta, X, r, reg_lambda, loss)
        out.layers = [W - eta * g for W, g in zip(out.layers, grads)]
    return out


def _unpack_batch(batch):
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray) \
            and batch[0].ndim == 2:
        return batch[0], np.asarray(batch[1], dtype=np.float64)
    batch = list(batch)
    if not batch:
        return np.empty((0, 0)), np.empty(0)
    X = np.vstack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    r = np.array([float(rr) for _, rr in batch])
    return X, r


# --- persistence -----------------------------------------------------------

def write_weights(w: EncoderWeights, fh) -> None:
    header = {"config": w.config.to_dict(), "shapes": w.config.shapes, "dtype": "<f8"}
    fh.write(_MAGIC)
    fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for W in list(w.layers) + list(w.init_layers):
        fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())


def read_weights(fh) -> EncoderWeights:
    if fh.readline() != _MAGIC:
        raise ParseError("not an encoder weight file", 1)
    try:
        header = json.loads(fh.readline())
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad header: {exc}", 2) from exc
    cfg = EncoderConfig(**header["config"])
    mats = []
    for _ in range(2):
        group = []
        for r, c in cfg.shapes:
            raw = fh.read(8 * r * c)
            if len(raw) != 8 * r * c:
                raise ParseError("truncated weight payload", 3)
            group.append(np.frombuffer(raw, dtype="<f8").reshape(r, c).astype(np.float64))
        mats.append(group)
    return EncoderWeights(cfg, mats[0], mats[1])


def save_weights(w: EncoderWeights, path) -> None:
    with open(path, "wb") as fh:
        write_weights(w, fh)


def load_weights(path) -> EncoderWeights:
    with open(path, "rb") as fh:
        return read_weights(fh)


def weights_bytes(w: EncoderWeights) -> bytes:
    buf = io.BytesIO()
    write_weights(w, buf)
    return buf.getvalue()
