"""Fast self-checks exposed through ``casebandit validate``.

Each suite returns ``(passed, detail)``; none depends on wall-clock time, so
the report is identical across invocations.
"""
from __future__ import annotations

import numpy as np

from . import bandit as bd
from . import engine as en
from .encoder import EncoderConfig, forward, grad_params, init_gaussian, init_symmetric
from .env import CoverageEnv
from .linalg import dense_design_inverse, design_init, rank_one_update


def central_difference_jacobian(w, x, h=1e-5):
    """Finite-difference Jacobian of the encoder output w.r.t. the flat parameters."""
    from .encoder import unflatten

    base = w.flat()
    jac = np.empty((w.config.d_out, base.size))
    probe = w.copy()
    for i in range(base.size):
        up = base.copy()
        up[i] += h
        probe.layers = unflatten(w.config, up)
        fp = forward(probe, x)
        up[i] -= 2 * h
        probe.layers = unflatten(w.config, up)
        fm = forward(probe, x)
        jac[:, i] = (fp - fm) / (2 * h)
    return jac


def max_relative_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def suite_gradient(probes=20, m=16, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in range(probes):
        cfg = EncoderConfig(d_in=6, m=m, depth=2 + p % 2, d_out=3, seed=seed + p)
        w = init_gaussian(cfg, rng)
        x = rng.normal(size=cfg.d_in)
        worst = max(worst, max_relative_error(grad_params(w, x), central_difference_jacobian(w, x)))
    return worst < 1e-4, f"max relative error {worst:.2e} over {probes} probes"


def suite_inverse_drift(updates=1000, d=16, seed=0, inject_fault=False):
    rng = np.random.default_rng(seed)
    state = design_init(d, 0.1)
    Z = rng.normal(size=(updates, d)) / np.sqrt(d)
    for z in Z:
        state = rank_one_update(state, z)
    inv = state.inv.copy()
    if inject_fault:
        inv[0, 0] += 1e-3
    err = float(np.max(np.abs(inv - dense_design_inverse(0.1, Z))))
    return err <= 1e-6, f"max elementwise error {err:.2e} after {updates} updates"


def suite_symmetric_zero(n=100, seed=0):
    rng = np.random.default_rng(seed)
    w = init_symmetric(EncoderConfig(d_in=8, m=64, depth=3, d_out=16, seed=seed))
    a = rng.normal(size=(n, 4))
    X = np.hstack([a, a])
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    worst = float(np.max(np.abs(forward(w, X))))
    return worst <= 1e-8, f"max |f(x; w0)| = {worst:.2e} over {n} inputs"


def suite_decomposition(T=300, seed=0):
    env = CoverageEnv(d_q=2, L_Q=2.0, p_min=0.1, rng_seed=seed)
    pol = bd.make_policy("NeuralLinLogUCB", env.context_dim, seed=seed)
    trace = en.run(env, pol, T=T, seed=seed)
    delta, rho = en.decompose(trace)
    resid = float(np.max(np.abs(delta + rho - (1.0 - trace.column("chosen_utility")))))
    total = abs(float(np.sum(delta + rho)) - float(en.pseudo_regret(trace)[-1]))
    return resid <= 1e-9 and total <= 1e-6, f"max per-step residual {resid:.1e} over {T} steps"


SUITES = {
    "gradient-check": suite_gradient,
    "sherman-morrison-drift": suite_inverse_drift,
    "symmetric-init-zero": suite_symmetric_zero,
    "decomposition-identity": suite_decomposition,
}


def run_all(inject_inverse_fault=False):
    results = []
    for name, fn in SUITES.items():
        kwargs = {"inject_fault": True} if inject_inverse_fault and name == "sherman-morrison-drift" else {}
        try:
            ok, detail = fn(**kwargs)
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results
