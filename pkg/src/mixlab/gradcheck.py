"""Central-finite-difference verification of the control network's
hand-derived gradients."""

from __future__ import annotations

import numpy as np

from .core import Context
from .pcm import PcmConfig, init_params, pcm_backward, pcm_forward, unflatten


def _loss(flat: np.ndarray, cfg: PcmConfig, ctx: Context, pref: np.ndarray,
          active: tuple[int, ...], g: np.ndarray) -> float:
    params = unflatten(cfg, flat)
    w = pcm_forward(params, ctx, pref, active, cfg.window).weights
    return float(g @ w)


def check_case(cfg: PcmConfig, ctx: Context, pref: np.ndarray,
               active: tuple[int, ...], g: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of the analytic gradient of g.weights against
    central differences over every parameter."""
    params = init_params(cfg)
    analytic = pcm_backward(params, ctx, pref, active, g, cfg.window).flatten()
    flat = params.flatten()
    fd = np.empty_like(flat)
    for i in range(len(flat)):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        fd[i] = (_loss(up, cfg, ctx, pref, active, g)
                 - _loss(down, cfg, ctx, pref, active, g)) / (2 * h)
    denom = np.maximum(1e-8, np.maximum(np.abs(analytic), np.abs(fd)))
    return float(np.max(np.abs(analytic - fd) / denom))


def run_gradcheck(n_cases: int = 20, seed: int = 0, h: float = 1e-5) -> float:
    """Max relative gradient error over random small configurations."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(n_cases):
        cfg = PcmConfig(vocab_size=8, n_dims=4, embed_dim=5, window=4,
                        hidden_dim=7, seed=int(rng.integers(0, 2**31)))
        n_active = int(rng.integers(1, 4))
        active = tuple(int(d) for d in rng.choice(4, size=n_active, replace=False))
        pref = np.zeros(4)
        pref[list(active)] = 1.0
        ctx_len = int(rng.integers(1, 7))
        tokens = [0] + [int(t) for t in rng.integers(2, 8, size=ctx_len)]
        ctx = Context(prompt=tuple(tokens))
        g = rng.normal(size=n_active)
        worst = max(worst, check_case(cfg, ctx, pref, active, g, h))
    return worst
