"""The preference control network: maps (context, preference) to simplex
weights over the active experts, with hand-derived exact gradients.

Architecture: mean-pooled embeddings of the last K context tokens,
concatenated with the preference multi-hot, through one tanh hidden layer
to D logits; logits are masked to the active dimensions and softmaxed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .core import Context
from .errors import (
    CorruptCheckpointError,
    EmptyContextError,
    NonFiniteGradientError,
    ShapeMismatchError,
    VersionMismatchError,
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PcmConfig:
    vocab_size: int
    n_dims: int
    embed_dim: int = 16
    window: int = 16
    hidden_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "n_dims", "embed_dim", "window", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class PcmParams:
    """All trainable parameters. Serialization order is fixed: embeddings
    row-major, then hidden W, hidden b, output W, output b."""

    emb: np.ndarray  # (V, E)
    w1: np.ndarray   # (H, E + D)
    b1: np.ndarray   # (H,)
    w2: np.ndarray   # (D, H)
    b2: np.ndarray   # (D,)

    def flatten(self) -> np.ndarray:
        return np.concatenate(
            [self.emb.ravel(), self.w1.ravel(), self.b1, self.w2.ravel(), self.b2]
        )

    def copy(self) -> "PcmParams":
        return PcmParams(*(a.copy() for a in (self.emb, self.w1, self.b1, self.w2, self.b2)))

    def shapes_match(self, other: "PcmParams") -> bool:
        return all(
            a.shape == b.shape
            for a, b in zip(
                (self.emb, self.w1, self.b1, self.w2, self.b2),
                (other.emb, other.w1, other.b1, other.w2, other.b2),
            )
        )


# Gradients share the container: same fields, same serialization order.
PcmGrad = PcmParams


def param_shapes(cfg: PcmConfig) -> list[tuple[int, ...]]:
    v, e, h, d = cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.n_dims
    return [(v, e), (h, e + d), (h,), (d, h), (d,)]


def unflatten(cfg: PcmConfig, flat: np.ndarray) -> PcmParams:
    shapes = param_shapes(cfg)
    total = sum(int(np.prod(s)) for s in shapes)
    if flat.shape != (total,):
        raise ShapeMismatchError(f"expected {total} values, got {flat.shape}")
    arrays = []
    i = 0
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(flat[i : i + n].reshape(s).copy())
        i += n
    return PcmParams(*arrays)


def zeros_like_params(cfg: PcmConfig) -> PcmParams:
    return PcmParams(*(np.zeros(s) for s in param_shapes(cfg)))


def init_params(cfg: PcmConfig) -> PcmParams:
    """Deterministic init: Glorot-uniform weights, zero biases, small
    uniform embeddings."""
    rng = np.random.default_rng(cfg.seed)
    emb = rng.uniform(-0.1, 0.1, size=(cfg.vocab_size, cfg.embed_dim))

    def glorot(fan_out, fan_in):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-s, s, size=(fan_out, fan_in))

    w1 = glorot(cfg.hidden_dim, cfg.embed_dim + cfg.n_dims)
    w2 = glorot(cfg.n_dims, cfg.hidden_dim)
    return PcmParams(emb, w1, np.zeros(cfg.hidden_dim), w2, np.zeros(cfg.n_dims))


@dataclass(frozen=True)
class MixtureWeights:
    """Simplex weights over the active dimensions, in active_dims order."""

    weights: np.ndarray
    active_dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.active_dims):
            raise ShapeMismatchError("weights/active_dims length mismatch")
        assert abs(float(self.weights.sum()) - 1.0) <= 1e-9
        assert np.all(self.weights >= 0.0)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def _features(params: PcmParams, cfg_window: int, ctx: Context, pref: np.ndarray):
    tokens = ctx.tokens
    if not tokens:
        raise EmptyContextError("context must contain at least bos")
    window = tokens[-cfg_window:]
    idx = np.asarray(window, dtype=np.intp)
    mean_emb = params.emb[idx].mean(axis=0)
    return np.concatenate([mean_emb, pref]), idx


def pcm_forward(
    params: PcmParams,
    ctx: Context,
    pref: np.ndarray,
    active_dims: tuple[int, ...],
    window: int = 16,
) -> MixtureWeights:
    """Weights over the active dimensions for this context and preference."""
    f, _ = _features(params, window, ctx, pref)
    h = np.tanh(params.w1 @ f + params.b1)
    logits = params.w2 @ h + params.b2
    active = np.asarray(active_dims, dtype=np.intp)
    w = _softmax(logits[active])
    return MixtureWeights(weights=w, active_dims=tuple(active_dims))


def pcm_backward(
    params: PcmParams,
    ctx: Context,
    pref: np.ndarray,
    active_dims: tuple[int, ...],
    dL_dweights: np.ndarray,
    window: int = 16,
) -> PcmGrad:
    """Exact gradient of a scalar loss w.r.t. every parameter, given the
    loss gradient w.r.t. the output weights."""
    g = np.asarray(dL_dweights, dtype=np.float64)
    if g.shape != (len(active_dims),):
        raise ShapeMismatchError(f"dL_dweights shape {g.shape} != ({len(active_dims)},)")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradientError("non-finite dL_dweights")

    f, idx = _features(params, window, ctx, pref)
    z = params.w1 @ f + params.b1
    h = np.tanh(z)
    logits = params.w2 @ h + params.b2
    active = np.asarray(active_dims, dtype=np.intp)
    w = _softmax(logits[active])

    # masked-softmax jacobian: dlogit_a = w_a * (g_a - g.w)
    dla = w * (g - float(g @ w))
    dlogits = np.zeros_like(logits)
    dlogits[active] = dla

    dw2 = np.outer(dlogits, h)
    db2 = dlogits
    dh = params.w2.T @ dlogits
    dz = dh * (1.0 - h * h)
    dw1 = np.outer(dz, f)
    db1 = dz
    df = params.w1.T @ dz
    dmean = df[: params.emb.shape[1]]

    demb = np.zeros_like(params.emb)
    np.add.at(demb, idx, dmean / len(idx))
    return PcmGrad(demb, dw1, db1, dw2, db2)


@dataclass
class OptimizerState:
    """Momentum buffers, one per parameter tensor."""

    velocity: PcmParams
    momentum: float = 0.9

    @classmethod
    def fresh(cls, cfg: PcmConfig, momentum: float = 0.9) -> "OptimizerState":
        return cls(velocity=zeros_like_params(cfg), momentum=momentum)


def apply_update(
    params: PcmParams,
    grad: PcmGrad,
    state: OptimizerState,
    step_size: float,
) -> tuple[PcmParams, OptimizerState]:
    """One momentum-SGD descent step. Returns new params and state; the
    inputs are never mutated."""
    gflat = grad.flatten()
    if not np.all(np.isfinite(gflat)):
        raise NonFiniteGradientError("gradient contains non-finite values")
    new_v = []
    new_p = []
    for p, g, v in zip(
        (params.emb, params.w1, params.b1, params.w2, params.b2),
        (grad.emb, grad.w1, grad.b1, grad.w2, grad.b2),
        (state.velocity.emb, state.velocity.w1, state.velocity.b1,
         state.velocity.w2, state.velocity.b2),
    ):
        v2 = state.momentum * v + g
        new_v.append(v2)
        new_p.append(p - step_size * v2)
    return PcmParams(*new_p), OptimizerState(PcmParams(*new_v), state.momentum)


def clip_grad_norm(grad: PcmGrad, max_norm: float = 10.0) -> PcmGrad:
    flat = grad.flatten()
    norm = float(np.linalg.norm(flat))
    if norm <= max_norm or norm == 0.0:
        return grad
    scale = max_norm / norm
    return PcmGrad(grad.emb * scale, grad.w1 * scale, grad.b1 * scale,
                   grad.w2 * scale, grad.b2 * scale)


def checkpoint_to_json(params: PcmParams, cfg: PcmConfig) -> str:
    doc = {
        "config": asdict(cfg),
        "flat_params": [float(x) for x in params.flatten()],
        "format_version": CHECKPOINT_VERSION,
    }
    return json.dumps(doc)


def checkpoint_from_json(text: str) -> tuple[PcmParams, PcmConfig]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorruptCheckpointError(f"invalid JSON: {e}") from None
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"format_version {version} != {CHECKPOINT_VERSION}")
    try:
        cfg = PcmConfig(**doc["config"])
        flat = np.asarray(doc["flat_params"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpointError(str(e)) from None
    try:
        params = unflatten(cfg, flat)
    except ShapeMismatchError as e:
        raise CorruptCheckpointError(f"param count mismatch for config: {e}") from None
    return params, cfg
