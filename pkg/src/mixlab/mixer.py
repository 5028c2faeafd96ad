"""Per-token merging of expert distributions, autoregressive decoding, and
exact replay of sequence log-likelihoods.

Mixing happens either in probability space (convex combination) or in
"logit" space (weighted combination of log-probabilities followed by a
softmax); log(0) is clamped to a large negative floor in the latter.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Context, SIMPLEX_ATOL, Vocab
from .errors import EmptyExpertListError, LengthMismatchError

LOGIT_FLOOR = -1e9


class MergeSpace(enum.Enum):
    PROBABILITY = "probability"
    LOGIT = "logit"


@dataclass(frozen=True)
class DecodeStrategy:
    """Greedy argmax (lowest-id tie-break) or temperature sampling."""

    kind: str = "greedy"  # "greedy" | "temperature"
    tau: float = 1.0
    seed: int = 0
    max_len: int = 64

    def __post_init__(self):
        if self.kind not in ("greedy", "temperature"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError("tau must be finite and positive")
        if self.max_len < 1:
            raise ValueError("max_len must be positive")


@dataclass
class StepRecord:
    """Everything recorded at one decode step for exact replay."""

    weights: np.ndarray          # (n,) mixture weights
    expert_token_probs: np.ndarray  # (n,) each expert's prob of the chosen token
    mix_prob: float              # mixture prob of the chosen token
    logp: float                  # log mix_prob


@dataclass
class Trajectory:
    prompt: tuple[int, ...]
    response: tuple[int, ...]
    pref_dims: tuple[int, ...]
    steps: list[StepRecord]
    total_logprob: float
    truncated: bool = False

    def to_jsonl_line(self) -> str:
        doc = {
            "prompt": list(self.prompt),
            "response": list(self.response),
            "pref": list(self.pref_dims),
            "steps": [
                {
                    "w": [float(x) for x in s.weights],
                    "ep": [float(x) for x in s.expert_token_probs],
                    "lp": s.logp,
                }
                for s in self.steps
            ],
            "total_lp": self.total_logprob,
            "truncated": self.truncated,
        }
        return json.dumps(doc)

    @classmethod
    def from_jsonl_line(cls, line: str) -> "Trajectory":
        doc = json.loads(line)
        steps = [
            StepRecord(
                weights=np.asarray(s["w"]),
                expert_token_probs=np.asarray(s["ep"]),
                mix_prob=float(np.exp(s["lp"])),
                logp=s["lp"],
            )
            for s in doc["steps"]
        ]
        return cls(
            prompt=tuple(doc["prompt"]),
            response=tuple(doc["response"]),
            pref_dims=tuple(doc["pref"]),
            steps=steps,
            total_logprob=doc["total_lp"],
            truncated=doc["truncated"],
        )


def clamped_log(p: np.ndarray) -> np.ndarray:
    out = np.full_like(p, LOGIT_FLOOR)
    pos = p > 0.0
    out[pos] = np.log(p[pos])
    return out


def mix_next_token(
    expert_dists: list[np.ndarray] | np.ndarray,
    weights: np.ndarray,
    space: MergeSpace,
) -> np.ndarray:
    """Merge expert next-token distributions under the given weights."""
    dists = np.asarray(expert_dists, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[0] == 0:
        raise EmptyExpertListError("need at least one expert distribution")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (dists.shape[0],):
        raise LengthMismatchError(
            f"{dists.shape[0]} dists but {w.shape} weights"
        )
    if space is MergeSpace.PROBABILITY:
        out = w @ dists
        # convex combination of simplex points; renormalize rounding dust
        out = out / out.sum()
    else:
        mixed = w @ clamped_log(dists)
        z = mixed - mixed.max()
        e = np.exp(z)
        out = e / e.sum()
    assert abs(float(out.sum()) - 1.0) <= SIMPLEX_ATOL
    return out


def select_token(dist: np.ndarray, strategy: DecodeStrategy, rng: np.random.Generator) -> int:
    if strategy.kind == "greedy":
        return int(np.argmax(dist))  # argmax takes the lowest index on ties
    q = dist ** (1.0 / strategy.tau)
    q = q / q.sum()
    return int(rng.choice(len(q), p=q))


def decode(
    prompt: tuple[int, ...],
    experts: list,
    weight_fn,
    strategy: DecodeStrategy,
    space: MergeSpace,
    vocab: Vocab,
    pref_dims: tuple[int, ...] = (),
) -> Trajectory:
    """Autoregressive decode of the mixture policy.

    ``experts`` is a list of ExpertHandle-like objects; ``weight_fn`` maps a
    Context to the (n,) weight vector for this step. Stops at eos or at
    strategy.max_len (flagged truncated).
    """
    if not experts:
        raise EmptyExpertListError("need at least one expert")
    rng = np.random.default_rng(strategy.seed)
    response: list[int] = []
    steps: list[StepRecord] = []
    total = 0.0
    truncated = False
    while True:
        ctx = Context(prompt=prompt, partial=tuple(response))
        dists = np.stack([e.next_dist(ctx) for e in experts])
        w = weight_fn(ctx)
        mixed = mix_next_token(dists, w, space)
        tok = select_token(mixed, strategy, rng)
        mix_prob = float(mixed[tok])
        logp = math.log(mix_prob) if mix_prob > 0.0 else -math.inf
        steps.append(
            StepRecord(
                weights=np.asarray(w, dtype=np.float64).copy(),
                expert_token_probs=dists[:, tok].copy(),
                mix_prob=mix_prob,
                logp=logp,
            )
        )
        total += logp
        response.append(tok)
        if tok == vocab.eos_id:
            break
        if len(response) >= strategy.max_len:
            truncated = True
            break
    return Trajectory(
        prompt=prompt,
        response=tuple(response),
        pref_dims=pref_dims,
        steps=steps,
        total_logprob=total,
        truncated=truncated,
    )


@dataclass
class ReplayStep:
    """One forced-decode step, with the weight-gradient of its logprob."""

    ctx: Context
    weights: np.ndarray
    mix_prob: float
    logp: float
    dlogp_dweights: np.ndarray


def replay_steps(
    prompt: tuple[int, ...],
    y: tuple[int, ...],
    expert_dists_per_step: list[np.ndarray],
    weight_fn,
    space: MergeSpace,
) -> tuple[float, list[ReplayStep], bool]:
    """Replay a forced response against cached per-step expert distributions.

    Returns (total_logprob, steps, hit_zero). ``hit_zero`` flags a token the
    mixture assigns exactly zero probability; total is then -inf.
    """
    total = 0.0
    hit_zero = False
    out: list[ReplayStep] = []
    for t, tok in enumerate(y):
        ctx = Context(prompt=prompt, partial=tuple(y[:t]))
        dists = expert_dists_per_step[t]
        w = np.asarray(weight_fn(ctx), dtype=np.float64)
        if space is MergeSpace.PROBABILITY:
            token_probs = dists[:, tok]
            mix_prob = float(w @ token_probs)
            if mix_prob > 0.0:
                logp = math.log(mix_prob)
                dldw = token_probs / mix_prob
            else:
                logp = -math.inf
                hit_zero = True
                dldw = np.zeros_like(w)
        else:
            ell = clamped_log(dists)  # (n, V)
            mixed = w @ ell
            z = mixed - mixed.max()
            e = np.exp(z)
            q = e / e.sum()
            mix_prob = float(q[tok])
            logp = float(mixed[tok] - (mixed.max() + math.log(e.sum())))
            # d logp / dw_i = ell_i[tok] - sum_v q_v ell_i[v]
            dldw = ell[:, tok] - ell @ q
        total += logp
        out.append(ReplayStep(ctx=ctx, weights=w, mix_prob=mix_prob,
                              logp=logp, dlogp_dweights=dldw))
    return total, out, hit_zero


def sequence_logprob(
    prompt: tuple[int, ...],
    y: tuple[int, ...],
    experts: list,
    weight_fn,
    space: MergeSpace,
) -> tuple[float, list[ReplayStep]]:
    """Log-likelihood of a forced response under the mixture policy.

    The per-step records carry weights and weight-gradients for training.
    """
    dists = []
    for t in range(len(y)):
        ctx = Context(prompt=prompt, partial=tuple(y[:t]))
        dists.append(np.stack([e.next_dist(ctx) for e in experts]))
    total, steps, _ = replay_steps(prompt, y, dists, weight_fn, space)
    return total, steps


def uniform_weight_fn(n: int):
    w = np.full(n, 1.0 / n)
    return lambda ctx: w
