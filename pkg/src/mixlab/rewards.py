"""Per-dimension reward oracles, the pairwise Bradley-Terry transform, and
reference-response bookkeeping for the averaged scalar training reward.

Raw rewards from different dimensions need not share a scale; each is
compared against a frozen reference response through a sigmoid, which maps
every dimension into (0, 1) before averaging.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import PreferenceSpec, Vocab
from .errors import MissingReferenceError
from .mixer import DecodeStrategy, MergeSpace, decode, uniform_weight_fn


@dataclass(frozen=True)
class RewardOracle:
    """Deterministic analytic scorer for one preference dimension."""

    dim: int
    name: str
    fn: Callable[[tuple[int, ...], tuple[int, ...]], float]

    def __call__(self, x: tuple[int, ...], y: tuple[int, ...]) -> float:
        r = float(self.fn(x, y))
        assert math.isfinite(r)
        return r


def bt_transform(r_y: float, r_ref: float) -> float:
    """Win probability of y over the reference: sigmoid(r_y - r_ref).

    Algebraically exp(r_y) / (exp(r_y) + exp(r_ref)); evaluated in the
    overflow-free sigmoid form.
    """
    d = r_y - r_ref
    if d >= 0:
        v = 1.0 / (1.0 + math.exp(-d))
    else:
        e = math.exp(d)
        v = e / (1.0 + e)
    # finite rewards give a value in the open interval; keep it open even
    # where the sigmoid rounds to 0.0 or 1.0 in double precision
    return min(max(v, math.ulp(0.0)), 1.0 - math.ulp(1.0) / 2)


@dataclass
class ReferenceStore:
    """Frozen reference responses keyed by (prompt id, preference key).

    Each entry caches the reference tokens and its raw reward on every
    registered dimension, so any dimension subset can be aggregated later.
    Write-once: populated before training, read-only afterwards.
    """

    entries: dict[tuple[int, str], tuple[tuple[int, ...], dict[int, float]]] = field(
        default_factory=dict
    )

    def put(self, prompt_id: int, pref_key: str, y_ref: tuple[int, ...],
            raw_rewards: dict[int, float]) -> None:
        self.entries[(prompt_id, pref_key)] = (y_ref, dict(raw_rewards))

    def get(self, prompt_id: int, pref_key: str) -> tuple[tuple[int, ...], dict[int, float]]:
        try:
            return self.entries[(prompt_id, pref_key)]
        except KeyError:
            raise MissingReferenceError(
                f"no reference for prompt {prompt_id}, preference {pref_key}"
            ) from None

    def to_json(self) -> str:
        doc = {
            f"{pid}|{key}": {
                "y_ref": list(y),
                "raw_rewards": {str(d): r for d, r in raw.items()},
            }
            for (pid, key), (y, raw) in sorted(self.entries.items())
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ReferenceStore":
        doc = json.loads(text)
        store = cls()
        for k, v in doc.items():
            pid_s, key = k.split("|", 1)
            store.put(
                int(pid_s),
                key,
                tuple(v["y_ref"]),
                {int(d): float(r) for d, r in v["raw_rewards"].items()},
            )
        return store


def dim_reward(oracle: RewardOracle, x: tuple[int, ...], y: tuple[int, ...]) -> float:
    if not y:
        raise ValueError("response must be non-empty")
    return oracle(x, y)


def aggregate_reward(
    x: tuple[int, ...],
    y: tuple[int, ...],
    dims: tuple[int, ...],
    oracles: dict[int, RewardOracle],
    refs: ReferenceStore,
    prompt_id: int,
    pref_key: str,
) -> float:
    """Mean Bradley-Terry reward of y against the cached reference, over the
    given dimensions. Always in (0, 1)."""
    _, ref_raw = refs.get(prompt_id, pref_key)
    total = 0.0
    for d in dims:
        total += bt_transform(dim_reward(oracles[d], x, y), ref_raw[d])
    return total / len(dims)


def direct_average_reward(
    x: tuple[int, ...],
    y: tuple[int, ...],
    dims: tuple[int, ...],
    oracles: dict[int, RewardOracle],
) -> float:
    """Ablation reward: mean of raw per-dimension rewards, no reference."""
    return sum(dim_reward(oracles[d], x, y) for d in dims) / len(dims)


def make_references(
    prompts: list[tuple[int, tuple[int, ...]]],
    specs: list[tuple[str, PreferenceSpec]],
    experts_by_dim: dict,
    oracles: dict[int, RewardOracle],
    vocab: Vocab,
    max_len: int = 64,
) -> ReferenceStore:
    """Greedy uniform-merge decode per (prompt, preference), cached with raw
    rewards on every registered dimension."""
    store = ReferenceStore()
    strategy = DecodeStrategy(kind="greedy", max_len=max_len)
    for pid, prompt in prompts:
        for key, spec in specs:
            experts = [experts_by_dim[d] for d in spec.dims]
            traj = decode(
                prompt,
                experts,
                uniform_weight_fn(len(experts)),
                strategy,
                MergeSpace.PROBABILITY,
                vocab,
                pref_dims=spec.dims,
            )
            raw = {d: dim_reward(o, prompt, traj.response) for d, o in oracles.items()}
            store.put(pid, key, traj.response, raw)
    return store
