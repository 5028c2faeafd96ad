"""Analytic synthetic environment: a 32-token vocabulary, six preference
dimensions in three opposing pairs, their reward oracles, tilted bigram
experts, prompt sets, and the eight composite preferences.

Every opposing pair is an exact negation or complement, so conflict between
dimensions is structural. No other module knows these formulas.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .core import Dimension, DimensionRegistry, PreferenceSpec, Vocab
from .errors import DiagnosticFailureError
from .experts import InProcessExpert, TiltedExpertConfig, synthetic_expert_next
from .mixer import DecodeStrategy, MergeSpace, decode
from .rewards import RewardOracle

VOCAB_SIZE = 32
BOS, EOS = 0, 1
VOWEL_IDS = tuple(range(2, 12))
CONSONANT_IDS = tuple(range(12, 22))
NEUTRAL_IDS = tuple(range(22, 32))

_LABELS = ("^", "$") + tuple("aeiouAEIOU") + tuple("bcdfghjklm") + tuple("0123456789")


def _content(y: tuple[int, ...]) -> tuple[int, ...]:
    """Response tokens minus a trailing eos."""
    return y[:-1] if y and y[-1] == EOS else y


def _distinct_adjacent_fraction(y: tuple[int, ...]) -> float:
    c = _content(y)
    if len(c) < 2:
        return 0.0
    pairs = {(c[i], c[i + 1]) for i in range(len(c) - 1)}
    return len(pairs) / (len(c) - 1)


def make_vocab() -> Vocab:
    return Vocab(size=VOCAB_SIZE, bos_id=BOS, eos_id=EOS, labels=_LABELS)


def make_registry() -> DimensionRegistry:
    return DimensionRegistry([
        Dimension(0, "short", 1, "A", "End the response as early as possible."),
        Dimension(1, "long", 1, "B", "Keep the response going as long as possible."),
        Dimension(2, "vowel-rich", 2, "A", "Prefer vowel-class tokens."),
        Dimension(3, "consonant-rich", 2, "B", "Prefer consonant-class tokens."),
        Dimension(4, "repeat-avoiding", 3, "A", "Avoid repeating the previous token."),
        Dimension(5, "repeat-seeking", 3, "B", "Repeat the previous token."),
    ])


def make_oracles(max_len: int) -> dict[int, RewardOracle]:
    def short(x, y):
        return -len(_content(y)) / max_len

    def long(x, y):
        return len(_content(y)) / max_len

    def frac_of(ids):
        # fraction among classed (vowel or consonant) tokens, so the two
        # oracles are exact complements; neutral-only responses score 0
        idset = set(ids)
        classed = set(VOWEL_IDS) | set(CONSONANT_IDS)

        def fn(x, y):
            c = [t for t in _content(y) if t in classed]
            if not c:
                return 0.0
            return sum(1 for t in c if t in idset) / len(c)
        return fn

    def repeat_avoiding(x, y):
        return _distinct_adjacent_fraction(y)

    def repeat_seeking(x, y):
        return 1.0 - _distinct_adjacent_fraction(y)

    return {
        0: RewardOracle(0, "short", short),
        1: RewardOracle(1, "long", long),
        2: RewardOracle(2, "vowel-rich", frac_of(VOWEL_IDS)),
        3: RewardOracle(3, "consonant-rich", frac_of(CONSONANT_IDS)),
        4: RewardOracle(4, "repeat-avoiding", repeat_avoiding),
        5: RewardOracle(5, "repeat-seeking", repeat_seeking),
    }


def make_base_bigram(rng: np.random.Generator) -> np.ndarray:
    """Random row-stochastic table; bos is never generated."""
    base = rng.random((VOCAB_SIZE, VOCAB_SIZE)) + 0.05
    base[:, BOS] = 0.0
    base /= base.sum(axis=1, keepdims=True)
    return base


def make_expert_configs(base: np.ndarray, beta: float) -> dict[int, TiltedExpertConfig]:
    def static(favored_ids):
        phi = np.zeros(VOCAB_SIZE)
        phi[list(favored_ids)] = 1.0
        return phi

    zeros = np.zeros(VOCAB_SIZE)
    non_eos = [t for t in range(VOCAB_SIZE) if t != EOS]
    return {
        0: TiltedExpertConfig(base, static([EOS]), beta),
        1: TiltedExpertConfig(base, static(non_eos), beta),
        2: TiltedExpertConfig(base, static(VOWEL_IDS), beta),
        3: TiltedExpertConfig(base, static(CONSONANT_IDS), beta),
        4: TiltedExpertConfig(base, zeros, beta, repeat_rule="avoid"),
        5: TiltedExpertConfig(base, zeros, beta, repeat_rule="seek"),
    }


def enumerate_preferences(registry: DimensionRegistry) -> list[tuple[str, PreferenceSpec]]:
    """All 2^G composite preferences: one dimension per group."""
    groups = [registry.groups[g] for g in sorted(registry.groups)]
    out = []
    for combo in itertools.product(*groups):
        spec = PreferenceSpec(dims=tuple(d.id for d in combo))
        key = "".join(d.polarity for d in combo)
        out.append((key, spec))
    return out


@dataclass
class Testbed:
    vocab: Vocab
    registry: DimensionRegistry
    base: np.ndarray
    expert_configs: dict[int, TiltedExpertConfig]
    experts: dict[int, InProcessExpert]
    oracles: dict[int, RewardOracle]
    specs: list[tuple[str, PreferenceSpec]]
    train_prompts: list[tuple[int, tuple[int, ...]]]
    heldout_prompts: list[tuple[int, tuple[int, ...]]]
    seed: int
    max_len: int
    beta: float

    def spec_by_key(self, key: str) -> PreferenceSpec:
        for k, s in self.specs:
            if k == key:
                return s
        raise KeyError(f"no preference {key!r}")

    def descriptor(self) -> dict:
        return {
            "seed": self.seed,
            "vocab_size": self.vocab.size,
            "max_len": self.max_len,
            "beta": self.beta,
            "n_train_prompts": len(self.train_prompts),
            "n_heldout_prompts": len(self.heldout_prompts),
            "preferences": [k for k, _ in self.specs],
        }

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), indent=2)


def build_testbed(
    seed: int = 0,
    max_len: int = 64,
    beta: float = 4.0,
    n_train_prompts: int = 8,
    n_heldout_prompts: int = 4,
) -> Testbed:
    """Deterministic construction of the whole environment from one seed."""
    rng = np.random.default_rng(seed)
    vocab = make_vocab()
    registry = make_registry()
    base = make_base_bigram(rng)
    configs = make_expert_configs(base, beta)
    experts = {d: InProcessExpert(registry[d].name, cfg, vocab)
               for d, cfg in configs.items()}
    oracles = make_oracles(max_len)
    specs = enumerate_preferences(registry)

    content_ids = [t for t in range(VOCAB_SIZE) if t not in (BOS, EOS)]
    seen: set[tuple[int, ...]] = set()
    prompts: list[tuple[int, ...]] = []
    while len(prompts) < n_train_prompts + n_heldout_prompts:
        body = tuple(rng.choice(content_ids, size=2))
        p = (BOS,) + tuple(int(t) for t in body)
        if p not in seen:
            seen.add(p)
            prompts.append(p)
    train = [(i, p) for i, p in enumerate(prompts[:n_train_prompts])]
    heldout = [(100 + i, p) for i, p in enumerate(prompts[n_train_prompts:])]

    return Testbed(
        vocab=vocab,
        registry=registry,
        base=base,
        expert_configs=configs,
        experts=experts,
        oracles=oracles,
        specs=specs,
        train_prompts=train,
        heldout_prompts=heldout,
        seed=seed,
        max_len=max_len,
        beta=beta,
    )


def oracle_pair_check(tb: Testbed, n_samples: int = 200, seed: int = 123) -> dict:
    """Sanity diagnostics: opposing rewards anti-correlate and every expert
    beats the untilted base on its own dimension under greedy self-decode."""
    rng = np.random.default_rng(seed)
    content_ids = [t for t in range(VOCAB_SIZE) if t not in (BOS, EOS)]
    x = tb.train_prompts[0][1]
    responses = []
    for _ in range(n_samples):
        length = int(rng.integers(2, tb.max_len + 1))
        # bias toward some repetition so group-3 rewards vary
        toks = [int(rng.choice(content_ids))]
        while len(toks) < length:
            if rng.random() < 0.3:
                toks.append(toks[-1])
            else:
                toks.append(int(rng.choice(content_ids)))
        responses.append(tuple(toks) + (EOS,))

    correlations = {}
    for g, (dim_a, dim_b) in sorted(tb.registry.groups.items()):
        ra, rb = [], []
        for y in responses:
            a = tb.oracles[dim_a.id](x, y)
            b = tb.oracles[dim_b.id](x, y)
            if a == 0.0 and b == 0.0:
                continue  # degenerate point carries no signal
            ra.append(a)
            rb.append(b)
        corr = float(np.corrcoef(ra, rb)[0, 1])
        correlations[g] = corr
        if not corr <= -0.9:
            raise DiagnosticFailureError(
                f"group {g} ({dim_a.name}/{dim_b.name}) correlation {corr} > -0.9"
            )

    strategy = DecodeStrategy(kind="greedy", max_len=tb.max_len)
    base_cfg = TiltedExpertConfig(tb.base, np.zeros(VOCAB_SIZE), 0.0)
    base_expert = InProcessExpert("base", base_cfg, tb.vocab)
    base_traj = decode(x, [base_expert], lambda ctx: np.array([1.0]),
                       strategy, MergeSpace.PROBABILITY, tb.vocab)
    margins = {}
    for d, expert in tb.experts.items():
        traj = decode(x, [expert], lambda ctx: np.array([1.0]),
                      strategy, MergeSpace.PROBABILITY, tb.vocab)
        own = tb.oracles[d](x, traj.response)
        base_score = tb.oracles[d](x, base_traj.response)
        margins[tb.registry[d].name] = (own, base_score)
        if not own >= base_score:
            raise DiagnosticFailureError(
                f"expert {tb.registry[d].name}: self-decode score {own} "
                f"< base score {base_score}"
            )
    return {"correlations": correlations, "self_decode_margins": margins}
