"""Pairwise win-rate evaluation with programmatic per-dimension judges.

Each dimension is judged separately from the analytic reward oracles with a
tie band; per-dimension verdicts are summed and the sign of the sum decides
the pair. Win rate counts only non-tie comparisons.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Callable

from .core import PreferenceSpec
from .errors import AllTiesError
from .rewards import RewardOracle

DEFAULT_TIE_DELTA = 1e-6


class Verdict(enum.IntEnum):
    WIN = 1
    TIE = 0
    LOSE = -1


@dataclass(frozen=True)
class Method:
    """A named deterministic generation procedure under evaluation."""

    name: str
    generate: Callable[[tuple[int, ...], str, PreferenceSpec], tuple[int, ...]]


def judge_dimension(oracle: RewardOracle, x: tuple[int, ...],
                    y_a: tuple[int, ...], y_b: tuple[int, ...],
                    delta: float = DEFAULT_TIE_DELTA) -> Verdict:
    if delta < 0:
        raise ValueError("delta must be non-negative")
    ra, rb = oracle(x, y_a), oracle(x, y_b)
    if ra > rb + delta:
        return Verdict.WIN
    if ra < rb - delta:
        return Verdict.LOSE
    return Verdict.TIE


def judge_pair(x: tuple[int, ...], y_a: tuple[int, ...], y_b: tuple[int, ...],
               spec: PreferenceSpec, oracles: dict[int, RewardOracle],
               delta: float = DEFAULT_TIE_DELTA) -> Verdict:
    total = sum(int(judge_dimension(oracles[d], x, y_a, y_b, delta)) for d in spec.dims)
    if total > 0:
        return Verdict.WIN
    if total < 0:
        return Verdict.LOSE
    return Verdict.TIE


def win_rate(verdicts: list[Verdict]) -> float:
    wins = sum(1 for v in verdicts if v is Verdict.WIN)
    losses = sum(1 for v in verdicts if v is Verdict.LOSE)
    if wins + losses == 0:
        raise AllTiesError("every comparison tied; win rate undefined")
    return 100.0 * wins / (wins + losses)


@dataclass
class EvalReport:
    methods: list[str]
    matrix: list[list[float | None]]  # matrix[i][j]: win rate of i over j; None on diagonal/all-ties
    averages: list[float | None]
    verdicts: list[dict]  # raw audit records

    def to_json(self) -> str:
        return json.dumps({
            "methods": self.methods,
            "matrix": self.matrix,
            "averages": self.averages,
        }, indent=2)

    def verdicts_jsonl(self) -> str:
        return "\n".join(json.dumps(v) for v in self.verdicts)

    def to_text(self) -> str:
        width = max(len(m) for m in self.methods) + 2
        cell = 10

        def fmt(v):
            return "—".center(cell) if v is None else f"{v:.2f}".center(cell)

        lines = ["".ljust(width) + "".join(m[:cell].center(cell) for m in self.methods)
                 + "Average".center(cell)]
        for i, m in enumerate(self.methods):
            row = m.ljust(width)
            row += "".join(fmt(v) for v in self.matrix[i])
            row += fmt(self.averages[i])
            lines.append(row)
        return "\n".join(lines)


def run_eval(methods: list[Method],
             prompts: list[tuple[int, tuple[int, ...]]],
             specs: list[tuple[str, PreferenceSpec]],
             oracles: dict[int, RewardOracle],
             delta: float = DEFAULT_TIE_DELTA) -> EvalReport:
    """Greedy generations per (method, prompt, preference); every ordered
    method pair judged; pairwise win-rate matrix plus per-method averages."""
    if len(methods) < 2:
        raise ValueError("need at least two methods")
    gens: dict[tuple[str, int, str], tuple[int, ...]] = {}
    for m in methods:
        for pid, prompt in prompts:
            for key, spec in specs:
                gens[(m.name, pid, key)] = m.generate(prompt, key, spec)

    n = len(methods)
    matrix: list[list[float | None]] = [[None] * n for _ in range(n)]
    audit: list[dict] = []
    for i, ma in enumerate(methods):
        for j, mb in enumerate(methods):
            if i == j:
                continue
            verdicts = []
            for pid, prompt in prompts:
                for key, spec in specs:
                    ya = gens[(ma.name, pid, key)]
                    yb = gens[(mb.name, pid, key)]
                    v = judge_pair(prompt, ya, yb, spec, oracles, delta)
                    verdicts.append(v)
                    audit.append({
                        "a": ma.name, "b": mb.name, "prompt_id": pid,
                        "pref": key, "verdict": int(v),
                    })
            try:
                matrix[i][j] = win_rate(verdicts)
            except AllTiesError:
                matrix[i][j] = None

    averages: list[float | None] = []
    for i in range(n):
        cells = [c for c in matrix[i] if c is not None]
        averages.append(sum(cells) / len(cells) if cells else None)
    return EvalReport(
        methods=[m.name for m in methods],
        matrix=matrix,
        averages=averages,
        verdicts=audit,
    )
