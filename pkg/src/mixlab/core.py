"""Shared vocabulary, probability-vector checks, and the preference registry.

Probability distributions are plain float64 numpy arrays; :func:`validate_dist`
is the only sanctioned constructor and enforces the simplex invariant.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadSumError,
    DuplicateGroupError,
    EmptyContextError,
    LengthMismatchError,
    NegativeMassError,
    UnknownDimensionError,
)

#: tolerance on |sum - 1| for an already-valid distribution
SIMPLEX_ATOL = 1e-9
#: looser acceptance band before renormalization kicks in
RENORM_ATOL = 1e-6


@dataclass(frozen=True)
class Vocab:
    """A shared token vocabulary with distinguished BOS/EOS ids."""

    size: int
    bos_id: int
    eos_id: int
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocab size must be >= 2, got {self.size}")
        if self.bos_id == self.eos_id:
            raise ValueError("bos_id and eos_id must differ")
        for tid in (self.bos_id, self.eos_id):
            if not (0 <= tid < self.size):
                raise ValueError(f"token id {tid} outside vocab of size {self.size}")
        if self.labels is not None and len(self.labels) != self.size:
            raise ValueError("labels length must equal vocab size")

    def hash(self) -> str:
        """Hex digest identifying this vocabulary for the wire handshake."""
        doc = {
            "size": self.size,
            "bos_id": self.bos_id,
            "eos_id": self.eos_id,
            "labels": list(self.labels) if self.labels else None,
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def validate_dist(raw, size: int) -> np.ndarray:
    """Validate (and if needed renormalize) a raw vector into a distribution.

    Accepts vectors whose sum deviates from 1 by at most ``RENORM_ATOL``;
    those are renormalized by dividing by their sum. Tiny negative entries
    above -1e-12 are clipped to zero.
    """
    p = np.asarray(raw, dtype=np.float64)
    if p.shape != (size,):
        raise LengthMismatchError(f"expected length {size}, got shape {p.shape}")
    if np.any(p < -1e-12):
        raise NegativeMassError(f"negative probability mass: min={p.min()}")
    p = np.clip(p, 0.0, None)
    s = float(p.sum())
    if abs(s - 1.0) > RENORM_ATOL:
        raise BadSumError(f"probabilities sum to {s}, not 1")
    if abs(s - 1.0) > SIMPLEX_ATOL:
        p = p / s
    assert abs(float(p.sum()) - 1.0) <= SIMPLEX_ATOL
    return p


@dataclass(frozen=True)
class Dimension:
    """One preference dimension: an axis of desired response style."""

    id: int
    name: str
    group: int
    polarity: str  # "A" or "B"
    instruction: str = ""


class DimensionRegistry:
    """Ordered set of dimensions, structured as opposing pairs per group.

    Each group holds exactly two dimensions with opposite polarity; ids are
    dense 0..D-1.
    """

    def __init__(self, dimensions: list[Dimension]):
        if sorted(d.id for d in dimensions) != list(range(len(dimensions))):
            raise ValueError("dimension ids must be dense 0..D-1")
        groups: dict[int, list[Dimension]] = {}
        for d in dimensions:
            if d.polarity not in ("A", "B"):
                raise ValueError(f"bad polarity {d.polarity!r}")
            groups.setdefault(d.group, []).append(d)
        for g, members in groups.items():
            if len(members) != 2 or {m.polarity for m in members} != {"A", "B"}:
                raise ValueError(f"group {g} must hold exactly one A and one B dimension")
        self.dimensions = tuple(sorted(dimensions, key=lambda d: d.id))
        self.groups = {g: tuple(sorted(ms, key=lambda d: d.polarity)) for g, ms in groups.items()}

    @property
    def n_dims(self) -> int:
        return len(self.dimensions)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def __getitem__(self, dim_id: int) -> Dimension:
        try:
            return self.dimensions[dim_id]
        except IndexError:
            raise UnknownDimensionError(f"no dimension with id {dim_id}") from None

    def by_name(self, name: str) -> Dimension:
        for d in self.dimensions:
            if d.name == name:
                return d
        raise UnknownDimensionError(f"no dimension named {name!r}")

    def to_json(self) -> str:
        doc = {
            "dimensions": [
                {
                    "id": d.id,
                    "name": d.name,
                    "group": d.group,
                    "polarity": d.polarity,
                    "instruction": d.instruction,
                }
                for d in self.dimensions
            ]
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DimensionRegistry":
        doc = json.loads(text)
        dims = [
            Dimension(
                id=e["id"],
                name=e["name"],
                group=e["group"],
                polarity=e["polarity"],
                instruction=e.get("instruction", ""),
            )
            for e in doc["dimensions"]
        ]
        return cls(dims)


@dataclass(frozen=True)
class PreferenceSpec:
    """A composite user preference: one dimension per group, up to all groups."""

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) < 1:
            raise ValueError("preference needs at least one dimension")
        if len(set(self.dims)) != len(self.dims):
            raise DuplicateGroupError("duplicate dimension in preference")

    def validate(self, registry: DimensionRegistry) -> None:
        groups = []
        for did in self.dims:
            groups.append(registry[did].group)
        if len(set(groups)) != len(groups):
            raise DuplicateGroupError(f"preference {self.dims} uses a group twice")

    def key(self, registry: DimensionRegistry) -> str:
        """Compact polarity string (e.g. 'AAB'), ordered by group index."""
        dims = sorted((registry[d] for d in self.dims), key=lambda d: d.group)
        return "".join(d.polarity for d in dims)


def encode_preference(spec: PreferenceSpec, registry: DimensionRegistry) -> np.ndarray:
    """Multi-hot encoding of a preference over the D registered dimensions."""
    spec.validate(registry)
    bits = np.zeros(registry.n_dims, dtype=np.float64)
    for did in spec.dims:
        registry[did]  # raises UnknownDimension for bad ids
        bits[did] = 1.0
    return bits


@dataclass(frozen=True)
class Context:
    """A decoding context: the prompt plus the partial response so far."""

    prompt: tuple[int, ...]
    partial: tuple[int, ...] = field(default_factory=tuple)

    def validate(self, vocab: Vocab) -> None:
        if not self.prompt:
            raise EmptyContextError("prompt must be non-empty")
        if self.prompt[0] != vocab.bos_id:
            raise ValueError("prompt must begin with bos")
        for tid in self.prompt + self.partial:
            if not (0 <= tid < vocab.size):
                raise ValueError(f"token id {tid} outside vocab")
        if vocab.eos_id in self.partial[:-1]:
            raise ValueError("eos may only appear as the final partial token")

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.prompt + self.partial

    @property
    def last(self) -> int:
        return self.tokens[-1]
