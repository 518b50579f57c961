"""Candidate model families.

Selection is only as good as the family it searches: if the model you hope
to find is not among the candidates, no mechanism will pick it.  Keeping
the family small also helps — every extra candidate is another noisy score
that can win by accident.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ModelMask
from .errors import ConfigError, DataError

__all__ = ["CandidateSet", "all_subsets", "from_explicit"]

# 2^24 masks is already a 16-million-model search; anything larger is
# almost certainly a mistake, not a plan.
_MAX_D = 24


@dataclass(frozen=True)
class CandidateSet:
    """An ordered, duplicate-free collection of masks over d covariates."""

    masks: tuple[ModelMask, ...]
    d: int

    def __post_init__(self) -> None:
        if not self.masks:
            raise DataError("candidate set must contain at least one model")
        seen = set()
        for m in self.masks:
            if m.d != self.d:
                raise DataError(f"mask for d={m.d} in a candidate set with d={self.d}")
            if m.bits in seen:
                raise DataError(f"duplicate mask {m.indices()} in candidate set")
            seen.add(m.bits)

    @property
    def max_size(self) -> int:
        """Largest model cardinality in the family."""
        return max(m.size for m in self.masks)

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)


def _popcount(values: np.ndarray) -> np.ndarray:
    return np.bitwise_count(values)


def all_subsets(
    d: int, include_empty: bool = False, max_size: int | None = None
) -> CandidateSet:
    """Every subset of {1..d} up to ``max_size``, smallest models first.

    Order is deterministic: by cardinality, then by numeric bit value, so
    printed reports and frozen test expectations never shuffle.  ``d`` is
    capped at 24.
    """
    if not 1 <= d <= _MAX_D:
        raise ConfigError(f"d must be in [1, {_MAX_D}] for exhaustive enumeration, got {d}")
    cap = d if max_size is None else int(max_size)
    if not 0 <= cap <= d:
        raise ConfigError(f"max_size must be in [0, {d}], got {max_size}")
    if cap == 0 and not include_empty:
        raise ConfigError("max_size=0 without include_empty leaves no candidates")
    values = np.arange(1 << d, dtype=np.uint32)
    sizes = _popcount(values)
    lo = 0 if include_empty else 1
    keep = (sizes >= lo) & (sizes <= cap)
    values, sizes = values[keep], sizes[keep]
    order = np.lexsort((values, sizes))
    masks = tuple(ModelMask(int(v), d) for v in values[order])
    return CandidateSet(masks, d)


def from_explicit(index_sets, d: int) -> CandidateSet:
    """Build a family from 1-based index collections, in caller order.

    Later duplicates (same subset, any index order) collapse into the
    first occurrence.
    """
    masks: list[ModelMask] = []
    seen: set[int] = set()
    for idx in index_sets:
        m = ModelMask.from_indices(idx, d)
        if m.bits not in seen:
            seen.add(m.bits)
            masks.append(m)
    if not masks:
        raise DataError("no candidate models given")
    return CandidateSet(tuple(masks), d)
