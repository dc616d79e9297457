"""Context identity encoding and the context matrix construction.

A prediction is always conditioned on a (target, aspect) pair. The pair
is mapped to a single integer id, the id selects a learned embedding
row, and that row is fused with the current hidden states through a
linear projection to produce the context matrix consumed by the
context-aware attention variants.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError, VocabError
from .tensor import Tensor


class ContextVocab:
    """Ordered (target, aspect) name lists with a bijective id layout.

    ``id(t, a) = index(t) * |A| + index(a)``. An empty target list means
    a single implicit target (plain aspect-based mode) and ids are then
    just aspect indices; lookups must pass ``target=None`` in that mode.
    """

    def __init__(self, targets: list[str], aspects: list[str]):
        targets = list(targets)
        aspects = list(aspects)
        if len(set(targets)) != len(targets):
            raise VocabError(f"duplicate target names in {targets}")
        if len(set(aspects)) != len(aspects):
            raise VocabError(f"duplicate aspect names in {aspects}")
        if not aspects:
            raise VocabError("aspect list must be non-empty")
        self.targets = targets
        self.aspects = aspects

    @property
    def num_targets(self) -> int:
        return max(1, len(self.targets))

    @property
    def size(self) -> int:
        """Total number of context ids: |T| * |A|."""
        return self.num_targets * len(self.aspects)

    def context_id(self, target: str | None, aspect: str) -> int:
        if aspect not in self.aspects:
            raise VocabError(f"unknown aspect name: {aspect!r}")
        if self.targets:
            if target is None:
                raise VocabError("target name required for this vocabulary")
            if target not in self.targets:
                raise VocabError(f"unknown target name: {target!r}")
            t_idx = self.targets.index(target)
        else:
            if target is not None:
                raise VocabError(
                    f"vocabulary has no targets but got target {target!r}"
                )
            t_idx = 0
        return t_idx * len(self.aspects) + self.aspects.index(aspect)

    def pairs(self) -> list[tuple[str | None, str]]:
        """Enumerate (target, aspect) pairs in id order."""
        tlist: list[str | None] = list(self.targets) if self.targets else [None]
        return [(t, a) for t in tlist for a in self.aspects]

    def to_dict(self) -> dict:
        return {"targets": list(self.targets), "aspects": list(self.aspects)}

    @classmethod
    def from_dict(cls, d: dict) -> "ContextVocab":
        return cls(d["targets"], d["aspects"])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ContextVocab)
            and self.targets == other.targets
            and self.aspects == other.aspects
        )

    def __repr__(self):
        return f"ContextVocab(targets={self.targets}, aspects={self.aspects})"


def context_matrix(
    ctx: int,
    hidden: Tensor,
    table: Tensor,
    proj: Tensor,
    residual: bool = False,
) -> Tensor:
    """Build the n x d context matrix for one context id.

    The embedding row for ``ctx`` is broadcast to every position,
    concatenated with the hidden states along the feature axis, and
    mapped back to d dimensions: ``[E_c, E] @ proj^T`` with proj of
    shape d x 2d. ``residual=True`` additionally adds the hidden states
    to the output.
    """
    n, d = hidden.data.shape
    if proj.data.shape != (d, 2 * d):
        raise ShapeError(
            f"context projection must be {d}x{2 * d}, got {proj.data.shape}"
        )
    if not 0 <= ctx < table.data.shape[0]:
        raise VocabError(
            f"context id {ctx} out of range [0, {table.data.shape[0]})"
        )
    rows = T.gather_rows(table, np.full(n, ctx, dtype=np.int64))
    fused = T.matmul(T.concat([rows, hidden], axis=1), T.transpose(proj))
    if residual:
        fused = T.add(fused, hidden)
    return fused
