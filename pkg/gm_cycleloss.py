"""
Discrete cycle-consistency loss over matching triples and its gradient.

The partial loss l(a, b, c) = ab + bc + ac - 3abc is 1 exactly when two of
the three chain indicators are active and the third is not. The total loss
sums it over all (i, s, k) in V1 x V2 x V3.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Mapping, Tuple

import numpy as np

from gm_instances import Matching
from utils import get_logger
from utils.errors import ChainMismatchError

logger = get_logger(__name__)

SetPair = Tuple[int, int]


@dataclass(frozen=True)
class MatchingTriple:
    """x12 over (V1, V2), x23 over (V2, V3), x31 over (V3, V1)."""

    x12: Matching
    x23: Matching
    x31: Matching

    def __post_init__(self) -> None:
        if not (self.x12.n2 == self.x23.n1 and self.x23.n2 == self.x31.n1 and self.x31.n2 == self.x12.n1):
            raise ChainMismatchError(
                "side sizes do not chain: "
                f"x12 {self.x12.n1}x{self.x12.n2}, x23 {self.x23.n1}x{self.x23.n2}, x31 {self.x31.n1}x{self.x31.n2}"
            )

    @classmethod
    def from_canonical(cls, m12: Matching, m23: Matching, m13: Matching) -> "MatchingTriple":
        """Build from lower -> higher oriented matchings; x31 is the transposed view of m13."""
        return cls(m12, m23, m13.transpose())

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return self.x12.n1, self.x23.n1, self.x31.n1


def partial_loss(a: int, b: int, c: int) -> int:
    for bit in (a, b, c):
        if bit not in (0, 1):
            raise ValueError(f"partial loss expects binary inputs, got {(a, b, c)}")
    return a * b + b * c + a * c - 3 * a * b * c


def total_loss(t: MatchingTriple) -> int:
    """Count of (i, s, k) with exactly two of x12_is, x23_sk, x31_ki active.

    Walks matched chains instead of the n1*n2*n3 loop; each matching is
    injective, so every active pair fixes the third index.
    """
    f12 = dict(t.x12.pairs)
    f23 = dict(t.x23.pairs)
    f31 = dict(t.x31.pairs)
    count = 0
    for i, s in f12.items():
        k = f23.get(s)
        if k is not None and f31.get(k) != i:
            count += 1
    for s, k in f23.items():
        i = f31.get(k)
        if i is not None and f12.get(i) != s:
            count += 1
    for k, i in f31.items():
        s = f12.get(i)
        if s is not None and f23.get(s) != k:
            count += 1
    return count


def loss_gradient(t: MatchingTriple) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """dL/dx12, dL/dx23, dL/dx31; each is independent of the matching it differentiates."""
    x12, x23, x31 = t.x12.dense(), t.x23.dense(), t.x31.dense()
    g12 = x31.sum(axis=0)[:, None] + x23.sum(axis=1)[None, :] - 3.0 * (x23 @ x31).T
    g23 = x12.sum(axis=0)[:, None] + x31.sum(axis=1)[None, :] - 3.0 * (x31 @ x12).T
    g31 = x23.sum(axis=0)[:, None] + x12.sum(axis=1)[None, :] - 3.0 * (x12 @ x23).T
    return g12, g23, g31


def _triples(matchings: Mapping[SetPair, Matching], d: int):
    for a, b, c in combinations(range(d), 3):
        try:
            yield (a, b, c), MatchingTriple.from_canonical(matchings[(a, b)], matchings[(b, c)], matchings[(a, c)])
        except KeyError as exc:
            raise ChainMismatchError(f"no matching given for set pair {exc.args[0]}") from exc


def is_cycle_consistent(matchings: Mapping[SetPair, Matching], d: int) -> bool:
    """All matching chains over the d sets close; checking every triple suffices."""
    for sets, triple in _triples(matchings, d):
        if total_loss(triple):
            logger.debug("sets %s are not cycle consistent", sets)
            return False
    return True


def cycle_loss_system(matchings: Mapping[SetPair, Matching], d: int) -> Dict[Tuple[int, int, int], int]:
    """total_loss for every triple of a d-set matching system."""
    return {sets: total_loss(triple) for sets, triple in _triples(matchings, d)}
