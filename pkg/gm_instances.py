"""
Matching problem types: keypoint sets, QAP instances, matchings.

Costs are float64 throughout. Pairwise costs are sparse and keyed by a pair
of edges ((i, j), (s, l)) meaning "i -> s and j -> l" with i < j on the
first side; the second-side edge is oriented, so both orientations of a
second-side edge may carry a cost. Absent keys mean cost 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils import get_logger
from utils.errors import InstanceError, InvalidMatchingError

Pair = Tuple[int, int]
Edge = Tuple[int, int]
EdgeKey = Tuple[Edge, Edge]
LiftedKey = Tuple[Pair, Pair]

logger = get_logger(__name__)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _as_int(value: object, what: str) -> int:
    try:
        return int(value)  # type: ignore[call-overload]
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{what}: expected an integer, got {value!r}") from exc


def _as_floats(values: object, what: str) -> np.ndarray:
    try:
        return np.array(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{what}: expected numbers") from exc


def canonical_edges(edges: Iterable[Sequence[int]], n: int) -> Tuple[Edge, ...]:
    """Return sorted (i < j) edges; reject self-loops, duplicates and bad indices."""
    seen = set()
    for raw in edges:
        try:
            first, second = raw
        except (TypeError, ValueError) as exc:
            raise InstanceError(f"edge {raw!r}: expected a pair of indices") from exc
        i, j = _as_int(first, "edge index"), _as_int(second, "edge index")
        if i == j:
            raise InstanceError(f"self-loop edge ({i}, {j})")
        if not (0 <= i < n and 0 <= j < n):
            raise InstanceError(f"edge ({i}, {j}) out of range for {n} points")
        edge = (min(i, j), max(i, j))
        if edge in seen:
            raise InstanceError(f"duplicate edge {edge}")
        seen.add(edge)
    return tuple(sorted(seen))


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """One "image": keypoint coordinates, features, Delaunay edges, optional labels."""

    set_id: str
    points: np.ndarray
    features: np.ndarray
    edges: Tuple[Edge, ...] = ()
    universe_labels: Optional[Tuple[int, ...]] = None

    def __post_init__(self) -> None:
        points = _as_floats(self.points, f"set {self.set_id} points").reshape(-1, 2)
        features = _as_floats(self.features, f"set {self.set_id} features")
        if features.ndim == 1:
            features = features.reshape(len(points), -1)
        if features.shape[0] != points.shape[0]:
            raise InstanceError(
                f"set {self.set_id}: {features.shape[0]} feature rows for {points.shape[0]} points"
            )
        object.__setattr__(self, "points", _readonly(points))
        object.__setattr__(self, "features", _readonly(features))
        object.__setattr__(self, "edges", canonical_edges(self.edges, len(points)))
        if self.universe_labels is not None:
            labels = tuple(_as_int(v, f"set {self.set_id} label") for v in self.universe_labels)
            if len(labels) != len(points):
                raise InstanceError(f"set {self.set_id}: {len(labels)} labels for {len(points)} points")
            object.__setattr__(self, "universe_labels", labels)

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def has_labels(self) -> bool:
        return self.universe_labels is not None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KeypointSet):
            return NotImplemented
        return (
            self.set_id == other.set_id
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.features, other.features)
            and self.edges == other.edges
            and self.universe_labels == other.universe_labels
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Matching:
    """Set of (i, s) assignments between sides of size n1 and n2."""

    pairs: FrozenSet[Pair]
    n1: int
    n2: int

    def __post_init__(self) -> None:
        pairs = frozenset((int(i), int(s)) for i, s in self.pairs)
        for i, s in pairs:
            if not (0 <= i < self.n1 and 0 <= s < self.n2):
                raise InvalidMatchingError(f"pair ({i}, {s}) out of range for {self.n1}x{self.n2}")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def empty(cls, n1: int, n2: int) -> "Matching":
        return cls(frozenset(), n1, n2)

    @classmethod
    def from_assignment(cls, assign: Sequence[int], n2: int) -> "Matching":
        """Build from a row -> column array where -1 means unassigned."""
        pairs = frozenset((i, int(s)) for i, s in enumerate(assign) if s >= 0)
        return cls(pairs, len(assign), n2)

    @classmethod
    def identity(cls, n: int) -> "Matching":
        return cls(frozenset((i, i) for i in range(n)), n, n)

    def __len__(self) -> int:
        return len(self.pairs)

    def assignment(self) -> np.ndarray:
        assign = np.full(self.n1, -1, dtype=np.int64)
        for i, s in self.pairs:
            assign[i] = s
        return assign

    def dense(self) -> np.ndarray:
        x = np.zeros((self.n1, self.n2), dtype=np.float64)
        for i, s in self.pairs:
            x[i, s] = 1.0
        return x

    def transpose(self) -> "Matching":
        return Matching(frozenset((s, i) for i, s in self.pairs), self.n2, self.n1)

    def sort_key(self) -> Tuple[Pair, ...]:
        """Lexicographic tie-break key; smaller wins."""
        return tuple(sorted(self.pairs))


@dataclass(frozen=True)
class LiftedSolution:
    """A matching plus the active pair-of-assignment indicators y."""

    x: Matching
    y: FrozenSet[LiftedKey]


@dataclass(frozen=True, eq=False)
class QapInstance:
    """Unary n1 x n2 costs plus sparse pairwise costs over edge pairs."""

    unary: np.ndarray
    pairwise: Mapping[EdgeKey, float] = field(default_factory=dict)
    complete: bool = False
    edges1: Optional[Tuple[Edge, ...]] = None
    edges2: Optional[Tuple[Edge, ...]] = None

    def __post_init__(self) -> None:
        unary = _as_floats(self.unary, "unary costs")
        if unary.ndim != 2:
            raise InstanceError(f"unary costs must be a matrix, got shape {unary.shape}")
        if not np.all(np.isfinite(unary)):
            raise InstanceError("unary costs must be finite")
        object.__setattr__(self, "unary", _readonly(unary))
        n1, n2 = unary.shape
        set1 = None if self.edges1 is None else {frozenset(e) for e in self.edges1}
        set2 = None if self.edges2 is None else {frozenset(e) for e in self.edges2}

        pairwise: Dict[EdgeKey, float] = {}
        for raw_key, raw_cost in self.pairwise.items():
            try:
                (i, j), (s, l) = raw_key
                cost = float(raw_cost)
            except (TypeError, ValueError) as exc:
                raise InstanceError(f"pairwise key {raw_key!r}: expected ((i, j), (s, l)) and a numeric cost") from exc
            i, j, s, l = (_as_int(v, f"pairwise key {raw_key!r}") for v in (i, j, s, l))
            if not i < j:
                raise InstanceError(f"pairwise key {raw_key}: first edge must satisfy i < j")
            if s == l:
                raise InstanceError(f"pairwise key {raw_key}: second edge is a self-loop")
            if not (0 <= i < n1 and 0 <= j < n1 and 0 <= s < n2 and 0 <= l < n2):
                raise InstanceError(f"pairwise key {raw_key} out of range for {n1}x{n2}")
            if set1 is not None and frozenset((i, j)) not in set1:
                raise InstanceError(f"pairwise key {raw_key}: ({i}, {j}) is not an edge of side 1")
            if set2 is not None and frozenset((s, l)) not in set2:
                raise InstanceError(f"pairwise key {raw_key}: ({s}, {l}) is not an edge of side 2")
            if not np.isfinite(cost):
                raise InstanceError(f"pairwise key {raw_key} has non-finite cost")
            pairwise[((i, j), (s, l))] = cost
        object.__setattr__(self, "pairwise", MappingProxyType(pairwise))

    @property
    def n1(self) -> int:
        return int(self.unary.shape[0])

    @property
    def n2(self) -> int:
        return int(self.unary.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n1, self.n2

    def with_unary(self, unary: np.ndarray) -> "QapInstance":
        return QapInstance(unary, dict(self.pairwise), self.complete, self.edges1, self.edges2)

    def unary_only(self) -> "QapInstance":
        """Same instance with edge costs dropped (the LAP variant)."""
        return QapInstance(self.unary, {}, self.complete, self.edges1, self.edges2)

    def sorted_keys(self) -> List[EdgeKey]:
        return sorted(self.pairwise)

    @cached_property
    def quadratic(self) -> np.ndarray:
        """Symmetric (n1*n2)^2 matrix Q with Q[a, b] = c for assignment indices a = i*n2+s."""
        size = self.n1 * self.n2
        q = np.zeros((size, size), dtype=np.float64)
        for ((i, j), (s, l)), cost in self.pairwise.items():
            a, b = i * self.n2 + s, j * self.n2 + l
            q[a, b] += cost
            q[b, a] += cost
        return _readonly(q)

    @cached_property
    def incident(self) -> Dict[Pair, Tuple[Tuple[int, int, float], ...]]:
        """(i, s) -> ((j, l, c), ...) for every pairwise cost touching assignment (i, s)."""
        table: Dict[Pair, List[Tuple[int, int, float]]] = {}
        for ((i, j), (s, l)), cost in self.pairwise.items():
            table.setdefault((i, s), []).append((j, l, cost))
            table.setdefault((j, l), []).append((i, s, cost))
        return {key: tuple(val) for key, val in table.items()}


def validate_matching(m: Matching, complete: bool = False) -> bool:
    """Row/column uniqueness; with `complete`, also every node assigned on a square instance."""
    rows = [i for i, _ in m.pairs]
    cols = [s for _, s in m.pairs]
    if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
        return False
    if complete:
        return m.n1 == m.n2 and len(m.pairs) == m.n1
    return True


def _require_valid(m: Matching, inst: Optional[QapInstance] = None) -> None:
    if not validate_matching(m):
        raise InvalidMatchingError(f"matching violates uniqueness constraints: {m.sort_key()}")
    if inst is not None and (m.n1, m.n2) != inst.shape:
        raise InvalidMatchingError(f"matching shape {(m.n1, m.n2)} does not fit instance {inst.shape}")


def matching_from_pairs(pairs: Iterable[Pair], n1: int, n2: int) -> Matching:
    """Like the constructor, but rejects matchings that violate uniqueness."""
    m = Matching(frozenset(pairs), n1, n2)
    _require_valid(m)
    return m


def lift(m: Matching, inst: QapInstance) -> LiftedSolution:
    """Apply the substitution y_{is,jl} = x_is * x_jl over the instance's pairwise keys."""
    _require_valid(m, inst)
    ordered = sorted(m.pairs)
    y = set()
    for a, (i, s) in enumerate(ordered):
        for j, l in ordered[a + 1 :]:
            if ((i, j), (s, l)) in inst.pairwise:
                y.add(((i, s), (j, l)))
    return LiftedSolution(m, frozenset(y))


def objective(inst: QapInstance, m: Matching) -> float:
    """Sum of unary costs of assigned pairs plus pairwise costs of active pairs of assignments."""
    lifted = lift(m, inst)
    total = float(sum(inst.unary[i, s] for i, s in m.pairs))
    for (i, s), (j, l) in lifted.y:
        total += inst.pairwise[((i, j), (s, l))]
    return total


def ilp_costs(inst: QapInstance) -> np.ndarray:
    """Concatenated cost vector (unary row-major, then pairwise in sorted key order)."""
    pair_costs = np.array([inst.pairwise[key] for key in inst.sorted_keys()], dtype=np.float64)
    return np.concatenate([inst.unary.ravel(), pair_costs])


def ilp_indicator(lifted: LiftedSolution, inst: QapInstance) -> np.ndarray:
    """0/1 vector aligned with `ilp_costs`."""
    x = lifted.x.dense().ravel()
    active = {((i, j), (s, l)) for (i, s), (j, l) in lifted.y}
    y = np.array([1.0 if key in active else 0.0 for key in inst.sorted_keys()], dtype=np.float64)
    return np.concatenate([x, y])
