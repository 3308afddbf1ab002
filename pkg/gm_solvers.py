"""
LAP and QAP solvers behind one interface.

All solvers minimise <c, x> over matchings that satisfy the uniqueness
constraints (equalities for complete instances). They are pure: the output
depends only on the instance and the SolverConfig.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np

from gm_instances import Matching, QapInstance, validate_matching
from utils import get_logger
from utils.errors import ConfigError, InfeasibleInstanceError, ShapeMismatchError, SolverRefusalError

logger = get_logger(__name__)

DEFAULT_NODE_LIMIT = 8
DEFAULT_TOLERANCE = 1e-9
RESTART_NOISE = 0.25


class SolverKind(str, Enum):
    LAP = "lap"
    QAP_EXACT = "qap_exact"
    QAP_LOCAL = "qap_local"


@dataclass(frozen=True)
class LocalSearchConfig:
    max_passes: int = 200
    restarts: int = 2
    rng_seed: int = 0


@dataclass(frozen=True)
class SolverConfig:
    kind: Union[SolverKind, str] = SolverKind.QAP_LOCAL
    node_limit: int = DEFAULT_NODE_LIMIT
    local_search: LocalSearchConfig = field(default_factory=LocalSearchConfig)
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", SolverKind(self.kind))
        except ValueError as exc:
            choices = ", ".join(k.value for k in SolverKind)
            raise ConfigError(f"unknown solver kind {self.kind!r} (choose from {choices})") from exc
        if self.node_limit < 1:
            raise ConfigError(f"node_limit must be >= 1, got {self.node_limit}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance}")
        if self.local_search.max_passes < 1:
            raise ConfigError("local_search.max_passes must be >= 1")
        if self.local_search.restarts < 0:
            raise ConfigError("local_search.restarts must be >= 0")

    @classmethod
    def from_kind(cls, kind: Union[SolverKind, str], **overrides) -> "SolverConfig":
        return cls(kind=kind, **overrides)


def solve(inst: QapInstance, cfg: SolverConfig, warm_start: Optional[Matching] = None) -> Matching:
    """x(c) = argmin <c, x> for the configured solver kind."""
    if inst.complete and inst.n1 != inst.n2:
        raise InfeasibleInstanceError(f"complete matching requires n1 == n2, got {inst.n1}x{inst.n2}")
    if cfg.kind is SolverKind.LAP:
        result = solve_lap_hungarian(inst.unary, inst.complete)
    elif cfg.kind is SolverKind.QAP_EXACT:
        result = solve_qap_exact(inst, node_limit=cfg.node_limit, tolerance=cfg.tolerance)
    else:
        result = solve_qap_local(inst, cfg, warm_start=warm_start)
    logger.debug("%s solve %dx%d -> %d pairs", cfg.kind.value, inst.n1, inst.n2, len(result))
    return result


# ---------------------------------------------------------------------------
# LAP
# ---------------------------------------------------------------------------


def _hungarian(cost: np.ndarray) -> np.ndarray:
    """Shortest augmenting path with potentials; rows <= cols. Returns row -> col."""
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j] = 1-based row on column j, 0 if free
    way = np.zeros(m + 1, dtype=np.int64)

    for row in range(1, n + 1):
        owner[0] = row
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            reduced = np.full(m + 1, np.inf)
            reduced[1:] = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv)
            minv[better] = reduced[better]
            way[better] = j0
            masked = np.where(free, minv, np.inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    assign = np.full(n, -1, dtype=np.int64)
    for col in range(1, m + 1):
        if owner[col]:
            assign[owner[col] - 1] = col - 1
    return assign


def solve_lap_hungarian(unary: np.ndarray, complete: bool) -> Matching:
    """Optimal LAP; incomplete mode augments both sides with zero-cost dummy nodes."""
    costs = np.asarray(unary, dtype=np.float64)
    if costs.ndim != 2:
        raise ShapeMismatchError(f"unary costs must be a matrix, got shape {costs.shape}")
    n1, n2 = costs.shape
    if complete and n1 != n2:
        raise InfeasibleInstanceError(f"complete matching requires n1 == n2, got {n1}x{n2}")
    if n1 == 0 or n2 == 0:
        return Matching.empty(n1, n2)

    if complete:
        assign = _hungarian(costs)
    else:
        size = n1 + n2
        square = np.zeros((size, size), dtype=np.float64)
        square[:n1, :n2] = costs
        assign = _hungarian(square)[:n1]
        assign = np.where(assign < n2, assign, -1)
    return Matching.from_assignment(assign, n2)


# ---------------------------------------------------------------------------
# Exact QAP: depth-first branch and bound
# ---------------------------------------------------------------------------


def _prefix_is_worse(prefix: List[Tuple[int, int]], best_key: Tuple[Tuple[int, int], ...]) -> bool:
    """True when every completion of `prefix` sorts after `best_key`."""
    for idx, pair in enumerate(prefix):
        if idx >= len(best_key):
            return True
        if pair != best_key[idx]:
            return pair > best_key[idx]
    return False


def _assignment_objective(inst: QapInstance, assign: np.ndarray) -> float:
    x = np.zeros(inst.n1 * inst.n2)
    rows = np.flatnonzero(assign >= 0)
    x[rows * inst.n2 + assign[rows]] = 1.0
    return float(inst.unary.ravel() @ x + 0.5 * x @ inst.quadratic @ x)


def solve_qap_exact(
    inst: QapInstance,
    node_limit: int = DEFAULT_NODE_LIMIT,
    tolerance: float = DEFAULT_TOLERANCE,
) -> Matching:
    """Globally optimal IQP solution; ties go to the lexicographically smallest pair set."""
    n1, n2 = inst.shape
    if max(n1, n2) > node_limit:
        raise SolverRefusalError(f"exact solver limited to {node_limit} nodes per side, got {n1}x{n2}")
    if inst.complete and n1 != n2:
        raise InfeasibleInstanceError(f"complete matching requires n1 == n2, got {n1}x{n2}")
    if n1 == 0 or n2 == 0:
        return Matching.empty(n1, n2)

    unary = inst.unary
    incident = inst.incident
    optimistic = unary.copy()
    for (i, s), terms in incident.items():
        optimistic[i, s] += sum(min(0.0, c) for _, _, c in terms)
    if not inst.complete:
        optimistic = np.minimum(optimistic, 0.0)

    seed = solve_lap_hungarian(unary, inst.complete)
    best_assign = seed.assignment()
    best_obj = _assignment_objective(inst, best_assign)
    best_key = seed.sort_key()

    assign = np.full(n1, -1, dtype=np.int64)
    used = np.zeros(n2, dtype=bool)
    prefix: List[Tuple[int, int]] = []

    def bound(row: int) -> float:
        if row >= n1:
            return 0.0
        free = ~used
        if not free.any():
            return 0.0
        return float(optimistic[row:, free].min(axis=1).sum())

    def visit(row: int, acc: float) -> None:
        nonlocal best_obj, best_key, best_assign
        if row == n1:
            key = tuple(prefix)
            if acc < best_obj - tolerance or (abs(acc - best_obj) <= tolerance and key < best_key):
                best_obj, best_key, best_assign = acc, key, assign.copy()
            return
        lower = acc + bound(row)
        if lower > best_obj + tolerance:
            return
        if lower >= best_obj - tolerance and _prefix_is_worse(prefix, best_key):
            return

        if not inst.complete:
            visit(row + 1, acc)
        free_cols = np.flatnonzero(~used)
        order = free_cols[np.argsort(optimistic[row, free_cols], kind="stable")]
        for col in order:
            col = int(col)
            gain = unary[row, col]
            for j, l, c in incident.get((row, col), ()):
                if j < row and assign[j] == l:
                    gain += c
            assign[row] = col
            used[col] = True
            prefix.append((row, col))
            visit(row + 1, acc + gain)
            prefix.pop()
            used[col] = False
            assign[row] = -1

    visit(0, 0.0)
    return Matching.from_assignment(best_assign, n2)


# ---------------------------------------------------------------------------
# Local search
# ---------------------------------------------------------------------------


def _descend(inst: QapInstance, assign: np.ndarray, max_passes: int, tolerance: float) -> np.ndarray:
    """Steepest descent over reassign / swap / toggle moves; each accepted move improves by > tolerance."""
    n1, n2 = inst.shape
    q = inst.quadratic
    assign = assign.copy()

    for _ in range(max_passes):
        x = np.zeros(n1 * n2)
        rows = np.flatnonzero(assign >= 0)
        x[rows * n2 + assign[rows]] = 1.0
        gains = inst.unary + (q @ x).reshape(n1, n2)

        owned = np.zeros(n2, dtype=bool)
        owned[assign[rows]] = True
        free_cols = np.flatnonzero(~owned)
        free_rows = np.flatnonzero(assign < 0)
        cols = assign[rows]
        current = gains[rows, cols]

        best_delta = -tolerance
        best_move: Optional[Tuple[str, int, int]] = None

        if len(rows) and len(free_cols):
            reassign = gains[np.ix_(rows, free_cols)] - current[:, None]
            idx = int(np.argmin(reassign))
            if reassign.flat[idx] < best_delta:
                best_delta = float(reassign.flat[idx])
                p, f = divmod(idx, len(free_cols))
                best_move = ("reassign", int(rows[p]), int(free_cols[f]))

        if len(rows) > 1:
            a = rows[:, None] * n2 + cols[None, :]  # index of (row_p, col_q)
            cross = gains[rows[:, None], cols[None, :]]
            swap = (
                cross
                + cross.T
                - current[:, None]
                - current[None, :]
                + q[a, a.T]
                + q[np.diag(a)[:, None], np.diag(a)[None, :]]
            )
            swap[np.tril_indices(len(rows))] = np.inf
            idx = int(np.argmin(swap))
            if swap.flat[idx] < best_delta:
                best_delta = float(swap.flat[idx])
                p, r = divmod(idx, len(rows))
                best_move = ("swap", int(rows[p]), int(rows[r]))

        if not inst.complete:
            if len(rows):
                p = int(np.argmin(-current))
                if -current[p] < best_delta:
                    best_delta = float(-current[p])
                    best_move = ("unassign", int(rows[p]), -1)
            if len(free_rows) and len(free_cols):
                toggle = gains[np.ix_(free_rows, free_cols)]
                idx = int(np.argmin(toggle))
                if toggle.flat[idx] < best_delta:
                    best_delta = float(toggle.flat[idx])
                    p, f = divmod(idx, len(free_cols))
                    best_move = ("assign", int(free_rows[p]), int(free_cols[f]))

        if best_move is None:
            break
        kind, i, other = best_move
        if kind == "swap":
            assign[i], assign[other] = assign[other], assign[i]
        else:
            assign[i] = other
    return assign


def _better(obj: float, key: tuple, best_obj: float, best_key: tuple, tolerance: float) -> bool:
    return obj < best_obj - tolerance or (abs(obj - best_obj) <= tolerance and key < best_key)


def solve_qap_local(inst: QapInstance, cfg: SolverConfig, warm_start: Optional[Matching] = None) -> Matching:
    """Multi-start local search; never worse than its seed (LAP on unary, or `warm_start`)."""
    n1, n2 = inst.shape
    if inst.complete and n1 != n2:
        raise InfeasibleInstanceError(f"complete matching requires n1 == n2, got {n1}x{n2}")
    if n1 == 0 or n2 == 0:
        return Matching.empty(n1, n2)
    ls = cfg.local_search

    if warm_start is not None and validate_matching(warm_start, inst.complete) and (warm_start.n1, warm_start.n2) == inst.shape:
        seed = warm_start
    else:
        if warm_start is not None:
            logger.warning("warm start does not fit the instance; seeding from LAP")
        seed = solve_lap_hungarian(inst.unary, inst.complete)

    best = _descend(inst, seed.assignment(), ls.max_passes, cfg.tolerance)
    best_obj = _assignment_objective(inst, best)
    best_key = Matching.from_assignment(best, n2).sort_key()

    scale = RESTART_NOISE * (float(np.std(inst.unary)) + 1e-3)
    for restart in range(1, ls.restarts + 1):
        rng = np.random.default_rng([ls.rng_seed, restart])
        noisy = inst.unary + rng.normal(0.0, scale, size=inst.unary.shape)
        start = solve_lap_hungarian(noisy, inst.complete).assignment()
        candidate = _descend(inst, start, ls.max_passes, cfg.tolerance)
        obj = _assignment_objective(inst, candidate)
        key = Matching.from_assignment(candidate, n2).sort_key()
        if _better(obj, key, best_obj, best_key, cfg.tolerance):
            best, best_obj, best_key = candidate, obj, key

    return Matching.from_assignment(best, n2)
