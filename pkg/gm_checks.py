"""
Self-verification suite behind `gm_cli check`.

Exhaustive reference solvers and a cycle-loss counter for small instances,
a finite-difference check of the cost head, and checkpoint sanity checks.
Everything here is slow on purpose and only meant for tiny inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from gm_blackbox import CostGradient
from gm_costmodel import PARAM_NAMES, CostModelParams, backward, build_instance, init_params
from gm_cycleloss import MatchingTriple, partial_loss, total_loss
from gm_delaunay import delaunay
from gm_instances import KeypointSet, Matching, QapInstance, objective
from gm_solvers import solve_lap_hungarian, solve_qap_exact
from utils import get_logger

logger = get_logger(__name__)

GRADCHECK_STEP = 1e-6
GRADCHECK_TOLERANCE = 1e-5
OBJECTIVE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def enumerate_matchings(n1: int, n2: int, complete: bool = False) -> Iterator[Matching]:
    """Every matching between sides of size n1 and n2 (bijections only when complete)."""

    def extend(row: int, used: frozenset, pairs: Tuple[Tuple[int, int], ...]):
        if row == n1:
            yield Matching(frozenset(pairs), n1, n2)
            return
        if not complete:
            yield from extend(row + 1, used, pairs)
        for col in range(n2):
            if col not in used:
                yield from extend(row + 1, used | {col}, pairs + ((row, col),))

    if complete and n1 != n2:
        return
    yield from extend(0, frozenset(), ())


def brute_force_qap(inst: QapInstance) -> Tuple[Matching, float]:
    best, best_obj = None, float("inf")
    for m in enumerate_matchings(inst.n1, inst.n2, inst.complete):
        obj = objective(inst, m)
        if obj < best_obj - OBJECTIVE_TOLERANCE or (
            abs(obj - best_obj) <= OBJECTIVE_TOLERANCE and m.sort_key() < best.sort_key()
        ):
            best, best_obj = m, obj
    return best, best_obj


def brute_force_lap(cost: np.ndarray) -> float:
    n = cost.shape[0]
    return min(float(sum(cost[i, perm[i]] for i in range(n))) for perm in permutations(range(n)))


def triple_loss_bruteforce(t: MatchingTriple) -> int:
    """Reference O(n1 n2 n3) sum of the partial loss."""
    x12, x23, x31 = t.x12.pairs, t.x23.pairs, t.x31.pairs
    n1, n2, n3 = t.sizes
    return sum(
        partial_loss(int((i, s) in x12), int((s, k) in x23), int((k, i) in x31))
        for i in range(n1)
        for s in range(n2)
        for k in range(n3)
    )


def random_matching(rng: np.random.Generator, n1: int, n2: int, keep: float = 0.7) -> Matching:
    cols = rng.permutation(n2)
    pairs = [(i, int(cols[i])) for i in range(min(n1, n2)) if rng.random() < keep]
    return Matching(frozenset(pairs), n1, n2)


def random_instance(rng: np.random.Generator, n1: int, n2: int, complete: bool, density: float = 0.3) -> QapInstance:
    pairwise = {}
    for i in range(n1):
        for j in range(i + 1, n1):
            for s in range(n2):
                for l in range(n2):
                    if s != l and rng.random() < density:
                        pairwise[((i, j), (s, l))] = float(rng.normal(0.0, 0.5))
    return QapInstance(rng.normal(size=(n1, n2)), pairwise, complete)


def _random_set(rng: np.random.Generator, name: str, n: int, dim: int) -> KeypointSet:
    points = rng.uniform(size=(n, 2))
    return KeypointSet(name, points, rng.normal(size=(n, dim)), delaunay(points))


def _pairing(inst: QapInstance, cg: CostGradient) -> float:
    return float(np.sum(cg.unary_grad * inst.unary)) + sum(v * inst.pairwise[k] for k, v in cg.pairwise_grad.items())


def gradcheck_error(rng: np.random.Generator) -> float:
    """Relative error of `backward` against central differences on one random configuration."""
    dim, embed_dim = (int(v) for v in rng.integers(1, 5, size=2))
    n1, n2 = (int(v) for v in rng.integers(2, 5, size=2))
    ks1, ks2 = _random_set(rng, "a", n1, dim), _random_set(rng, "b", n2, dim)
    params = init_params(dim, embed_dim, rng, c_hat=float(rng.normal()))
    inst = build_instance(ks1, ks2, params)
    cg = CostGradient(rng.normal(size=(n1, n2)), {key: float(rng.normal()) for key in inst.pairwise})

    analytic = backward(ks1, ks2, params, cg).as_dict()
    base = params.as_dict()
    errors_num, errors_ref = 0.0, 0.0
    for name in PARAM_NAMES:
        flat = np.array(base[name], dtype=np.float64).ravel()
        numeric = np.zeros_like(flat)
        for k in range(flat.size):
            values = []
            for sign in (1.0, -1.0):
                shifted = flat.copy()
                shifted[k] += sign * GRADCHECK_STEP
                trial = dict(base)
                trial[name] = shifted.reshape(np.shape(base[name]))
                p = CostModelParams(trial["node_proj"], trial["edge_proj"], float(trial["c_hat"]))
                values.append(_pairing(build_instance(ks1, ks2, p), cg))
            numeric[k] = (values[0] - values[1]) / (2.0 * GRADCHECK_STEP)
        exact = np.asarray(analytic[name], dtype=np.float64).ravel()
        errors_num += float(np.sum((exact - numeric) ** 2))
        errors_ref += float(np.sum(exact**2) + np.sum(numeric**2))
    return float(np.sqrt(errors_num) / max(np.sqrt(errors_ref), 1e-12))


def check_gradients(rng: np.random.Generator, trials: int) -> CheckResult:
    worst = max((gradcheck_error(rng) for _ in range(trials)), default=0.0)
    return CheckResult("gradcheck", worst <= GRADCHECK_TOLERANCE, f"worst relative error {worst:.2e} over {trials} configurations")


def check_lap_oracle(rng: np.random.Generator, trials: int, max_n: int = 6) -> CheckResult:
    failures = 0
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        cost = rng.normal(size=(n, n))
        m = solve_lap_hungarian(cost, complete=True)
        got = float(sum(cost[i, s] for i, s in m.pairs))
        if len(m) != n or abs(got - brute_force_lap(cost)) > OBJECTIVE_TOLERANCE:
            failures += 1
    return CheckResult("lap_oracle", failures == 0, f"{failures} mismatches over {trials} matrices")


def check_qap_oracle(rng: np.random.Generator, trials: int, max_n: int = 5) -> CheckResult:
    failures = 0
    for _ in range(trials):
        complete = bool(rng.random() < 0.5)
        n1 = int(rng.integers(1, max_n + 1))
        n2 = n1 if complete else int(rng.integers(1, max_n + 1))
        inst = random_instance(rng, n1, n2, complete)
        got = solve_qap_exact(inst)
        _, best = brute_force_qap(inst)
        if abs(objective(inst, got) - best) > OBJECTIVE_TOLERANCE:
            failures += 1
    return CheckResult("qap_oracle", failures == 0, f"{failures} mismatches over {trials} instances")


def check_cycle_loss(rng: np.random.Generator, trials: int, max_n: int = 5) -> CheckResult:
    failures = 0
    for _ in range(trials):
        n1, n2, n3 = (int(v) for v in rng.integers(1, max_n + 1, size=3))
        t = MatchingTriple(random_matching(rng, n1, n2), random_matching(rng, n2, n3), random_matching(rng, n3, n1))
        if total_loss(t) != triple_loss_bruteforce(t):
            failures += 1
    return CheckResult("cycle_loss_oracle", failures == 0, f"{failures} mismatches over {trials} triples")


def check_params(params: CostModelParams, feature_dim: Optional[int] = None) -> CheckResult:
    problems = []
    for name, value in params.as_dict().items():
        if not np.all(np.isfinite(value)):
            problems.append(f"{name} has non-finite entries")
    if feature_dim is not None and params.feature_dim != feature_dim:
        problems.append(f"checkpoint expects feature dim {params.feature_dim}, data has {feature_dim}")
    return CheckResult("checkpoint", not problems, "; ".join(problems) or "finite and shape-consistent")


def run_checks(
    seed: int = 0,
    trials: int = 20,
    params: Optional[CostModelParams] = None,
    feature_dim: Optional[int] = None,
) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    suite: List[Callable[[], CheckResult]] = [
        lambda: check_gradients(rng, trials),
        lambda: check_lap_oracle(rng, trials),
        lambda: check_qap_oracle(rng, trials),
        lambda: check_cycle_loss(rng, trials),
    ]
    if params is not None:
        suite.append(lambda: check_params(params, feature_dim))
    results = []
    for check in suite:
        result = check()
        logger.info("check %s: %s (%s)", result.name, "ok" if result.passed else "FAILED", result.detail)
        results.append(result)
    return results
