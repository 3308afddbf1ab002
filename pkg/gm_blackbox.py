"""
Black-box differentiation through a matching solver.

Forward: x = solve(c). Backward: perturb the unary costs along the loss
gradient, c' = c + lambda * dL/dx, solve again, and use
(x(c') - x(c)) / lambda as dL/dc. Only unary costs are perturbed
(dL/dy = 0), but the lifted difference still yields pairwise cost gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from gm_instances import EdgeKey, LiftedSolution, Matching, QapInstance, lift
from gm_solvers import SolverConfig, solve
from utils import CallTracker, get_logger
from utils.errors import ShapeMismatchError

logger = get_logger(__name__)

DEFAULT_LAMBDA = 80.0


@dataclass(frozen=True, eq=False)
class LossGrad:
    """dL/dx for the unary assignment indicators."""

    unary: np.ndarray

    def __post_init__(self) -> None:
        unary = np.array(self.unary, dtype=np.float64)
        if unary.ndim != 2 or not np.all(np.isfinite(unary)):
            raise ShapeMismatchError(f"loss gradient must be a finite matrix, got shape {unary.shape}")
        unary.setflags(write=False)
        object.__setattr__(self, "unary", unary)

    @classmethod
    def zeros(cls, n1: int, n2: int) -> "LossGrad":
        return cls(np.zeros((n1, n2)))


@dataclass(frozen=True, eq=False)
class CostGradient:
    """dL/dc: dense over unary costs, sparse over pairwise keys (absent = 0)."""

    unary_grad: np.ndarray
    pairwise_grad: Dict[EdgeKey, float] = field(default_factory=dict)

    @classmethod
    def zeros(cls, n1: int, n2: int) -> "CostGradient":
        return cls(np.zeros((n1, n2)), {})

    @property
    def is_zero(self) -> bool:
        return not np.any(self.unary_grad) and not any(self.pairwise_grad.values())


def _check_lambda(lam: float) -> None:
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")


def perturb_costs(inst: QapInstance, g: LossGrad, lam: float = DEFAULT_LAMBDA) -> QapInstance:
    """c^lambda = c + lambda * dL/dx on unary costs; pairwise costs untouched."""
    _check_lambda(lam)
    if g.unary.shape != inst.shape:
        raise ShapeMismatchError(f"loss gradient {g.unary.shape} does not match instance {inst.shape}")
    if not np.any(g.unary):
        return inst
    return inst.with_unary(inst.unary + lam * g.unary)


def bb_gradient(
    x: LiftedSolution,
    x_pert: LiftedSolution,
    lam: float = DEFAULT_LAMBDA,
    pairwise_grads: bool = True,
) -> CostGradient:
    """(x(c^lambda) - x(c)) / lambda over the full lifted vector."""
    _check_lambda(lam)
    shape = (x.x.n1, x.x.n2)
    if (x_pert.x.n1, x_pert.x.n2) != shape:
        raise ShapeMismatchError(f"solutions have shapes {shape} and {(x_pert.x.n1, x_pert.x.n2)}")

    unary = np.zeros(shape)
    for i, s in x_pert.x.pairs - x.x.pairs:
        unary[i, s] += 1.0 / lam
    for i, s in x.x.pairs - x_pert.x.pairs:
        unary[i, s] -= 1.0 / lam

    pairwise: Dict[EdgeKey, float] = {}
    if pairwise_grads:
        for (i, s), (j, l) in x_pert.y - x.y:
            pairwise[((i, j), (s, l))] = 1.0 / lam
        for (i, s), (j, l) in x.y - x_pert.y:
            pairwise[((i, j), (s, l))] = -1.0 / lam
    return CostGradient(unary, pairwise)


def differentiate(
    inst: QapInstance,
    x: Matching,
    g: LossGrad,
    cfg: SolverConfig,
    lam: float = DEFAULT_LAMBDA,
    pairwise_grads: bool = True,
    tracker: Optional[CallTracker] = None,
) -> CostGradient:
    """One backward pass: perturb, re-solve (warm-started from x), difference."""
    perturbed = perturb_costs(inst, g, lam)
    if tracker is not None:
        tracker.spend("perturbed")
    x_pert = solve(perturbed, cfg, warm_start=x)
    return bb_gradient(lift(x, inst), lift(x_pert, inst), lam, pairwise_grads)
