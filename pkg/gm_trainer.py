"""
Unsupervised training loop: cycle-consistency loss back-propagated through
matching solvers into the cost model.

Per triple of sets: build three instances, solve them, score the cycle
loss, perturb unary costs along its gradient, re-solve, and chain the
black-box cost gradients through the cost head. Gradients are summed over
the batch and applied with one Adam step.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from gm_blackbox import DEFAULT_LAMBDA, LossGrad, differentiate
from gm_costmodel import (
    DEFAULT_HALVING_PERIOD,
    DEFAULT_LR,
    AdamState,
    CostModelParams,
    ParamGradient,
    adam_step,
    backward,
    build_instance,
)
from gm_cycleloss import MatchingTriple, loss_gradient, total_loss
from gm_data import Dataset, accuracy, admissible_pairs, admissible_triples, f1, filter_common
from gm_instances import KeypointSet, Matching, QapInstance
from gm_solvers import SolverConfig, solve
from utils import CallTracker, get_logger
from utils.errors import (
    CallLimitError,
    ConfigError,
    InstanceError,
    MatchingError,
    NoAdmissibleTripleError,
    TripleSolveError,
)
from utils.jsonio import PathLike
from utils.seeding import stream_rng

logger = get_logger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_COLUMNS = [
    "step",
    "cycle_loss",
    "accuracy_or_f1",
    "solver_calls",
    "wall_ms",
    "eval_accuracy_or_f1",
    "eval_cycle_loss",
]

InstanceBuilder = Callable[[KeypointSet, KeypointSet, bool], QapInstance]


class Regime(str, Enum):
    COMPLETE = "complete"
    INCOMPLETE = "incomplete"


@dataclass(frozen=True)
class TrainConfig:
    batch_triples: int = 12
    lam: float = DEFAULT_LAMBDA
    steps: int = 500
    lr: float = DEFAULT_LR
    halving_period: int = DEFAULT_HALVING_PERIOD
    solver: SolverConfig = field(default_factory=SolverConfig)
    eval_every: int = 50
    eval_triples: int = 20
    rng_seed: int = 0
    threads: int = 1
    regime: Union[Regime, str] = Regime.COMPLETE
    pairwise_grads: bool = True
    learn_c_hat: bool = False
    min_common: int = 3
    max_solver_calls: Optional[int] = None

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "regime", Regime(self.regime))
        except ValueError as exc:
            raise ConfigError(f"regime must be 'complete' or 'incomplete', got {self.regime!r}") from exc
        if self.batch_triples < 1:
            raise ConfigError(f"batch_triples must be >= 1, got {self.batch_triples}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        for name in ("steps", "eval_every", "eval_triples", "halving_period"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.min_common < 1:
            raise ConfigError(f"min_common must be >= 1, got {self.min_common}")
        if self.max_solver_calls is not None and self.max_solver_calls < 0:
            raise ConfigError(f"max_solver_calls must be >= 0, got {self.max_solver_calls}")

    @property
    def complete(self) -> bool:
        return self.regime is Regime.COMPLETE


@dataclass(frozen=True)
class TripleSample:
    set_ids: Tuple[str, str, str]
    sets: Tuple[KeypointSet, KeypointSet, KeypointSet]


@dataclass(frozen=True)
class TripleResult:
    loss: int
    score: float
    gradient: ParamGradient
    matchings: MatchingTriple


@dataclass(frozen=True)
class StepMetrics:
    step: int
    cycle_loss: float
    accuracy_or_f1: float
    solver_calls: int
    wall_ms: float


@dataclass(frozen=True)
class EvalSummary:
    metric: str
    mean_score: float
    pairs: int
    mean_cycle_loss: float
    triples: int

    def as_dict(self) -> Dict[str, Union[str, float, int]]:
        return asdict(self)


@dataclass
class TrainReport:
    """Append-only per-step log with the resolved run configuration."""

    lam: float
    config: Dict[str, object] = field(default_factory=dict)
    records: List[StepMetrics] = field(default_factory=list)
    evaluations: Dict[int, EvalSummary] = field(default_factory=dict)

    def append(self, metrics: StepMetrics) -> None:
        if self.records and metrics.step <= self.records[-1].step:
            raise ValueError(f"step {metrics.step} does not follow step {self.records[-1].step}")
        self.records.append(metrics)

    def cycle_losses(self) -> np.ndarray:
        return np.array([r.cycle_loss for r in self.records], dtype=np.float64)

    def header_lines(self) -> List[str]:
        return [
            f"# schema_version={REPORT_SCHEMA_VERSION}",
            f"# lambda={self.lam:g}",
            f"# config={json.dumps(self.config, sort_keys=True, default=str)}",
        ]

    def to_csv(self, path: PathLike) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in self.header_lines():
                fh.write(line + "\n")
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            for record in self.records:
                row = asdict(record)
                evaluation = self.evaluations.get(record.step)
                row["eval_accuracy_or_f1"] = "" if evaluation is None else f"{evaluation.mean_score:.6f}"
                row["eval_cycle_loss"] = "" if evaluation is None else f"{evaluation.mean_cycle_loss:.6f}"
                row["cycle_loss"] = f"{record.cycle_loss:.6f}"
                row["accuracy_or_f1"] = f"{record.accuracy_or_f1:.6f}"
                row["wall_ms"] = f"{record.wall_ms:.1f}"
                writer.writerow(row)
        logger.info("Training report written to %s", path)


def _admissible(ds: Dataset, min_common: int) -> List[Tuple[int, int, int]]:
    triples = list(admissible_triples(ds, min_common))
    if not triples:
        raise NoAdmissibleTripleError(
            f"dataset of {len(ds)} sets has no triple sharing {min_common} common keypoints"
        )
    return triples


def _make_sample(ds: Dataset, idx: Sequence[int], complete: bool) -> TripleSample:
    sets = tuple(ds.sets[k] for k in idx)
    if complete:
        sets = tuple(filter_common(sets))
    return TripleSample(tuple(ks.set_id for ks in sets), sets)  # type: ignore[arg-type]


def sample_triple(
    ds: Dataset,
    rng: np.random.Generator,
    min_common: int = 3,
    complete: bool = False,
) -> TripleSample:
    """Uniformly drawn admissible triple of distinct sets."""
    triples = _admissible(ds, min_common)
    return _make_sample(ds, triples[int(rng.integers(len(triples)))], complete)


def sample_batch(
    ds: Dataset,
    rng: np.random.Generator,
    size: int,
    min_common: int = 3,
    complete: bool = False,
    admissible: Optional[Sequence[Tuple[int, int, int]]] = None,
) -> List[TripleSample]:
    """`size` triples, distinct within the batch when enough are admissible."""
    triples = list(admissible) if admissible is not None else _admissible(ds, min_common)
    picks = rng.choice(len(triples), size=size, replace=len(triples) < size)
    return [_make_sample(ds, triples[int(k)], complete) for k in picks]


def _score(m: Matching, ks1: KeypointSet, ks2: KeypointSet, complete: bool) -> float:
    if not (ks1.has_labels and ks2.has_labels):
        return float("nan")
    return accuracy(m, ks1, ks2) if complete else f1(m, ks1, ks2)


def triple_gradient(
    sample: TripleSample,
    params: CostModelParams,
    cfg: TrainConfig,
    tracker: Optional[CallTracker] = None,
) -> TripleResult:
    """Forward and backward pass for one triple: exactly six solver calls."""
    ks1, ks2, ks3 = sample.sets
    legs = ((ks1, ks2), (ks2, ks3), (ks3, ks1))
    instances = [build_instance(a, b, params, cfg.complete) for a, b in legs]

    forward = []
    for inst in instances:
        if tracker is not None:
            tracker.spend("forward")
        try:
            forward.append(solve(inst, cfg.solver))
        except MatchingError as exc:
            raise TripleSolveError(sample.set_ids, "forward", exc) from exc

    triple = MatchingTriple(*forward)
    loss = total_loss(triple)
    grads = loss_gradient(triple)

    total = ParamGradient.zeros_like(params)
    for (a, b), inst, x, g in zip(legs, instances, forward, grads):
        try:
            cost_grad = differentiate(inst, x, LossGrad(g), cfg.solver, cfg.lam, cfg.pairwise_grads, tracker)
        except CallLimitError:
            raise
        except MatchingError as exc:
            raise TripleSolveError(sample.set_ids, "perturbed", exc) from exc
        total = total + backward(a, b, params, cost_grad)

    score = float(np.mean([_score(x, a, b, cfg.complete) for (a, b), x in zip(legs, forward)]))
    logger.debug("triple %s: loss %d, score %.3f", sample.set_ids, loss, score)
    return TripleResult(loss, score, total, triple)


def _finite_mean(values: Sequence[float]) -> float:
    finite = [v for v in values if np.isfinite(v)]
    return float(np.mean(finite)) if finite else float("nan")


def _map(executor: Optional[Executor], fn, items):
    if executor is None:
        return [fn(item) for item in items]
    return list(executor.map(fn, items))


def train_step(
    batch: Sequence[TripleSample],
    params: CostModelParams,
    adam: AdamState,
    cfg: TrainConfig,
    tracker: Optional[CallTracker] = None,
    executor: Optional[Executor] = None,
) -> Tuple[CostModelParams, AdamState, StepMetrics]:
    """One optimisation step over a batch of triples."""
    if not batch:
        raise ConfigError("training batch is empty")
    tracker = tracker if tracker is not None else CallTracker()
    started = time.perf_counter()
    calls_before = tracker.used

    results = _map(executor, lambda sample: triple_gradient(sample, params, cfg, tracker), batch)

    grad = ParamGradient.zeros_like(params)
    for result in results:
        grad = grad + result.gradient
    if not cfg.learn_c_hat:
        grad = grad.without_c_hat()
    new_params, new_adam = adam_step(params, grad, adam)

    metrics = StepMetrics(
        step=adam.step,
        cycle_loss=float(np.mean([r.loss for r in results])),
        accuracy_or_f1=_finite_mean([r.score for r in results]),
        solver_calls=tracker.used - calls_before,
        wall_ms=(time.perf_counter() - started) * 1000.0,
    )
    return new_params, new_adam, metrics


def evaluate(
    ds: Dataset,
    params: Optional[CostModelParams],
    solver: SolverConfig,
    regime: Union[Regime, str] = Regime.COMPLETE,
    num_triples: int = 20,
    seed: int = 0,
    min_common: int = 3,
    executor: Optional[Executor] = None,
    tracker: Optional[CallTracker] = None,
    instance_builder: Optional[InstanceBuilder] = None,
) -> EvalSummary:
    """Mean accuracy (complete) or F1 (incomplete) over admissible pairs, plus
    the mean cycle loss over `num_triples` sampled triples."""
    if len(ds) == 0:
        raise InstanceError("cannot evaluate an empty dataset")
    complete = Regime(regime) is Regime.COMPLETE
    if instance_builder is None:
        if params is None:
            raise ConfigError("evaluate needs either params or an instance builder")
        instance_builder = lambda a, b, full: build_instance(a, b, params, full)  # noqa: E731

    def solve_pair(pair: Tuple[KeypointSet, KeypointSet]) -> Matching:
        if tracker is not None:
            tracker.spend("eval")
        return solve(instance_builder(pair[0], pair[1], complete), solver)

    pairs = []
    for a, b in admissible_pairs(ds, min_common):
        sets = (ds.sets[a], ds.sets[b])
        pairs.append(tuple(filter_common(sets)) if complete else sets)
    matchings = _map(executor, solve_pair, pairs)
    scores = [_score(m, a, b, complete) for m, (a, b) in zip(matchings, pairs)]

    triples = list(admissible_triples(ds, min_common))
    losses: List[int] = []
    if triples and num_triples:
        rng = stream_rng(seed, "eval")
        samples = sample_batch(ds, rng, num_triples, min_common, complete, admissible=triples)

        def triple_loss(sample: TripleSample) -> int:
            ks1, ks2, ks3 = sample.sets
            legs = [solve_pair(leg) for leg in ((ks1, ks2), (ks2, ks3), (ks3, ks1))]
            return total_loss(MatchingTriple(*legs))

        losses = _map(executor, triple_loss, samples)

    summary = EvalSummary(
        metric="accuracy" if complete else "f1",
        mean_score=_finite_mean(scores),
        pairs=len(scores),
        mean_cycle_loss=float(np.mean(losses)) if losses else float("nan"),
        triples=len(losses),
    )
    logger.info(
        "Evaluation: mean %s %.4f over %d pairs, mean cycle loss %.3f over %d triples",
        summary.metric,
        summary.mean_score,
        summary.pairs,
        summary.mean_cycle_loss,
        summary.triples,
    )
    return summary


def train(
    ds: Dataset,
    params: CostModelParams,
    cfg: TrainConfig,
    tracker: Optional[CallTracker] = None,
    provenance: Optional[Dict[str, object]] = None,
) -> Tuple[CostModelParams, TrainReport]:
    """Run `cfg.steps` training steps; a pure function of (ds, params, cfg)."""
    tracker = tracker if tracker is not None else CallTracker(limit=cfg.max_solver_calls)
    report = TrainReport(lam=cfg.lam, config=provenance if provenance is not None else {"train": asdict(cfg)})
    if cfg.steps == 0:
        logger.info("No training steps requested; parameters unchanged")
        return params, report

    triples = _admissible(ds, cfg.min_common)
    rng = stream_rng(cfg.rng_seed, "sampling")
    adam = AdamState(lr=cfg.lr, halving_period=cfg.halving_period)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for step in range(cfg.steps):
            batch = sample_batch(ds, rng, cfg.batch_triples, cfg.min_common, cfg.complete, admissible=triples)
            params, adam, metrics = train_step(batch, params, adam, cfg, tracker, pool)
            report.append(metrics)
            logger.info(
                "step %d: cycle loss %.3f, %s %.3f, lr %.2e, %d solver calls",
                metrics.step,
                metrics.cycle_loss,
                "accuracy" if cfg.complete else "f1",
                metrics.accuracy_or_f1,
                adam.lr_at(metrics.step),
                metrics.solver_calls,
            )
            if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
                report.evaluations[metrics.step] = evaluate(
                    ds,
                    params,
                    cfg.solver,
                    cfg.regime,
                    cfg.eval_triples,
                    cfg.rng_seed,
                    cfg.min_common,
                    pool,
                    tracker,
                )
    return params, report
