#!/usr/bin/env python3
"""
Graph matching without ground truth: command-line entry point.

Subcommands:
  gen    generate a synthetic keypoint dataset
  train  learn cost-model parameters from cycle consistency alone
  eval   score a checkpoint against ground-truth labels
  solve  solve one matching instance (JSON file or a dataset pair)
  check  run the built-in verification suite

Settings come from built-in defaults, then an optional KEY=VALUE file
(--config), then GM_* environment variables (a local .env is loaded), then
flags. Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 failed check or internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from gm_blackbox import DEFAULT_LAMBDA
from gm_checks import run_checks
from gm_costmodel import (
    DEFAULT_C_HAT,
    DEFAULT_HALVING_PERIOD,
    DEFAULT_LR,
    CostModelParams,
    build_instance,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from gm_data import SyntheticConfig, filter_common, generate, load_dataset, save_dataset
from gm_instances import Matching, QapInstance, objective
from gm_solvers import DEFAULT_NODE_LIMIT, DEFAULT_TOLERANCE, LocalSearchConfig, SolverConfig, solve
from gm_trainer import EvalSummary, Regime, TrainConfig, evaluate, train
from utils import CallTracker, get_logger, setup_logging
from utils.config import env_values, read_config_file, resolve
from utils.errors import (
    ConfigError,
    DatasetFormatError,
    GenerationError,
    InfeasibleInstanceError,
    InstanceError,
    InvalidMatchingError,
    MatchingError,
    ShapeMismatchError,
    SolverRefusalError,
)
from utils.seeding import stream_rng, stream_seed

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3

DATA_ERRORS = (
    DatasetFormatError,
    GenerationError,
    InfeasibleInstanceError,
    InstanceError,
    InvalidMatchingError,
    ShapeMismatchError,
    SolverRefusalError,
    OSError,
)

CONFIG_ALIASES = {"lambda": "lam"}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # synthetic data
    universe_size: int = 10
    num_sets: int = 20
    coord_noise_sigma: float = 0.02
    feature_dim: int = 16
    feature_noise_sigma: float = 0.1
    occlusion_rate: float = 0.0
    outlier_rate: float = 0.0
    visible_points: Optional[int] = None
    clutter_dim: int = 0
    clutter_sigma: float = 1.0
    min_common: int = 3
    # training
    batch_triples: int = 12
    lam: float = DEFAULT_LAMBDA
    steps: int = 500
    lr: float = DEFAULT_LR
    halving_period: int = DEFAULT_HALVING_PERIOD
    eval_every: int = 50
    eval_triples: int = 20
    threads: int = 1
    regime: str = Regime.COMPLETE.value
    pairwise_grads: bool = True
    learn_c_hat: bool = False
    max_solver_calls: Optional[int] = None
    # solver
    solver: str = "qap_local"
    node_limit: int = DEFAULT_NODE_LIMIT
    max_passes: int = 200
    restarts: int = 2
    tolerance: float = DEFAULT_TOLERANCE
    # cost model
    embed_dim: Optional[int] = None
    c_hat: float = DEFAULT_C_HAT
    init_scale: Optional[float] = None
    # paths
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    report: Optional[str] = None
    output: Optional[str] = None
    log_file: Optional[str] = None

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(
            universe_size=self.universe_size,
            num_sets=self.num_sets,
            coord_noise_sigma=self.coord_noise_sigma,
            feature_dim=self.feature_dim,
            feature_noise_sigma=self.feature_noise_sigma,
            occlusion_rate=self.occlusion_rate,
            outlier_rate=self.outlier_rate,
            rng_seed=self.seed,
            visible_points=self.visible_points,
            clutter_dim=self.clutter_dim,
            clutter_sigma=self.clutter_sigma,
            min_common=self.min_common,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            kind=self.solver,
            node_limit=self.node_limit,
            local_search=LocalSearchConfig(self.max_passes, self.restarts, stream_seed(self.seed, "restarts")),
            tolerance=self.tolerance,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_triples=self.batch_triples,
            lam=self.lam,
            steps=self.steps,
            lr=self.lr,
            halving_period=self.halving_period,
            solver=self.solver_config(),
            eval_every=self.eval_every,
            eval_triples=self.eval_triples,
            rng_seed=self.seed,
            threads=self.threads,
            regime=self.regime,
            pairwise_grads=self.pairwise_grads,
            learn_c_hat=self.learn_c_hat,
            min_common=self.min_common,
            max_solver_calls=self.max_solver_calls,
        )

    def validate(self) -> "RunConfig":
        """Build every sub-config once so invalid values fail before any work."""
        self.synthetic_config()
        self.train_config()
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ConfigError(f"init_scale must be > 0, got {self.init_scale}")
        return self

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="KEY=VALUE settings file")
    common.add_argument("--seed", type=int, help="Run seed; all randomness derives from it (env: GM_SEED)")
    common.add_argument("--threads", type=int, help="Worker threads (env: GM_THREADS)")
    common.add_argument("--log-level", dest="log_level", help="Logging level (env: LOG_LEVEL)")
    common.add_argument("--log-file", dest="log_file", help="Mirror logs to this file")
    return common


def _solver_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--solver", choices=["lap", "qap_exact", "qap_local"], help="Matching solver (env: GM_SOLVER)")
    parser.add_argument("--node-limit", dest="node_limit", type=int, help="Exact solver size limit")
    parser.add_argument("--max-passes", dest="max_passes", type=int, help="Local search passes")
    parser.add_argument("--restarts", type=int, help="Local search restarts")


def _eval_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--regime", choices=[r.value for r in Regime], help="complete (accuracy) or incomplete (F1)")
    parser.add_argument("--eval-triples", dest="eval_triples", type=int, help="Triples sampled for cycle-loss statistics")
    parser.add_argument("--min-common", dest="min_common", type=int, help="Common keypoints required per pair/triple")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = _Parser(description="Unsupervised graph matching with a cycle-consistency loss.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common_options()
    opts = dict(parents=[common], argument_default=argparse.SUPPRESS)

    gen = sub.add_parser("gen", help="Generate a synthetic dataset", **opts)
    gen.add_argument("-o", "--output", required=True, help="Dataset JSON path")
    gen.add_argument("--universe", dest="universe_size", type=int, help="Landmarks in the universe")
    gen.add_argument("--sets", dest="num_sets", type=int, help="Keypoint sets to generate")
    gen.add_argument("--visible", dest="visible_points", type=int, help="Exactly this many landmarks per set (instead of --occlusion)")
    gen.add_argument("--occlusion", dest="occlusion_rate", type=float, help="Landmark drop probability")
    gen.add_argument("--outliers", dest="outlier_rate", type=float, help="Outlier rate per landmark slot")
    gen.add_argument("--coord-noise", dest="coord_noise_sigma", type=float)
    gen.add_argument("--feature-noise", dest="feature_noise_sigma", type=float)
    gen.add_argument("--feature-dim", dest="feature_dim", type=int)
    gen.add_argument("--clutter-dim", dest="clutter_dim", type=int, help="Nuisance feature channels")
    gen.add_argument("--clutter-sigma", dest="clutter_sigma", type=float)
    gen.add_argument("--min-common", dest="min_common", type=int)

    tr = sub.add_parser("train", help="Train the cost model without labels", **opts)
    tr.add_argument("--dataset", required=True, help="Dataset JSON")
    tr.add_argument("--checkpoint", required=True, help="Output checkpoint JSON")
    tr.add_argument("--report", help="Output CSV report")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--batch", dest="batch_triples", type=int, help="Triples per step")
    tr.add_argument("--lambda", dest="lam", type=float, help="Interpolation strength")
    tr.add_argument("--lr", type=float, help="Initial Adam learning rate")
    tr.add_argument("--halving-period", dest="halving_period", type=int, help="Steps between lr halvings (0 = never)")
    tr.add_argument("--eval-every", dest="eval_every", type=int, help="Evaluate every N steps (0 = never)")
    tr.add_argument("--embed-dim", dest="embed_dim", type=int)
    tr.add_argument("--c-hat", dest="c_hat", type=float, help="Unary offset")
    tr.add_argument("--init-scale", dest="init_scale", type=float)
    tr.add_argument("--learn-c-hat", dest="learn_c_hat", action="store_true")
    tr.add_argument("--no-pairwise-grads", dest="pairwise_grads", action="store_false")
    tr.add_argument("--max-solver-calls", dest="max_solver_calls", type=int)
    _solver_options(tr)
    _eval_options(tr)

    ev = sub.add_parser("eval", help="Evaluate a checkpoint against labels", **opts)
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("-o", "--output", help="Metrics CSV path")
    _solver_options(ev)
    _eval_options(ev)

    so = sub.add_parser("solve", help="Solve one matching instance", **opts)
    so.add_argument("--instance", help="Instance JSON: unary, pairwise [[[i,j],[s,l],c]...], complete")
    so.add_argument("--dataset", help="Dataset JSON (with --pair and --checkpoint)")
    so.add_argument("--checkpoint")
    so.add_argument("--pair", nargs=2, metavar=("SET_A", "SET_B"), help="Set ids to match")
    so.add_argument("--regime", choices=[r.value for r in Regime])
    so.add_argument("-o", "--output", help="Write the matching JSON here")
    _solver_options(so)

    ch = sub.add_parser("check", help="Run the verification suite", **opts)
    ch.add_argument("--trials", type=int, default=20, help="Random cases per check")
    ch.add_argument("--checkpoint", help="Also sanity-check this checkpoint")
    ch.add_argument("--dataset", help="Dataset the checkpoint must fit")

    return parser.parse_args(argv)


NON_CONFIG_ARGS = {"command", "config", "log_level", "trials", "instance", "pair"}


def build_run_config(args: argparse.Namespace) -> RunConfig:
    names = [f.name for f in fields(RunConfig)]
    file_layer = read_config_file(args.config) if getattr(args, "config", None) else {}
    env_layer = env_values(names + list(CONFIG_ALIASES))
    flag_layer = {key: value for key, value in vars(args).items() if key not in NON_CONFIG_ARGS}
    return resolve(RunConfig, file_layer, env_layer, flag_layer, aliases=CONFIG_ALIASES).validate()


def print_summary(title: str, rows: List[tuple]) -> None:
    width = max((len(str(k)) for k, _ in rows), default=0)
    print(title)
    print("-" * 60)
    for key, value in rows:
        print(f"{str(key):<{width}}  {value}")
    print("-" * 60)


def write_metrics_csv(path: str, summary: EvalSummary, extra: Dict[str, Any]) -> None:
    row = {**summary.as_dict(), **extra}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)


def _initial_params(run: RunConfig, feature_dim: int) -> CostModelParams:
    embed_dim = run.embed_dim or feature_dim
    return init_params(feature_dim, embed_dim, stream_rng(run.seed, "init"), run.c_hat, run.init_scale)


def cmd_gen(run: RunConfig, args: argparse.Namespace) -> int:
    cfg = run.synthetic_config()
    ds = generate(cfg)
    save_dataset(run.output, ds, cfg)
    print_summary(
        f"Wrote dataset: {run.output}",
        [
            ("sets", len(ds)),
            ("points", sum(ks.n for ks in ds.sets)),
            ("edges", sum(len(ks.edges) for ks in ds.sets)),
            ("feature dim", cfg.total_feature_dim),
        ],
    )
    return EXIT_OK


def cmd_train(run: RunConfig, args: argparse.Namespace) -> int:
    ds = load_dataset(run.dataset)
    if not ds.sets:
        raise InstanceError(f"{run.dataset}: dataset is empty")
    cfg = run.train_config()
    params = _initial_params(run, ds.sets[0].dim)
    tracker = CallTracker(limit=cfg.max_solver_calls)
    params, report = train(ds, params, cfg, tracker, provenance=run.as_dict())
    save_checkpoint(run.checkpoint, params, run.as_dict())
    if run.report:
        report.to_csv(run.report)
        print(f"Wrote report: {run.report}")
    rows = [("checkpoint", run.checkpoint), ("steps", len(report.records)), ("solver calls", tracker.used)]
    if report.records:
        rows.append(("final cycle loss", f"{report.records[-1].cycle_loss:.3f}"))
    print_summary("Training finished", rows)
    return EXIT_OK


def cmd_eval(run: RunConfig, args: argparse.Namespace) -> int:
    ds = load_dataset(run.dataset)
    params = load_checkpoint(run.checkpoint)
    summary = evaluate(
        ds,
        params,
        run.solver_config(),
        run.regime,
        run.eval_triples,
        run.seed,
        run.min_common,
    )
    print_summary(
        f"Evaluation of {run.checkpoint} on {run.dataset}",
        [
            (f"mean {summary.metric}", f"{summary.mean_score:.4f}"),
            ("pairs", summary.pairs),
            ("mean cycle loss", f"{summary.mean_cycle_loss:.3f}"),
            ("triples", summary.triples),
        ],
    )
    if run.output:
        write_metrics_csv(run.output, summary, {"checkpoint": run.checkpoint, "dataset": run.dataset})
        print(f"Wrote CSV: {run.output}")
    return EXIT_OK


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def read_instance(path: str) -> QapInstance:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            content = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(content, dict) or "unary" not in content:
        raise DatasetFormatError(f"{path}: instance needs a 'unary' matrix")
    unary = content["unary"]
    if not isinstance(unary, list) or not all(
        isinstance(row, list) and all(_is_number(v) for v in row) for row in unary
    ):
        raise DatasetFormatError(f"{path}: unary must be a list of numeric rows")
    pairwise = {}
    for k, entry in enumerate(content.get("pairwise", [])):
        try:
            (i, j), (s, l), cost = entry
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: pairwise[{k}] must be [[i, j], [s, l], cost]") from exc
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (i, j, s, l)) or not _is_number(cost):
            raise DatasetFormatError(f"{path}: pairwise[{k}] needs integer indices and a numeric cost")
        pairwise[((i, j), (s, l))] = cost
    try:
        return QapInstance(unary, pairwise, bool(content.get("complete", False)))
    except InstanceError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc


def cmd_solve(run: RunConfig, args: argparse.Namespace) -> int:
    instance_path = getattr(args, "instance", None)
    if instance_path:
        inst = read_instance(instance_path)
    else:
        pair = getattr(args, "pair", None)
        if not (run.dataset and run.checkpoint and pair):
            raise ConfigError("solve needs --instance, or --dataset with --checkpoint and --pair")
        ds = load_dataset(run.dataset)
        try:
            sets = [ds.by_id(set_id) for set_id in pair]
        except KeyError as exc:
            raise DatasetFormatError(f"{run.dataset}: no set with id {exc.args[0]!r}") from exc
        complete = run.regime == Regime.COMPLETE.value
        if complete:
            sets = filter_common(sets)
        inst = build_instance(sets[0], sets[1], load_checkpoint(run.checkpoint), complete)

    m: Matching = solve(inst, run.solver_config())
    result = {
        "solver": run.solver,
        "n1": m.n1,
        "n2": m.n2,
        "pairs": [list(p) for p in m.sort_key()],
        "objective": objective(inst, m),
    }
    text = json.dumps(result, indent=2)
    print(text)
    if run.output:
        Path(run.output).write_text(text + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_check(run: RunConfig, args: argparse.Namespace) -> int:
    params = load_checkpoint(run.checkpoint) if run.checkpoint else None
    feature_dim = None
    if run.dataset:
        ds = load_dataset(run.dataset)
        feature_dim = ds.sets[0].dim if ds.sets else None
    results = run_checks(run.seed, getattr(args, "trials", 20), params, feature_dim)
    print_summary("Verification", [(r.name, ("ok   " if r.passed else "FAIL ") + r.detail) for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "solve": cmd_solve,
    "check": cmd_check,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        run = build_run_config(args)
        setup_logging(getattr(args, "log_level", None), run.log_file)
        logger.info("Running %s (seed=%d)", args.command, run.seed)
        return COMMANDS[args.command](run, args)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        logger.error("Data error: %s", exc)
        return EXIT_DATA
    except MatchingError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
