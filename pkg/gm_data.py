"""
Synthetic keypoint datasets with ground truth, dataset files, and matching metrics.

Every set is a rigidly moved, noisy, partially occluded view of one shared
universe of landmarks. Observations keep the landmark index as their
universe label; spurious outlier points carry OUTLIER_LABEL.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from gm_delaunay import delaunay
from gm_instances import KeypointSet, Matching
from utils import get_logger
from utils.errors import ConfigError, DatasetFormatError, GenerationError, InstanceError
from utils.jsonio import Envelope, PathLike, hexfloat, read_json, unhexfloat, write_json
from utils.seeding import stream_rng

logger = get_logger(__name__)

DATASET_SCHEMA_VERSION = 1
OUTLIER_LABEL = -1
MIN_POINTS = 3

__all__ = [
    "DATASET_SCHEMA_VERSION",
    "OUTLIER_LABEL",
    "Dataset",
    "SyntheticConfig",
    "accuracy",
    "admissible_pairs",
    "admissible_triples",
    "common_labels",
    "delaunay",
    "f1",
    "filter_common",
    "generate",
    "load_dataset",
    "save_dataset",
]


@dataclass(frozen=True)
class SyntheticConfig:
    universe_size: int = 10
    num_sets: int = 20
    coord_noise_sigma: float = 0.02
    feature_dim: int = 16
    feature_noise_sigma: float = 0.1
    occlusion_rate: float = 0.0
    outlier_rate: float = 0.0
    rng_seed: int = 0
    visible_points: Optional[int] = None
    clutter_dim: int = 0
    clutter_sigma: float = 1.0
    min_common: int = 3
    max_retries: int = 100

    def __post_init__(self) -> None:
        for name in ("universe_size", "num_sets", "feature_dim", "max_retries"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("occlusion_rate", "outlier_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        for name in ("coord_noise_sigma", "feature_noise_sigma", "clutter_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.clutter_dim < 0:
            raise ConfigError(f"clutter_dim must be >= 0, got {self.clutter_dim}")
        if self.min_common < 1:
            raise ConfigError(f"min_common must be >= 1, got {self.min_common}")
        if self.visible_points is not None and not 1 <= self.visible_points <= self.universe_size:
            raise ConfigError(
                f"visible_points must lie in [1, universe_size={self.universe_size}], got {self.visible_points}"
            )
        if self.visible_points is not None and self.occlusion_rate > 0:
            raise ConfigError("visible_points and occlusion_rate are alternatives; set only one")

    @property
    def total_feature_dim(self) -> int:
        return self.feature_dim + self.clutter_dim


@dataclass(frozen=True)
class Dataset:
    sets: Tuple[KeypointSet, ...]
    universe_size: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "sets", tuple(self.sets))
        ids = [ks.set_id for ks in self.sets]
        if len(set(ids)) != len(ids):
            raise InstanceError("dataset contains duplicate set ids")
        for ks in self.sets:
            if ks.universe_labels is None:
                continue
            bad = [v for v in ks.universe_labels if v != OUTLIER_LABEL and not 0 <= v < self.universe_size]
            if bad:
                raise InstanceError(f"set {ks.set_id}: labels {bad} outside [0, {self.universe_size})")

    def __len__(self) -> int:
        return len(self.sets)

    def by_id(self, set_id: str) -> KeypointSet:
        for ks in self.sets:
            if ks.set_id == set_id:
                return ks
        raise KeyError(set_id)

    @property
    def has_labels(self) -> bool:
        return bool(self.sets) and all(ks.has_labels for ks in self.sets)


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _sample_set(
    cfg: SyntheticConfig,
    rng: np.random.Generator,
    landmarks: np.ndarray,
    prototypes: np.ndarray,
) -> Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """One observation of the universe, or None when too few points survive."""
    u = cfg.universe_size
    rot = _rotation(rng.uniform(0.0, 2.0 * math.pi))
    shift = rng.uniform(-1.0, 1.0, size=2)
    if cfg.visible_points is not None:
        visible = np.sort(rng.choice(u, size=cfg.visible_points, replace=False))
    else:
        visible = np.flatnonzero(rng.random(u) >= cfg.occlusion_rate)
    n_out = int(rng.binomial(u, cfg.outlier_rate))
    if len(visible) + n_out < MIN_POINTS or len(visible) < cfg.min_common:
        return None

    moved = landmarks @ rot.T + shift
    coords = moved[visible] + rng.normal(0.0, cfg.coord_noise_sigma, size=(len(visible), 2))
    feats = prototypes[visible] + rng.normal(0.0, cfg.feature_noise_sigma, size=(len(visible), cfg.feature_dim))
    if n_out:
        lo, hi = moved.min(axis=0), moved.max(axis=0)
        coords = np.vstack([coords, rng.uniform(lo, hi, size=(n_out, 2))])
        feats = np.vstack([feats, rng.normal(0.0, 1.0, size=(n_out, cfg.feature_dim))])
    n = len(coords)
    if cfg.clutter_dim:
        feats = np.hstack([feats, rng.normal(0.0, cfg.clutter_sigma, size=(n, cfg.clutter_dim))])

    labels = np.concatenate([visible, np.full(n_out, OUTLIER_LABEL)]).astype(int)
    order = rng.permutation(n)
    return coords[order], feats[order], labels[order]


def generate(cfg: SyntheticConfig) -> Dataset:
    """Deterministic synthetic dataset for `cfg.rng_seed`."""
    rng = stream_rng(cfg.rng_seed, "dataset")
    landmarks = rng.uniform(0.0, 1.0, size=(cfg.universe_size, 2))
    prototypes = rng.normal(0.0, 1.0, size=(cfg.universe_size, cfg.feature_dim))

    sets: List[KeypointSet] = []
    for k in range(cfg.num_sets):
        sample = None
        for attempt in range(cfg.max_retries):
            sample = _sample_set(cfg, rng, landmarks, prototypes)
            if sample is not None:
                break
            logger.debug("set %d attempt %d left too few points; resampling", k, attempt + 1)
        if sample is None:
            raise GenerationError(
                f"set {k}: no draw kept {cfg.min_common} landmarks within {cfg.max_retries} attempts "
                f"(occlusion_rate={cfg.occlusion_rate}, visible_points={cfg.visible_points})"
            )
        coords, feats, labels = sample
        sets.append(KeypointSet(f"set{k:03d}", coords, feats, delaunay(coords), tuple(int(v) for v in labels)))

    ds = Dataset(tuple(sets), cfg.universe_size)
    if len(ds) >= 3 and not any(True for _ in admissible_triples(ds, cfg.min_common)):
        raise GenerationError(f"no triple of sets shares {cfg.min_common} common landmarks")
    logger.info(
        "Generated %d sets over a universe of %d landmarks (%d points, %d edges)",
        len(ds),
        cfg.universe_size,
        sum(ks.n for ks in ds.sets),
        sum(len(ks.edges) for ks in ds.sets),
    )
    return ds


def _labels(ks: KeypointSet) -> Tuple[int, ...]:
    if ks.universe_labels is None:
        raise InstanceError(f"set {ks.set_id} has no ground-truth labels")
    return ks.universe_labels


def common_labels(*sets: KeypointSet) -> List[int]:
    """Landmark labels present in every given set, ascending."""
    if not sets:
        return []
    common = set(_labels(sets[0]))
    for ks in sets[1:]:
        common &= set(_labels(ks))
    common.discard(OUTLIER_LABEL)
    return sorted(common)


def admissible_triples(ds: Dataset, min_common: int = 3) -> Iterable[Tuple[int, int, int]]:
    for a, b, c in combinations(range(len(ds)), 3):
        if len(common_labels(ds.sets[a], ds.sets[b], ds.sets[c])) >= min_common:
            yield a, b, c


def admissible_pairs(ds: Dataset, min_common: int = 3) -> Iterable[Tuple[int, int]]:
    for a, b in combinations(range(len(ds)), 2):
        if len(common_labels(ds.sets[a], ds.sets[b])) >= min_common:
            yield a, b


def filter_common(sets: Sequence[KeypointSet]) -> List[KeypointSet]:
    """Keep only keypoints whose label occurs in every set, then re-triangulate."""
    keep = set(common_labels(*sets))
    filtered = []
    for ks in sets:
        idx = [r for r, label in enumerate(_labels(ks)) if label in keep]
        points = ks.points[idx]
        filtered.append(
            KeypointSet(
                ks.set_id,
                points,
                ks.features[idx],
                delaunay(points),
                tuple(ks.universe_labels[r] for r in idx),
            )
        )
    return filtered


def _correct(pred: Matching, ks1: KeypointSet, ks2: KeypointSet) -> int:
    labels1, labels2 = _labels(ks1), _labels(ks2)
    if (pred.n1, pred.n2) != (ks1.n, ks2.n):
        raise InstanceError(f"matching {pred.n1}x{pred.n2} does not fit sets of size {ks1.n}x{ks2.n}")
    return sum(1 for i, s in pred.pairs if labels1[i] == labels2[s] and labels1[i] != OUTLIER_LABEL)


def accuracy(pred: Matching, ks1: KeypointSet, ks2: KeypointSet) -> float:
    """Correct predicted pairs over the number of landmarks the two sets share."""
    correct = _correct(pred, ks1, ks2)
    possible = len(common_labels(ks1, ks2))
    if possible == 0:
        return 1.0 if len(pred) == 0 else 0.0
    return correct / possible


def f1(pred: Matching, ks1: KeypointSet, ks2: KeypointSet) -> float:
    correct = _correct(pred, ks1, ks2)
    possible = len(common_labels(ks1, ks2))
    if len(pred) == 0 and possible == 0:
        return 1.0
    if len(pred) == 0 or possible == 0 or correct == 0:
        return 0.0
    precision = correct / len(pred)
    recall = correct / possible
    return 2.0 * precision * recall / (precision + recall)


def _hex_rows(arr: np.ndarray) -> List[List[str]]:
    return [[hexfloat(v) for v in row] for row in arr]


def _unhex_rows(rows: Any, where: str, width: Optional[int] = None) -> np.ndarray:
    if not isinstance(rows, list):
        raise DatasetFormatError(f"{where}: expected a list of rows")
    values = []
    for r, row in enumerate(rows):
        if not isinstance(row, list) or (width is not None and len(row) != width):
            raise DatasetFormatError(f"{where}[{r}]: expected a row of {width or 'equal'} values")
        values.append([unhexfloat(v, f"{where}[{r}][{c}]") for c, v in enumerate(row)])
    if values and len({len(row) for row in values}) != 1:
        raise DatasetFormatError(f"{where}: rows have unequal lengths")
    return np.array(values, dtype=np.float64)


def save_dataset(path: PathLike, ds: Dataset, config: Optional[SyntheticConfig] = None) -> None:
    payload: Dict[str, Any] = {
        "universe_size": ds.universe_size,
        "sets": [
            {
                "set_id": ks.set_id,
                "points": _hex_rows(ks.points),
                "features": _hex_rows(ks.features),
                "edges": [list(edge) for edge in ks.edges],
                "labels": list(ks.universe_labels) if ks.universe_labels is not None else None,
            }
            for ks in ds.sets
        ],
    }
    if config is not None:
        payload["config"] = asdict(config)
    write_json(path, Envelope("dataset", DATASET_SCHEMA_VERSION, payload).dump())
    logger.info("Dataset with %d sets written to %s", len(ds), path)


def _decode_set(raw: Any, where: str) -> KeypointSet:
    if not isinstance(raw, dict):
        raise DatasetFormatError(f"{where}: expected an object")
    missing = [key for key in ("set_id", "points", "features", "edges") if key not in raw]
    if missing:
        raise DatasetFormatError(f"{where}: missing field(s) {missing}")
    points = _unhex_rows(raw["points"], f"{where}.points", width=2)
    features = _unhex_rows(raw["features"], f"{where}.features")
    if len(features) == 0:
        features = features.reshape(0, 0)
    edges = raw["edges"]
    if not isinstance(edges, list) or not all(isinstance(edge, list) and len(edge) == 2 for edge in edges):
        raise DatasetFormatError(f"{where}.edges: expected a list of [i, j] pairs")
    if any(isinstance(v, bool) or not isinstance(v, int) for edge in edges for v in edge):
        raise DatasetFormatError(f"{where}.edges: indices must be integers")
    labels = raw.get("labels")
    if labels is not None:
        if not isinstance(labels, list):
            raise DatasetFormatError(f"{where}.labels: expected a list or null")
        if any(isinstance(v, bool) or not isinstance(v, int) for v in labels):
            raise DatasetFormatError(f"{where}.labels: labels must be integers")
    try:
        return KeypointSet(
            str(raw["set_id"]),
            points.reshape(-1, 2),
            features,
            [tuple(edge) for edge in edges],
            tuple(labels) if labels is not None else None,
        )
    except (InstanceError, TypeError, ValueError, IndexError) as exc:
        raise DatasetFormatError(f"{where}: {exc}") from exc


def load_dataset(path: PathLike) -> Dataset:
    envelope = Envelope.load(read_json(path), "dataset", DATASET_SCHEMA_VERSION)
    content = envelope.payload
    if "universe_size" not in content or not isinstance(content.get("sets"), list):
        raise DatasetFormatError(f"{path}: dataset needs 'universe_size' and a 'sets' list")
    sets = tuple(_decode_set(raw, f"sets[{k}]") for k, raw in enumerate(content["sets"]))
    try:
        ds = Dataset(sets, int(content["universe_size"]))
    except (InstanceError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    logger.debug("Loaded %d sets from %s", len(ds), path)
    return ds
