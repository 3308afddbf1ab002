"""
Differentiable cost head.

Node embeddings z_i = F_i W_node, edge embeddings y_ij = (F_i - F_j) W_edge,
shared across all keypoint sets. Costs for a minimising solver:

    c_is      = -(<z1_i/|z1_i|, z2_s/|z2_s|> + c_hat)
    c_is,jl   = -<y1_ij/|y1_ij|, y2_sl/|y2_sl|>

so higher similarity means lower cost and a larger c_hat leaves fewer
points unassigned. The backward pass is the closed-form chain rule through
these expressions; parameters are updated with Adam.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

import numpy as np

from gm_blackbox import CostGradient
from gm_instances import KeypointSet, QapInstance
from utils import get_logger
from utils.errors import DatasetFormatError, ShapeMismatchError
from utils.jsonio import Envelope, PathLike, decode_array, encode_array, hexfloat, read_json, unhexfloat, write_json

logger = get_logger(__name__)

NORM_EPS = 1e-12
DEFAULT_C_HAT = 0.257
DEFAULT_LR = 2e-3
DEFAULT_HALVING_PERIOD = 200
CHECKPOINT_SCHEMA_VERSION = 1
PARAM_NAMES = ("node_proj", "edge_proj", "c_hat")


@dataclass(frozen=True, eq=False)
class CostModelParams:
    node_proj: np.ndarray
    edge_proj: np.ndarray
    c_hat: float = DEFAULT_C_HAT

    def __post_init__(self) -> None:
        node = np.array(self.node_proj, dtype=np.float64)
        edge = np.array(self.edge_proj, dtype=np.float64)
        if node.ndim != 2 or edge.ndim != 2 or node.shape[1] < 1 or edge.shape[1] < 1:
            raise ShapeMismatchError(f"projections must be D x E matrices, got {node.shape} and {edge.shape}")
        if node.shape[0] != edge.shape[0]:
            raise ShapeMismatchError(f"projections disagree on feature dimension: {node.shape} vs {edge.shape}")
        if not (np.all(np.isfinite(node)) and np.all(np.isfinite(edge)) and np.isfinite(self.c_hat)):
            raise ShapeMismatchError("cost model parameters must be finite")
        node.setflags(write=False)
        edge.setflags(write=False)
        object.__setattr__(self, "node_proj", node)
        object.__setattr__(self, "edge_proj", edge)
        object.__setattr__(self, "c_hat", float(self.c_hat))

    @property
    def feature_dim(self) -> int:
        return int(self.node_proj.shape[0])

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"node_proj": self.node_proj, "edge_proj": self.edge_proj, "c_hat": np.array(self.c_hat)}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CostModelParams):
            return NotImplemented
        return (
            np.array_equal(self.node_proj, other.node_proj)
            and np.array_equal(self.edge_proj, other.edge_proj)
            and self.c_hat == other.c_hat
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class ParamGradient:
    d_node_proj: np.ndarray
    d_edge_proj: np.ndarray
    d_c_hat: float = 0.0

    @classmethod
    def zeros_like(cls, p: CostModelParams) -> "ParamGradient":
        return cls(np.zeros_like(p.node_proj), np.zeros_like(p.edge_proj), 0.0)

    def __add__(self, other: "ParamGradient") -> "ParamGradient":
        return ParamGradient(
            self.d_node_proj + other.d_node_proj,
            self.d_edge_proj + other.d_edge_proj,
            self.d_c_hat + other.d_c_hat,
        )

    def without_c_hat(self) -> "ParamGradient":
        return replace(self, d_c_hat=0.0)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"node_proj": self.d_node_proj, "edge_proj": self.d_edge_proj, "c_hat": np.array(self.d_c_hat)}

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.d_node_proj) or np.any(self.d_edge_proj) or self.d_c_hat)


@dataclass(frozen=True)
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halving_period: int = DEFAULT_HALVING_PERIOD
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def lr_at(self, step: int) -> float:
        """Initial rate halved every `halving_period` steps (0 disables halving)."""
        if self.halving_period <= 0:
            return self.lr
        return self.lr * 0.5 ** (step // self.halving_period)


def init_params(
    feature_dim: int,
    embed_dim: int,
    rng: np.random.Generator,
    c_hat: float = DEFAULT_C_HAT,
    scale: Optional[float] = None,
) -> CostModelParams:
    """Gaussian projections with std 1/sqrt(D) unless `scale` is given."""
    std = scale if scale is not None else 1.0 / np.sqrt(feature_dim)
    return CostModelParams(
        rng.normal(0.0, std, size=(feature_dim, embed_dim)),
        rng.normal(0.0, std, size=(feature_dim, embed_dim)),
        c_hat,
    )


def identity_params(feature_dim: int, c_hat: float = DEFAULT_C_HAT) -> CostModelParams:
    return CostModelParams(np.eye(feature_dim), np.eye(feature_dim), c_hat)


def _check_dim(ks: KeypointSet, p: CostModelParams) -> None:
    if ks.n and ks.dim != p.feature_dim:
        raise ShapeMismatchError(f"set {ks.set_id} has feature dim {ks.dim}, parameters expect {p.feature_dim}")


def _edge_differences(ks: KeypointSet) -> np.ndarray:
    if not ks.edges:
        return np.zeros((0, ks.features.shape[1]))
    idx = np.array(ks.edges)
    return ks.features[idx[:, 0]] - ks.features[idx[:, 1]]


def embed(ks: KeypointSet, p: CostModelParams) -> Tuple[np.ndarray, np.ndarray]:
    """Node embeddings (n x E) and edge embeddings (|edges| x E), edges in `ks.edges` order."""
    _check_dim(ks, p)
    return ks.features @ p.node_proj, _edge_differences(ks) @ p.edge_proj


def _normalize(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(v, axis=1)
    return v / (norms + NORM_EPS)[:, None], norms


def _normalize_backward(v: np.ndarray, norms: np.ndarray, d_hat: np.ndarray) -> np.ndarray:
    """Pull d/dv_hat back through v_hat = v / (|v| + eps)."""
    denom = norms + NORM_EPS
    radial = np.einsum("ij,ij->i", v, d_hat)
    safe = np.where(norms > 0, norms, 1.0)
    coeff = np.where(norms > 0, radial / (safe * denom**2), 0.0)
    return d_hat / denom[:, None] - v * coeff[:, None]


def _oriented(edge: Tuple[int, int]) -> Tuple[Tuple[int, int], float]:
    s, l = edge
    return ((s, l), 1.0) if s < l else ((l, s), -1.0)


def build_instance(
    ks1: KeypointSet,
    ks2: KeypointSet,
    p: CostModelParams,
    complete: bool = False,
) -> QapInstance:
    z1, y1 = embed(ks1, p)
    z2, y2 = embed(ks2, p)
    zh1, _ = _normalize(z1)
    zh2, _ = _normalize(z2)
    unary = -(zh1 @ zh2.T + p.c_hat)

    pairwise = {}
    if ks1.edges and ks2.edges:
        yh1, _ = _normalize(y1)
        yh2, _ = _normalize(y2)
        sim = yh1 @ yh2.T
        for a, (i, j) in enumerate(ks1.edges):
            for b, (s, l) in enumerate(ks2.edges):
                pairwise[((i, j), (s, l))] = -sim[a, b]
                pairwise[((i, j), (l, s))] = sim[a, b]
    return QapInstance(unary, pairwise, complete, ks1.edges, ks2.edges)


def backward(ks1: KeypointSet, ks2: KeypointSet, p: CostModelParams, cg: CostGradient) -> ParamGradient:
    """dL/dparams given dL/dc for the instance `build_instance(ks1, ks2, p)`."""
    if cg.unary_grad.shape != (ks1.n, ks2.n):
        raise ShapeMismatchError(f"cost gradient {cg.unary_grad.shape} does not match {(ks1.n, ks2.n)}")
    z1, y1 = embed(ks1, p)
    z2, y2 = embed(ks2, p)
    zh1, zn1 = _normalize(z1)
    zh2, zn2 = _normalize(z2)

    g = cg.unary_grad
    dz1 = _normalize_backward(z1, zn1, -g @ zh2)
    dz2 = _normalize_backward(z2, zn2, -g.T @ zh1)
    d_node = ks1.features.T @ dz1 + ks2.features.T @ dz2
    d_c_hat = -float(g.sum())

    d_edge = np.zeros_like(p.edge_proj)
    if cg.pairwise_grad:
        index1 = {edge: a for a, edge in enumerate(ks1.edges)}
        index2 = {edge: b for b, edge in enumerate(ks2.edges)}
        gp = np.zeros((len(ks1.edges), len(ks2.edges)))
        for (edge1, edge2), value in cg.pairwise_grad.items():
            canon, sign = _oriented(edge2)
            if edge1 not in index1 or canon not in index2:
                raise ShapeMismatchError(f"pairwise gradient key {(edge1, edge2)} is not an edge pair of the instance")
            gp[index1[edge1], index2[canon]] += -sign * value
        yh1, yn1 = _normalize(y1)
        yh2, yn2 = _normalize(y2)
        dy1 = _normalize_backward(y1, yn1, gp @ yh2)
        dy2 = _normalize_backward(y2, yn2, gp.T @ yh1)
        d_edge = _edge_differences(ks1).T @ dy1 + _edge_differences(ks2).T @ dy2

    return ParamGradient(d_node, d_edge, d_c_hat)


def adam_step(p: CostModelParams, g: ParamGradient, st: AdamState) -> Tuple[CostModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state, inputs untouched."""
    params = p.as_dict()
    grads = g.as_dict()
    for name in PARAM_NAMES:
        if grads[name].shape != params[name].shape:
            raise ShapeMismatchError(f"gradient for {name} has shape {grads[name].shape}, expected {params[name].shape}")

    t = st.step + 1
    lr = st.lr_at(st.step)
    bc1 = 1.0 - st.beta1**t
    bc2 = 1.0 - st.beta2**t
    m: Dict[str, np.ndarray] = {}
    v: Dict[str, np.ndarray] = {}
    updated: Dict[str, np.ndarray] = {}
    for name in PARAM_NAMES:
        grad = grads[name]
        m[name] = st.beta1 * st.m.get(name, np.zeros_like(grad)) + (1.0 - st.beta1) * grad
        v[name] = st.beta2 * st.v.get(name, np.zeros_like(grad)) + (1.0 - st.beta2) * (grad * grad)
        denom = np.sqrt(v[name] / bc2) + st.eps
        updated[name] = params[name] - (lr / bc1) * m[name] / denom

    new_params = CostModelParams(updated["node_proj"], updated["edge_proj"], float(updated["c_hat"]))
    return new_params, replace(st, step=t, m=m, v=v)


def save_checkpoint(path: PathLike, p: CostModelParams, config: Optional[dict] = None) -> None:
    payload = {
        "node_proj": encode_array(p.node_proj),
        "edge_proj": encode_array(p.edge_proj),
        "c_hat": hexfloat(p.c_hat),
        "config": config or {},
    }
    write_json(path, Envelope("cost_model", CHECKPOINT_SCHEMA_VERSION, payload).dump())
    logger.info("Checkpoint written to %s", path)


def load_checkpoint(path: PathLike) -> CostModelParams:
    envelope = Envelope.load(read_json(path), "cost_model", CHECKPOINT_SCHEMA_VERSION)
    content = envelope.payload
    for key in PARAM_NAMES:
        if key not in content:
            raise DatasetFormatError(f"{path}: checkpoint is missing field {key!r}")
    try:
        return CostModelParams(
            decode_array(content["node_proj"], "node_proj"),
            decode_array(content["edge_proj"], "edge_proj"),
            unhexfloat(content["c_hat"], "c_hat"),
        )
    except ShapeMismatchError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
