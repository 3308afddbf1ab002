from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Sequence, Union

import numpy as np

from .errors import DatasetFormatError

PathLike = Union[str, "os.PathLike[str]"]


def hexfloat(value: float) -> str:
    """Bit-exact text form of a float (`float.hex`)."""
    return float(value).hex()


def unhexfloat(text: Any, where: str) -> float:
    if not isinstance(text, str):
        raise DatasetFormatError(f"{where}: expected a hex float string, got {type(text).__name__}")
    try:
        return float.fromhex(text)
    except ValueError as exc:
        raise DatasetFormatError(f"{where}: malformed hex float {text!r}") from exc


def encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": [hexfloat(v) for v in arr.ravel()]}


def decode_array(payload: Any, where: str) -> np.ndarray:
    if not isinstance(payload, dict) or "shape" not in payload or "data" not in payload:
        raise DatasetFormatError(f"{where}: expected {{shape, data}} array")
    shape: Sequence[int] = payload["shape"]
    data: List[Any] = payload["data"]
    values = [unhexfloat(v, f"{where}.data[{k}]") for k, v in enumerate(data)]
    if int(np.prod(shape)) != len(values):
        raise DatasetFormatError(f"{where}: shape {list(shape)} does not hold {len(values)} values")
    return np.array(values, dtype=np.float64).reshape(shape)


@dataclass(frozen=True)
class Envelope:
    """Versioned top-level wrapper for dataset and checkpoint files."""

    kind: str
    schema_version: int
    payload: dict

    @classmethod
    def load(cls, content: Any, kind: str, supported: int) -> "Envelope":
        if not isinstance(content, dict):
            raise DatasetFormatError(f"top level of a {kind} file must be an object")
        if content.get("kind", kind) != kind:
            raise DatasetFormatError(f"expected a {kind} file, got kind={content.get('kind')!r}")
        version = content.get("schema_version")
        if version != supported:
            raise DatasetFormatError(f"unsupported {kind} schema_version {version!r} (expected {supported})")
        return cls(kind=kind, schema_version=version, payload=content)

    def dump(self) -> dict:
        return {"kind": self.kind, "schema_version": self.schema_version, **self.payload}


def write_json(path: PathLike, content: dict) -> Path:
    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as fh:
        json.dump(content, fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")
    return target


def read_json(path: PathLike) -> Any:
    target = Path(path)
    try:
        with target.open("r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{target}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise DatasetFormatError(f"{target}: {exc.strerror or exc}") from exc
