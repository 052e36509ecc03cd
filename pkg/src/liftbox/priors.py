"""Category size priors: typical (L, W, H) per object class.

The prior table is a plain JSON object mapping category names to three
positive numbers in meters. Keys starting with an underscore are
metadata; "_source" should say where the numbers come from. The package
ships a starter table under data/size_priors.json but any table with the
same shape works.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

from .errors import FormatError, InvalidArgumentError


def _norm_key(category: str) -> str:
    return category.strip().lower()


@dataclass(frozen=True)
class SizePriorDB:
    """Lookup of per-category reference dimensions (meters)."""

    dims: dict[str, tuple[float, float, float]]
    source: str | None = None

    def get(self, category: str) -> tuple[float, float, float] | None:
        return self.dims.get(_norm_key(category))

    def categories(self) -> list[str]:
        return sorted(self.dims)

    def __len__(self) -> int:
        return len(self.dims)


def load_priors(data: bytes | str) -> SizePriorDB:
    """Parse a size-prior JSON document.

    Raises FormatError (never anything rawer) on malformed bytes, bad
    JSON, non-object roots, duplicate categories after normalization, or
    entries that are not three positive finite numbers.
    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"size priors are not valid UTF-8: {exc}") from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"size priors are not valid JSON (line {exc.lineno}, column {exc.colno}): "
            f"{exc.msg}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"size priors must be a JSON object, got {type(doc).__name__}")

    dims: dict[str, tuple[float, float, float]] = {}
    source = None
    for key, value in doc.items():
        if not isinstance(key, str):  # pragma: no cover - json keys are str
            raise FormatError("size prior keys must be strings")
        if key.startswith("_"):
            if key == "_source":
                if not isinstance(value, str):
                    raise FormatError('"_source" must be a string')
                source = value
            continue
        norm = _norm_key(key)
        if not norm:
            raise FormatError(f"empty category name: {key!r}")
        if norm in dims:
            raise FormatError(f"duplicate category after normalization: {norm!r}")
        if (not isinstance(value, (list, tuple)) or len(value) != 3
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                           for x in value)):
            raise FormatError(f"category {key!r}: expected [L, W, H] numbers, got {value!r}")
        triple = tuple(float(x) for x in value)
        if not all(math.isfinite(x) and x > 0 for x in triple):
            raise FormatError(f"category {key!r}: dimensions must be positive and finite")
        dims[norm] = triple
    return SizePriorDB(dims=dims, source=source)


def read_priors(path: str | Path) -> SizePriorDB:
    """load_priors on a file's bytes, with the path in error messages.

    When the document carries no "_source" entry, the file path fills in.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read size priors {path}: {exc}") from exc
    try:
        db = load_priors(raw)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if db.source is None:
        db = SizePriorDB(dims=db.dims, source=str(path))
    return db


def default_priors_path() -> Path:
    """Path of the starter prior table shipped with the package."""
    return Path(resources.files(__package__) / "data" / "size_priors.json")


def volume_ratio(box, ref_dims: Iterable[float]) -> float:
    """Volume of a box divided by the volume of reference dimensions.

    `box` may be a Box3D or any (L, W, H) triple. A ratio of 1 means the
    fitted box matches the reference volume exactly.
    """
    dims = getattr(box, "dims", box)
    dims = tuple(float(d) for d in dims)
    ref = tuple(float(d) for d in ref_dims)
    if len(dims) != 3 or len(ref) != 3:
        raise InvalidArgumentError("both dimension triples must have length 3")
    if not all(math.isfinite(d) and d > 0 for d in dims + ref):
        raise InvalidArgumentError(
            f"dimensions must be positive and finite, got {dims} / {ref}")
    return (dims[0] * dims[1] * dims[2]) / (ref[0] * ref[1] * ref[2])
