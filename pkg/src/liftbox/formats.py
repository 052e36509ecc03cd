"""File formats: depth rasters, PLY clouds, camera and box JSON.

Depth rasters
    .png  16-bit grayscale, millimeters, 0 = no measurement. Values above
          65.535 m cannot be represented and saturate on write.
    .pfm  32-bit float, meters, grayscale ("Pf"). Non-positive and
          non-finite entries are treated as invalid. The scale field's
          sign carries endianness, as usual for PFM; rows are stored
          bottom-up.

Point clouds
    .ply  binary little-endian, float32 x/y/z, optionally uint32 u/v
          holding the source pixel of each point.

All writers go through an atomic temp-then-rename so a crash never leaves
a half-written file, and JSON is serialized with sorted keys so repeated
runs produce byte-identical output.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .annotate import Box2D, Box3D
from .errors import FormatError
from .geometry import CameraModel, DepthImage, PointCloud
from .gravity import NormalMap

# ---------------------------------------------------------------------------
# atomic writes and canonical JSON


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> None:
    atomic_write_bytes(path, dumps_json(obj).encode("utf-8"))


def read_json(path: str | Path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{path} is not valid JSON (line {exc.lineno}, column {exc.colno}): "
            f"{exc.msg}") from exc


# ---------------------------------------------------------------------------
# depth rasters


def write_depth(path: str | Path, depth: DepthImage) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        mm = np.zeros(depth.depths.shape, dtype=np.uint16)
        rounded = np.rint(depth.depths[depth.valid] * 1000.0)
        mm[depth.valid] = np.clip(rounded, 0, 65535).astype(np.uint16)
        buf = io.BytesIO()
        Image.fromarray(mm).save(buf, format="PNG")
        atomic_write_bytes(path, buf.getvalue())
    elif path.suffix.lower() == ".pfm":
        atomic_write_bytes(path, _encode_pfm(np.where(depth.valid, depth.depths, 0.0)))
    else:
        raise FormatError(f"unsupported depth format: {path.suffix!r} (use .png or .pfm)")


def read_depth(path: str | Path) -> DepthImage:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        try:
            img = Image.open(path)
            img.load()
        except (OSError, UnidentifiedImageError) as exc:
            raise FormatError(f"{path}: cannot decode PNG: {exc}") from exc
        if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
            raise FormatError(
                f"{path}: expected 16-bit grayscale PNG, got mode {img.mode!r}")
        raw = np.asarray(img)
        if raw.dtype not in (np.uint16, np.int32, np.uint32):
            raise FormatError(f"{path}: unexpected pixel type {raw.dtype}")
        if raw.min() < 0 or raw.max() > 65535:
            raise FormatError(f"{path}: pixel values exceed the 16-bit range")
        depths = raw.astype(np.float64) / 1000.0
        return DepthImage(depths=depths, valid=raw > 0)
    if suffix == ".pfm":
        data = _read_pfm(path)
        if data.ndim != 2:
            raise FormatError(f"{path}: depth PFM must be grayscale (Pf)")
        return DepthImage.from_array(data)
    raise FormatError(f"unsupported depth format: {path.suffix!r} (use .png or .pfm)")


def _encode_pfm(data: np.ndarray) -> bytes:
    """Grayscale or 3-channel PFM, little-endian (negative scale)."""
    if data.ndim == 2:
        magic = b"Pf"
        h, w = data.shape
    elif data.ndim == 3 and data.shape[2] == 3:
        magic = b"PF"
        h, w = data.shape[:2]
    else:
        raise FormatError(f"cannot encode array of shape {data.shape} as PFM")
    header = magic + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    return header + np.flipud(data).astype("<f4").tobytes()


def write_pfm(path: str | Path, data: np.ndarray) -> None:
    atomic_write_bytes(path, _encode_pfm(np.asarray(data, dtype=np.float64)))


def _read_pfm(path: str | Path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(blob):
        # header tokens are separated by single whitespace characters
        end = pos
        while end < len(blob) and blob[end:end + 1] not in b" \t\r\n":
            end += 1
        if end > pos:
            tokens.append(blob[pos:end])
        pos = end + 1
    if len(tokens) < 4 or tokens[0] not in (b"Pf", b"PF"):
        raise FormatError(f"{path}: not a PFM file")
    channels = 3 if tokens[0] == b"PF" else 1
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PFM header") from exc
    if w <= 0 or h <= 0 or scale == 0.0:
        raise FormatError(f"{path}: malformed PFM header ({w}x{h}, scale {scale})")
    dtype = "<f4" if scale < 0 else ">f4"
    expected = w * h * channels * 4
    payload = blob[pos:pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: truncated PFM payload "
                          f"({len(payload)} of {expected} bytes)")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(data.reshape(shape)).copy()


# ---------------------------------------------------------------------------
# normal maps


def read_normal_map(path: str | Path) -> NormalMap:
    """Load a 3-channel float normal map (.pfm, or .tif if decodable).

    Vectors are renormalized; zero-length or non-finite entries are
    marked invalid. No per-pixel origin depth is available from files,
    so clustering ties fall back to bin order.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pfm":
        data = _read_pfm(path)
        if data.ndim != 3:
            raise FormatError(f"{path}: normal map PFM must be 3-channel (PF)")
    elif suffix in (".tif", ".tiff"):
        try:
            img = Image.open(path)
            img.load()
        except (OSError, UnidentifiedImageError) as exc:
            raise FormatError(
                f"{path}: cannot decode TIFF ({exc}); 3-channel float TIFFs are "
                f"often unsupported by the bundled codec, convert to PFM") from exc
        data = np.asarray(img).astype(np.float64)
        if data.ndim != 3 or data.shape[2] != 3 or not np.issubdtype(
                np.asarray(img).dtype, np.floating):
            raise FormatError(
                f"{path}: expected a 3-channel float TIFF, got shape "
                f"{data.shape} dtype {np.asarray(img).dtype}; convert to PFM")
    else:
        raise FormatError(f"unsupported normal-map format: {path.suffix!r}")
    norm = np.linalg.norm(data, axis=-1)
    valid = np.isfinite(norm) & (norm > 1e-6) & np.all(np.isfinite(data), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = np.where(valid[..., None], data / norm[..., None], 0.0)
    return NormalMap(normals=normals, valid=valid, origin_depth=None)


# ---------------------------------------------------------------------------
# PLY point clouds

_PLY_TYPES = {
    "char": "i1", "uchar": "u1", "int8": "i1", "uint8": "u1",
    "short": "i2", "ushort": "u2", "int16": "i2", "uint16": "u2",
    "int": "i4", "uint": "u4", "int32": "i4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path: str | Path, cloud: PointCloud) -> None:
    """Binary little-endian PLY; provenance adds uint u/v properties."""
    n = len(cloud)
    has_prov = cloud.provenance is not None
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if has_prov:
        header += ["property uint u", "property uint v"]
    header.append("end_header")
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_prov:
        fields += [("u", "<u4"), ("v", "<u4")]
    rec = np.empty(n, dtype=fields)
    rec["x"] = cloud.points[:, 0].astype("<f4")
    rec["y"] = cloud.points[:, 1].astype("<f4")
    rec["z"] = cloud.points[:, 2].astype("<f4")
    if has_prov:
        rec["u"] = cloud.provenance[:, 0].astype("<u4")
        rec["v"] = cloud.provenance[:, 1].astype("<u4")
    atomic_write_bytes(path, "\n".join(header).encode("ascii") + b"\n" + rec.tobytes())


def read_ply(path: str | Path) -> PointCloud:
    """Read a binary little-endian PLY with float x/y/z (+ uint u/v)."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    body = blob[end + len(b"end_header\n"):]

    count = None
    fields: list[tuple[str, str]] = []
    fmt_ok = False
    in_vertex = False
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise FormatError(f"{path}: only binary little-endian PLY is supported, "
                                  f"got {parts[1]!r}")
            fmt_ok = True
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
            elif count is not None:
                break  # vertex data must come first for this reader
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise FormatError(f"{path}: list properties are not supported")
            if parts[1] not in _PLY_TYPES:
                raise FormatError(f"{path}: unknown property type {parts[1]!r}")
            fields.append((parts[2], "<" + _PLY_TYPES[parts[1]]))
    if not fmt_ok or count is None:
        raise FormatError(f"{path}: missing format or vertex element")
    names = [name for name, _ in fields]
    if not {"x", "y", "z"} <= set(names):
        raise FormatError(f"{path}: vertex element lacks x/y/z properties")
    dtype = np.dtype(fields)
    need = count * dtype.itemsize
    if len(body) < need:
        raise FormatError(f"{path}: truncated vertex data ({len(body)} of {need} bytes)")
    rec = np.frombuffer(body[:need], dtype=dtype)
    points = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    provenance = None
    if "u" in names and "v" in names:
        provenance = np.column_stack([rec["u"], rec["v"]]).astype(np.int64)
    return PointCloud(points=points, provenance=provenance)


# ---------------------------------------------------------------------------
# camera and box JSON


def write_camera(path: str | Path, camera: CameraModel) -> None:
    write_json(path, {
        "fx": camera.fx, "fy": camera.fy, "cx": camera.cx, "cy": camera.cy,
        "width": camera.width, "height": camera.height,
        "rotation": [float(v) for v in camera.rotation.reshape(-1)],
        "translation": [float(v) for v in camera.translation],
    })


def read_camera(path: str | Path) -> CameraModel:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: camera JSON must be an object")
    try:
        rotation = np.asarray(doc.get("rotation", np.eye(3).reshape(-1).tolist()),
                              dtype=np.float64).reshape(3, 3)
        translation = np.asarray(doc.get("translation", [0.0, 0.0, 0.0]),
                                 dtype=np.float64).reshape(3)
        return CameraModel(
            fx=float(doc["fx"]), fy=float(doc["fy"]),
            cx=float(doc["cx"]), cy=float(doc["cy"]),
            width=int(doc["width"]), height=int(doc["height"]),
            rotation=rotation, translation=translation)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad camera JSON: {exc}") from exc


def read_detections(path: str | Path) -> list[Box2D]:
    """2D detector output: a JSON array of {bbox, category, score}."""
    doc = read_json(path)
    if not isinstance(doc, list):
        raise FormatError(f"{path}: detections JSON must be an array")
    out = []
    for i, item in enumerate(doc):
        try:
            umin, vmin, umax, vmax = (float(v) for v in item["bbox"])
            out.append(Box2D(umin=umin, vmin=vmin, umax=umax, vmax=vmax,
                             category=str(item["category"]),
                             score=float(item.get("score", 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad detection at index {i}: {exc}") from exc
    return out


def _box3d_to_json(box: Box3D) -> dict:
    doc = {"center": list(box.center), "dims": list(box.dims),
           "yaw": box.yaw, "category": box.category}
    if box.score is not None:
        doc["score"] = box.score
    return doc


def _box3d_from_json(item: dict, where: str) -> Box3D:
    try:
        return Box3D(center=tuple(float(v) for v in item["center"]),
                     dims=tuple(float(v) for v in item["dims"]),
                     yaw=float(item["yaw"]),
                     category=str(item["category"]),
                     score=float(item["score"]) if "score" in item else None)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{where}: bad 3D box: {exc}") from exc


def write_annotations(path: str | Path, boxes: list[Box3D]) -> None:
    write_json(path, [_box3d_to_json(b) for b in boxes])


def read_annotations(path: str | Path) -> list[Box3D]:
    doc = read_json(path)
    if not isinstance(doc, list):
        raise FormatError(f"{path}: annotations JSON must be an array")
    return [_box3d_from_json(item, f"{path}[{i}]") for i, item in enumerate(doc)]


def write_box_set(path: str | Path, scenes: dict[str, list[Box3D]]) -> None:
    """Scene-keyed boxes, the unit consumed by the evaluation protocol."""
    write_json(path, {scene: [_box3d_to_json(b) for b in boxes]
                      for scene, boxes in scenes.items()})


def read_box_set(path: str | Path) -> dict[str, list[Box3D]]:
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: box-set JSON must map scene ids to arrays")
    out: dict[str, list[Box3D]] = {}
    for scene, items in doc.items():
        if not isinstance(items, list):
            raise FormatError(f"{path}: scene {scene!r} must hold an array")
        out[scene] = [_box3d_from_json(item, f"{path}:{scene}[{i}]")
                      for i, item in enumerate(items)]
    return out
