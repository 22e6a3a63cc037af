"""Volume and mask I/O, isotropic resampling, physical-space interpolation.

Container format is a MetaImage subset: a text header (``Key = Value`` per
line) next to a raw little-endian blob, x-fastest ordering. Coordinates are
physical millimetres with voxel centers at ``origin + index * spacing``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, TruncationError

INTENSITY_FILL_HU = -1000.0
MASK_FILL = 0.0

_ELEMENT_TYPES = {
    "MET_UCHAR": np.uint8,
    "MET_SHORT": np.int16,
    "MET_FLOAT": np.float32,
}
_REQUIRED_KEYS = ("NDims", "DimSize", "ElementSpacing", "ElementType", "ElementDataFile")


@dataclass
class Volume:
    """3D scalar grid with physical spacing (mm). ``data[x, y, z]``."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    data: np.ndarray
    kind: str = "intensity"  # "intensity" (HU) or "mask" (0/1)

    def __post_init__(self) -> None:
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        self.data = np.asarray(self.data)
        if self.data.shape != self.dims:
            raise ValueError(f"data shape {self.data.shape} != dims {self.dims}")
        if self.kind not in ("intensity", "mask"):
            raise ValueError(f"unknown volume kind {self.kind!r}")
        if self.kind == "mask" and not np.isin(self.data, (0, 1)).all():
            raise ValueError("mask volume contains values outside {0, 1}")

    @property
    def fill_value(self) -> float:
        return MASK_FILL if self.kind == "mask" else INTENSITY_FILL_HU

    def index_to_mm(self, idx: np.ndarray) -> np.ndarray:
        """Voxel index (possibly fractional) to physical mm."""
        return np.asarray(self.origin) + np.asarray(idx, dtype=float) * np.asarray(self.spacing)

    def mm_to_index(self, p: np.ndarray) -> np.ndarray:
        """Physical mm to continuous voxel index."""
        return (np.asarray(p, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)


def _parse_header(text: str, path: Path) -> dict:
    fields: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed header line {line!r}")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    known = {
        "NDims", "DimSize", "ElementSpacing", "Offset", "ElementType",
        "ElementByteOrderMSB", "ElementDataFile",
    }
    for key in fields:
        if key not in known:
            warnings.warn(f"{path}: ignoring unknown header key {key!r}")
    for key in _REQUIRED_KEYS:
        if key not in fields:
            raise FormatError(f"{path}: missing required header key {key!r}")
    return fields


def read_volume(path: str | Path) -> Volume:
    """Read a MetaImage-subset header plus its raw data file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FormatError(f"cannot read header {path}: {exc}") from exc
    fields = _parse_header(text, path)

    if fields["NDims"] != "3":
        raise FormatError(f"{path}: NDims must be 3, got {fields['NDims']}")
    try:
        dims = tuple(int(t) for t in fields["DimSize"].split())
        spacing = tuple(float(t) for t in fields["ElementSpacing"].split())
        origin = tuple(float(t) for t in fields.get("Offset", "0 0 0").split())
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header value: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise FormatError(f"{path}: DimSize/ElementSpacing/Offset must have 3 entries")
    elem = fields["ElementType"]
    if elem not in _ELEMENT_TYPES:
        raise FormatError(f"{path}: unsupported ElementType {elem}")
    dtype = np.dtype(_ELEMENT_TYPES[elem])
    msb = fields.get("ElementByteOrderMSB", "False")
    if msb not in ("True", "False"):
        raise FormatError(f"{path}: ElementByteOrderMSB must be True or False")
    if msb == "True":
        dtype = dtype.newbyteorder(">")
    else:
        dtype = dtype.newbyteorder("<")

    data_path = path.parent / fields["ElementDataFile"]
    if not data_path.exists():
        raise FormatError(f"{path}: data file {data_path} does not exist")
    raw = np.fromfile(data_path, dtype=dtype)
    n = dims[0] * dims[1] * dims[2]
    if raw.size < n:
        raise TruncationError(
            f"{data_path}: expected {n} elements of {dtype}, found {raw.size}")
    if raw.size > n:
        raise FormatError(
            f"{data_path}: expected {n} elements of {dtype}, found {raw.size}")
    # File order is x-fastest; reshape as (z, y, x) C-order then expose [x, y, z].
    data = raw.reshape(dims[2], dims[1], dims[0]).transpose(2, 1, 0)

    kind = "intensity"
    if elem == "MET_UCHAR" and np.isin(data, (0, 1)).all():
        kind = "mask"
    return Volume(dims=dims, spacing=spacing, origin=origin, data=data, kind=kind)


def write_volume(v: Volume, path: str | Path) -> None:
    """Write header + raw blob. Little-endian, x-fastest; bit-exact round trip."""
    path = Path(path)
    dtype = v.data.dtype.newbyteorder("<")
    elem = None
    for name, dt in _ELEMENT_TYPES.items():
        if np.dtype(dt) == v.data.dtype.newbyteorder("="):
            elem = name
            break
    if elem is None:
        raise FormatError(f"no MetaImage element type for dtype {v.data.dtype}")
    data_name = path.stem + ".raw"
    header = (
        f"NDims = 3\n"
        f"DimSize = {v.dims[0]} {v.dims[1]} {v.dims[2]}\n"
        f"ElementSpacing = {v.spacing[0]:.9g} {v.spacing[1]:.9g} {v.spacing[2]:.9g}\n"
        f"Offset = {v.origin[0]:.9g} {v.origin[1]:.9g} {v.origin[2]:.9g}\n"
        f"ElementType = {elem}\n"
        f"ElementByteOrderMSB = False\n"
        f"ElementDataFile = {data_name}\n"
    )
    path.write_text(header)
    # [x, y, z] -> x-fastest stream
    v.data.transpose(2, 1, 0).astype(dtype).tofile(path.parent / data_name)


def trilinear_sample(v: Volume, p: np.ndarray, fill_value: float | None = None,
                     clamp: bool = False) -> np.ndarray:
    """Trilinear blend of the 8 nearest voxels at physical point(s) ``p`` (mm).

    ``p`` is a length-3 point or an (n, 3) array. Points outside the volume
    extent (voxels as cells) return the fill value; points in the outer
    half-voxel shell clamp to the edge sample. ``clamp=True`` extends edge
    values everywhere instead of filling (used by resampling).
    """
    if fill_value is None:
        fill_value = v.fill_value
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    u = (pts - np.asarray(v.origin)) / np.asarray(v.spacing)
    dims = np.asarray(v.dims)
    if clamp:
        outside = np.zeros(len(u), dtype=bool)
    else:
        outside = ((u < -0.5) | (u > dims - 0.5)).any(axis=1)
    uc = np.clip(u, 0.0, dims - 1.0)
    i0 = np.floor(uc).astype(int)
    i0 = np.minimum(i0, dims - 2)
    i0 = np.maximum(i0, 0)
    f = uc - i0
    data = v.data
    if dims.min() == 1:
        # Degenerate axis: duplicate the single plane so the 8-corner blend works.
        reps = np.where(dims == 1, 2, 1)
        data = np.tile(data, reps)
        i0 = np.where(dims == 1, 0, i0)
        f = np.where(dims == 1, 0.0, f)
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    c = data.astype(float)
    val = (
        c[x0, y0, z0] * (1 - fx) * (1 - fy) * (1 - fz)
        + c[x0 + 1, y0, z0] * fx * (1 - fy) * (1 - fz)
        + c[x0, y0 + 1, z0] * (1 - fx) * fy * (1 - fz)
        + c[x0, y0, z0 + 1] * (1 - fx) * (1 - fy) * fz
        + c[x0 + 1, y0 + 1, z0] * fx * fy * (1 - fz)
        + c[x0 + 1, y0, z0 + 1] * fx * (1 - fy) * fz
        + c[x0, y0 + 1, z0 + 1] * (1 - fx) * fy * fz
        + c[x0 + 1, y0 + 1, z0 + 1] * fx * fy * fz
    )
    val[outside] = fill_value
    return val[0] if np.asarray(p).ndim == 1 else val


def nearest_sample(v: Volume, p: np.ndarray, fill_value: float | None = None,
                   clamp: bool = False) -> np.ndarray:
    """Nearest-neighbor sample at physical point(s); mask-preserving."""
    if fill_value is None:
        fill_value = v.fill_value
    pts = np.atleast_2d(np.asarray(p, dtype=float))
    u = (pts - np.asarray(v.origin)) / np.asarray(v.spacing)
    dims = np.asarray(v.dims)
    if clamp:
        outside = np.zeros(len(u), dtype=bool)
    else:
        outside = ((u < -0.5) | (u > dims - 0.5)).any(axis=1)
    idx = np.clip(np.rint(u).astype(int), 0, dims - 1)
    val = v.data[idx[:, 0], idx[:, 1], idx[:, 2]].astype(float)
    val[outside] = fill_value
    return val[0] if np.asarray(p).ndim == 1 else val


def resample_isotropic(v: Volume, target_spacing: float) -> Volume:
    """Resample to cubic voxels of ``target_spacing`` mm.

    Output dims are ``ceil(dims * spacing / t)`` per axis; intensity volumes
    interpolate trilinearly, masks use nearest neighbor and stay binary.
    """
    t = float(target_spacing)
    if t <= 0:
        raise ValueError(f"target spacing must be positive, got {target_spacing}")
    new_dims = tuple(
        int(math.ceil(d * s / t)) for d, s in zip(v.dims, v.spacing))
    ax = [np.arange(n) * t + o for n, o in zip(new_dims, v.origin)]
    gx, gy, gz = np.meshgrid(*ax, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    if v.kind == "mask":
        vals = nearest_sample(v, pts, clamp=True)
        data = (vals.reshape(new_dims) > 0.5).astype(np.uint8)
    else:
        # Interpolated values are no longer integral; keep them as floats.
        data = trilinear_sample(v, pts, clamp=True).reshape(new_dims).astype(np.float32)
    return Volume(dims=new_dims, spacing=(t, t, t), origin=v.origin, data=data, kind=v.kind)
