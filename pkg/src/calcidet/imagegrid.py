"""CT volume and label-map data model, physical-space resampling, slab
reconstruction, and file IO.

Grid convention used throughout the package: arrays are indexed (z, y, x),
``origin`` is the physical position (mm) of the center of voxel (0, 0, 0),
and voxel (i, j, k) sits at ``origin + (i, j, k) * spacing``. All resampling
is defined on these physical coordinates; out-of-range samples clamp to the
nearest edge voxel (border replication).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import ClassCodeError, GridError, HeaderError, PayloadSizeError

HU_AIR = -1000.0
CALCIUM_THRESHOLD_HU = 130.0


class ClassCode(IntEnum):
    """Anatomical label codes. Coronary left main is folded into LAD."""

    BACKGROUND = 0
    LAD = 1
    LCX = 2
    RCA = 3
    TAC = 4
    AORTIC_VALVE = 5
    MITRAL_VALVE = 6


CALCIUM_CODES = tuple(c for c in ClassCode if c != ClassCode.BACKGROUND)
CORONARY_CODES = (ClassCode.LAD, ClassCode.LCX, ClassCode.RCA)

CLASS_NAMES = {
    ClassCode.BACKGROUND: "background",
    ClassCode.LAD: "LAD",
    ClassCode.LCX: "LCX",
    ClassCode.RCA: "RCA",
    ClassCode.TAC: "TAC",
    ClassCode.AORTIC_VALVE: "aortic_valve",
    ClassCode.MITRAL_VALVE: "mitral_valve",
}
NUM_CLASSES = len(ClassCode)


def _check_triple(name: str, value) -> tuple[float, float, float]:
    t = tuple(float(v) for v in value)
    if len(t) != 3:
        raise GridError(f"{name} must have 3 components (z, y, x), got {value!r}")
    return t


@dataclass(frozen=True)
class CtVolume:
    """3D grid of HU intensities with physical spacing metadata.

    data: (z, y, x) array of HU values
    spacing: voxel spacing in mm, (z, y, x)
    origin: physical position of the first voxel center, mm (z, y, x)
    slice_thickness: reconstructed slice thickness in mm (may exceed
        spacing[0] for overlapping slices)
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    slice_thickness: float = field(default=0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise GridError(f"volume data must be 3D with extents >= 1, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise GridError("volume contains non-finite HU values")
        spacing = _check_triple("spacing", self.spacing)
        origin = _check_triple("origin", self.origin)
        if min(spacing) <= 0:
            raise GridError(f"spacing components must be positive, got {spacing}")
        thickness = float(self.slice_thickness) if self.slice_thickness else spacing[0]
        if thickness <= 0:
            raise GridError(f"slice_thickness must be positive, got {thickness}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "slice_thickness", thickness)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def same_grid(self, other) -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.spacing, other.spacing, atol=1e-6)
            and np.allclose(self.origin, other.origin, atol=1e-6)
        )


@dataclass(frozen=True)
class LabelMap:
    """3D grid of class codes aligned to a CtVolume grid."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise GridError(f"label data must be 3D with extents >= 1, got shape {data.shape}")
        if data.dtype != np.uint8:
            if not np.issubdtype(data.dtype, np.integer):
                raise ClassCodeError(f"label codes must be integers, got dtype {data.dtype}")
            data = data.astype(np.uint8)
        if data.size and data.max() >= NUM_CLASSES:
            raise ClassCodeError(
                f"unknown class code {int(data.max())}; valid codes are 0..{NUM_CLASSES - 1}"
            )
        spacing = _check_triple("spacing", self.spacing)
        origin = _check_triple("origin", self.origin)
        if min(spacing) <= 0:
            raise GridError(f"spacing components must be positive, got {spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_mm3(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    def same_grid(self, other) -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.spacing, other.spacing, atol=1e-6)
            and np.allclose(self.origin, other.origin, atol=1e-6)
        )


def normalize_hu(values: np.ndarray) -> np.ndarray:
    """Map HU to the network input range: clamp to [-1000, 3000], scale to [0, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float32), -1000.0, 3000.0)
    return (v + 1000.0) / 4000.0


# ---------------------------------------------------------------------------
# Slab reconstruction
# ---------------------------------------------------------------------------

def reconstruct_slabs(v: CtVolume, thickness: float, spacing: float) -> CtVolume:
    """Rebuild thick axial slabs from thin slices.

    Output slab k is the arithmetic mean of all input slices whose centers
    fall within [k*spacing, k*spacing + thickness) measured from the first
    input slice center. A trailing partial slab averages whatever slices are
    available so the volume extent is preserved. The output origin shifts by
    thickness/2 so that slab centers sit at window centers.
    """
    if thickness <= 0 or spacing <= 0:
        raise GridError("slab thickness and spacing must be positive")
    dz = v.spacing[0]
    if dz > thickness + 1e-9:
        raise GridError(
            f"input slice spacing {dz} mm exceeds slab thickness {thickness} mm"
        )
    nz = v.shape[0]
    if nz * dz < thickness - 1e-9:
        raise GridError("volume too thin: z extent smaller than one slab")

    last_center = (nz - 1) * dz
    n_out = max(1, math.floor((last_center - thickness) / spacing + 1e-9) + 2)
    centers = np.arange(nz) * dz
    slabs = np.empty((n_out,) + v.shape[1:], dtype=np.float32)
    for k in range(n_out):
        lo = k * spacing
        sel = (centers >= lo - 1e-9) & (centers < lo + thickness - 1e-9)
        if not sel.any():
            raise GridError(f"slab window {k} contains no input slices")
        slabs[k] = v.data[sel].mean(axis=0)
    origin = (v.origin[0] + thickness / 2.0, v.origin[1], v.origin[2])
    return CtVolume(
        data=slabs,
        spacing=(spacing, v.spacing[1], v.spacing[2]),
        origin=origin,
        slice_thickness=thickness,
    )


# ---------------------------------------------------------------------------
# In-plane bilinear resampling
# ---------------------------------------------------------------------------

def _axis_coords(n_in: int, d_in: float, target: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Fractional source indices for one resampled axis, edge-clamped."""
    extent = (n_in - 1) * d_in
    n_out = int(math.floor(extent / target + 1e-9)) + 1
    pos = np.arange(n_out) * target / d_in
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = (pos - i0).astype(np.float32)
    return i0, i1, w, n_out


def resample_inplane(v: CtVolume, target: float) -> CtVolume:
    """Bilinearly resample every axial slice to ``target`` mm spacing in y and x.

    The z axis is untouched. The output grid keeps the input origin; sample
    positions outside the source extent clamp to the border.
    """
    if target <= 0:
        raise GridError("target spacing must be positive")
    _, dy, dx = v.spacing
    if abs(dy - target) < 1e-9 and abs(dx - target) < 1e-9:
        return v
    ny, nx = v.shape[1], v.shape[2]
    j0, j1, wy, ny_out = _axis_coords(ny, dy, target)
    k0, k1, wx, nx_out = _axis_coords(nx, dx, target)
    wy = wy[:, None]
    wx = wx[None, :]

    out = np.empty((v.shape[0], ny_out, nx_out), dtype=np.float32)
    for z in range(v.shape[0]):
        s = v.data[z].astype(np.float32, copy=False)
        top = s[np.ix_(j0, k0)] * (1 - wx) + s[np.ix_(j0, k1)] * wx
        bot = s[np.ix_(j1, k0)] * (1 - wx) + s[np.ix_(j1, k1)] * wx
        out[z] = top * (1 - wy) + bot * wy
    return CtVolume(
        data=out,
        spacing=(v.spacing[0], target, target),
        origin=v.origin,
        slice_thickness=v.slice_thickness,
    )


def resample_labels_to(labels: LabelMap, target_grid: CtVolume | LabelMap) -> LabelMap:
    """Nearest-neighbor resample a label map onto another grid.

    Every target voxel takes the code of the physically nearest source voxel;
    codes are never interpolated.
    """
    for axis in range(3):
        src_lo = labels.origin[axis]
        src_hi = labels.origin[axis] + (labels.shape[axis] - 1) * labels.spacing[axis]
        tgt_lo = target_grid.origin[axis]
        tgt_hi = target_grid.origin[axis] + (target_grid.shape[axis] - 1) * target_grid.spacing[axis]
        if tgt_hi < src_lo - 1e-9 or src_hi < tgt_lo - 1e-9:
            raise GridError("disjoint physical extents: label grid does not overlap target grid")

    idx = []
    for axis in range(3):
        pos = target_grid.origin[axis] + np.arange(target_grid.shape[axis]) * target_grid.spacing[axis]
        i = np.rint((pos - labels.origin[axis]) / labels.spacing[axis]).astype(np.intp)
        idx.append(np.clip(i, 0, labels.shape[axis] - 1))
    data = labels.data[np.ix_(idx[0], idx[1], idx[2])]
    return LabelMap(data=data, spacing=target_grid.spacing, origin=target_grid.origin)


# ---------------------------------------------------------------------------
# Container IO
#
# A grid is stored as a small UTF-8 key/value header plus a raw little-endian
# payload (x fastest, then y, then z). Header fields: format, version, kind,
# dims, spacing_mm, origin_mm, slice_thickness_mm (volumes only),
# element_type, byte_order, data_file.
# ---------------------------------------------------------------------------

FORMAT_NAME = "calcidet-grid"
FORMAT_VERSION = 1
_ELEMENT_DTYPES = {"int16": np.dtype("<i2"), "uint8": np.dtype("<u1")}


def _write_container(path: Path, kind: str, data: np.ndarray, element_type: str,
                     spacing, origin, slice_thickness=None) -> None:
    path = Path(path)
    raw_name = path.name + ".raw"
    lines = [
        f"format: {FORMAT_NAME}",
        f"version: {FORMAT_VERSION}",
        f"kind: {kind}",
        "dims: {} {} {}".format(*data.shape),
        "spacing_mm: {:.6f} {:.6f} {:.6f}".format(*spacing),
        "origin_mm: {:.6f} {:.6f} {:.6f}".format(*origin),
    ]
    if slice_thickness is not None:
        lines.append(f"slice_thickness_mm: {slice_thickness:.6f}")
    lines += [
        f"element_type: {element_type}",
        "byte_order: little",
        f"data_file: {raw_name}",
    ]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    payload = np.ascontiguousarray(data, dtype=_ELEMENT_DTYPES[element_type])
    (path.parent / raw_name).write_bytes(payload.tobytes())


def _read_header(path: Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    fields = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if ":" not in line:
            raise HeaderError(f"{path}: malformed header line {lineno}: {line!r}")
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    for required in ("format", "version", "kind", "dims", "spacing_mm", "origin_mm",
                     "element_type", "byte_order", "data_file"):
        if required not in fields:
            raise HeaderError(f"{path}: missing header field {required!r}")
    if fields["format"] != FORMAT_NAME:
        raise HeaderError(f"{path}: unknown format {fields['format']!r}")
    if fields["byte_order"] != "little":
        raise HeaderError(f"{path}: unsupported byte order {fields['byte_order']!r}")
    if fields["element_type"] not in _ELEMENT_DTYPES:
        raise HeaderError(f"{path}: unsupported element type {fields['element_type']!r}")
    return fields


def _read_payload(path: Path, fields: dict) -> np.ndarray:
    dims = tuple(int(x) for x in fields["dims"].split())
    if len(dims) != 3 or min(dims) < 1:
        raise HeaderError(f"{path}: invalid dims {fields['dims']!r}")
    dtype = _ELEMENT_DTYPES[fields["element_type"]]
    raw_path = Path(path).parent / fields["data_file"]
    raw = raw_path.read_bytes()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise PayloadSizeError(
            f"{raw_path}: size mismatch: got {len(raw)} bytes, expected {expected}"
        )
    return np.frombuffer(raw, dtype=dtype).reshape(dims).copy()


def save_volume(v: CtVolume, path) -> None:
    """Write a volume as header + int16 raw payload. HU are rounded to integers."""
    data = np.rint(np.asarray(v.data, dtype=np.float64))
    if data.min() < -32768 or data.max() > 32767:
        raise GridError("HU values out of int16 range")
    _write_container(Path(path), "volume", data.astype(np.int16), "int16",
                     v.spacing, v.origin, v.slice_thickness)


def load_volume(path) -> CtVolume:
    fields = _read_header(Path(path))
    if fields["kind"] != "volume":
        raise HeaderError(f"{path}: expected kind 'volume', got {fields['kind']!r}")
    if "slice_thickness_mm" not in fields:
        raise HeaderError(f"{path}: missing header field 'slice_thickness_mm'")
    data = _read_payload(Path(path), fields)
    return CtVolume(
        data=data,
        spacing=tuple(float(x) for x in fields["spacing_mm"].split()),
        origin=tuple(float(x) for x in fields["origin_mm"].split()),
        slice_thickness=float(fields["slice_thickness_mm"]),
    )


def save_labels(l: LabelMap, path) -> None:
    _write_container(Path(path), "labels", l.data, "uint8", l.spacing, l.origin)


def load_labels(path) -> LabelMap:
    fields = _read_header(Path(path))
    if fields["kind"] != "labels":
        raise HeaderError(f"{path}: expected kind 'labels', got {fields['kind']!r}")
    data = _read_payload(Path(path), fields)
    if data.size and data.max() >= NUM_CLASSES:
        raise ClassCodeError(
            f"{path}: unknown class code {int(data.max())}; valid codes are 0..{NUM_CLASSES - 1}"
        )
    return LabelMap(
        data=data,
        spacing=tuple(float(x) for x in fields["spacing_mm"].split()),
        origin=tuple(float(x) for x in fields["origin_mm"].split()),
    )
