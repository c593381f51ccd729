"""Height-field grids, normal maps and topography file I/O.

All lengths are millimeters internally; importers convert from micrometers.
Height fields are the common currency of the texture generators, the defect
imprinter and the renderer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

GRID_MAGIC = b"SYNH"
GRID_VERSION = 1


class GridError(ValueError):
    """Malformed grid data or grid file."""


class TopographyParseError(GridError):
    """xyz import failed; carries the offending 0-based row index when known."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


@dataclass(frozen=True)
class HeightField:
    """Scalar topography grid with square pixel spacing.

    data is a (rows, cols) float64 array of heights in mm, row-major;
    spacing_mm is the pixel pitch. The array is frozen after construction
    so instances can be shared across threads.
    """

    spacing_mm: float
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise GridError(f"height data must be a non-empty 2D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise GridError("height data contains non-finite values")
        if not (self.spacing_mm > 0):
            raise GridError(f"spacing_mm must be positive, got {self.spacing_mm}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "HeightField":
        """Same spacing, new values."""
        return HeightField(self.spacing_mm, data)


@dataclass(frozen=True)
class NormalMap:
    """Per-pixel unit normals of an upward-facing surface, (rows, cols, 3)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise GridError(f"normal map must have shape (rows, cols, 3), got {arr.shape}")
        norms = np.linalg.norm(arr, axis=2)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise GridError("normal map vectors must be unit length within 1e-6")
        if np.any(arr[:, :, 2] <= 0):
            raise GridError("normal map z components must be positive")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class FieldStats:
    """First/second moments plus range of a height field."""

    mean: float
    variance: float
    min: float
    max: float

    def __post_init__(self):
        if self.variance < 0:
            raise GridError("variance must be nonnegative")
        if not (self.min <= self.mean <= self.max):
            raise GridError("mean must lie within [min, max]")

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


def field_stats(hf: HeightField) -> FieldStats:
    """Sample statistics of a height field (variance with ddof=1)."""
    d = hf.data
    var = float(d.var(ddof=1)) if d.size > 1 else 0.0
    return FieldStats(mean=float(d.mean()), variance=var, min=float(d.min()), max=float(d.max()))


# ---------------------------------------------------------------------------
# topography import
# ---------------------------------------------------------------------------

def load_topography(path, format: str = "xyz-ascii") -> HeightField:
    """Load a measured topography into a HeightField.

    xyz-ascii: whitespace separated "x y z" per line in micrometers,
    row-major scan over a complete regular grid. grid-container: the
    binary format written by write_grid.
    """
    path = Path(path)
    if format == "grid-container":
        return read_grid(path)
    if format != "xyz-ascii":
        raise GridError(f"unknown topography format {format!r}")
    return _load_xyz(path)


def _load_xyz(path: Path) -> HeightField:
    pts = []
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TopographyParseError(
                    f"line {lineno}: expected 'x y z', got {len(parts)} fields", row=lineno)
            try:
                pts.append((float(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError:
                raise TopographyParseError(f"line {lineno}: non-numeric field", row=lineno)
    if not pts:
        raise TopographyParseError("empty topography file")
    pts = np.asarray(pts, dtype=np.float64)
    if np.any(np.isnan(pts[:, 2])):
        bad = int(np.flatnonzero(np.isnan(pts[:, 2]))[0])
        raise TopographyParseError(f"NaN height at point {bad}", row=bad)

    # row boundary = first change in y along the scan
    ys = pts[:, 1]
    changes = np.flatnonzero(np.diff(ys) != 0)
    if changes.size == 0:
        raise TopographyParseError("degenerate grid: single row, cannot infer y spacing")
    cols = int(changes[0]) + 1
    if pts.shape[0] % cols != 0:
        raise TopographyParseError(
            f"degenerate grid: {pts.shape[0]} points not divisible by row length {cols}",
            row=int(changes[0]))
    rows = pts.shape[0] // cols
    if rows < 2:
        raise TopographyParseError("degenerate grid: single row, cannot infer y spacing")
    x = pts[:, 0].reshape(rows, cols)
    y = pts[:, 1].reshape(rows, cols)
    z = pts[:, 2].reshape(rows, cols)

    dx = np.diff(x, axis=1)
    dy = np.diff(y, axis=0)
    sp_x = float(np.abs(dx).mean())
    sp_y = float(np.abs(dy).mean())
    scale = max(sp_x, sp_y)
    if scale <= 0:
        raise TopographyParseError("degenerate grid: zero coordinate spacing")
    bad_x = np.abs(np.abs(dx) - sp_x) > 1e-6 * scale
    if np.any(bad_x):
        r = int(np.argwhere(bad_x)[0][0])
        raise TopographyParseError(f"irregular grid: non-constant x spacing in row {r}", row=r)
    bad_y = np.abs(np.abs(dy) - sp_y) > 1e-6 * scale
    if np.any(bad_y):
        r = int(np.argwhere(bad_y)[0][0]) + 1
        raise TopographyParseError(f"irregular grid: non-constant y spacing at row {r}", row=r)
    if abs(sp_x - sp_y) > 1e-6 * scale:
        raise TopographyParseError(
            f"irregular grid: anisotropic spacing x={sp_x:g} y={sp_y:g} um")
    if np.any(np.abs(np.diff(y, axis=1)) > 1e-6 * scale):
        raise TopographyParseError("irregular grid: y varies within a row", row=0)

    # file units are micrometers
    return HeightField(spacing_mm=sp_x / 1000.0, data=z / 1000.0)


# ---------------------------------------------------------------------------
# resampling / derived maps / moment matching
# ---------------------------------------------------------------------------

def resample_nearest(src: HeightField, target_spacing_mm: float) -> HeightField:
    """Coarsen a field to a larger pixel spacing by nearest-neighbor lookup.

    Output values are a subset of input values; upsampling is rejected.
    """
    if target_spacing_mm < src.spacing_mm:
        raise GridError(
            f"target spacing {target_spacing_mm} < source {src.spacing_mm}: upsampling unsupported")
    ratio = target_spacing_mm / src.spacing_mm
    out_rows = max(1, int(src.rows / ratio))
    out_cols = max(1, int(src.cols / ratio))
    ri = np.clip(np.round(np.arange(out_rows) * ratio).astype(int), 0, src.rows - 1)
    ci = np.clip(np.round(np.arange(out_cols) * ratio).astype(int), 0, src.cols - 1)
    return HeightField(target_spacing_mm, src.data[np.ix_(ri, ci)])


def height_to_normal(hf: HeightField) -> NormalMap:
    """Convert heights to unit normals: normalize(-dh/dx, -dh/dy, 1).

    Gradients use central differences, one-sided at the borders, so the
    output has the same shape as the input. x runs along columns, y along
    rows. Invariant to adding a constant height.
    """
    if hf.rows < 2 or hf.cols < 2:
        raise GridError("need at least 2x2 heights to estimate gradients")
    gy, gx = np.gradient(hf.data, hf.spacing_mm)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=2)
    n /= np.linalg.norm(n, axis=2, keepdims=True)
    return NormalMap(n)


def fit_moments(pre_texture: HeightField, target: FieldStats,
                strict_paper_formula: bool = False) -> HeightField:
    """Affinely rescale a field so its mean and standard deviation match target.

    strict_paper_formula applies the published variant
    sqrt(std_t/std_pre)*(x - mean_t) + mean_pre, which as printed neither
    preserves the target mean nor matches the variance; it is kept only for
    side-by-side comparison.
    """
    st = field_stats(pre_texture)
    if st.std == 0:
        raise GridError("constant pre-texture: cannot match moments")
    x = pre_texture.data
    if strict_paper_formula:
        out = np.sqrt(target.std / st.std) * (x - target.mean) + st.mean
    else:
        out = (target.std / st.std) * (x - st.mean) + target.mean
    return pre_texture.with_data(out)


# ---------------------------------------------------------------------------
# grid-container + PNG export
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIId")


def write_grid(path, hf: HeightField) -> None:
    """Write the binary grid-container: SYNH magic, dims, spacing, f32 payload."""
    path = Path(path)
    payload = hf.data.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(GRID_MAGIC, GRID_VERSION, hf.rows, hf.cols, hf.spacing_mm))
        fh.write(payload)


def read_grid(path) -> HeightField:
    """Read a grid-container file; lossless round trip of write_grid."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise GridError(f"{path.name}: truncated header")
    magic, version, rows, cols, spacing = _HEADER.unpack_from(raw)
    if magic != GRID_MAGIC:
        raise GridError(f"{path.name}: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise GridError(f"{path.name}: unsupported version {version}")
    need = _HEADER.size + rows * cols * 4
    if len(raw) != need:
        raise GridError(f"{path.name}: truncated payload ({len(raw)} bytes, expected {need})")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    return HeightField(spacing, data.reshape(rows, cols))


def write_png16(path, hf: HeightField) -> None:
    """Export as 16-bit grayscale PNG plus a JSON sidecar with min/max/spacing."""
    path = Path(path)
    lo = float(hf.data.min())
    hi = float(hf.data.max())
    span = hi - lo
    if span == 0:
        q = np.zeros_like(hf.data, dtype=np.uint16)
    else:
        q = np.round((hf.data - lo) / span * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps({"min": lo, "max": hi, "spacing_mm": hf.spacing_mm}))


def read_png16(path) -> HeightField:
    """Read a write_png16 export back; values carry the quantization error."""
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = json.loads(sidecar.read_text())
    q = np.asarray(Image.open(path), dtype=np.float64)
    data = meta["min"] + q / 65535.0 * (meta["max"] - meta["min"])
    return HeightField(meta["spacing_mm"], data)
