"""Defect sampling, tool construction, height-field imprinting and masks.

Dents are ellipsoidal caps, scratches are random-walk grooves with a
circular cross-section. Tools are depth patches (nonpositive values) that
get min-composed into a surface height field; the removed region yields
the solid mask and a shrunken copy of the tool support yields the shell
mask used for visible-surface annotation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from surfgen.grid import HeightField

CLASS_BACKGROUND = 0
CLASS_DENT = 1
CLASS_SCRATCH = 2

DENT_KINDS = ("small_dent", "big_dent")
SCRATCH_KINDS = ("flat_scratch", "curvy_scratch")


class DefectError(ValueError):
    """Invalid defect specification or tool parameters."""


@dataclass(frozen=True)
class DefectSpec:
    """Sampling ranges for one defect kind, lengths in mm."""

    kind: str
    quantity: int
    diameter_mm: tuple[float, float]
    elongation: tuple[float, float] | None = None     # dents
    depth_mm: tuple[float, float] | None = None       # dents
    path_length_mm: tuple[float, float] | None = None  # scratches
    step_size_mm: float | None = None                  # scratches
    curviness: float = 0.0                             # heading std per step, rad

    def __post_init__(self):
        if self.kind not in DENT_KINDS + SCRATCH_KINDS:
            raise DefectError(f"unknown defect kind {self.kind!r}")
        if self.quantity < 0:
            raise DefectError("quantity must be nonnegative")
        for rng in (self.diameter_mm, self.elongation, self.depth_mm,
                    self.path_length_mm):
            if rng is not None and rng[0] > rng[1]:
                raise DefectError(f"range low > high in {self.kind}: {rng}")

    @property
    def class_label(self) -> int:
        return CLASS_DENT if self.kind in DENT_KINDS else CLASS_SCRATCH


def default_defect_specs() -> list[DefectSpec]:
    """Reference quantities and ranges for one defective object."""
    return [
        DefectSpec("small_dent", 5, (0.02, 0.2), elongation=(1.0, 2.0),
                   depth_mm=(0.05, 0.2)),
        DefectSpec("big_dent", 3, (0.2, 1.0), elongation=(1.0, 4.0),
                   depth_mm=(0.2, 1.0)),
        DefectSpec("flat_scratch", 2, (0.02, 0.2), path_length_mm=(5.0, 20.0),
                   step_size_mm=0.1, curviness=0.1),
        DefectSpec("curvy_scratch", 2, (0.02, 0.1), path_length_mm=(10.0, 20.0),
                   step_size_mm=1.0, curviness=0.6),
    ]


def specs_to_json(specs) -> str:
    return json.dumps([spec.__dict__ for spec in specs], indent=2)


def specs_from_json(text_or_path) -> list[DefectSpec]:
    text = str(text_or_path)
    if not text.lstrip().startswith("["):
        text = Path(text).read_text()
    out = []
    for raw in json.loads(text):
        raw = dict(raw)
        for key in ("diameter_mm", "elongation", "depth_mm", "path_length_mm"):
            if raw.get(key) is not None:
                raw[key] = tuple(raw[key])
        out.append(DefectSpec(**raw))
    return out


@dataclass(frozen=True)
class DefectInstance:
    """One sampled defect: placement plus concrete parameters.

    tool and polyline stay None until build_tool runs; tool is a depth
    patch (<= 0) on the surface grid, anchored at patch_center (the patch
    pixel that sits on `position`).
    """

    kind: str
    class_label: int
    position: tuple[float, float]      # (x, y) on the face, mm
    diameter_mm: float
    elongation: float = 1.0
    depth_mm: float = 0.0
    rotation_rad: float = 0.0
    path_length_mm: float = 0.0
    step_size_mm: float = 0.0
    curviness: float = 0.0
    walk_seed: int = 0
    tool: np.ndarray | None = None
    patch_center: tuple[int, int] | None = None
    polyline: np.ndarray | None = None


def sample_defect_set(specs, face_width_mm: float, face_height_mm: float,
                      distribution: str = "uniform", seed: int = 0,
                      margin_mm: float = 0.0) -> list[DefectInstance]:
    """Draw defect instances: parameters uniform over their spec ranges,
    positions i.i.d. from the chosen distribution over the face."""
    if face_width_mm <= 0 or face_height_mm <= 0:
        raise DefectError("face dims must be positive")
    if distribution not in ("uniform", "normal"):
        raise DefectError(f"unknown position distribution {distribution!r}")
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    out = []
    for spec in specs:
        for _ in range(spec.quantity):
            if distribution == "uniform":
                x = rng.uniform(margin_mm, face_width_mm - margin_mm)
                y = rng.uniform(margin_mm, face_height_mm - margin_mm)
            else:
                x = float(np.clip(rng.normal(face_width_mm / 2, face_width_mm / 6),
                                  margin_mm, face_width_mm - margin_mm))
                y = float(np.clip(rng.normal(face_height_mm / 2, face_height_mm / 6),
                                  margin_mm, face_height_mm - margin_mm))
            diameter = rng.uniform(*spec.diameter_mm)
            inst = DefectInstance(
                kind=spec.kind, class_label=spec.class_label, position=(x, y),
                diameter_mm=diameter)
            if spec.kind in DENT_KINDS:
                inst = replace(
                    inst,
                    elongation=rng.uniform(*spec.elongation),
                    depth_mm=rng.uniform(*spec.depth_mm),
                    rotation_rad=rng.uniform(0.0, np.pi))
            else:
                inst = replace(
                    inst,
                    path_length_mm=rng.uniform(*spec.path_length_mm),
                    step_size_mm=spec.step_size_mm,
                    curviness=spec.curviness,
                    walk_seed=int(rng.integers(0, 2**63 - 1)))
            out.append(inst)
    return out


# ---------------------------------------------------------------------------
# tools
# ---------------------------------------------------------------------------

def dent_tool(diameter_mm: float, elongation: float, depth_mm: float,
              rotation_rad: float, spacing_mm: float) -> np.ndarray:
    """Ellipsoidal-cap depth patch: apex -depth at the center, 0 at the rim.

    Semi-axes are diameter/2 and diameter*elongation/2 in the tool frame,
    rotated by rotation_rad. The patch is odd-sized with the apex at its
    central pixel.
    """
    if diameter_mm <= 0 or depth_mm <= 0:
        raise DefectError("dent diameter and depth must be positive")
    if elongation < 1.0:
        raise DefectError("elongation must be >= 1")
    a = diameter_mm / 2.0
    b = diameter_mm * elongation / 2.0
    reach = max(a, b)
    half = int(np.ceil(reach / spacing_mm)) + 1
    coords = np.arange(-half, half + 1) * spacing_mm
    xx, yy = np.meshgrid(coords, coords)
    c, s = np.cos(rotation_rad), np.sin(rotation_rad)
    xr = c * xx + s * yy
    yr = -s * xx + c * yy
    e = (xr / a) ** 2 + (yr / b) ** 2
    tool = np.zeros_like(e)
    inside = e < 1.0
    tool[inside] = -depth_mm * np.sqrt(1.0 - e[inside])
    return tool


def scratch_tool(path_length_mm: float, step_size_mm: float, diameter_mm: float,
                 curviness: float, seed: int, spacing_mm: float,
                 depth_factor: float = 0.5):
    """Swept-groove depth patch from a random-walk polyline.

    The heading changes by Normal(0, curviness) radians per step; segments
    of step_size are laid until path_length is reached (the last segment
    carries any remainder). The groove cross-section is an ellipse arc of
    width diameter and max depth depth_factor*diameter (semicircular at the
    0.5 default). Returns (depth patch, polyline in patch mm coordinates,
    anchor pixel of the walk origin).
    """
    if step_size_mm <= 0 or path_length_mm < step_size_mm:
        raise DefectError("need path_length >= step_size > 0")
    if diameter_mm <= 0:
        raise DefectError("scratch diameter must be positive")
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    n_full = int(path_length_mm / step_size_mm)
    steps = [step_size_mm] * n_full
    remainder = path_length_mm - n_full * step_size_mm
    if remainder > 1e-12:
        steps.append(remainder)
    heading = rng.uniform(0.0, 2 * np.pi)
    pts = [np.zeros(2)]
    for length in steps:
        heading += rng.normal(0.0, curviness) if curviness > 0 else 0.0
        pts.append(pts[-1] + length * np.array([np.cos(heading), np.sin(heading)]))
    poly = np.asarray(pts)

    radius = diameter_mm / 2.0
    lo = poly.min(axis=0) - radius - spacing_mm
    hi = poly.max(axis=0) + radius + spacing_mm
    col0 = int(np.floor(lo[0] / spacing_mm))
    row0 = int(np.floor(lo[1] / spacing_mm))
    cols = int(np.ceil(hi[0] / spacing_mm)) - col0 + 1
    rows = int(np.ceil(hi[1] / spacing_mm)) - row0 + 1

    # min distance to the polyline, accumulated per segment over its bbox
    dist = np.full((rows, cols), np.inf)
    for p0, p1 in zip(poly[:-1], poly[1:]):
        seg_lo = np.minimum(p0, p1) - radius - spacing_mm
        seg_hi = np.maximum(p0, p1) + radius + spacing_mm
        c_lo = max(0, int(np.floor(seg_lo[0] / spacing_mm)) - col0)
        r_lo = max(0, int(np.floor(seg_lo[1] / spacing_mm)) - row0)
        c_hi = min(cols, int(np.ceil(seg_hi[0] / spacing_mm)) - col0 + 1)
        r_hi = min(rows, int(np.ceil(seg_hi[1] / spacing_mm)) - row0 + 1)
        if c_lo >= c_hi or r_lo >= r_hi:
            continue
        xs = (np.arange(c_lo, c_hi) + col0) * spacing_mm
        ys = (np.arange(r_lo, r_hi) + row0) * spacing_mm
        xx, yy = np.meshgrid(xs, ys)
        d = p1 - p0
        denom = float(d @ d)
        if denom == 0:
            t = np.zeros_like(xx)
        else:
            t = np.clip(((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / denom, 0.0, 1.0)
        px = p0[0] + t * d[0]
        py = p0[1] + t * d[1]
        seg_dist = np.hypot(xx - px, yy - py)
        np.minimum(dist[r_lo:r_hi, c_lo:c_hi], seg_dist,
                   out=dist[r_lo:r_hi, c_lo:c_hi])

    tool = np.zeros((rows, cols))
    inside = dist < radius
    depth_max = depth_factor * diameter_mm
    tool[inside] = -depth_max * np.sqrt(1.0 - (dist[inside] / radius) ** 2)
    anchor = (-row0, -col0)  # pixel at walk origin
    return_poly = poly - np.array([col0, row0]) * spacing_mm
    if not (0 <= anchor[0] < rows and 0 <= anchor[1] < cols):
        raise DefectError("internal: walk origin fell outside its patch")
    return tool, return_poly, anchor


def build_tool(inst: DefectInstance, spacing_mm: float) -> DefectInstance:
    """Construct the instance's depth patch on the given grid spacing."""
    if inst.kind in DENT_KINDS:
        tool = dent_tool(inst.diameter_mm, inst.elongation, inst.depth_mm,
                         inst.rotation_rad, spacing_mm)
        center = (tool.shape[0] // 2, tool.shape[1] // 2)
        return replace(inst, tool=tool, patch_center=center)
    tool, poly, anchor = scratch_tool(
        inst.path_length_mm, inst.step_size_mm, inst.diameter_mm,
        inst.curviness, inst.walk_seed, spacing_mm)
    return replace(inst, tool=tool, patch_center=anchor, polyline=poly)


# ---------------------------------------------------------------------------
# imprinting
# ---------------------------------------------------------------------------

def _shrunken_support(support: np.ndarray, shrink: float) -> np.ndarray:
    """Scale a binary support about its centroid by `shrink` (<= 1)."""
    if shrink >= 1.0 or not support.any():
        return support.copy()
    rows, cols = support.shape
    cy, cx = ndimage.center_of_mass(support)
    yy, xx = np.mgrid[0:rows, 0:cols]
    src_y = np.round(cy + (yy - cy) / shrink).astype(int)
    src_x = np.round(cx + (xx - cx) / shrink).astype(int)
    ok = (src_y >= 0) & (src_y < rows) & (src_x >= 0) & (src_x < cols)
    out = np.zeros_like(support)
    out[ok] = support[src_y[ok], src_x[ok]]
    return out


def imprint_with_masks(surface: HeightField, inst: DefectInstance,
                       shell_shrink: float = 0.95,
                       rim_height_fraction: float = 0.0):
    """Subtract the defect tool from the surface; return surface and masks.

    The tool depth is applied relative to the surface height at the defect
    center, and material is only ever removed: new = min(old, ref + depth).
    solid mask = pixels whose height decreased; shell mask = tool support
    shrunk about its centroid by shell_shrink, intersected with the solid.
    rim_height_fraction > 0 additionally raises a pile-up ridge just outside
    the support (off by default; it breaks the never-raise property).
    """
    if not (0.0 < shell_shrink <= 1.0):
        raise DefectError("shell_shrink must be in (0, 1]")
    if inst.tool is None:
        raise DefectError("instance tool not built; call build_tool first")
    rows, cols = surface.rows, surface.cols
    spacing = surface.spacing_mm
    center_row = int(round(inst.position[1] / spacing))
    center_col = int(round(inst.position[0] / spacing))

    t_rows, t_cols = inst.tool.shape
    r0 = center_row - inst.patch_center[0]
    c0 = center_col - inst.patch_center[1]
    rr0, cc0 = max(0, r0), max(0, c0)
    rr1, cc1 = min(rows, r0 + t_rows), min(cols, c0 + t_cols)
    empty = np.zeros((rows, cols), dtype=bool)
    if rr0 >= rr1 or cc0 >= cc1 or not (0 <= center_row < rows and 0 <= center_col < cols):
        warnings.warn(f"defect {inst.kind} at {inst.position} falls outside the face; skipped")
        return surface, empty, empty

    tool_view = inst.tool[rr0 - r0:rr1 - r0, cc0 - c0:cc1 - c0]
    ref = float(surface.data[center_row, center_col])
    new = np.array(surface.data)
    region = new[rr0:rr1, cc0:cc1]
    # the tool solid only exists where its depth is negative; elsewhere the
    # surface must stay untouched
    carved = np.where(tool_view < 0, np.minimum(region, ref + tool_view), region)
    solid = np.zeros((rows, cols), dtype=bool)
    solid[rr0:rr1, cc0:cc1] = carved < region
    new[rr0:rr1, cc0:cc1] = carved

    if rim_height_fraction > 0:
        support_full = np.zeros((rows, cols), dtype=bool)
        support_full[rr0:rr1, cc0:cc1] = tool_view < 0
        rim = ndimage.binary_dilation(support_full, iterations=2) & ~support_full
        depth_scale = float(-inst.tool.min())
        new[rim] += rim_height_fraction * depth_scale

    shell_patch = _shrunken_support(inst.tool < 0, shell_shrink)
    shell = np.zeros((rows, cols), dtype=bool)
    shell[rr0:rr1, cc0:cc1] = shell_patch[rr0 - r0:rr1 - r0, cc0 - c0:cc1 - c0]
    shell &= solid
    return HeightField(spacing, new), solid, shell


def imprint_all(surface: HeightField, instances, shell_shrink: float = 0.95):
    """Imprint a list of built instances; returns surface + class label mask.

    The label mask holds 0 background, 1 dent, 2 scratch; scratches are
    drawn over dents where shells overlap (later class wins per imprint
    order).
    """
    labels = np.zeros((surface.rows, surface.cols), dtype=np.uint8)
    for inst in instances:
        surface, _, shell = imprint_with_masks(surface, inst, shell_shrink)
        labels[shell] = inst.class_label
    return surface, labels
