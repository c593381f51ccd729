"""Exemplar-based synthesis of sandblasted height fields.

Two stationary Gaussian texture generators work from a measured exemplar:
spot noise (convolution of the normalized exemplar with white Gaussian
noise, computed spectrally) and phase randomization (exact Fourier-modulus
preservation). Large outputs are assembled by quilting independently
generated patches along minimum-cost seams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from surfgen.grid import GridError, HeightField, resample_nearest


class SynthesisError(ValueError):
    """Invalid generator input or parameters."""


@dataclass(frozen=True)
class SandblastParams:
    out_rows: int
    out_cols: int
    target_spacing_mm: float
    patch_rows: int = 512
    patch_cols: int = 512
    overlap_px: int = 256
    generator: Literal["ADSN", "RPN"] = "ADSN"
    seed: int = 0

    def __post_init__(self):
        if min(self.out_rows, self.out_cols, self.patch_rows, self.patch_cols) <= 0:
            raise SynthesisError("output and patch dims must be positive")
        if not (0 < self.overlap_px < min(self.patch_rows, self.patch_cols)):
            raise SynthesisError("overlap must be positive and smaller than the patch")
        if self.target_spacing_mm <= 0:
            raise SynthesisError("target spacing must be positive")


@dataclass(frozen=True)
class SeamPath:
    """Monotone 8-connected cut through an overlap region.

    For a vertical seam, indices[r] is the cut column in row r; the patch to
    the right owns columns >= indices[r]. Horizontal seams are the transpose.
    cost is the sum of squared differences along the cut.
    """

    orientation: Literal["vertical", "horizontal"]
    indices: np.ndarray
    cost: float


def _check_exemplar(exemplar: HeightField):
    if float(exemplar.data.std()) == 0.0:
        raise SynthesisError("constant exemplar: spot has zero energy")


def extend_input(exemplar: HeightField, out_rows: int, out_cols: int) -> HeightField:
    """Mean-pad an exemplar to a larger canvas, rescaling the spot energy.

    Values inside the original support are amplified about the mean by
    sqrt(out_area / exemplar_area) so that spot-noise variance is preserved
    when normalizing over the larger domain; the padding is the mean.
    """
    if out_rows < exemplar.rows or out_cols < exemplar.cols:
        raise SynthesisError("extension target smaller than the exemplar")
    mu = float(exemplar.data.mean())
    scale = np.sqrt((out_rows * out_cols) / (exemplar.rows * exemplar.cols))
    canvas = np.full((out_rows, out_cols), mu)
    canvas[: exemplar.rows, : exemplar.cols] = scale * (exemplar.data - mu) + mu
    return HeightField(exemplar.spacing_mm, canvas)


def adsn_sample(exemplar: HeightField, out_rows: int, out_cols: int, seed: int) -> HeightField:
    """Draw one spot-noise realization at the requested size.

    output = mean + (exemplar - mean)/sqrt(M*N) (*) white Gaussian noise,
    with (*) the periodic convolution evaluated spectrally. The exemplar is
    mean-extended first when the request is larger; for smaller requests the
    realization is generated at exemplar size and cropped (the field is
    stationary, so cropping preserves the law).
    """
    _check_exemplar(exemplar)
    if out_rows <= 0 or out_cols <= 0:
        raise SynthesisError("requested size must be positive")
    work_rows = max(out_rows, exemplar.rows)
    work_cols = max(out_cols, exemplar.cols)
    if (work_rows, work_cols) != (exemplar.rows, exemplar.cols):
        exemplar = extend_input(exemplar, work_rows, work_cols)
    mu = float(exemplar.data.mean())
    n = exemplar.data.size
    spot = (exemplar.data - mu) / np.sqrt(n)
    rng = np.random.default_rng(np.uint64(seed) if seed >= 0 else np.uint64(seed + 2**64))
    noise = rng.standard_normal(exemplar.data.shape)
    conv = np.fft.ifft2(np.fft.fft2(spot) * np.fft.fft2(noise)).real
    return HeightField(exemplar.spacing_mm, mu + conv[:out_rows, :out_cols])


def rpn_sample(exemplar: HeightField, seed: int) -> HeightField:
    """Randomize the Fourier phase of the exemplar, keeping its modulus.

    The random phase field is taken from the spectrum of white noise, which
    is Hermitian-symmetric by construction, so the output is real and has
    the exemplar's autocorrelation exactly. The mean is restored afterwards.
    """
    _check_exemplar(exemplar)
    mu = float(exemplar.data.mean())
    spectrum = np.fft.fft2(exemplar.data - mu)
    rng = np.random.default_rng(np.uint64(seed) if seed >= 0 else np.uint64(seed + 2**64))
    noise_spec = np.fft.fft2(rng.standard_normal(exemplar.data.shape))
    mag = np.abs(noise_spec)
    phase = np.divide(noise_spec, mag, out=np.ones_like(noise_spec), where=mag > 0)
    out = np.fft.ifft2(np.abs(spectrum) * phase).real
    return HeightField(exemplar.spacing_mm, mu + out)


# ---------------------------------------------------------------------------
# seam finding and quilting
# ---------------------------------------------------------------------------

def min_cost_seam(overlap_a: HeightField | np.ndarray, overlap_b: HeightField | np.ndarray,
                  orientation: str = "vertical") -> SeamPath:
    """Minimum-cost monotone cut between two equal overlap regions.

    Dynamic programming over per-pixel squared differences; steps are
    restricted to {-1, 0, +1} between consecutive rows (or columns) and
    ties break toward the smaller index.
    """
    a = overlap_a.data if isinstance(overlap_a, HeightField) else np.asarray(overlap_a)
    b = overlap_b.data if isinstance(overlap_b, HeightField) else np.asarray(overlap_b)
    if a.shape != b.shape:
        raise SynthesisError(f"overlap shape mismatch: {a.shape} vs {b.shape}")
    if orientation not in ("vertical", "horizontal"):
        raise SynthesisError(f"unknown seam orientation {orientation!r}")
    err = (a - b) ** 2
    if orientation == "horizontal":
        err = err.T

    rows, cols = err.shape
    cum = err[0].copy()
    back = np.zeros((rows, cols), dtype=np.int64)
    for r in range(1, rows):
        # candidate predecessors ordered so argmin tie-breaks to smaller index
        padded = np.pad(cum, 1, constant_values=np.inf)
        cands = np.stack([padded[:-2], padded[1:-1], padded[2:]])  # j-1, j, j+1
        order = np.argsort(cands, axis=0, kind="stable")[0]
        # stable argsort prefers j-1 on ties; enforce smaller-index preference
        best = np.take_along_axis(cands, order[None], axis=0)[0]
        back[r] = np.arange(cols) + order - 1
        cum = best + err[r]
    end = int(np.argmin(cum))
    cost = float(cum[end])
    idx = np.empty(rows, dtype=np.int64)
    idx[-1] = end
    for r in range(rows - 1, 0, -1):
        idx[r - 1] = back[r, idx[r]]
    return SeamPath(orientation=orientation, indices=idx, cost=cost)


def _seam_mask_vertical(existing: np.ndarray, incoming: np.ndarray) -> np.ndarray:
    """Boolean (rows, overlap) mask: True where the incoming patch owns the pixel."""
    seam = min_cost_seam(existing, incoming, "vertical")
    cols = np.arange(existing.shape[1])
    return cols[None, :] >= seam.indices[:, None]


def stitch_patches(patches, overlap_px: int) -> HeightField:
    """Quilt a 2D grid of equal-size patches in raster order.

    Patches adjacent in a row are joined along a vertical seam in their
    left-right overlap, patches adjacent in a column along a horizontal seam,
    and interior patches along an L-shaped cut (both seams; the incoming
    patch owns a pixel only if it is on the incoming side of every seam).
    Every output pixel is copied from exactly one patch.
    """
    grid = [list(row) for row in patches]
    if not grid or not grid[0]:
        raise SynthesisError("empty patch grid")
    p0 = grid[0][0]
    pr, pc = p0.rows, p0.cols
    spacing = p0.spacing_mm
    for row in grid:
        for p in row:
            if (p.rows, p.cols) != (pr, pc):
                raise SynthesisError("patches must all have equal size")
    if not (0 < overlap_px < min(pr, pc)):
        raise SynthesisError("overlap must be positive and smaller than the patch")

    n_r, n_c = len(grid), len(grid[0])
    out_r = n_r * (pr - overlap_px) + overlap_px
    out_c = n_c * (pc - overlap_px) + overlap_px
    out = np.zeros((out_r, out_c))
    for gr in range(n_r):
        for gc in range(n_c):
            patch = grid[gr][gc].data
            r0 = gr * (pr - overlap_px)
            c0 = gc * (pc - overlap_px)
            take = np.ones((pr, pc), dtype=bool)
            if gc > 0:
                existing = out[r0:r0 + pr, c0:c0 + overlap_px]
                take[:, :overlap_px] &= _seam_mask_vertical(existing, patch[:, :overlap_px])
            if gr > 0:
                existing = out[r0:r0 + overlap_px, c0:c0 + pc]
                take[:overlap_px, :] &= _seam_mask_vertical(
                    existing.T, patch[:overlap_px, :].T).T
            region = out[r0:r0 + pr, c0:c0 + pc]
            region[take] = patch[take]
    return HeightField(spacing, out)


_U64 = 0xFFFFFFFFFFFFFFFF


def _patch_seed(seed: int, grid_row: int, grid_col: int) -> int:
    """Stable per-patch stream: base seed xor a splitmix64 hash of the cell."""
    z = (((grid_row << 32) | grid_col) + 0x9E3779B97F4A7C15) & _U64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    z ^= z >> 31
    return (seed & _U64) ^ z


def generate_sandblast(exemplar: HeightField, params: SandblastParams) -> HeightField:
    """Full sandblast pipeline: resample, generate patches, quilt, crop.

    The output is a pure function of (exemplar, params); per-patch seeds are
    derived from the grid cell so patch generation order does not matter.
    """
    ex = resample_nearest(exemplar, params.target_spacing_mm) \
        if params.target_spacing_mm > exemplar.spacing_mm else exemplar
    if params.patch_rows > ex.rows or params.patch_cols > ex.cols:
        raise SynthesisError(
            f"patch {params.patch_rows}x{params.patch_cols} exceeds resampled exemplar "
            f"{ex.rows}x{ex.cols}")

    stride_r = params.patch_rows - params.overlap_px
    stride_c = params.patch_cols - params.overlap_px
    n_r = max(1, -(-(params.out_rows - params.overlap_px) // stride_r))
    n_c = max(1, -(-(params.out_cols - params.overlap_px) // stride_c))

    grid = []
    for gr in range(n_r):
        row = []
        for gc in range(n_c):
            s = _patch_seed(params.seed, gr, gc)
            if params.generator == "ADSN":
                patch = adsn_sample(ex, params.patch_rows, params.patch_cols, s)
            elif params.generator == "RPN":
                full = rpn_sample(ex, s)
                patch = HeightField(
                    full.spacing_mm, full.data[: params.patch_rows, : params.patch_cols])
            else:
                raise SynthesisError(f"unknown generator {params.generator!r}")
            row.append(patch)
        grid.append(row)

    if n_r == 1 and n_c == 1 and (params.out_rows, params.out_cols) == (
            params.patch_rows, params.patch_cols):
        quilt = grid[0][0]
    else:
        quilt = stitch_patches(grid, params.overlap_px)
    if quilt.rows < params.out_rows or quilt.cols < params.out_cols:
        raise SynthesisError("stitched canvas smaller than requested output")
    return HeightField(quilt.spacing_mm,
                       quilt.data[: params.out_rows, : params.out_cols])
