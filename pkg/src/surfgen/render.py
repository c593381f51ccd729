"""Grayscale inspection-image renderer.

Pinhole camera inside a diffusely emitting torus ring light, planar faces
shaded with a rough-metal microfacet BRDF over normal-mapped textures.
Direct light is estimated by area sampling of the torus at every path
vertex; glossy bounces continue by importance-sampled reflection. The
light itself is not ray-intersectable (it sits behind the camera in
inspection geometry), so all energy arrives through the sampled direct
term and images are exactly linear in the light radiance.

Randomness is keyed per (seed, row tile), which makes images pure
functions of (scene, spp, bounces, seed) independent of how tiles are
scheduled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from surfgen.grid import GridError, HeightField, NormalMap, height_to_normal, read_grid

_EPS = 1e-9
_RAY_EPS = 1e-6  # min ray advance, mm


class RenderError(ValueError):
    """Invalid scene or render parameters."""


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise RenderError("zero-length vector")
    return v / n


@dataclass(frozen=True)
class PinholeCamera:
    """Ideal pinhole: resolution in px, sensor pixel pitch and focal length in mm.

    rotation columns are the camera right / image-down / forward axes in
    world coordinates.
    """

    width: int
    height: int
    pixel_size_mm: float
    focal_length_mm: float
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise RenderError("resolution must be positive")
        if self.pixel_size_mm <= 0 or self.focal_length_mm <= 0:
            raise RenderError("pixel size and focal length must be positive")
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise RenderError("camera rotation must be orthonormal")
        pos.flags.writeable = False
        rot.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "rotation", rot)

    @classmethod
    def look_at(cls, width, height, pixel_size_mm, focal_length_mm,
                position, target, up=(0.0, 0.0, 1.0)) -> "PinholeCamera":
        fwd = _unit(np.asarray(target, float) - np.asarray(position, float))
        up = np.asarray(up, float)
        if abs(np.dot(fwd, _unit(up))) > 0.999:
            up = np.array([0.0, 1.0, 0.0])
        right = _unit(np.cross(fwd, up))
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd], axis=1)
        return cls(width, height, pixel_size_mm, focal_length_mm,
                   np.asarray(position, float), rot)

    @property
    def forward(self):
        return self.rotation[:, 2]

    def ray_directions(self, px: np.ndarray, py: np.ndarray) -> np.ndarray:
        """World ray directions through continuous pixel coordinates."""
        x = (px - self.width / 2.0) * self.pixel_size_mm
        y = (py - self.height / 2.0) * self.pixel_size_mm
        z = np.full_like(x, self.focal_length_mm)
        d = np.stack([x, y, z], axis=-1)
        d /= np.sqrt(np.einsum("...i,...i->...", d, d))[..., None]
        return d @ self.rotation.T


@dataclass(frozen=True)
class RingLight:
    """Torus area light with spatially uniform diffuse emission."""

    major_radius_mm: float
    minor_radius_mm: float
    radiance: float
    center: np.ndarray
    axis: np.ndarray

    def __post_init__(self):
        if not (0 < self.minor_radius_mm < self.major_radius_mm):
            raise RenderError("need 0 < minor radius < major radius")
        if self.radiance < 0:
            raise RenderError("radiance must be nonnegative")
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        axis = _unit(self.axis)
        center.flags.writeable = False
        axis.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "axis", axis)

    @property
    def area(self) -> float:
        return 4.0 * np.pi ** 2 * self.major_radius_mm * self.minor_radius_mm

    def basis(self):
        w = self.axis
        helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = _unit(np.cross(helper, w))
        e2 = np.cross(w, e1)
        return e1, e2, w

    def sample_points(self, rng, n: int):
        """Uniform-area torus samples: points, outward normals."""
        e1, e2, w = self.basis()
        u = rng.uniform(0.0, 2 * np.pi, n)
        v = np.empty(n)
        todo = np.arange(n)
        # rejection on the tube angle makes the area density uniform
        while todo.size:
            cand = rng.uniform(0.0, 2 * np.pi, todo.size)
            accept = rng.uniform(0.0, 1.0, todo.size) <= (
                (self.major_radius_mm + self.minor_radius_mm * np.cos(cand))
                / (self.major_radius_mm + self.minor_radius_mm))
            v[todo[accept]] = cand[accept]
            todo = todo[~accept]
        ring_dir = np.outer(np.cos(u), e1) + np.outer(np.sin(u), e2)
        pts = (self.center
               + (self.major_radius_mm + self.minor_radius_mm * np.cos(v))[:, None] * ring_dir
               + np.outer(self.minor_radius_mm * np.sin(v), w))
        normals = np.cos(v)[:, None] * ring_dir + np.outer(np.sin(v), w)
        return pts, normals


@dataclass(frozen=True)
class FaceBinding:
    """Planar rectangle with a normal-map texture and material parameters.

    The rectangle is origin + s*u_hat + t*v_hat for s in [0, len_u],
    t in [0, len_v]. Texture lookups rotate by texture_rotation_deg about
    the face center and shift by texture_translation_px texels; the texture
    must cover the face under the configured transform.
    """

    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    normal_map: NormalMap
    texture_spacing_mm: float
    texture_rotation_deg: float = 0.0
    texture_translation_px: tuple[float, float] = (0.0, 0.0)
    brdf_roughness: float = 0.05
    base_reflectance: float = 0.9
    brdf: str = "ggx"  # or "diffuse"

    def __post_init__(self):
        for name in ("origin", "edge_u", "edge_v"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if not (-180.0 <= self.texture_rotation_deg <= 180.0):
            raise RenderError("texture rotation must be within [-180, 180] degrees")
        if not (0.0 <= self.brdf_roughness <= 1.0):
            raise RenderError("roughness must be in [0, 1]")
        if not (0.0 <= self.base_reflectance <= 1.0):
            raise RenderError("base reflectance must be in [0, 1]")
        if self.brdf not in ("ggx", "diffuse"):
            raise RenderError(f"unknown brdf {self.brdf!r}")
        if abs(np.dot(self.u_hat, self.v_hat)) > 1e-9:
            raise RenderError("face edges must be perpendicular")

    @property
    def len_u(self) -> float:
        return float(np.linalg.norm(self.edge_u))

    @property
    def len_v(self) -> float:
        return float(np.linalg.norm(self.edge_v))

    @property
    def u_hat(self):
        return self.edge_u / self.len_u

    @property
    def v_hat(self):
        return self.edge_v / self.len_v

    @property
    def normal(self):
        return _unit(np.cross(self.edge_u, self.edge_v))


def lookup_texels(binding: FaceBinding, s: np.ndarray, t: np.ndarray):
    """Texel indices for face-plane points (s, t) in mm under the binding
    transform; raises when any lookup escapes the texture."""
    theta = np.deg2rad(binding.texture_rotation_deg)
    cu, cv = binding.len_u / 2.0, binding.len_v / 2.0
    du, dv = s - cu, t - cv
    c, sn = np.cos(theta), np.sin(theta)
    # inverse rotation into texture space, then the configured texel shift
    qx = c * du + sn * dv + binding.texture_translation_px[0] * binding.texture_spacing_mm
    qy = -sn * du + c * dv + binding.texture_translation_px[1] * binding.texture_spacing_mm
    nm = binding.normal_map
    col = np.round(qx / binding.texture_spacing_mm + (nm.cols - 1) / 2.0).astype(np.int64)
    row = np.round(qy / binding.texture_spacing_mm + (nm.rows - 1) / 2.0).astype(np.int64)
    if col.size and (col.min() < 0 or col.max() >= nm.cols
                     or row.min() < 0 or row.max() >= nm.rows):
        raise RenderError(
            "texture lookup outside extent: texture must cover the face under "
            "the configured rotation/translation")
    return row, col


def map_texture_to_face(binding: FaceBinding, s, t):
    """Perturbed normal(s) in the face frame (u_hat, v_hat, normal) at face
    coordinates (s, t) mm. Scalars or arrays."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    row, col = lookup_texels(binding, s, t)
    n = binding.normal_map.data[row, col]
    theta = np.deg2rad(binding.texture_rotation_deg)
    c, sn = np.cos(theta), np.sin(theta)
    # the map was rotated on the face, so its in-plane components rotate too
    out = np.empty_like(n)
    out[..., 0] = c * n[..., 0] - sn * n[..., 1]
    out[..., 1] = sn * n[..., 0] + c * n[..., 1]
    out[..., 2] = n[..., 2]
    return out


@dataclass(frozen=True)
class Scene:
    """Camera, ring light, textured faces and optional per-face label masks."""

    camera: PinholeCamera
    light: RingLight
    faces: tuple[FaceBinding, ...]
    annotations: dict = field(default_factory=dict)  # face index -> uint8 class mask
    exposure: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "faces", tuple(self.faces))
        if not self.faces:
            raise RenderError("scene needs at least one face")
        if np.linalg.norm(self.camera.position - self.light.center) > 1e-6 * max(
                1.0, self.light.major_radius_mm):
            raise RenderError("camera must sit in the ring-light center")
        if abs(np.dot(self.camera.forward, self.light.axis)) < 1.0 - 1e-6:
            raise RenderError("ring-light axis must match the camera orientation")
        for idx, mask in self.annotations.items():
            nm = self.faces[idx].normal_map
            if mask.shape != (nm.rows, nm.cols):
                raise RenderError(f"annotation mask for face {idx} does not match its texture")


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def intersect_faces(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest rectangle hit per ray.

    Returns (t, face_index, s, t_coord); face_index is -1 for misses.
    origins may be a single (3,) point shared by all rays.
    """
    n = dirs.shape[0]
    uniform_origin = origins.ndim == 1
    best_t = np.full(n, np.inf)
    face_idx = np.full(n, -1, dtype=np.int64)
    s_hit = np.zeros(n)
    t_hit = np.zeros(n)
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    for k, f in enumerate(scene.faces):
        nrm = f.normal
        denom = dx * nrm[0] + dy * nrm[1] + dz * nrm[2]
        if uniform_origin:
            offset = float((f.origin - origins) @ nrm)
        else:
            offset = (f.origin[0] - origins[:, 0]) * nrm[0] \
                + (f.origin[1] - origins[:, 1]) * nrm[1] \
                + (f.origin[2] - origins[:, 2]) * nrm[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = offset / denom
        valid = (np.abs(denom) > _EPS) & (t > _RAY_EPS) & (t < best_t)
        sel = np.flatnonzero(valid)
        if sel.size == 0:
            continue
        ts = t[sel]
        if uniform_origin:
            hx = origins[0] + ts * dx[sel] - f.origin[0]
            hy = origins[1] + ts * dy[sel] - f.origin[1]
            hz = origins[2] + ts * dz[sel] - f.origin[2]
        else:
            hx = origins[sel, 0] + ts * dx[sel] - f.origin[0]
            hy = origins[sel, 1] + ts * dy[sel] - f.origin[1]
            hz = origins[sel, 2] + ts * dz[sel] - f.origin[2]
        u, v = f.u_hat, f.v_hat
        s = hx * u[0] + hy * u[1] + hz * u[2]
        tv = hx * v[0] + hy * v[1] + hz * v[2]
        inside = (s >= 0) & (s <= f.len_u) & (tv >= 0) & (tv <= f.len_v)
        hit = sel[inside]
        best_t[hit] = ts[inside]
        face_idx[hit] = k
        s_hit[hit] = s[inside]
        t_hit[hit] = tv[inside]
    return best_t, face_idx, s_hit, t_hit


def _segment_blocked(scene: Scene, origins: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """True where any face interrupts the segment origin -> target."""
    seg = targets - origins
    dist = np.sqrt(np.einsum("ij,ij->i", seg, seg))
    dirs = seg / np.maximum(dist, _EPS)[:, None]
    blocked = np.zeros(origins.shape[0], dtype=bool)
    for f in scene.faces:
        nrm = f.normal
        denom = dirs @ nrm
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((f.origin - origins) @ nrm) / denom
        valid = (np.abs(denom) > _EPS) & (t > _RAY_EPS) & (t < dist - _RAY_EPS) & ~blocked
        sel = np.flatnonzero(valid)
        if sel.size == 0:
            continue
        ts = t[sel]
        hx = origins[sel, 0] + ts * dirs[sel, 0] - f.origin[0]
        hy = origins[sel, 1] + ts * dirs[sel, 1] - f.origin[1]
        hz = origins[sel, 2] + ts * dirs[sel, 2] - f.origin[2]
        u, v = f.u_hat, f.v_hat
        s = hx * u[0] + hy * u[1] + hz * u[2]
        tv = hx * v[0] + hy * v[1] + hz * v[2]
        inside = (s >= 0) & (s <= f.len_u) & (tv >= 0) & (tv <= f.len_v)
        blocked[sel[inside]] = True
    return blocked


def _world_normals(scene: Scene, face_idx, s, t):
    """Perturbed shading normals in world space for hit points."""
    out = np.zeros((face_idx.shape[0], 3))
    for k, f in enumerate(scene.faces):
        sel = face_idx == k
        if not sel.any():
            continue
        local = map_texture_to_face(f, s[sel], t[sel])
        frame = np.stack([f.u_hat, f.v_hat, f.normal], axis=0)
        out[sel] = local @ frame
    return out


# ---------------------------------------------------------------------------
# shading
# ---------------------------------------------------------------------------

def _ggx_eval(n, wo, wi, roughness, f0):
    """Microfacet BRDF value; scalar reflectance, Smith separable masking."""
    alpha = np.maximum(roughness, 1e-3)
    ndo = np.clip(np.sum(n * wo, axis=-1), 1e-6, 1.0)
    ndi = np.clip(np.sum(n * wi, axis=-1), 0.0, 1.0)
    h = wo + wi
    h /= np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), _EPS)
    ndh = np.clip(np.sum(n * h, axis=-1), 0.0, 1.0)
    hdo = np.clip(np.sum(h * wo, axis=-1), 0.0, 1.0)
    a2 = alpha ** 2
    denom = ndh ** 2 * (a2 - 1.0) + 1.0
    d = a2 / np.maximum(np.pi * denom ** 2, _EPS)
    g1o = 2 * ndo / np.maximum(ndo + np.sqrt(a2 + (1 - a2) * ndo ** 2), _EPS)
    g1i = 2 * ndi / np.maximum(ndi + np.sqrt(a2 + (1 - a2) * ndi ** 2), _EPS)
    fres = f0 + (1.0 - f0) * (1.0 - hdo) ** 5
    val = d * g1o * g1i * fres / np.maximum(4.0 * ndo * ndi, _EPS)
    return np.where(ndi > 0, val, 0.0)


def _brdf_eval(scene, face_idx, n, wo, wi):
    out = np.zeros(face_idx.shape[0])
    for k, f in enumerate(scene.faces):
        sel = face_idx == k
        if not sel.any():
            continue
        if f.brdf == "diffuse":
            ndi = np.sum(n[sel] * wi[sel], axis=-1)
            out[sel] = np.where(ndi > 0, f.base_reflectance / np.pi, 0.0)
        else:
            out[sel] = _ggx_eval(n[sel], wo[sel], wi[sel],
                                 f.brdf_roughness, f.base_reflectance)
    return out


def _tangent_frame(n):
    helper = np.where(np.abs(n[:, 0:1]) < 0.9,
                      np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    t1 = np.cross(helper, n)
    t1 /= np.maximum(np.linalg.norm(t1, axis=1, keepdims=True), _EPS)
    t2 = np.cross(n, t1)
    return t1, t2


def _sample_bounce(scene, rng, face_idx, n, wo):
    """Next direction + throughput factor for glossy/diffuse continuation."""
    count = face_idx.shape[0]
    wi = np.zeros((count, 3))
    weight = np.zeros(count)
    u1 = rng.uniform(size=count)
    u2 = rng.uniform(size=count)
    t1, t2 = _tangent_frame(n)
    for k, f in enumerate(scene.faces):
        sel = face_idx == k
        if not sel.any():
            continue
        if f.brdf == "diffuse":
            # cosine-weighted hemisphere: f*cos/pdf = reflectance
            r = np.sqrt(u1[sel])
            phi = 2 * np.pi * u2[sel]
            local = np.stack([r * np.cos(phi), r * np.sin(phi),
                              np.sqrt(np.maximum(0.0, 1.0 - u1[sel]))], axis=1)
            wi[sel] = (local[:, 0:1] * t1[sel] + local[:, 1:2] * t2[sel]
                       + local[:, 2:3] * n[sel])
            weight[sel] = f.base_reflectance
        else:
            alpha = max(f.brdf_roughness, 1e-3)
            a2 = alpha ** 2
            ct = np.sqrt((1.0 - u1[sel]) / (1.0 + (a2 - 1.0) * u1[sel]))
            st = np.sqrt(np.maximum(0.0, 1.0 - ct ** 2))
            phi = 2 * np.pi * u2[sel]
            h = (st[:, None] * np.cos(phi)[:, None] * t1[sel]
                 + st[:, None] * np.sin(phi)[:, None] * t2[sel]
                 + ct[:, None] * n[sel])
            hdo = np.sum(h * wo[sel], axis=1)
            wi_k = 2.0 * hdo[:, None] * h - wo[sel]
            ndo = np.clip(np.sum(n[sel] * wo[sel], axis=1), 1e-6, 1.0)
            ndi = np.sum(n[sel] * wi_k, axis=1)
            ndh = np.clip(np.sum(n[sel] * h, axis=1), 1e-6, 1.0)
            g1o = 2 * ndo / np.maximum(ndo + np.sqrt(a2 + (1 - a2) * ndo ** 2), _EPS)
            g1i_raw = 2 * np.abs(ndi) / np.maximum(
                np.abs(ndi) + np.sqrt(a2 + (1 - a2) * ndi ** 2), _EPS)
            fres = f.base_reflectance + (1 - f.base_reflectance) \
                * (1.0 - np.clip(hdo, 0, 1)) ** 5
            w = g1o * g1i_raw * fres * np.clip(hdo, 0, None) / np.maximum(ndo * ndh, _EPS)
            ok = (ndi > 0) & (hdo > 0)
            wi[sel] = wi_k
            weight[sel] = np.where(ok, w, 0.0)
    return wi, weight


# ---------------------------------------------------------------------------
# render passes
# ---------------------------------------------------------------------------

def _direct_light(scene, rng, pts, normals, wo, face_idx):
    """One-sample area-light estimate of direct radiance at each vertex."""
    light = scene.light
    l_pts, l_nrm = light.sample_points(rng, pts.shape[0])
    seg = l_pts - pts
    dist2 = np.maximum(np.sum(seg * seg, axis=1), _EPS)
    wi = seg / np.sqrt(dist2)[:, None]
    cos_s = np.sum(normals * wi, axis=1)
    cos_l = np.sum(l_nrm * -wi, axis=1)
    visible = (cos_s > 0) & (cos_l > 0)
    if visible.any():
        blocked = _segment_blocked(scene, pts[visible], l_pts[visible])
        vis_idx = np.flatnonzero(visible)
        visible[vis_idx[blocked]] = False
    f_val = _brdf_eval(scene, face_idx, normals, wo, wi)
    contrib = np.where(
        visible,
        f_val * light.radiance * np.clip(cos_s, 0, None) * np.clip(cos_l, 0, None)
        / dist2 * light.area,
        0.0)
    return contrib


def render_image(scene: Scene, spp: int, bounces: int, seed: int,
                 tile_rows: int | None = None, with_variance: bool = False):
    """Monte Carlo render to linear radiance.

    Returns (image, aux) where image is float64 (height, width) linear
    radiance before exposure/encoding, and aux carries the center-ray
    'hit_mask' and 'face_map' (and 'stderr' when with_variance).
    """
    if spp < 1:
        raise RenderError("spp must be >= 1")
    if bounces < 1:
        raise RenderError("bounces must be >= 1")
    cam = scene.camera
    if tile_rows is None:
        # keep per-tile ray batches near 2M for memory
        tile_rows = int(np.clip(2_000_000 // max(cam.width * spp, 1), 1, cam.height))
    img = np.zeros((cam.height, cam.width))
    sq = np.zeros_like(img) if with_variance else None

    for tile_idx, row0 in enumerate(range(0, cam.height, tile_rows)):
        row1 = min(row0 + tile_rows, cam.height)
        rng = np.random.Generator(np.random.Philox(
            key=np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                          np.uint64(tile_idx)], dtype=np.uint64)))
        yy, xx = np.mgrid[row0:row1, 0:cam.width]
        n_pix = yy.size
        px = np.repeat(xx.ravel()[:, None], spp, axis=1) + rng.uniform(size=(n_pix, spp))
        py = np.repeat(yy.ravel()[:, None], spp, axis=1) + rng.uniform(size=(n_pix, spp))
        dirs = cam.ray_directions(px.ravel(), py.ravel())
        origins = cam.position  # shared origin until the first bounce

        radiance = np.zeros(n_pix * spp)
        throughput = np.ones(n_pix * spp)
        active = np.arange(n_pix * spp)
        for depth in range(bounces):
            t, fidx, s, tv = intersect_faces(scene, origins, dirs)
            hit = fidx >= 0
            if not hit.any():
                break
            if origins.ndim == 1:
                origins = origins[None, :] + t[hit, None] * dirs[hit]
            else:
                origins = origins[hit] + t[hit, None] * dirs[hit]
            wo = -dirs[hit]
            fidx, s, tv = fidx[hit], s[hit], tv[hit]
            active = active[hit]
            normals = _world_normals(scene, fidx, s, tv)
            contrib = _direct_light(scene, rng, origins, normals, wo, fidx)
            radiance[active] += throughput[active] * contrib
            if depth + 1 >= bounces:
                break
            wi, weight = _sample_bounce(scene, rng, fidx, normals, wo)
            cont = weight > 0
            origins, dirs = origins[cont], wi[cont]
            active = active[cont]
            throughput[active] *= weight[cont]

        per_pix = radiance.reshape(n_pix, spp)
        img[row0:row1] = per_pix.mean(axis=1).reshape(row1 - row0, cam.width)
        if with_variance:
            se = per_pix.std(axis=1, ddof=1) / np.sqrt(spp) if spp > 1 \
                else np.zeros(n_pix)
            sq[row0:row1] = se.reshape(row1 - row0, cam.width)

    aux = _center_geometry(scene)
    if with_variance:
        aux["stderr"] = sq
    return img, aux


def _center_geometry(scene: Scene):
    """Deterministic pixel-center visibility, shared by both passes."""
    cam = scene.camera
    yy, xx = np.mgrid[0:cam.height, 0:cam.width]
    dirs = cam.ray_directions(xx.ravel() + 0.5, yy.ravel() + 0.5)
    t, fidx, s, tv = intersect_faces(scene, cam.position, dirs)
    face_map = fidx.reshape(cam.height, cam.width)
    return {
        "hit_mask": face_map >= 0,
        "face_map": face_map,
        "_s": s.reshape(cam.height, cam.width),
        "_t": tv.reshape(cam.height, cam.width),
    }


def render_annotation(scene: Scene):
    """Label image from pixel-center rays; no light transport.

    Faces render as class 0 (object/black) unless an annotation mask marks
    the texel; background stays 0 as well, so the silhouette comes from the
    accompanying hit mask. Alignment with render_image is guaranteed by the
    shared center-ray geometry.
    """
    geo = _center_geometry(scene)
    labels = np.zeros(geo["face_map"].shape, dtype=np.uint8)
    for k, f in enumerate(scene.faces):
        mask = scene.annotations.get(k)
        if mask is None:
            continue
        sel = geo["face_map"] == k
        if not sel.any():
            continue
        row, col = lookup_texels(f, geo["_s"][sel], geo["_t"][sel])
        labels[sel] = mask[row, col]
    return labels, {"hit_mask": geo["hit_mask"], "face_map": geo["face_map"]}


def encode_image(linear: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """Linear exposure scale, clamp to [0, 1], 8-bit quantization. No gamma:
    inspection cameras are close to linear."""
    return np.round(np.clip(linear * exposure, 0.0, 1.0) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# face-grid texture baking + scene files
# ---------------------------------------------------------------------------

def sample_face_field(texture: HeightField, face_len_u_mm: float, face_len_v_mm: float,
                      rotation_deg: float = 0.0,
                      translation_px: tuple[float, float] = (0.0, 0.0)) -> HeightField:
    """Resample a large texture onto a face-aligned grid.

    Uses the same rotation-about-center / texel-shift convention as
    map_texture_to_face, so a field baked this way and bound with identity
    transform shows the texture exactly as the rotated binding would.
    """
    spacing = texture.spacing_mm
    cols = max(2, int(round(face_len_u_mm / spacing)))
    rows = max(2, int(round(face_len_v_mm / spacing)))
    s = (np.arange(cols) + 0.5) * spacing
    t = (np.arange(rows) + 0.5) * spacing
    ss, tt = np.meshgrid(s, t)
    theta = np.deg2rad(rotation_deg)
    du, dv = ss - face_len_u_mm / 2.0, tt - face_len_v_mm / 2.0
    c, sn = np.cos(theta), np.sin(theta)
    qx = c * du + sn * dv + translation_px[0] * spacing
    qy = -sn * du + c * dv + translation_px[1] * spacing
    col = np.round(qx / spacing + (texture.cols - 1) / 2.0).astype(np.int64)
    row = np.round(qy / spacing + (texture.rows - 1) / 2.0).astype(np.int64)
    if (col.min() < 0 or col.max() >= texture.cols
            or row.min() < 0 or row.max() >= texture.rows):
        raise RenderError("texture too small to cover the face under this transform")
    return HeightField(spacing, texture.data[row, col])


def scene_from_json(path_or_text, base_dir=None) -> Scene:
    """Build a Scene from the JSON description (see README for the schema)."""
    text = str(path_or_text)
    if not text.lstrip().startswith("{"):
        base_dir = Path(text).parent if base_dir is None else Path(base_dir)
        text = Path(text).read_text()
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    raw = json.loads(text)
    c = raw["camera"]
    camera = PinholeCamera.look_at(
        c["resolution"][0], c["resolution"][1], c["pixel_size_mm"],
        c["focal_length_mm"], c["position"], c["look_at"], c.get("up", (0, 0, 1)))
    li = raw["light"]
    light = RingLight(li["major_radius_mm"], li["minor_radius_mm"], li["radiance"],
                      li.get("center", c["position"]),
                      li.get("axis", camera.forward))
    faces = []
    annotations = {}
    for i, fr in enumerate(raw["faces"]):
        tex_path = base_dir / fr["texture"]
        try:
            hfield = read_grid(tex_path)
        except (GridError, FileNotFoundError) as exc:
            raise RenderError(f"face {i}: cannot read texture {tex_path}: {exc}")
        faces.append(FaceBinding(
            origin=fr["origin"], edge_u=fr["edge_u"], edge_v=fr["edge_v"],
            normal_map=height_to_normal(hfield),
            texture_spacing_mm=hfield.spacing_mm,
            texture_rotation_deg=fr.get("rotation_deg", 0.0),
            texture_translation_px=tuple(fr.get("translation_px", (0.0, 0.0))),
            brdf_roughness=fr.get("roughness", 0.05),
            base_reflectance=fr.get("base_reflectance", 0.9),
            brdf=fr.get("brdf", "ggx")))
        if fr.get("label_mask"):
            from PIL import Image
            annotations[i] = np.asarray(Image.open(base_dir / fr["label_mask"]),
                                        dtype=np.uint8)
    return Scene(camera=camera, light=light, faces=tuple(faces),
                 annotations=annotations, exposure=raw.get("exposure", 1.0))
