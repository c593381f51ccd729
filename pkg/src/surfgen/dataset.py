"""End-to-end dataset generation: textures, defects, viewpoints, manifests.

A physical object is a polyhedral test body with three inspected planar
faces (A, B, C). Per object the generator produces K defective and K
correct instances; defect geometry sets are shared across objects so
texture comparisons are unbiased. Every instance is rendered from the
configured viewpoint plan together with a pixel-aligned label image.

All randomness derives from the master seed through fixed-purpose
SeedSequence keys, so manifests and rendered images are reproducible
byte-for-byte.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from surfgen.defects import (
    build_tool,
    default_defect_specs,
    imprint_with_masks,
    sample_defect_set,
)
from surfgen.grid import FieldStats, HeightField, height_to_normal
from surfgen.milling import CONF, MillingParams, generate_milling
from surfgen.render import (
    FaceBinding,
    PinholeCamera,
    RingLight,
    Scene,
    encode_image,
    render_annotation,
    render_image,
    sample_face_field,
)
from surfgen.sandblast import SandblastParams, generate_sandblast

FACE_NAMES = ("A", "B", "C")
FACE_TRANSLATION_PX = {"A": 5.0, "B": 3.0, "C": 1.0}
FINISHES = ("sandblasted", "parallel", "spiral")


class DatasetError(ValueError):
    """Invalid dataset configuration."""


@dataclass(frozen=True)
class TextureRandomization:
    """Value sets for per-instance milling parameter draws.

    Multiplier sets scale the base parameter; defaults (the set members
    marked in the reference table) are included in each set. sigma entries
    are divided by CONF when written into MillingParams.
    """

    sigma_c_multipliers: tuple = (0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8)
    delta_multipliers: tuple = (0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0, 1.05, 1.1)
    epsilon_values: tuple = (0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
    sigma_w_minus_values: tuple = (0.015, 0.02, 0.025, 0.03, 0.035)
    sigma_lh_minus_values: tuple = (0.4, 0.6, 0.8, 1.0, 1.2)
    lambda_values: tuple = (30.0, 50.0, 70.0)

    def __post_init__(self):
        for name in ("sigma_c_multipliers", "delta_multipliers", "epsilon_values",
                     "sigma_w_minus_values", "sigma_lh_minus_values", "lambda_values"):
            if not getattr(self, name):
                raise DatasetError(f"{name} must be a nonempty set")


def sample_texture_params(base: MillingParams, rand: TextureRandomization,
                          seed: int) -> MillingParams:
    """Draw one randomized milling parameterization.

    Each listed field takes a uniform choice from its set; everything else
    keeps the base value. The center-jitter std couples to the sampled ring
    distance as multiplier * delta / CONF.
    """
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    delta = float(rng.choice(rand.delta_multipliers)) * base.delta
    sigma_c = float(rng.choice(rand.sigma_c_multipliers)) * delta / CONF
    epsilon = float(rng.choice(rand.epsilon_values))
    sigma_w = float(rng.choice(rand.sigma_w_minus_values)) / CONF
    sigma_lh = float(rng.choice(rand.sigma_lh_minus_values)) / CONF
    lam = float(rng.choice(rand.lambda_values))
    return replace(base, delta=delta, sigma_c=sigma_c, epsilon=epsilon,
                   sigma_w_minus=sigma_w, sigma_lh_minus=sigma_lh, lambda_=lam)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectConfig:
    name: str
    face_finishes: tuple[str, str, str]  # finish per face A, B, C
    milling: MillingParams = MillingParams()

    def __post_init__(self):
        for fin in self.face_finishes:
            if fin not in FINISHES:
                raise DatasetError(f"unknown finish {fin!r}")


@dataclass(frozen=True)
class DatasetConfig:
    objects: tuple[ObjectConfig, ...]
    defective_per_object: int           # K: also the number of correct instances
    texture_instances_per_finish: int
    viewpoint_faces: tuple[str, ...]    # inspected faces
    viewpoint_angles_deg: tuple[float, ...] = (0.0, 10.0, 20.0)
    face_size_mm: float = 8.0
    texture_spacing_mm: float = 0.02
    resolution: tuple[int, int] = (352, 288)   # (width, height)
    pixel_size_mm: float = 0.0069
    focal_length_mm: float = 16.0
    focus_distance_mm: float = 70.0
    light_major_radius_mm: float = 35.0
    light_minor_radius_mm: float = 4.0
    light_radiance: float = 1.0
    exposure: float = 6.0
    spp: int = 12
    bounces: int = 2
    roughness_range: tuple[float, float] = (0.05, 0.3)
    texture_rotation_range_deg: float = 15.0
    milling_stats: FieldStats = FieldStats(0.0, 0.003 ** 2, -1.0, 1.0)
    sandblast_exemplar_path: str | None = None  # stand-in generated when None
    split_ratios: tuple[int, int, int] = (70, 10, 20)
    master_seed: int = 0

    def __post_init__(self):
        if self.defective_per_object < 1:
            raise DatasetError("need at least one instance per object")
        for f in self.viewpoint_faces:
            if f not in FACE_NAMES:
                raise DatasetError(f"unknown viewpoint face {f!r}")

    @property
    def viewpoints(self):
        return [(f, a) for f in self.viewpoint_faces for a in self.viewpoint_angles_deg]


def desk_scale_config(master_seed: int = 0) -> DatasetConfig:
    """Two objects, K=3, one face at three angles: 36 images end to end."""
    return DatasetConfig(
        objects=(
            ObjectConfig("obj0", ("sandblasted", "sandblasted", "sandblasted")),
            ObjectConfig("obj1", ("parallel", "parallel", "parallel"),
                         milling=MillingParams(d=4.0, alpha=0.2)),
        ),
        defective_per_object=3,
        texture_instances_per_finish=2,
        viewpoint_faces=("A",),
        master_seed=master_seed,
    )


def paper_scale_config(master_seed: int = 0) -> DatasetConfig:
    """Production-sized plan: 10 objects x (30+30) instances x 9 viewpoints."""
    objects = []
    finishes = (["sandblasted"] * 2 + ["parallel"] * 4 + ["spiral"] * 4)
    heads = {"parallel": [(4.0, 0.2), (4.0, 0.5), (8.0, 0.5), (8.0, 0.8)],
             "spiral": [(4.0, 0.2), (4.0, 0.5), (8.0, 0.5), (8.0, 0.8)]}
    used = {"parallel": 0, "spiral": 0}
    for i, fin in enumerate(finishes):
        milling = MillingParams()
        if fin in heads:
            d, alpha = heads[fin][used[fin]]
            used[fin] += 1
            milling = MillingParams(d=d, alpha=alpha,
                                    path_mode="parallel" if fin == "parallel" else "spiral")
        objects.append(ObjectConfig(f"obj{i}", (fin, fin, fin), milling=milling))
    return DatasetConfig(
        objects=tuple(objects),
        defective_per_object=30,
        texture_instances_per_finish=5,
        viewpoint_faces=("A", "B", "C"),
        face_size_mm=20.0,
        texture_spacing_mm=0.0061,
        resolution=(1224, 1025),
        pixel_size_mm=0.00345,
        focal_length_mm=16.0,
        focus_distance_mm=100.0,
        spp=256,
        bounces=8,
        master_seed=master_seed,
    )


def _seed_for(master_seed: int, *tags) -> int:
    """Stable derived seed for a named purpose."""
    entropy = [np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF)]
    for t in tags:
        if isinstance(t, str):
            raw = t.encode()
            raw = raw.ljust(-(-len(raw) // 8) * 8, b"\0")
            entropy.extend(np.frombuffer(raw, dtype=np.uint64))
        else:
            entropy.append(np.uint64(int(t) & 0xFFFFFFFFFFFFFFFF))
    ss = np.random.SeedSequence([int(e) for e in entropy])
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def split_instances(n_instances: int, ratios=(70, 10, 20), seed: int = 0) -> list[str]:
    """Partition instance indices into train/val/test by the given ratios.

    Counts are floors of the exact shares with the remainder going to the
    largest fractional parts; assignment order is a seeded shuffle. All
    images of an instance inherit its split, which preserves label balance
    because each index carries one defective and one correct variant.
    """
    if n_instances < 3:
        raise DatasetError("need at least 3 instances to split")
    total = sum(ratios)
    exact = [n_instances * r / total for r in ratios]
    counts = [int(x) for x in exact]
    rem = n_instances - sum(counts)
    order = np.argsort([-(x - int(x)) for x in exact], kind="stable")
    for i in range(rem):
        counts[order[i]] += 1
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    shuffled = rng.permutation(n_instances)
    names = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    out = [""] * n_instances
    for idx, name in zip(shuffled, names):
        out[idx] = name
    return out


# ---------------------------------------------------------------------------
# mask post-processing
# ---------------------------------------------------------------------------

def filter_and_dilate_masks(image: np.ndarray, mask: np.ndarray,
                            visibility_threshold: float = 0.05,
                            dilate_px: int = 1) -> np.ndarray:
    """Drop invisible defect components, grow the survivors.

    Visibility of a connected component is the absolute difference between
    the mean image intensity inside it and in its surrounding ring (the
    mask dilated twice minus the mask), with intensities normalized to
    [0, 1]. Components are kept only when strictly above the threshold,
    then dilated by dilate_px preserving their class label.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.max() > 1.0:
        img = img / 255.0
    mask = np.asarray(mask)
    if mask.shape != img.shape:
        raise DatasetError("image and mask dims differ")
    solid = mask > 0
    if not solid.any():
        return np.zeros_like(mask)
    labeled, n_comp = ndimage.label(solid, structure=np.ones((3, 3)))
    out = np.zeros_like(mask)
    for comp in range(1, n_comp + 1):
        comp_mask = labeled == comp
        ring = ndimage.binary_dilation(comp_mask, iterations=2) & ~comp_mask
        if not ring.any():
            continue
        visibility = abs(float(img[comp_mask].mean()) - float(img[ring].mean()))
        if visibility > visibility_threshold:
            grown = ndimage.binary_dilation(comp_mask, iterations=dilate_px) \
                if dilate_px > 0 else comp_mask
            cls = np.bincount(mask[comp_mask].ravel()).argmax()
            out[grown & (out == 0)] = cls
    return out


# ---------------------------------------------------------------------------
# object geometry and scenes
# ---------------------------------------------------------------------------

def _face_frames(face_size_mm: float):
    """Origin/edge vectors for faces A (top), B and C (40-degree bevels)."""
    s = face_size_mm
    tilt = np.deg2rad(40.0)
    c, sn = np.cos(tilt), np.sin(tilt)
    return {
        "A": (np.array([-s / 2, -s / 2, 0.0]),
              np.array([s, 0.0, 0.0]), np.array([0.0, s, 0.0])),
        "B": (np.array([s / 2, -s / 2, 0.0]),
              np.array([s * c, 0.0, -s * sn]), np.array([0.0, s, 0.0])),
        "C": (np.array([-s / 2, s / 2, 0.0]),
              np.array([s, 0.0, 0.0]), np.array([0.0, s * c, -s * sn])),
    }


def _viewpoint_camera(config: DatasetConfig, face_name: str, angle_deg: float):
    frames = _face_frames(config.face_size_mm)
    origin, edge_u, edge_v = frames[face_name]
    center = origin + 0.5 * edge_u + 0.5 * edge_v
    normal = np.cross(edge_u, edge_v)
    normal /= np.linalg.norm(normal)
    u_hat = edge_u / np.linalg.norm(edge_u)
    a = np.deg2rad(angle_deg)
    direction = np.cos(a) * normal + np.sin(a) * u_hat
    position = center + config.focus_distance_mm * direction
    up = np.cross(direction, u_hat)
    cam = PinholeCamera.look_at(
        config.resolution[0], config.resolution[1], config.pixel_size_mm,
        config.focal_length_mm, position, center, up=up)
    light = RingLight(config.light_major_radius_mm, config.light_minor_radius_mm,
                      config.light_radiance, center=cam.position, axis=cam.forward)
    return cam, light


def make_stand_in_exemplar(rows: int, cols: int, spacing_mm: float, seed: int,
                           correlation_mm: float = 0.08,
                           std_mm: float = 0.004) -> HeightField:
    """Synthetic measurement stand-in for sandblast input: a stationary
    Gaussian field with a Gaussian autocovariance. Demo/test input only; a
    real pipeline imports microscope topographies here."""
    rng = np.random.default_rng(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
    white = rng.standard_normal((rows, cols))
    sigma_px = correlation_mm / spacing_mm
    smooth = ndimage.gaussian_filter(white, sigma_px, mode="wrap")
    smooth *= std_mm / smooth.std()
    return HeightField(spacing_mm, smooth)


def _texture_size_px(config: DatasetConfig) -> int:
    # cover the face under +-15 degree rotation plus the texel shifts
    need = config.face_size_mm * 1.35 + 8 * config.texture_spacing_mm
    return int(np.ceil(need / config.texture_spacing_mm))


def generate_texture_instance(config: DatasetConfig, finish: str,
                              milling_base: MillingParams, instance_idx: int,
                              rand: TextureRandomization | None = None) -> HeightField:
    """One texture field of the requested finish, large enough for any face."""
    side = _texture_size_px(config)
    seed = _seed_for(config.master_seed, "texture", finish, instance_idx)
    if finish == "sandblasted":
        if config.sandblast_exemplar_path:
            from surfgen.grid import read_grid
            exemplar = read_grid(config.sandblast_exemplar_path)
        else:
            ex_seed = _seed_for(config.master_seed, "exemplar", instance_idx)
            exemplar = make_stand_in_exemplar(
                min(side, 512), min(side, 512), config.texture_spacing_mm, ex_seed)
        patch = min(side, min(exemplar.rows, exemplar.cols))
        params = SandblastParams(
            out_rows=side, out_cols=side,
            target_spacing_mm=config.texture_spacing_mm,
            patch_rows=patch, patch_cols=patch,
            overlap_px=max(4, patch // 4), seed=seed)
        return generate_sandblast(exemplar, params)
    rand = rand or TextureRandomization()
    mode = "parallel" if finish == "parallel" else "spiral"
    params = sample_texture_params(replace(milling_base, path_mode=mode), rand, seed)
    params = replace(params, seed=seed)
    return generate_milling(config.milling_stats, params, side, side,
                            config.texture_spacing_mm)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _instance_records(config: DatasetConfig):
    """Manifest object records: K defective + K correct per physical object."""
    records = []
    for obj in config.objects:
        for kind in ("defective", "correct"):
            for k in range(config.defective_per_object):
                seed = _seed_for(config.master_seed, "assign", obj.name, kind, k)
                rng = np.random.default_rng(np.uint64(seed))
                faces = {}
                for fi, fname in enumerate(FACE_NAMES):
                    finish = obj.face_finishes[fi]
                    tex_idx = int(rng.integers(0, config.texture_instances_per_finish))
                    rotation = float(rng.uniform(-config.texture_rotation_range_deg,
                                                 config.texture_rotation_range_deg))
                    faces[fname] = {
                        "finish": finish,
                        "texture_instance": f"{finish}_{tex_idx}",
                        "rotation_deg": round(rotation, 6),
                        "translation_px": FACE_TRANSLATION_PX[fname],
                    }
                roughness = float(np.round(rng.uniform(*config.roughness_range), 6))
                records.append({
                    "object_id": f"{obj.name}_{kind}{k}",
                    "physical_object": obj.name,
                    "kind": kind,
                    "instance_index": k,
                    "defect_geometry_id": k if kind == "defective" else None,
                    "roughness": roughness,
                    "faces": faces,
                })
    return records


def build_manifest(config: DatasetConfig, scale_name: str) -> dict:
    """Deterministic manifest: objects, viewpoints, images and splits."""
    split_of = split_instances(config.defective_per_object, config.split_ratios,
                               _seed_for(config.master_seed, "split"))
    viewpoints = [{"id": f"{face}_{int(angle)}", "face": face, "angle_deg": angle}
                  for face, angle in config.viewpoints]
    objects = _instance_records(config)
    images = []
    for rec in objects:
        split = split_of[rec["instance_index"]]
        rec["split"] = split
        for vp in viewpoints:
            stem = f"{rec['object_id']}_{vp['id']}"
            images.append({
                "image": f"images/{stem}.png",
                "label": f"labels/{stem}.png",
                "meta": f"meta/{stem}.json",
                "object_id": rec["object_id"],
                "viewpoint_id": vp["id"],
                "split": split,
                "defective": rec["kind"] == "defective",
                "effectively_correct": False,
                "render_seed": _seed_for(config.master_seed, "render",
                                         rec["object_id"], vp["id"]),
            })
    return {
        "scale": scale_name,
        "master_seed": config.master_seed,
        "counts": {
            "images": len(images),
            "defective_images": sum(1 for im in images if im["defective"]),
            "objects": len(objects),
        },
        "viewpoints": viewpoints,
        "objects": objects,
        "images": images,
        "failures": [],
    }


def _bake_instance_fields(config: DatasetConfig, rec, textures, defect_sets):
    """Face-aligned height fields + label masks for one object instance."""
    fields = {}
    labels = {}
    for fname in FACE_NAMES:
        fspec = rec["faces"][fname]
        tex = textures[fspec["texture_instance"]]
        baked = sample_face_field(tex, config.face_size_mm, config.face_size_mm,
                                  fspec["rotation_deg"],
                                  (fspec["translation_px"], 0.0))
        label = np.zeros((baked.rows, baked.cols), dtype=np.uint8)
        if rec["kind"] == "defective":
            for inst in defect_sets[rec["defect_geometry_id"]].get(fname, []):
                built = build_tool(inst, config.texture_spacing_mm)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    baked, _, shell = imprint_with_masks(baked, built)
                label[shell] = built.class_label
        fields[fname] = baked
        labels[fname] = label
    return fields, labels


def _sample_defect_sets(config: DatasetConfig):
    """K defect geometry sets, each split across the three faces."""
    sets = []
    for k in range(config.defective_per_object):
        seed = _seed_for(config.master_seed, "defects", k)
        insts = sample_defect_set(default_defect_specs(), config.face_size_mm,
                                  config.face_size_mm, "uniform", seed,
                                  margin_mm=0.05 * config.face_size_mm)
        rng = np.random.default_rng(np.uint64(_seed_for(config.master_seed,
                                                        "defect_faces", k)))
        per_face = {f: [] for f in FACE_NAMES}
        for inst in insts:
            per_face[FACE_NAMES[int(rng.integers(0, len(FACE_NAMES)))]].append(inst)
        sets.append(per_face)
    return sets


def _scene_for(config: DatasetConfig, rec, fields, labels, face_name, angle):
    frames = _face_frames(config.face_size_mm)
    cam, light = _viewpoint_camera(config, face_name, angle)
    faces = []
    annotations = {}
    for i, fname in enumerate(FACE_NAMES):
        origin, edge_u, edge_v = frames[fname]
        faces.append(FaceBinding(
            origin=origin, edge_u=edge_u, edge_v=edge_v,
            normal_map=height_to_normal(fields[fname]),
            texture_spacing_mm=config.texture_spacing_mm,
            brdf_roughness=rec["roughness"],
            base_reflectance=0.9))
        if labels[fname].any():
            annotations[i] = labels[fname]
    return Scene(camera=cam, light=light, faces=tuple(faces),
                 annotations=annotations, exposure=config.exposure)


def generate_dataset(config: DatasetConfig, out_dir, scale_name: str = "desk",
                     dry_run: bool = False) -> dict:
    """Produce the manifest and, unless dry_run, all images/labels/masks.

    Per-image render failures are collected in manifest['failures'] instead
    of aborting the batch.
    """
    out_dir = Path(out_dir)
    manifest = build_manifest(config, scale_name)
    if dry_run:
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_manifest(out_dir, manifest)
        return manifest

    t_start = time.time()
    for sub in ("images", "labels", "meta", "masks"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)

    textures = {}
    for obj in config.objects:
        for fi, finish in enumerate(obj.face_finishes):
            for idx in range(config.texture_instances_per_finish):
                key = f"{finish}_{idx}"
                if key not in textures:
                    textures[key] = generate_texture_instance(
                        config, finish, obj.milling, idx)
    defect_sets = _sample_defect_sets(config)

    # per-viewpoint meta-masks of the inspected face, shared by all instances
    face_index = {f: i for i, f in enumerate(FACE_NAMES)}
    rec0 = manifest["objects"][0]
    fields0, labels0 = _bake_instance_fields(config, rec0, textures, defect_sets)
    for vp in manifest["viewpoints"]:
        scene = _scene_for(config, rec0, fields0, labels0, vp["face"], vp["angle_deg"])
        _, aux = render_annotation(scene)
        meta_mask = aux["face_map"] == face_index[vp["face"]]
        Image.fromarray((meta_mask * 255).astype(np.uint8)).save(
            out_dir / "masks" / f"{vp['id']}.png")

    by_object = {}
    images_by_obj = {}
    for im in manifest["images"]:
        images_by_obj.setdefault(im["object_id"], []).append(im)
    for rec in manifest["objects"]:
        by_object[rec["object_id"]] = rec

    for rec in manifest["objects"]:
        fields, labels = _bake_instance_fields(config, rec, textures, defect_sets)
        for im in images_by_obj[rec["object_id"]]:
            vp = next(v for v in manifest["viewpoints"] if v["id"] == im["viewpoint_id"])
            try:
                scene = _scene_for(config, rec, fields, labels,
                                   vp["face"], vp["angle_deg"])
                linear, _ = render_image(scene, config.spp, config.bounces,
                                         im["render_seed"])
                img8 = encode_image(linear, config.exposure)
                label_img, _ = render_annotation(scene)
                filtered = filter_and_dilate_masks(img8, label_img)
                if im["defective"] and not filtered.any():
                    im["effectively_correct"] = True
                Image.fromarray(img8).save(out_dir / im["image"])
                Image.fromarray(filtered.astype(np.uint8)).save(out_dir / im["label"])
                (out_dir / im["meta"]).write_text(json.dumps({
                    "seed": im["render_seed"], "spp": config.spp,
                    "bounces": config.bounces, "viewpoint_id": im["viewpoint_id"],
                    "object_id": im["object_id"], "roughness": rec["roughness"],
                }, sort_keys=True))
            except Exception as exc:  # keep the batch going
                manifest["failures"].append({"image": im["image"], "error": str(exc)})
    manifest["runtime_s"] = round(time.time() - t_start, 3)
    _write_manifest(out_dir, manifest)
    return manifest


def _write_manifest(out_dir: Path, manifest: dict):
    stable = dict(manifest)
    stable.pop("runtime_s", None)  # keep manifests byte-identical across runs
    (out_dir / "manifest.json").write_text(json.dumps(stable, indent=2, sort_keys=True))
