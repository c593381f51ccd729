import json

import numpy as np
import pytest

from surfgen.dataset import (
    DatasetConfig,
    DatasetError,
    ObjectConfig,
    TextureRandomization,
    build_manifest,
    desk_scale_config,
    filter_and_dilate_masks,
    generate_dataset,
    make_stand_in_exemplar,
    paper_scale_config,
    sample_texture_params,
    split_instances,
)
from surfgen.milling import CONF, MillingParams


def micro_config(seed=0):
    """Smallest structurally valid config for end-to-end runs."""
    return DatasetConfig(
        objects=(ObjectConfig("obj0", ("parallel", "parallel", "parallel")),),
        defective_per_object=3,
        texture_instances_per_finish=1,
        viewpoint_faces=("A",),
        viewpoint_angles_deg=(0.0,),
        face_size_mm=4.0,
        texture_spacing_mm=0.03,
        resolution=(96, 80),
        spp=2,
        bounces=1,
        master_seed=seed,
    )


class TestSampleTextureParams:
    def test_singleton_sets_reproduce_defaults(self):
        base = MillingParams()
        rand = TextureRandomization(
            sigma_c_multipliers=(0.01,), delta_multipliers=(1.0,),
            epsilon_values=(0.01,), sigma_w_minus_values=(0.025,),
            sigma_lh_minus_values=(0.8,), lambda_values=(50.0,))
        out = sample_texture_params(base, rand, seed=4)
        assert out.delta == base.delta
        assert out.epsilon == base.epsilon
        assert out.sigma_w_minus == pytest.approx(0.025 / CONF)
        assert out.sigma_lh_minus == pytest.approx(0.8 / CONF)
        assert out.lambda_ == 50.0
        assert out.sigma_c == pytest.approx(0.01 * base.delta / CONF)

    def test_delta_multipliers_cover_their_set(self):
        base = MillingParams()
        rand = TextureRandomization()
        seen = set()
        for seed in range(1000):
            out = sample_texture_params(base, rand, seed)
            seen.add(round(out.delta, 6))
            assert 0.063 - 1e-9 <= out.delta <= 0.099 + 1e-9
        expect = {round(m * 0.09, 6) for m in rand.delta_multipliers}
        assert seen == expect

    def test_deterministic(self):
        base = MillingParams()
        rand = TextureRandomization()
        assert sample_texture_params(base, rand, 7) == sample_texture_params(base, rand, 7)

    def test_empty_set_rejected(self):
        with pytest.raises(DatasetError):
            TextureRandomization(delta_multipliers=())


class TestSplitInstances:
    def test_thirty_instances(self):
        splits = split_instances(30, (70, 10, 20), seed=0)
        assert splits.count("train") == 21
        assert splits.count("val") == 3
        assert splits.count("test") == 6

    def test_ten_instances(self):
        splits = split_instances(10, (70, 10, 20), seed=1)
        assert splits.count("train") == 7
        assert splits.count("val") == 1
        assert splits.count("test") == 2

    def test_partition_property(self):
        splits = split_instances(17, (70, 10, 20), seed=2)
        assert len(splits) == 17
        assert all(s in ("train", "val", "test") for s in splits)

    def test_too_few_rejected(self):
        with pytest.raises(DatasetError):
            split_instances(2)


class TestManifest:
    def test_desk_counts(self):
        man = build_manifest(desk_scale_config(0), "desk")
        assert man["counts"]["images"] == 36
        assert man["counts"]["defective_images"] == 18

    def test_paper_scale_dry_run_counts(self):
        man = build_manifest(paper_scale_config(3), "paper")
        assert man["counts"]["images"] == 5400
        assert man["counts"]["defective_images"] == 2700
        # equal correct/defective everywhere
        defective = [im for im in man["images"] if im["defective"]]
        assert len(defective) * 2 == len(man["images"])

    def test_paper_split_follows_instance_ratio(self):
        man = build_manifest(paper_scale_config(3), "paper")
        by_split = {}
        for rec in man["objects"]:
            by_split.setdefault(rec["split"], []).append(rec)
        # 30 instances -> 21/3/6, times 10 objects and 2 kinds
        assert len(by_split["train"]) == 21 * 20
        assert len(by_split["val"]) == 3 * 20
        assert len(by_split["test"]) == 6 * 20
        # all images of an instance share its split
        split_of = {rec["object_id"]: rec["split"] for rec in man["objects"]}
        assert all(im["split"] == split_of[im["object_id"]] for im in man["images"])

    def test_defect_geometries_reused_across_objects(self):
        man = build_manifest(paper_scale_config(3), "paper")
        per_object = {}
        for rec in man["objects"]:
            if rec["kind"] == "defective":
                per_object.setdefault(rec["physical_object"], set()).add(
                    rec["defect_geometry_id"])
        ids = list(per_object.values())
        assert all(s == ids[0] == set(range(30)) for s in ids)

    def test_manifest_deterministic(self):
        a = build_manifest(desk_scale_config(5), "desk")
        b = build_manifest(desk_scale_config(5), "desk")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


class TestFilterMasks:
    def disc_fixture(self, contrast, base=0.2, radius=6):
        img = np.full((48, 48), base)
        mask = np.zeros((48, 48), dtype=np.uint8)
        yy, xx = np.mgrid[0:48, 0:48]
        disc = (yy - 24) ** 2 + (xx - 24) ** 2 <= radius ** 2
        img[disc] = base + contrast
        mask[disc] = 1
        return img, mask

    def test_invisible_component_removed(self):
        img, mask = self.disc_fixture(contrast=0.0)
        out = filter_and_dilate_masks(img, mask)
        assert not out.any()

    def test_visible_component_kept_and_grown(self):
        img, mask = self.disc_fixture(contrast=0.2)
        out = filter_and_dilate_masks(img, mask, dilate_px=1)
        assert (out > 0).sum() > (mask > 0).sum()
        assert np.all(out[mask > 0] == 1)

    def test_exact_threshold_is_removed(self):
        # strictly-greater rule: visibility == threshold drops the component
        img, mask = self.disc_fixture(contrast=0.3)
        from scipy import ndimage
        comp = mask > 0
        ring = ndimage.binary_dilation(comp, iterations=2) & ~comp
        vis = abs(img[comp].mean() - img[ring].mean())
        assert filter_and_dilate_masks(img, mask, visibility_threshold=vis).sum() == 0
        kept = filter_and_dilate_masks(img, mask, visibility_threshold=vis - 1e-9)
        assert kept.sum() > 0

    def test_empty_mask_passthrough(self):
        img = np.zeros((16, 16))
        out = filter_and_dilate_masks(img, np.zeros((16, 16), dtype=np.uint8))
        assert out.shape == (16, 16) and not out.any()

    def test_mixed_visibility_components(self):
        img = np.full((64, 64), 0.5)
        mask = np.zeros((64, 64), dtype=np.uint8)
        img[8:14, 8:14] = 0.9   # visible dent
        mask[8:14, 8:14] = 1
        mask[40:46, 40:46] = 2  # invisible scratch (no contrast)
        out = filter_and_dilate_masks(img, mask)
        assert (out == 1).sum() > 0
        assert (out == 2).sum() == 0


class TestGenerateDataset:
    def test_dry_run_writes_only_manifest(self, tmp_path):
        man = generate_dataset(paper_scale_config(0), tmp_path, "paper", dry_run=True)
        assert (tmp_path / "manifest.json").exists()
        assert not (tmp_path / "images").exists()
        assert man["counts"]["images"] == 5400

    def test_micro_end_to_end(self, tmp_path):
        cfg = micro_config(7)
        man = generate_dataset(cfg, tmp_path, "micro")
        assert man["failures"] == []
        assert man["counts"]["images"] == 6
        for im in man["images"]:
            assert (tmp_path / im["image"]).exists()
            assert (tmp_path / im["label"]).exists()
            meta = json.loads((tmp_path / im["meta"]).read_text())
            assert meta["spp"] == cfg.spp and meta["bounces"] == cfg.bounces
            assert meta["viewpoint_id"] == im["viewpoint_id"]
        # defective images carry labels or the effectively-correct flag
        from PIL import Image
        for im in man["images"]:
            if im["defective"] and not im["effectively_correct"]:
                label = np.asarray(Image.open(tmp_path / im["label"]))
                assert label.any()
        assert (tmp_path / "masks" / "A_0.png").exists()

    def test_micro_reruns_are_byte_identical(self, tmp_path):
        import hashlib
        cfg = micro_config(9)
        h = []
        for run in ("r1", "r2"):
            man = generate_dataset(cfg, tmp_path / run, "micro")
            digest = hashlib.sha256()
            digest.update((tmp_path / run / "manifest.json").read_bytes())
            for im in man["images"]:
                digest.update((tmp_path / run / im["image"]).read_bytes())
                digest.update((tmp_path / run / im["label"]).read_bytes())
            h.append(digest.hexdigest())
        assert h[0] == h[1]


class TestStandInExemplar:
    def test_stats_and_determinism(self):
        a = make_stand_in_exemplar(128, 128, 0.02, seed=3)
        b = make_stand_in_exemplar(128, 128, 0.02, seed=3)
        assert np.array_equal(a.data, b.data)
        assert a.data.std() == pytest.approx(0.004, rel=1e-6)
