import numpy as np
import pytest

from surfgen.defects import (
    CLASS_DENT,
    CLASS_SCRATCH,
    DefectError,
    DefectSpec,
    build_tool,
    default_defect_specs,
    dent_tool,
    imprint_with_masks,
    sample_defect_set,
    scratch_tool,
    specs_from_json,
    specs_to_json,
)
from surfgen.grid import HeightField


def flat_surface(size=400, spacing=0.01, height=0.0):
    return HeightField(spacing, np.full((size, size), height))


class TestSampleDefectSet:
    def test_default_table_gives_twelve_instances(self):
        insts = sample_defect_set(default_defect_specs(), 20.0, 20.0, seed=1)
        assert len(insts) == 12
        assert sum(i.class_label == CLASS_DENT for i in insts) == 8
        assert sum(i.class_label == CLASS_SCRATCH for i in insts) == 4

    def test_zero_quantities_give_empty_list(self):
        specs = [DefectSpec("small_dent", 0, (0.02, 0.2), elongation=(1, 2),
                            depth_mm=(0.05, 0.2))]
        assert sample_defect_set(specs, 10.0, 10.0, seed=0) == []

    def test_empty_spec_list_ok(self):
        assert sample_defect_set([], 10.0, 10.0, seed=0) == []

    def test_diameter_range_covered(self):
        specs = [DefectSpec("small_dent", 10_000, (0.02, 0.2), elongation=(1, 2),
                            depth_mm=(0.05, 0.2))]
        insts = sample_defect_set(specs, 10.0, 10.0, seed=3)
        d = np.array([i.diameter_mm for i in insts])
        assert d.min() >= 0.02 and d.max() <= 0.2
        # empirical range must cover at least 95% of the configured interval
        assert (d.max() - d.min()) >= 0.95 * (0.2 - 0.02)

    def test_positions_inside_face(self):
        insts = sample_defect_set(default_defect_specs(), 5.0, 7.0, seed=4)
        for i in insts:
            assert 0 <= i.position[0] <= 5.0
            assert 0 <= i.position[1] <= 7.0

    def test_normal_distribution_mode(self):
        insts = sample_defect_set(default_defect_specs(), 10.0, 10.0,
                                  distribution="normal", seed=5)
        assert len(insts) == 12

    def test_reproducible_under_seed(self):
        a = sample_defect_set(default_defect_specs(), 10.0, 10.0, seed=9)
        b = sample_defect_set(default_defect_specs(), 10.0, 10.0, seed=9)
        assert all(x.position == y.position and x.diameter_mm == y.diameter_mm
                   for x, y in zip(a, b))

    def test_specs_json_round_trip(self):
        specs = default_defect_specs()
        back = specs_from_json(specs_to_json(specs))
        assert back == specs


class TestDentTool:
    def test_circular_cap_is_rotation_invariant(self):
        a = dent_tool(0.2, 1.0, 0.1, 0.0, 0.002)
        b = dent_tool(0.2, 1.0, 0.1, 1.234, 0.002)
        assert np.allclose(a, b, atol=1e-8)

    def test_apex_depth_and_boundary(self):
        tool = dent_tool(0.2, 1.0, 0.2, 0.0, 0.002)
        assert tool.min() == pytest.approx(-0.2, abs=1e-9)
        assert tool[0, :].max() == 0.0 and tool[0, :].min() == 0.0
        center = (tool.shape[0] // 2, tool.shape[1] // 2)
        assert tool[center] == pytest.approx(-0.2, abs=1e-9)

    def test_elongation_sets_aspect_ratio(self):
        tool = dent_tool(0.2, 4.0, 0.1, 0.0, 0.001)
        support = tool < 0
        rows = np.flatnonzero(support.any(axis=1))
        cols = np.flatnonzero(support.any(axis=0))
        height = rows[-1] - rows[0] + 1
        width = cols[-1] - cols[0] + 1
        assert height / width == pytest.approx(4.0, rel=0.05)

    def test_invalid_rejected(self):
        with pytest.raises(DefectError):
            dent_tool(0.0, 1.0, 0.1, 0.0, 0.01)
        with pytest.raises(DefectError):
            dent_tool(0.1, 0.5, 0.1, 0.0, 0.01)


class TestScratchTool:
    def test_zero_curviness_is_straight_with_exact_length(self):
        tool, poly, anchor = scratch_tool(5.0, 1.0, 0.1, 0.0, seed=2, spacing_mm=0.01)
        segs = np.diff(poly, axis=0)
        total = np.sum(np.hypot(segs[:, 0], segs[:, 1]))
        assert total == pytest.approx(5.0, abs=1e-9)
        # straight: endpoint distance equals total length
        chord = np.hypot(*(poly[-1] - poly[0]))
        assert chord == pytest.approx(5.0, abs=1e-9)

    def test_segment_count(self):
        _, poly, _ = scratch_tool(20.0, 1.0, 0.1, 0.3, seed=7, spacing_mm=0.05)
        assert len(poly) - 1 == 20

    def test_swept_area_close_to_length_times_diameter(self):
        spacing = 0.005
        tool, poly, _ = scratch_tool(10.0, 0.5, 0.2, 0.05, seed=11, spacing_mm=spacing)
        area = np.count_nonzero(tool < 0) * spacing ** 2
        assert area == pytest.approx(10.0 * 0.2, rel=0.15)

    def test_depth_is_half_diameter(self):
        tool, _, _ = scratch_tool(3.0, 0.5, 0.2, 0.0, seed=1, spacing_mm=0.002)
        assert tool.min() == pytest.approx(-0.1, abs=1e-3)

    def test_degenerate_step_rejected(self):
        with pytest.raises(DefectError):
            scratch_tool(1.0, 0.0, 0.1, 0.0, seed=0, spacing_mm=0.01)
        with pytest.raises(DefectError):
            scratch_tool(0.5, 1.0, 0.1, 0.0, seed=0, spacing_mm=0.01)


class TestImprint:
    def make_dent_instance(self, position=(2.0, 2.0), diameter=0.5, elongation=2.0,
                           depth=0.1, spacing=0.01):
        specs = [DefectSpec("big_dent", 1, (diameter, diameter),
                            elongation=(elongation, elongation),
                            depth_mm=(depth, depth))]
        inst = sample_defect_set(specs, 4.0, 4.0, seed=0)[0]
        inst = type(inst)(**{**inst.__dict__, "position": position,
                             "rotation_rad": 0.0})
        return build_tool(inst, spacing)

    def test_zero_depth_tool_is_noop(self):
        surface = flat_surface()
        inst = self.make_dent_instance()
        inst = type(inst)(**{**inst.__dict__, "tool": np.zeros_like(inst.tool)})
        out, solid, shell = imprint_with_masks(surface, inst)
        assert np.array_equal(out.data, surface.data)
        assert not solid.any() and not shell.any()

    def test_never_raises_surface(self):
        rng = np.random.default_rng(21)
        surface = HeightField(0.01, rng.normal(scale=0.005, size=(400, 400)))
        inst = self.make_dent_instance()
        out, solid, shell = imprint_with_masks(surface, inst)
        assert np.all(out.data <= surface.data + 1e-15)

    def test_solid_mask_is_exactly_lowered_set(self):
        rng = np.random.default_rng(22)
        surface = HeightField(0.01, rng.normal(scale=0.002, size=(400, 400)))
        inst = self.make_dent_instance()
        out, solid, _ = imprint_with_masks(surface, inst)
        assert np.array_equal(solid, out.data < surface.data)

    def test_shell_equals_solid_at_shrink_one(self):
        surface = flat_surface()
        inst = self.make_dent_instance()
        out, solid, shell = imprint_with_masks(surface, inst, shell_shrink=1.0)
        assert np.array_equal(shell, solid)

    def test_shell_subset_of_solid_for_all_shrinks(self):
        surface = flat_surface()
        inst = self.make_dent_instance()
        for shrink in (0.9, 0.95, 1.0):
            _, solid, shell = imprint_with_masks(surface, inst, shell_shrink=shrink)
            assert not np.any(shell & ~solid)
            assert shell.sum() > 0

    def test_dent_area_matches_ellipse(self):
        spacing = 0.005
        surface = flat_surface(size=800, spacing=spacing)
        inst = self.make_dent_instance(diameter=0.5, elongation=2.0, spacing=spacing)
        _, solid, _ = imprint_with_masks(surface, inst)
        a = 0.25  # semi-axes in mm
        b = 0.5
        expect = np.pi * a * b
        area = solid.sum() * spacing ** 2
        assert area == pytest.approx(expect, rel=0.05)

    def test_outside_face_is_noop_with_warning(self):
        surface = flat_surface(size=100)
        inst = self.make_dent_instance(position=(9.5, 9.5))
        with pytest.warns(UserWarning, match="outside"):
            out, solid, shell = imprint_with_masks(surface, inst)
        assert np.array_equal(out.data, surface.data)
        assert not solid.any()

    def test_disjoint_imprints_commute(self):
        rng = np.random.default_rng(23)
        surface = HeightField(0.01, rng.normal(scale=0.002, size=(400, 400)))
        i1 = self.make_dent_instance(position=(1.0, 1.0))
        i2 = self.make_dent_instance(position=(3.0, 3.0))
        a, _, _ = imprint_with_masks(*imprint_with_masks(surface, i1)[:1], i2)
        b, _, _ = imprint_with_masks(*imprint_with_masks(surface, i2)[:1], i1)
        assert np.array_equal(a.data, b.data)

    def test_scratch_imprint_labels(self):
        surface = flat_surface(size=600, spacing=0.01)
        specs = [DefectSpec("flat_scratch", 1, (0.1, 0.1), path_length_mm=(2.0, 2.0),
                            step_size_mm=0.1, curviness=0.0)]
        inst = sample_defect_set(specs, 6.0, 6.0, seed=3)[0]
        inst = type(inst)(**{**inst.__dict__, "position": (3.0, 3.0)})
        inst = build_tool(inst, 0.01)
        out, solid, shell = imprint_with_masks(surface, inst)
        assert inst.class_label == CLASS_SCRATCH
        assert solid.sum() > 0
        assert np.all(out.data <= surface.data)
