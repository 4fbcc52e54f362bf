import numpy as np
import pytest

from segcritic import errors
from segcritic.core import (
    HumanProvenance,
    ImageRaster,
    LogitMap,
    RegionSelection,
    SegmentationMask,
)
from segcritic.regions import (
    WandParams,
    apply_correction,
    clahe,
    morph_cleanup,
    refine_selection,
    wand_select,
)

from conftest import blocky_image, random_image
from oracles import dilate_oracle, erode_oracle, flood_fill_oracle


class TestWand:
    def test_uniform_image_selects_all(self):
        img = ImageRaster(np.full((4, 4, 3), 99, np.uint8))
        sel = wand_select(img, (1, 2), WandParams(tolerance=0, connectivity=4))
        assert sel.size == 16

    def test_unique_seed_color_singleton(self):
        px = np.zeros((4, 4, 3), np.uint8)
        px[2, 3] = (200, 10, 10)
        sel = wand_select(ImageRaster(px), (3, 2), WandParams(tolerance=0))
        assert sel.size == 1
        assert sel.membership[2, 3]

    def test_diagonal_blobs_connectivity(self):
        # two same-color blobs touching only at a diagonal
        px = np.zeros((4, 4, 3), np.uint8)
        color = (250, 250, 250)
        px[0, 0] = px[0, 1] = px[1, 0] = px[1, 1] = color
        px[2, 2] = px[2, 3] = px[3, 2] = px[3, 3] = color
        img = ImageRaster(px)
        sel4 = wand_select(img, (0, 0), WandParams(tolerance=0, connectivity=4))
        sel8 = wand_select(img, (0, 0), WandParams(tolerance=0, connectivity=8))
        oracle4 = flood_fill_oracle(px, (0, 0), 0, 4)
        oracle8 = flood_fill_oracle(px, (0, 0), 0, 8)
        assert np.array_equal(sel4.membership, oracle4)
        assert np.array_equal(sel8.membership, oracle8)
        assert sel4.size == 4
        assert sel8.size == 8

    def test_seed_out_of_bounds(self):
        img = ImageRaster(np.zeros((4, 4, 3), np.uint8))
        with pytest.raises(errors.SeedOutOfBounds):
            wand_select(img, (4, 0), WandParams())

    def test_matches_oracle_random(self, rng):
        for _ in range(150):
            img = blocky_image(rng, 16, 16)
            x, y = int(rng.integers(16)), int(rng.integers(16))
            tol = float(rng.uniform(0, 200))
            conn = int(rng.choice([4, 8]))
            sel = wand_select(img, (x, y), WandParams(tolerance=tol, connectivity=conn))
            oracle = flood_fill_oracle(img.pixels, (x, y), tol, conn)
            assert np.array_equal(sel.membership, oracle)

    def test_monotone_in_tolerance(self, rng):
        for _ in range(30):
            img = blocky_image(rng, 12, 12)
            x, y = int(rng.integers(12)), int(rng.integers(12))
            t1, t2 = sorted(rng.uniform(0, 250, 2))
            s1 = wand_select(img, (x, y), WandParams(tolerance=t1))
            s2 = wand_select(img, (x, y), WandParams(tolerance=t2))
            assert not (s1.membership & ~s2.membership).any()

    def test_tolerance_cap(self):
        with pytest.raises(ValueError):
            WandParams(tolerance=500)


class TestRefine:
    def test_center_pixel_expand(self):
        m = np.zeros((5, 5), bool)
        m[2, 2] = True
        out = refine_selection(RegionSelection(m), "expand", 1)
        assert out.size == 9
        assert out.membership[1:4, 1:4].all()

    def test_full_frame_expand_unchanged(self):
        sel = RegionSelection.full(6, 6)
        out = refine_selection(sel, "expand", 2)
        assert np.array_equal(out.membership, sel.membership)

    def test_opening_fixed_point(self):
        m = np.zeros((8, 8), bool)
        m[2:5, 3:6] = True
        sel = RegionSelection(m)
        out = refine_selection(refine_selection(sel, "shrink", 1), "expand", 1)
        assert np.array_equal(out.membership, m)

    def test_matches_morphology_oracle(self, rng):
        for _ in range(40):
            m = rng.random((8, 8)) < 0.5
            r = int(rng.integers(1, 3))
            sel = RegionSelection(m)
            assert np.array_equal(
                refine_selection(sel, "expand", r).membership, dilate_oracle(m, r)
            )
            assert np.array_equal(
                refine_selection(sel, "shrink", r).membership, erode_oracle(m, r)
            )

    def test_monotone(self, rng):
        m = rng.random((10, 10)) < 0.5
        sel = RegionSelection(m)
        grown = refine_selection(sel, "expand", 1).membership
        shrunk = refine_selection(sel, "shrink", 1).membership
        assert (grown | m).sum() == grown.sum()  # expand is a superset
        assert (shrunk & m).sum() == shrunk.sum()  # shrink is a subset


class TestApplyCorrection:
    def test_full_selection_constant_mask(self):
        mask = SegmentationMask(np.zeros((4, 4), np.uint8))
        out, record = apply_correction(
            mask, RegionSelection.full(4, 4), 1, "context_reweighting", HumanProvenance(1, 2.0)
        )
        assert (out.labels == 1).all()
        assert record.corrected_class == 1

    def test_empty_selection_rejected(self):
        mask = SegmentationMask(np.zeros((4, 4), np.uint8))
        with pytest.raises(errors.EmptySelection):
            apply_correction(
                mask, RegionSelection.empty(4, 4), 1, "boundary_refinement", HumanProvenance(1, 2.0)
            )

    def test_class_out_of_range(self):
        mask = SegmentationMask(np.zeros((4, 4), np.uint8))
        with pytest.raises(errors.ClassOutOfRange):
            apply_correction(
                mask, RegionSelection.full(4, 4), 7, "boundary_refinement", HumanProvenance(1, 2.0)
            )

    def test_dimension_mismatch(self):
        mask = SegmentationMask(np.zeros((4, 4), np.uint8))
        with pytest.raises(errors.DimensionMismatch):
            apply_correction(
                mask, RegionSelection.full(5, 4), 1, "boundary_refinement", HumanProvenance(1, 2.0)
            )

    def test_changes_only_selection(self, rng):
        labels = rng.integers(0, 7, (6, 6), dtype=np.uint8)
        mask = SegmentationMask(labels)
        member = rng.random((6, 6)) < 0.3
        member[0, 0] = True
        sel = RegionSelection(member)
        out, _ = apply_correction(mask, sel, 2, "feature_suppression", HumanProvenance(1, 1.0))
        changed = out.labels != labels
        assert changed.sum() <= sel.size
        assert not (changed & ~member).any()

    def test_undo_via_digest(self):
        from segcritic.formats import mask_digest

        mask = SegmentationMask(np.zeros((4, 4), np.uint8))
        out, record = apply_correction(
            mask, RegionSelection.full(4, 4), 3, "boundary_refinement", HumanProvenance(1, 1.0)
        )
        assert record.prior_mask_digest == mask_digest(mask)
        assert out.labels[0, 0] == 3


class TestClahe:
    def test_constant_image_fixed_point(self):
        for value in (0, 7, 128, 255):
            img = ImageRaster(np.full((32, 32, 3), value, np.uint8))
            out = clahe(img)
            assert np.array_equal(out.pixels, img.pixels), f"value {value}"

    def test_output_in_range(self, rng):
        img = random_image(rng, 40, 40)
        out = clahe(img)
        assert out.pixels.dtype == np.uint8

    def test_contrast_increases_on_low_contrast_gradient(self):
        # two-level low-contrast image
        px = np.zeros((64, 64, 3), np.uint8)
        px[:, :32] = 118
        px[:, 32:] = 138
        out = clahe(ImageRaster(px), clip_limit=4.0)
        gray_in = px.mean(axis=2)
        gray_out = out.pixels.mean(axis=2)
        assert gray_out.std() >= gray_in.std()

    def test_preserves_hue_saturation(self):
        px = np.zeros((16, 16, 3), np.uint8)
        px[:8] = (200, 100, 50)
        px[8:] = (60, 30, 15)  # same hue/sat, half value
        from segcritic.colorspace import rgb_to_hsv

        out = clahe(ImageRaster(px))
        hin = rgb_to_hsv(px)
        hout = rgb_to_hsv(out.pixels)
        assert np.abs(hin[..., 0] - hout[..., 0]).max() < 1.5
        assert np.abs(hin[..., 1] - hout[..., 1]).max() < 0.02


class TestMorphCleanup:
    def test_speckle_removed(self):
        labels = np.full((8, 8), 3, np.uint8)
        labels[4, 4] = 1  # isolated sky pixel
        out = morph_cleanup(SegmentationMask(labels), target_class=1)
        assert (out.labels != 1).all()
        assert out.labels[4, 4] == 0  # reverts to background without logits

    def test_solid_block_unchanged(self):
        labels = np.zeros((10, 10), np.uint8)
        labels[2:8, 2:8] = 1
        out = morph_cleanup(SegmentationMask(labels), target_class=1)
        assert np.array_equal(out.labels, labels)

    def test_hole_filled(self):
        labels = np.zeros((10, 10), np.uint8)
        labels[1:9, 1:9] = 1
        labels[5, 5] = 3  # pinhole
        out = morph_cleanup(SegmentationMask(labels), target_class=1, close_r=2)
        assert out.labels[5, 5] == 1

    def test_removed_pixels_take_runner_up(self):
        labels = np.full((8, 8), 3, np.uint8)
        labels[4, 4] = 1
        logits = np.zeros((8, 8, 7))
        logits[..., 1] = 5.0
        logits[..., 6] = 4.0  # runner-up is class 6
        out = morph_cleanup(
            SegmentationMask(labels), target_class=1, logits=LogitMap(logits)
        )
        assert out.labels[4, 4] == 6
