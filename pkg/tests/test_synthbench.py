import numpy as np
import pytest

from segcritic import errors
from segcritic.core import ImageRaster, SegmentationMask
from segcritic.descriptors import compute_descriptor, family_similarities
from segcritic.model import HIDDEN_UNITS, NUM_FEATURES, ToyBackboneParams
from segcritic.synthbench import (
    BUILDING_CLASS,
    SKY_CLASS,
    BiasSpec,
    blueness,
    gen_biased_dataset,
    human_records_for,
    robustness_eval,
    violating_mask,
)

SMALL = BiasSpec(seed=3, n_train=12, n_ood=4, clone_rate=3 / 12, n_other=2)


@pytest.fixture(scope="module")
def ds():
    return gen_biased_dataset(SMALL)


class TestGeneration:
    def test_deterministic_byte_identical(self):
        a = gen_biased_dataset(SMALL)
        b = gen_biased_dataset(SMALL)
        assert len(a.train) == len(b.train)
        for x, y in zip(a.train + a.val + a.ood, b.train + b.val + b.ood):
            assert x.png == y.png
            assert np.array_equal(x.labels.labels, y.labels.labels)

    def test_bias_holds_in_train(self, ds):
        for s in ds.train:
            blue = blueness(s.image)
            assert (s.labels.labels[blue] == SKY_CLASS).all()

    def test_ood_violates_bias(self, ds):
        any_violating = False
        for s in ds.ood:
            viol = violating_mask(s.image, s.gt)
            any_violating = any_violating or viol.any()
            assert (s.gt.labels[viol] == BUILDING_CLASS).all()
        assert any_violating

    def test_clone_similarity_floor(self, ds):
        by_site = {s.site_id: s for s in ds.train}
        for planted in ds.registry:
            if planted.kind != "clone":
                continue
            desc = compute_descriptor(by_site[planted.site_id].image, planted.region)
            s_hsv, s_lbp, _ = family_similarities(ds.source_descriptor, desc)
            assert s_hsv >= 0.97
            assert s_lbp >= 0.97

    def test_distractor_ceiling(self, ds):
        by_site = {s.site_id: s for s in ds.train}
        for planted in ds.registry:
            if planted.kind != "other":
                continue
            desc = compute_descriptor(by_site[planted.site_id].image, planted.region)
            s_hsv, s_lbp, _ = family_similarities(ds.source_descriptor, desc)
            assert max(s_hsv, s_lbp) < 0.7

    def test_manifest_splits(self, ds):
        splits = {s.split for s in ds.manifest.sites}
        assert splits == {"train", "val", "test"}
        train_hashes = ds.manifest.train_hashes()
        test_hashes = ds.manifest.split_hashes("test")
        assert not (train_hashes & test_hashes)

    def test_registry_counts(self, ds):
        kinds = {}
        for r in ds.registry:
            kinds[r.kind] = kinds.get(r.kind, 0) + 1
        assert kinds["source"] == 1
        assert kinds["clone"] == SMALL.n_clones
        assert kinds["other"] == SMALL.n_other

    def test_spec_rejects_overfull(self):
        with pytest.raises(ValueError):
            BiasSpec(seed=0, n_train=5, clone_rate=1.0, n_other=3)


class TestRobustnessEval:
    def test_perfect_model_zero_error(self, ds):
        class Oracle:
            pass

        # a "model" that cannot exist as params; instead check via a crafted
        # params-free path: monkeypatching predict would hide bugs, so build
        # params that constantly predict BUILDING and evaluate directly.
        params = ToyBackboneParams(
            np.zeros((HIDDEN_UNITS, NUM_FEATURES)),
            np.zeros(HIDDEN_UNITS),
            np.zeros((7, HIDDEN_UNITS)),
            np.eye(1, 7, k=BUILDING_CLASS).ravel() * 50.0,
        )
        rate, _ = robustness_eval(params, ds.ood)
        assert rate == 0.0  # violating pixels are all buildings

    def test_all_sky_model_full_error(self, ds):
        params = ToyBackboneParams(
            np.zeros((HIDDEN_UNITS, NUM_FEATURES)),
            np.zeros(HIDDEN_UNITS),
            np.zeros((7, HIDDEN_UNITS)),
            np.eye(1, 7, k=SKY_CLASS).ravel() * 50.0,
        )
        rate, _ = robustness_eval(params, ds.ood)
        assert rate == 1.0

    def test_relative_reduction(self, ds):
        params = ToyBackboneParams(
            np.zeros((HIDDEN_UNITS, NUM_FEATURES)),
            np.zeros(HIDDEN_UNITS),
            np.zeros((7, HIDDEN_UNITS)),
            np.eye(1, 7, k=BUILDING_CLASS).ravel() * 50.0,
        )
        rate, reduction = robustness_eval(params, ds.ood, baseline_rate=0.50)
        assert reduction == pytest.approx(1.0)

    def test_arithmetic_of_reduction(self):
        # 0.50 -> 0.29 is a 42% relative reduction
        assert (0.50 - 0.29) / 0.50 == pytest.approx(0.42)

    def test_no_violating_pixels(self, ds):
        params = ToyBackboneParams(
            np.zeros((HIDDEN_UNITS, NUM_FEATURES)),
            np.zeros(HIDDEN_UNITS),
            np.zeros((7, HIDDEN_UNITS)),
            np.zeros(7),
        )
        with pytest.raises(errors.NoViolatingPixels):
            robustness_eval(params, ds.val)


class TestHumanRecords:
    def test_source_plus_others(self, ds):
        records = human_records_for(ds)
        assert len(records) == 1 + SMALL.n_other
        assert all(r.is_human() for r in records)
        assert all(r.corrected_class == BUILDING_CLASS for r in records)


class TestBlueness:
    def test_predicate_matches_definition(self):
        from segcritic.colorspace import rgb_to_hsv

        px = np.array(
            [[[45, 100, 215], [128, 128, 128], [150, 100, 60], [120, 180, 240]]],
            np.uint8,
        )
        blue = blueness(ImageRaster(px))
        hsv = rgb_to_hsv(px)
        expected = (hsv[..., 0] >= 200) & (hsv[..., 0] <= 260) & (hsv[..., 1] >= 0.4)
        assert np.array_equal(blue, expected)
        assert blue[0, 0]  # brick blue
        assert not blue[0, 1]  # gray
        assert not blue[0, 2]  # ground
        assert blue[0, 3]  # sky blue
