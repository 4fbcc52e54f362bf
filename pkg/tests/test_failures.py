import numpy as np
import pytest

from segcritic import errors
from segcritic.core import ImageRaster, ProbabilityMap, SegmentationMask
from segcritic.failures import (
    MAX_ENTROPY,
    FlagParams,
    ScoreMap,
    attribution_map,
    disagreement_map,
    entropy_map,
    flag_regions,
    forward_logit_sum,
    integrated_gradients,
)
from segcritic.model import ToyBackboneParams, init_params

from conftest import random_image
from oracles import connected_components_oracle


def uniform_probs(h, w):
    return ProbabilityMap(np.full((h, w, 7), 1 / 7))


class TestEntropy:
    def test_uniform_is_ln7(self):
        ent = entropy_map(uniform_probs(2, 2)).values
        assert np.abs(ent - np.log(7)).max() < 1e-12
        assert abs(MAX_ENTROPY - 1.9459) < 1e-4

    def test_one_hot_is_zero(self):
        p = np.zeros((1, 1, 7))
        p[0, 0, 3] = 1.0
        assert entropy_map(ProbabilityMap(p)).values[0, 0] == 0.0

    def test_two_way_split_is_ln2(self):
        p = np.zeros((1, 1, 7))
        p[0, 0, 0] = p[0, 0, 1] = 0.5
        assert abs(entropy_map(ProbabilityMap(p)).values[0, 0] - np.log(2)) < 1e-12

    def test_zero_iff_one_hot(self, rng):
        p = rng.dirichlet(np.ones(7), size=(5, 5))
        ent = entropy_map(ProbabilityMap(p)).values
        one_hot = (p.max(axis=2) > 1 - 1e-12)
        assert np.array_equal(ent < 1e-9, one_hot)


class TestDisagreement:
    def _mask(self, arr):
        return SegmentationMask(np.asarray(arr, np.uint8))

    def test_identical_masks_zero(self):
        m = self._mask(np.ones((3, 3)))
        out = disagreement_map([m, m, m]).values
        assert (out == 0).all()

    def test_three_way_disagreement(self):
        ms = [self._mask([[c]]) for c in (1, 2, 3)]
        out = disagreement_map(ms).values
        assert abs(out[0, 0] - (1 - 1 / 3)) < 1e-12

    def test_two_two_split(self):
        ms = [self._mask([[c]]) for c in (1, 1, 2, 2)]
        assert disagreement_map(ms).values[0, 0] == 0.5

    def test_requires_two(self):
        with pytest.raises(errors.FewerThanTwoMasks):
            disagreement_map([self._mask([[1]])])

    def test_bounded(self, rng):
        ms = [
            SegmentationMask(rng.integers(0, 7, (6, 6), dtype=np.uint8)) for _ in range(5)
        ]
        out = disagreement_map(ms).values
        assert out.min() >= 0
        assert out.max() <= 1 - 1 / 5 + 1e-12


class TestIntegratedGradients:
    def test_baseline_image_zero_attribution(self):
        params = init_params(0)
        img = ImageRaster(np.zeros((6, 6, 3), np.uint8))
        out = attribution_map(params, img, target_class=2, steps=8)
        assert (out.values == 0).all()

    def test_zero_weights_zero_attribution(self, rng):
        z = ToyBackboneParams(
            np.zeros((32, 11)), np.zeros(32), np.zeros((7, 32)), np.zeros(7)
        )
        img = random_image(rng, 6, 6)
        assert (attribution_map(z, img, 0, steps=8).values == 0).all()

    def test_completeness_improves_with_steps(self, rng):
        params = init_params(11)
        img = random_image(rng, 8, 8)
        target = 3
        actual = forward_logit_sum(params, img, target) - forward_logit_sum(
            params, ImageRaster(np.zeros_like(img.pixels)), target
        )
        errs = []
        for m in (8, 32, 256):
            attr = integrated_gradients(params, img, target, steps=m)
            approx = attr.sum(axis=2)
            errs.append(np.abs(approx - actual).max() / max(np.abs(actual).max(), 1e-12))
        assert errs[2] <= errs[1] <= errs[0]
        assert errs[2] < 0.01

    def test_scoremap_is_l1_of_signed(self, rng):
        params = init_params(5)
        img = random_image(rng, 5, 5)
        signed = integrated_gradients(params, img, 1, steps=16)
        score = attribution_map(params, img, 1, steps=16)
        assert np.allclose(score.values, np.abs(signed).sum(axis=2))


class TestFlagRegions:
    def test_below_threshold_empty(self):
        score = ScoreMap(np.full((5, 5), 0.5))
        assert flag_regions(score, FlagParams(threshold=1.0, min_area=1)) == []

    def test_min_area_filter(self):
        values = np.zeros((8, 8))
        values[1:2, 1:6] = 2.0  # area 5
        values[5:6, 5:7] = 2.0  # area 2
        score = ScoreMap(values)
        regions = flag_regions(score, FlagParams(threshold=1.0, min_area=3))
        assert len(regions) == 1
        assert regions[0].size == 5

    def test_sorted_by_mean_score(self):
        values = np.zeros((8, 8))
        values[0, 0:3] = 0.4
        values[4, 0:3] = 0.9
        score = ScoreMap(values)
        regions = flag_regions(score, FlagParams(threshold=0.3, min_area=1))
        assert len(regions) == 2
        assert regions[0].membership[4].any()

    def test_components_match_oracle(self, rng):
        for conn in (4, 8):
            values = (rng.random((10, 10)) < 0.4).astype(np.float64)
            score = ScoreMap(values)
            regions = flag_regions(score, FlagParams(threshold=0.5, min_area=1, connectivity=conn))
            oracle = connected_components_oracle(values >= 0.5, conn)
            got = {r.membership.tobytes() for r in regions}
            want = {c.tobytes() for c in oracle}
            assert got == want

    def test_regions_disjoint_and_connected(self, rng):
        values = rng.random((12, 12))
        regions = flag_regions(ScoreMap(values), FlagParams(threshold=0.6, min_area=2))
        seen = np.zeros((12, 12), bool)
        for r in regions:
            assert not (seen & r.membership).any()
            seen |= r.membership
            comps = connected_components_oracle(r.membership, 4)
            assert len(comps) == 1
