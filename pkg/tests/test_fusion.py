import numpy as np
import pytest
from scipy.special import softmax as scipy_softmax

import clickseg3d.autodiff as ad
from clickseg3d.encoding import QuerySet
from clickseg3d.errors import MissingRegion
from clickseg3d.fusion import (
    early_fuse_queries,
    fuse_regions,
    holistic_mask,
    init_mask_head_params,
    mask_embeddings,
    per_click_logits,
)


class TestMaskHead:
    def test_logits_match_manual_mlp_oracle(self):
        rng = np.random.default_rng(0)
        d, n_vox, k = 6, 9, 4
        head = init_mask_head_params(d, rng)
        scene = rng.normal(size=(n_vox, d))
        q = rng.normal(size=(k, d))
        out = per_click_logits(ad.constant(scene), ad.constant(q), head).data
        # independent forward pass with plain numpy
        h = np.maximum(q @ head["mask_mlp0_w"].data + head["mask_mlp0_b"].data, 0)
        h = np.maximum(h @ head["mask_mlp1_w"].data + head["mask_mlp1_b"].data, 0)
        emb = h @ head["mask_mlp2_w"].data + head["mask_mlp2_b"].data
        np.testing.assert_allclose(out, scene @ emb.T, atol=1e-12)
        assert out.shape == (n_vox, k)

    def test_embeddings_shape(self):
        rng = np.random.default_rng(1)
        head = init_mask_head_params(5, rng)
        emb = mask_embeddings(ad.constant(rng.normal(size=(3, 5))), head)
        assert emb.shape == (3, 5)


class TestFuseRegions:
    def _logits(self):
        rng = np.random.default_rng(2)
        return rng.normal(size=(7, 5)), np.array([1, 2, 1, 0, 0])

    def test_max_matches_groupby_oracle(self):
        z, regions = self._logits()
        fused = fuse_regions(ad.constant(z), regions, [0, 1, 2], mode="max").data
        for j, rid in enumerate([0, 1, 2]):
            np.testing.assert_allclose(fused[:, j], z[:, regions == rid].max(axis=1))

    def test_mean_matches_groupby_oracle(self):
        z, regions = self._logits()
        fused = fuse_regions(ad.constant(z), regions, [0, 1, 2], mode="mean").data
        for j, rid in enumerate([0, 1, 2]):
            np.testing.assert_allclose(fused[:, j], z[:, regions == rid].mean(axis=1))

    def test_missing_region_raises(self):
        z, regions = self._logits()
        with pytest.raises(MissingRegion):
            fuse_regions(ad.constant(z), regions, [0, 3])

    def test_unknown_mode_raises(self):
        z, regions = self._logits()
        with pytest.raises(ValueError):
            fuse_regions(ad.constant(z), regions, [0], mode="median")

    def test_max_gradient_reaches_only_winners(self):
        z = np.array([[1.0, 3.0], [5.0, 2.0]])
        t = ad.parameter(z)
        fused = fuse_regions(t, np.array([1, 1]), [1], mode="max")
        fused.sum().backward()
        np.testing.assert_array_equal(t.grad, [[0, 1], [1, 0]])


class TestHolisticMask:
    def test_probabilities_match_softmax_oracle(self):
        rng = np.random.default_rng(3)
        z = rng.normal(size=(20, 4))
        hm = holistic_mask(z, [0, 1, 2, 5])
        np.testing.assert_allclose(hm.probabilities, scipy_softmax(z, axis=1),
                                   atol=1e-12)
        np.testing.assert_allclose(hm.probabilities.sum(axis=1), 1.0)

    def test_labels_drawn_from_region_ids(self):
        z = np.array([[0.0, 2.0, 1.0], [3.0, -1.0, 0.0]])
        hm = holistic_mask(z, [0, 4, 7])
        np.testing.assert_array_equal(hm.labels, [4, 0])

    def test_tie_goes_to_smaller_region_id(self):
        z = np.array([[1.0, 1.0, 1.0]])
        hm = holistic_mask(z, [2, 5, 9])
        assert hm.labels[0] == 2


class TestEarlyFusion:
    def _queries(self):
        rng = np.random.default_rng(4)
        content = ad.parameter(rng.normal(size=(5, 6)))
        positional = np.vstack([rng.normal(size=(3, 6)), np.zeros((2, 6))])
        return QuerySet(
            content=content,
            positional=positional,
            regions=np.array([2, 1, 2, 0, 0]),
            num_user=3,
        )

    def test_collapses_same_region_queries(self):
        qs = self._queries()
        fused = early_fuse_queries(qs, mode="max")
        assert fused.num_user == 2  # regions 1 and 2
        np.testing.assert_array_equal(fused.regions, [1, 2, 0, 0])
        # region 2 row is the elementwise max of user rows 0 and 2
        expect = np.maximum(qs.content.data[0], qs.content.data[2])
        np.testing.assert_allclose(fused.content.data[1], expect)
        np.testing.assert_allclose(
            fused.positional[1], np.maximum(qs.positional[0], qs.positional[2])
        )

    def test_mean_mode(self):
        qs = self._queries()
        fused = early_fuse_queries(qs, mode="mean")
        expect = (qs.content.data[0] + qs.content.data[2]) / 2
        np.testing.assert_allclose(fused.content.data[1], expect)

    def test_bank_preserved(self):
        qs = self._queries()
        fused = early_fuse_queries(qs)
        np.testing.assert_array_equal(fused.content.data[-2:], qs.content.data[-2:])
        np.testing.assert_array_equal(fused.positional[-2:], 0.0)

    def test_no_user_queries(self):
        rng = np.random.default_rng(5)
        qs = QuerySet(
            content=ad.parameter(rng.normal(size=(2, 4))),
            positional=np.zeros((2, 4)),
            regions=np.array([0, 0]),
            num_user=0,
        )
        fused = early_fuse_queries(qs)
        assert fused.num_user == 0 and fused.total == 2
        np.testing.assert_array_equal(fused.content.data, qs.content.data)
