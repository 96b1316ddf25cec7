import numpy as np
import pytest

from conftest import agree, central_diff
from gspool.errors import ConfigError, DataFormatError
from gspool.losses import contrastive_c2, pairwise_distances, \
    pairwise_distances_backward, triplet


class TestPairwiseDistances:
    def test_hand_value(self):
        D = pairwise_distances([[0.0, 0.0], [3.0, 4.0]])
        assert D[0, 1] == 5.0 and D[1, 0] == 5.0 and D[0, 0] == 0.0

    def test_identical_embeddings(self):
        D = pairwise_distances(np.ones((4, 3)))
        assert np.abs(D).max() == 0.0

    def test_symmetric_and_fd(self, rng):
        e = rng.normal(size=(6, 4))
        D = pairwise_distances(e)
        assert np.abs(D - D.T).max() <= 1e-12
        g_D = rng.normal(size=D.shape)
        got = pairwise_distances_backward(e, D, g_D)
        fd = central_diff(lambda x: float((g_D * pairwise_distances(x)).sum()), e)
        assert agree(got, fd, rtol=1e-6, atol=1e-9)

    def test_coincident_pair_zero_gradient(self):
        e = np.zeros((2, 2))
        D = pairwise_distances(e)
        g = pairwise_distances_backward(e, D, np.ones((2, 2)))
        assert np.abs(g).max() == 0.0


class TestContrastive:
    def test_active_positive_pair(self):
        # one positive pair at distance 0.5 with m_pos = 0.2 contributes 0.3;
        # the far negative is inactive
        e = np.array([[0.0], [0.5], [10.0]])
        labels = [0, 0, 1]
        loss, _ = contrastive_c2(e, labels, 0.2, 0.4)
        assert abs(loss - 0.3) < 1e-12

    def test_inactive_negative_pair(self):
        e = np.array([[0.0], [0.0], [0.7]])
        loss, grad = contrastive_c2(e, [0, 0, 1], 0.0, 0.5)
        assert loss == 0.0
        assert np.abs(grad).max() == 0.0

    def test_active_negative_pair(self):
        e = np.array([[0.0], [0.0], [0.3]])
        loss, _ = contrastive_c2(e, [0, 0, 1], 0.0, 0.5)
        # two negative pairs at D = 0.3, each contributing 0.2, averaged
        assert abs(loss - 0.2) < 1e-12

    def test_gradient_matches_fd(self, rng):
        e = rng.normal(size=(8, 3))
        labels = np.repeat(np.arange(4), 2)
        _, grad = contrastive_c2(e, labels, 0.0, 0.3841)
        fd = central_diff(lambda x: contrastive_c2(x, labels, 0.0, 0.3841)[0], e)
        assert agree(grad, fd, rtol=1e-5, atol=1e-9)

    def test_margin_validation(self):
        with pytest.raises(ConfigError):
            contrastive_c2(np.zeros((2, 1)), [0, 1], 0.5, 0.5)

    def test_empty_sides_named(self):
        with pytest.raises(DataFormatError, match="positive"):
            contrastive_c2(np.zeros((2, 1)), [0, 1], 0.0, 0.5)
        with pytest.raises(DataFormatError, match="negative"):
            contrastive_c2(np.zeros((2, 1)), [0, 0], 0.0, 0.5)


class TestTriplet:
    def test_inactive_triple(self):
        # D_ap = 0.2, D_an = 0.9, margin 0.1 -> hinge inactive
        e = np.array([[0.0], [0.2], [0.9]])
        loss, _ = triplet(e, [0, 0, 1], 0.1)
        assert loss == 0.0

    def test_active_triple_value(self):
        # D_ap = 0.9, D_an = 0.2 -> contributes 0.8 per ordered anchor pair
        e = np.array([[0.0], [0.9], [0.2]])
        loss, _ = triplet(e, [0, 0, 1], 0.1)
        # triples: (0,1,2): 0.9-0.2+0.1=0.8 ; (1,0,2): 0.9-0.7+0.1=0.3
        assert abs(loss - (0.8 + 0.3) / 2) < 1e-12

    def test_gradient_matches_fd(self, rng):
        e = rng.normal(size=(8, 3))
        labels = np.repeat(np.arange(4), 2)
        _, grad = triplet(e, labels, 0.1)
        fd = central_diff(lambda x: triplet(x, labels, 0.1)[0], e)
        assert agree(grad, fd, rtol=1e-5, atol=1e-9)

    def test_no_valid_triple(self):
        with pytest.raises(DataFormatError):
            triplet(np.zeros((2, 1)), [0, 1], 0.1)


class TestInvariances:
    def test_label_bijection_invariance(self, rng):
        e = rng.normal(size=(8, 3))
        labels = np.repeat(np.arange(4), 2)
        relabeled = (labels * 7 + 3) % 11  # injective on {0..3}
        for fn in (lambda x, y: contrastive_c2(x, y, 0.0, 0.4)[0],
                   lambda x, y: triplet(x, y, 0.1)[0]):
            assert fn(e, labels) == fn(e, relabeled)

    def test_sample_permutation_invariance(self, rng):
        e = rng.normal(size=(8, 3))
        labels = np.repeat(np.arange(4), 2)
        perm = rng.permutation(8)
        for fn in (lambda x, y: contrastive_c2(x, y, 0.0, 0.4)[0],
                   lambda x, y: triplet(x, y, 0.1)[0]):
            assert abs(fn(e, labels) - fn(e[perm], labels[perm])) < 1e-12

    def test_nonnegative_and_zero_iff_inactive(self, rng):
        for seed in range(5):
            r = np.random.default_rng([51, seed])
            e = r.normal(size=(6, 2))
            labels = np.repeat(np.arange(3), 2)
            locc, _ = contrastive_c2(e, labels, 0.0, 0.3841)
            lot, _ = triplet(e, labels, 0.1)
            assert locc >= 0.0 and lot >= 0.0