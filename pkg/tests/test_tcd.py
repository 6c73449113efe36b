import numpy as np
import pytest

from detcal.tcd import TcdBatch, d_cls, d_det, tcd_loss


def batch_from(s, q, positives):
    return TcdBatch(s=np.array(s, dtype=float), q=np.array(q, dtype=float), positives=positives)


def random_batch(rng, L=2, R=3, K=2, max_pos=4, min_margin=0.0):
    """Random batch; with min_margin > 0 all |inner terms| clear the kinks."""
    while True:
        s = rng.random((L, R, K))
        q = np.zeros((L, R, K))
        for l in range(L):
            for r in range(R):
                if rng.random() < 0.7:
                    q[l, r, int(rng.integers(K))] = 1.0
        positives = []
        for _ in range(L):
            n = int(rng.integers(0, max_pos + 1))
            positives.append(rng.random((n, 2)))
        batch = TcdBatch(s=s, q=q, positives=positives)
        if min_margin == 0.0:
            return batch
        diff = np.abs(s.mean(axis=(0, 1)) - q.mean(axis=(0, 1)))
        inner = [np.abs(p[:, 0] - p[:, 1]) for p in batch.positives if len(p)]
        if diff.min() > min_margin and all(v.min() > min_margin for v in inner):
            return batch


class TestValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            batch_from([[[0.5]]], [[[1.0, 0.0]]], [[]])

    def test_confidence_range(self):
        with pytest.raises(ValueError):
            batch_from([[[1.5]]], [[[1.0]]], [[]])

    def test_q_must_be_binary(self):
        with pytest.raises(ValueError):
            batch_from([[[0.5]]], [[[0.5]]], [[]])

    def test_q_rows_at_most_one_hot(self):
        with pytest.raises(ValueError):
            batch_from([[[0.5, 0.5]]], [[[1.0, 1.0]]], [[]])

    def test_positives_length(self):
        with pytest.raises(ValueError):
            batch_from([[[0.5]]], [[[1.0]]], [])

    def test_positives_range(self):
        with pytest.raises(ValueError):
            batch_from([[[0.5]]], [[[1.0]]], [[(1.2, 0.5)]])


class TestDCls:
    def test_exact_match_is_zero(self):
        assert d_cls(batch_from([[[1.0, 0.0]]], [[[1.0, 0.0]]], [[]])) == 0.0

    def test_uniform_confidence_hand_case(self):
        value = d_cls(batch_from([[[0.5, 0.5]]], [[[1.0, 0.0]]], [[]]))
        assert value == pytest.approx(0.5, abs=1e-12)

    def test_two_image_hand_case(self):
        value = d_cls(batch_from([[[0.6]], [[0.2]]], [[[1.0]], [[0.0]]], [[], []]))
        assert value == pytest.approx(0.1, abs=1e-12)

    def test_location_permutation_invariant(self):
        rng = np.random.default_rng(0)
        b = random_batch(rng, L=3, R=4, K=2)
        flat_s = b.s.reshape(-1, 2)
        flat_q = b.q.reshape(-1, 2)
        perm = rng.permutation(len(flat_s))
        b2 = TcdBatch(
            s=flat_s[perm].reshape(3, 4, 2), q=flat_q[perm].reshape(3, 4, 2), positives=b.positives
        )
        assert d_cls(b2) == pytest.approx(d_cls(b), abs=1e-12)


class TestDDet:
    def test_matched_confidence_is_zero(self):
        assert d_det(batch_from([[[0.5]]], [[[1.0]]], [[(0.7, 0.7)]])) == 0.0

    def test_single_positive_hand_case(self):
        value = d_det(batch_from([[[0.5]]], [[[1.0]]], [[(0.7, 0.9)]]))
        assert value == pytest.approx(0.2, abs=1e-12)

    def test_two_image_hand_case(self):
        value = d_det(
            batch_from(
                [[[0.5]], [[0.5]]],
                [[[1.0]], [[1.0]]],
                [[(0.5, 0.9)], [(0.8, 0.8), (0.6, 0.4)]],
            )
        )
        assert value == pytest.approx(0.25, abs=1e-12)

    def test_images_without_positives_skipped(self):
        value = d_det(batch_from([[[0.5]], [[0.5]]], [[[1.0]], [[0.0]]], [[(0.7, 0.9)], []]))
        assert value == pytest.approx(0.2, abs=1e-12)

    def test_no_positives_anywhere(self):
        b = batch_from([[[0.5]], [[0.5]]], [[[1.0]], [[0.0]]], [[], []])
        assert d_det(b) == 0.0
        result = tcd_loss(b)
        assert result.d_det == 0.0
        assert all(g.size == 0 for g in result.grad_shat)


class TestTcdLoss:
    def test_calibrated_batch_all_zero(self):
        b = batch_from([[[1.0, 0.0]]], [[[1.0, 0.0]]], [[(0.7, 0.7)]])
        result = tcd_loss(b)
        assert result.loss == 0.0
        assert np.all(result.grad_s == 0.0)
        assert all(np.all(g == 0.0) for g in result.grad_shat)

    def test_combined_hand_case(self):
        b = batch_from([[[0.5, 0.5]]], [[[1.0, 0.0]]], [[(0.7, 0.9)]])
        result = tcd_loss(b)
        assert result.d_cls == pytest.approx(0.5, abs=1e-12)
        assert result.d_det == pytest.approx(0.2, abs=1e-12)
        assert result.loss == pytest.approx(0.35, abs=1e-12)

    def test_loss_is_half_sum_exactly(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            result = tcd_loss(random_batch(rng))
            assert result.loss == 0.5 * (result.d_cls + result.d_det)

    def test_components_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            result = tcd_loss(random_batch(rng))
            assert 0.0 <= result.d_cls <= 1.0
            assert 0.0 <= result.d_det <= 1.0
            assert 0.0 <= result.loss <= 1.0

    def test_duplicating_batch_leaves_values_unchanged(self):
        rng = np.random.default_rng(3)
        b = random_batch(rng)
        doubled = TcdBatch(
            s=np.concatenate([b.s, b.s]),
            q=np.concatenate([b.q, b.q]),
            positives=list(b.positives) + list(b.positives),
        )
        one = tcd_loss(b)
        two = tcd_loss(doubled)
        assert two.d_cls == pytest.approx(one.d_cls, abs=1e-12)
        assert two.d_det == pytest.approx(one.d_det, abs=1e-12)
        assert two.loss == pytest.approx(one.loss, abs=1e-12)

    def test_empty_map_rejected(self):
        with pytest.raises(ValueError):
            tcd_loss(TcdBatch(s=np.zeros((0, 1, 1)), q=np.zeros((0, 1, 1)), positives=[]))


class TestGradients:
    @staticmethod
    def loss_of(batch):
        return tcd_loss(batch).loss

    def check_batch(self, batch, h=1e-5, tol=1e-4):
        result = tcd_loss(batch)
        L, R, K = batch.dims
        for l in range(L):
            for r in range(R):
                for k in range(K):
                    plus = TcdBatch(s=batch.s.copy(), q=batch.q, positives=batch.positives)
                    plus.s[l, r, k] += h
                    minus = TcdBatch(s=batch.s.copy(), q=batch.q, positives=batch.positives)
                    minus.s[l, r, k] -= h
                    fd = (self.loss_of(plus) - self.loss_of(minus)) / (2 * h)
                    denom = max(abs(fd), abs(result.grad_s[l, r, k]), 1e-12)
                    assert abs(result.grad_s[l, r, k] - fd) / denom < tol
        for l, p in enumerate(batch.positives):
            for n in range(len(p)):
                for col, grads in ((0, result.grad_iou), (1, result.grad_shat)):
                    plus = [q.copy() for q in batch.positives]
                    plus[l][n, col] += h
                    minus = [q.copy() for q in batch.positives]
                    minus[l][n, col] -= h
                    fd = (
                        self.loss_of(TcdBatch(s=batch.s, q=batch.q, positives=plus))
                        - self.loss_of(TcdBatch(s=batch.s, q=batch.q, positives=minus))
                    ) / (2 * h)
                    denom = max(abs(fd), abs(grads[l][n]), 1e-12)
                    assert abs(grads[l][n] - fd) / denom < tol

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        # margins keep every |.| term away from its kink at the fd step size
        batch = random_batch(rng, min_margin=1e-3)
        # fd perturbs values near the [0,1] validation boundary; widen inputs
        batch.s = np.clip(batch.s, 1e-4, 1 - 1e-4)
        for i, p in enumerate(batch.positives):
            batch.positives[i] = np.clip(p, 1e-4, 1 - 1e-4)
        self.check_batch(batch)
