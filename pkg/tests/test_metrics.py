import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from detcal.matching import MatchResult
from detcal.metrics import (
    BinTable,
    ClsSample,
    bin_index,
    d_ece,
    d_uce,
    detection_error,
    ece,
    reliability_csv,
    reliability_data,
)

from oracles import d_ece_bruteforce, d_uce_bruteforce, ece_bruteforce


def samples_with(conf, n, n_correct):
    out = []
    for i in range(n):
        out.append(ClsSample(confidence=conf, predicted=0, label=0 if i < n_correct else 1))
    return out


class TestBinning:
    def test_zero_goes_to_first_bin(self):
        assert bin_index(np.array([0.0]), 10)[0] == 0

    def test_one_goes_to_last_bin(self):
        assert bin_index(np.array([1.0]), 10)[0] == 9

    def test_left_open_right_closed(self):
        # bin m covers ((m-1)/M, m/M]
        idx = bin_index(np.array([0.1, 0.1000001, 0.2]), 10)
        assert list(idx) == [0, 1, 1]

    def test_partition(self):
        rng = np.random.default_rng(0)
        values = rng.random(1000)
        for bins in (1, 3, 10, 17):
            idx = bin_index(values, bins)
            assert idx.min() >= 0 and idx.max() < bins
            assert np.bincount(idx, minlength=bins).sum() == 1000


class TestEce:
    def test_perfect(self):
        value, _ = ece(samples_with(1.0, 10, 10), 10)
        assert value == 0.0

    def test_single_bin_gap(self):
        value, _ = ece(samples_with(0.8, 10, 5), 1)
        assert value == pytest.approx(0.3, abs=1e-12)

    def test_two_bin_hand_case(self):
        low = samples_with(0.2, 4, 1)  # acc 0.25
        high = samples_with(0.9, 6, 3)  # acc 0.5
        value, _ = ece(low + high, 2)
        assert value == pytest.approx(0.26, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ece([], 10)

    def test_bad_bins_rejected(self):
        with pytest.raises(ValueError):
            ece(samples_with(0.5, 3, 1), 0)


class TestDEce:
    def test_perfect(self):
        value, _ = d_ece([(1.0, True)] * 5, 10)
        assert value == 0.0

    def test_single_occupied_bin(self):
        pairs = [(0.8, i < 5) for i in range(10)]
        value, _ = d_ece(pairs, 10)
        assert value == pytest.approx(0.3, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            d_ece([], 10)

    def test_score_range_enforced(self):
        with pytest.raises(ValueError):
            d_ece([(1.2, True)], 10)

    def test_m1_reduces_to_global_gap(self):
        rng = np.random.default_rng(1)
        pairs = [(float(s), bool(u)) for s, u in zip(rng.random(200), rng.random(200) < 0.5)]
        value, _ = d_ece(pairs, 1)
        mean_conf = np.mean([s for s, _ in pairs])
        precision = np.mean([u for _, u in pairs])
        assert value == pytest.approx(abs(precision - mean_conf), abs=1e-12)


class TestDUce:
    def test_all_zero(self):
        value, _ = d_uce([(0.0, 0)] * 4, 10)
        assert value == 0.0

    def test_single_bin_hand_case(self):
        value, _ = d_uce([(0.3, 1)] * 6, 10)
        assert value == pytest.approx(0.7, abs=1e-12)

    def test_matched_extremes(self):
        value, _ = d_uce([(0.0, 0), (1.0, 1), (0.0, 0), (1.0, 1)], 10)
        assert value == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            d_uce([], 10)


class TestDetectionError:
    def test_iou_threshold_rule(self):
        hit = MatchResult(0, True, 0.8, 0)
        weak = MatchResult(1, True, 0.45, 1)
        missed = MatchResult(2, False, 0.0, None)
        assert detection_error(hit) == 0
        assert detection_error(weak) == 1
        assert detection_error(missed) == 1

    def test_correctness_rule(self):
        weak = MatchResult(1, True, 0.45, 1)
        assert detection_error(weak, use_correctness=True) == 0


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(8))
    def test_random_lists_match_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 51))
        bins = int(rng.integers(1, 15))

        samples = [
            ClsSample(float(c), int(p), int(t))
            for c, p, t in zip(rng.random(n), rng.integers(0, 3, n), rng.integers(0, 3, n))
        ]
        value, _ = ece(samples, bins)
        assert value == pytest.approx(ece_bruteforce(samples, bins), abs=1e-12)

        pairs = [(float(s), bool(u)) for s, u in zip(rng.random(n), rng.random(n) < 0.6)]
        value, _ = d_ece(pairs, bins)
        assert value == pytest.approx(d_ece_bruteforce(pairs, bins), abs=1e-12)

        entries = [(float(u), int(e)) for u, e in zip(rng.random(n), rng.integers(0, 2, n))]
        value, _ = d_uce(entries, bins)
        assert value == pytest.approx(d_uce_bruteforce(entries, bins), abs=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(9)
        pairs = [(float(s), bool(u)) for s, u in zip(rng.random(40), rng.random(40) < 0.5)]
        base, _ = d_ece(pairs, 10)
        perm = [pairs[i] for i in rng.permutation(40)]
        value, _ = d_ece(perm, 10)
        assert value == pytest.approx(base, abs=1e-12)

    @given(
        st.lists(
            st.tuples(st.floats(0.0, 1.0, allow_nan=False), st.booleans()),
            min_size=1,
            max_size=30,
        ),
        st.integers(1, 12),
    )
    def test_duplication_leaves_metric_unchanged(self, pairs, bins):
        single, _ = d_ece(pairs, bins)
        doubled, _ = d_ece(pairs + pairs, bins)
        assert doubled == pytest.approx(single, abs=1e-12)

    @given(
        st.lists(
            st.tuples(st.floats(0.0, 1.0, allow_nan=False), st.booleans()),
            min_size=1,
            max_size=30,
        ),
        st.integers(1, 12),
    )
    def test_value_in_unit_interval_and_counts_partition(self, pairs, bins):
        value, table = d_ece(pairs, bins)
        assert 0.0 <= value <= 1.0
        assert table.total == len(pairs)


class TestReliability:
    def test_empty_first_bin(self):
        pairs = [(0.9, True)] * 3
        _, table = d_ece(pairs, 2)
        records = reliability_data(table)
        assert records[0].count == 0
        assert records[0].mean_conf == 0.0 and records[0].mean_outcome == 0.0
        assert records[1].count == 3

    def test_gap_record_from_hand_case(self):
        pairs = [(0.8, i < 5) for i in range(10)]
        _, table = d_ece(pairs, 10)
        records = reliability_data(table)
        occupied = [r for r in records if r.count]
        assert len(occupied) == 1
        assert occupied[0].gap == pytest.approx(0.3, abs=1e-12)
        assert occupied[0].bin_lo == 0.7 and occupied[0].bin_hi == 0.8

    def test_bin_edges_are_grid_multiples(self):
        _, table = d_ece([(0.4, True)], 8)
        for m, r in enumerate(reliability_data(table)):
            assert r.bin_lo == m / 8
            assert r.bin_hi == (m + 1) / 8

    def test_csv_header_and_shape(self):
        pairs = [(0.8, i < 5) for i in range(10)]
        _, table = d_ece(pairs, 4)
        text = reliability_csv(table)
        lines = text.strip().split("\n")
        assert lines[0] == "bin_lo,bin_hi,count,mean_conf,mean_outcome,gap"
        assert len(lines) == 5
