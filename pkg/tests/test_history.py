import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scstream import InputError
from scstream.history import (
    HistoryRecord,
    append_and_prune,
    kernel_weight,
    max_history_length,
    merge_histories,
    weighted_aggregate,
)


class TestBound:
    def test_default_bound_is_27(self):
        assert max_history_length(1.0, 1e-8) == 27

    @pytest.mark.parametrize("lam,eps", [(1.0, 1e-8), (0.5, 1e-4), (1.0, 2.0 ** -10), (0.7, 0.3)])
    def test_within_log_formula(self, lam, eps):
        assert max_history_length(lam, eps) <= math.ceil(math.log2(1 / eps) / lam) + 1

    @pytest.mark.parametrize("lam,eps", [(1.0, 1e-8), (0.5, 1e-4), (2.0, 1e-12), (0.3, 1e-3)])
    def test_unit_stream_reaches_but_never_exceeds_bound(self, lam, eps):
        h = HistoryRecord(1)
        bound = max_history_length(lam, eps)
        lengths = []
        for t in range(5 * bound):
            h.append_and_prune(t, [1.0], 1.0, lam, eps)
            lengths.append(len(h))
        assert max(lengths) <= bound
        # the pruning rule keeps exactly the entries with weight > eps
        expected = sum(1 for a in range(bound + 5) if 2.0 ** (-lam * a) > eps)
        assert lengths[-1] == expected

    @settings(max_examples=60, deadline=None)
    @given(gaps=st.lists(st.integers(1, 4), min_size=1, max_size=80),
           lam=st.sampled_from([0.5, 1.0, 1.5]), eps=st.sampled_from([1e-2, 1e-5, 1e-8]))
    def test_length_bounded_for_integer_gaps(self, gaps, lam, eps):
        h = HistoryRecord(2)
        t = 0
        bound = max_history_length(lam, eps)
        for g in gaps:
            t += g
            h.append_and_prune(t, np.ones(2), 1.0, lam, eps)
            assert len(h) <= bound
            assert all(kernel_weight(t, e.t, lam) > eps for e in h.entries)


class TestAggregate:
    def test_geometric_closed_form(self):
        lam, eps = 1.0, 1e-8
        h = HistoryRecord(1)
        for t in range(40):
            h.append_and_prune(t, [3.0], 1.0, lam, eps)
        agg = h.weighted_aggregate(39, lam)
        L = len(h)
        geometric = (1 - 2.0 ** -L) / (1 - 0.5)
        assert agg.N == pytest.approx(geometric, rel=1e-14)
        assert agg.S[0] == pytest.approx(3.0 * geometric, rel=1e-14)

    def test_ten_points_one_batch_ago(self):
        h = HistoryRecord(1)
        append_and_prune(h, 0.0, [10.0], 10.0)
        agg = weighted_aggregate(h, 1.0)
        assert agg.N == pytest.approx(5.0)
        assert agg.S[0] == pytest.approx(5.0)

    def test_non_integer_times(self):
        h = HistoryRecord(1)
        h.append_and_prune(0.25, [1.0], 2.0, 0.5, 1e-8)
        h.append_and_prune(1.75, [4.0], 1.0, 0.5, 1e-8)
        agg = h.weighted_aggregate(2.0, 0.5)
        assert agg.N == pytest.approx(2 * 2 ** (-0.5 * 1.75) + 2 ** (-0.5 * 0.25))

    @settings(max_examples=50, deadline=None)
    @given(a=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
           b=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
           c=st.floats(0, 3))
    def test_linear_in_stats(self, a, b, c):
        ha, hb, hab = HistoryRecord(2), HistoryRecord(2), HistoryRecord(2)
        for i, t in enumerate([0.0, 1.0]):
            sa, sb = np.array(a[2 * i:2 * i + 2]), np.array(b[2 * i:2 * i + 2])
            ha.append_and_prune(t, sa, 1.0, 1.0, 1e-8)
            hb.append_and_prune(t, sb, 2.0, 1.0, 1e-8)
            hab.append_and_prune(t, sa + c * sb, 1.0 + 2.0 * c, 1.0, 1e-8)
        Sa, Sb, Sab = (h.weighted_aggregate(1.5, 1.0) for h in (ha, hb, hab))
        np.testing.assert_allclose(Sab.S, Sa.S + c * Sb.S, atol=1e-12)
        assert Sab.N == pytest.approx(Sa.N + c * Sb.N)

    def test_cache_invalidated_on_append(self):
        h = HistoryRecord(1)
        h.append_and_prune(0, [1.0], 1.0, 1.0, 1e-8)
        first = h.weighted_aggregate(1, 1.0).N
        h.append_and_prune(1, [1.0], 1.0, 1.0, 1e-8)
        assert h.weighted_aggregate(1, 1.0).N == pytest.approx(first + 1.0)


class TestMerge:
    def test_sums_matching_timestamps_and_keeps_the_rest(self):
        a, b = HistoryRecord(1), HistoryRecord(1)
        a.append_and_prune(0, [1.0], 1.0, 1.0, 1e-8)
        a.append_and_prune(2, [2.0], 2.0, 1.0, 1e-8)
        b.append_and_prune(1, [5.0], 5.0, 1.0, 1e-8)
        b.append_and_prune(2, [3.0], 3.0, 1.0, 1e-8)
        m = merge_histories(a, b)
        assert [e.t for e in m.entries] == [0.0, 1.0, 2.0]
        assert [e.n for e in m.entries] == [1.0, 5.0, 5.0]
        ma = m.weighted_aggregate(3, 1.0)
        assert ma.N == pytest.approx(a.weighted_aggregate(3, 1.0).N + b.weighted_aggregate(3, 1.0).N)

    def test_inputs_unchanged(self):
        a, b = HistoryRecord(1), HistoryRecord(1)
        a.append_and_prune(0, [1.0], 1.0, 1.0, 1e-8)
        b.append_and_prune(0, [2.0], 1.0, 1.0, 1e-8)
        merge_histories(a, b)
        assert a.entries[0].stats[0] == 1.0 and b.entries[0].stats[0] == 2.0


class TestErrors:
    def test_non_increasing_timestamp(self):
        h = HistoryRecord(1)
        h.append_and_prune(1.0, [0.0], 1.0, 1.0, 1e-8)
        with pytest.raises(InputError):
            h.append_and_prune(1.0, [0.0], 1.0, 1.0, 1e-8)

    def test_negative_count(self):
        with pytest.raises(InputError):
            HistoryRecord(1).append_and_prune(0.0, [0.0], -1.0, 1.0, 1e-8)

    def test_future_entry(self):
        with pytest.raises(InputError):
            kernel_weight(1.0, 2.0, 1.0)

    def test_bad_lambda(self):
        with pytest.raises(InputError):
            kernel_weight(1.0, 0.0, 0.0)
