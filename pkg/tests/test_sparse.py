import numpy as np
import pytest
from scipy import stats

from sparsnn.errors import ConfigError, ContractViolation, CorruptionError
from sparsnn.lif import LifParams, surrogate, threshold_spikes_dense
from sparsnn.rng import DropRng
from sparsnn.sparse import (
    SENTINEL,
    SparseSpikeBatch,
    decode_to_dense,
    encode_binary,
    encode_sparse,
    merge_segments,
)


def params(n, threshold=1.0, grad_threshold=0.8):
    return LifParams.uniform(n, threshold=threshold, grad_threshold=grad_threshold)


class TestEncode:
    def test_two_threshold_rule(self):
        # u=[1.2, 0.5, 0.9], theta=1.0, theta_grad=0.8, capacity 2:
        # neuron 0 fires, neuron 2 is gradient-only, neuron 1 is silent.
        u = np.array([[1.2, 0.5, 0.9]], dtype=np.float32)
        out = encode_sparse(u, params(3), 2, DropRng(0))
        assert out.ids[0].tolist() == [0, 2]
        assert out.num_spikes[0] == 1
        assert out.num_grads[0] == 2
        out.validate()

    def test_empty_when_all_below_grad_threshold(self):
        u = np.full((3, 4), 0.1, dtype=np.float32)
        out = encode_sparse(u, params(4), 2, DropRng(0))
        assert not out.num_spikes.any()
        assert not out.num_grads.any()
        assert np.all(out.ids == SENTINEL)

    def test_grad_values_are_surrogate_at_entries(self):
        u = np.array([[1.2, 0.9, 0.85, 0.2]], dtype=np.float32)
        p = params(4)
        out = encode_sparse(u, p, 4, DropRng(0))
        ng = out.num_grads[0]
        ids = out.ids[0, :ng]
        expect = surrogate(u[0, ids] - p.threshold[ids], p.beta)
        np.testing.assert_array_equal(out.grad_values[0, :ng], expect)

    def test_without_grads(self):
        u = np.array([[1.2, 0.9, 0.85, 0.2]], dtype=np.float32)
        out = encode_sparse(u, params(4), 4, DropRng(0), with_grads=False)
        assert out.grad_values is None
        assert out.num_grads[0] == out.num_spikes[0] == 1

    def test_overflow_keeps_uniform_subset(self):
        u = np.full((1, 3), 2.0, dtype=np.float32)
        counts = np.zeros(3)
        trials = 10000
        for seed in range(trials):
            out = encode_sparse(u, params(3), 2, DropRng(seed))
            assert out.num_spikes[0] == 2
            counts[out.ids[0, :2]] += 1
        np.testing.assert_allclose(counts / trials, 2 / 3, atol=0.02)

    def test_spikes_win_capacity_over_grads(self):
        u = np.array([[1.5, 1.5, 0.9, 0.9]], dtype=np.float32)
        out = encode_sparse(u, params(4), 2, DropRng(3))
        assert out.num_spikes[0] == 2
        assert out.num_grads[0] == 2  # no room left for gradient-only ids

    def test_bad_capacity_rejected(self):
        u = np.zeros((1, 4), dtype=np.float32)
        for n_max in (0, 1, 3):
            with pytest.raises(ConfigError):
                encode_sparse(u, params(4), n_max, DropRng(0))

    def test_determinism_bit_for_bit(self):
        rng = np.random.default_rng(5)
        u = rng.normal(0.9, 0.4, size=(6, 32)).astype(np.float32)
        a = encode_sparse(u, params(32), 8, DropRng(99, 3))
        b = encode_sparse(u, params(32), 8, DropRng(99, 3))
        assert np.array_equal(a.ids, b.ids)
        assert np.array_equal(a.num_spikes, b.num_spikes)
        assert np.array_equal(a.num_grads, b.num_grads)
        assert np.array_equal(a.grad_values, b.grad_values)

    def test_capacity_law_random_inputs(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            n_max = 2 * int(rng.integers(1, n // 2 + 1))
            u = rng.normal(1.0, 1.0, size=(4, n)).astype(np.float32)
            out = encode_sparse(u, params(n), n_max, DropRng(int(rng.integers(1e9))))
            assert np.all(out.num_grads <= n_max)
            assert np.all(out.num_spikes <= out.num_grads)
            out.validate()


class TestDecode:
    def test_segment_convention(self):
        batch = SparseSpikeBatch.empty(1, 2)
        batch.ids[0] = [0, 2]
        batch.num_spikes[0] = 1
        batch.num_grads[0] = 2
        np.testing.assert_array_equal(
            decode_to_dense(batch, 3), [[1.0, 0.0, 0.0]]
        )

    def test_empty(self):
        assert not decode_to_dense(SparseSpikeBatch.empty(3, 4), 7).any()

    def test_out_of_range_id(self):
        batch = SparseSpikeBatch.empty(1, 2)
        batch.ids[0, 0] = 5
        batch.num_spikes[0] = batch.num_grads[0] = 1
        with pytest.raises(CorruptionError):
            decode_to_dense(batch, 3)

    def test_round_trip_matches_dense_threshold(self):
        rng = np.random.default_rng(3)
        p = params(24, grad_threshold=1.0)
        for _ in range(20):
            u = rng.normal(0.8, 0.5, size=(5, 24)).astype(np.float32)
            dense = threshold_spikes_dense(u, p.threshold)
            if dense.sum(axis=1).max() > 12:
                continue  # only the no-drop regime round-trips exactly
            enc = encode_sparse(u, p, 12, DropRng(0))
            np.testing.assert_array_equal(decode_to_dense(enc, 24), dense)


class TestEncodeBinary:
    def test_matches_frame(self):
        frame = np.zeros((2, 6), dtype=np.float32)
        frame[0, [1, 4]] = 1
        frame[1, 5] = 1
        enc = encode_binary(frame, 4, DropRng(0))
        np.testing.assert_array_equal(decode_to_dense(enc, 6), frame)

    def test_drops_to_capacity(self):
        frame = np.ones((1, 10), dtype=np.float32)
        enc = encode_binary(frame, 4, DropRng(7))
        assert enc.num_spikes[0] == 4


class TestMerge:
    def _part(self, ids_spike, ids_grad, n_max, batch=1, with_values=True):
        out = SparseSpikeBatch.empty(batch, n_max, with_grads=with_values)
        ns, ng = len(ids_spike), len(ids_spike) + len(ids_grad)
        out.ids[0, :ns] = ids_spike
        out.ids[0, ns:ng] = ids_grad
        out.num_spikes[0] = ns
        out.num_grads[0] = ng
        if with_values:
            out.grad_values[0, :ng] = np.arange(1, ng + 1, dtype=np.float32)
        return out

    def test_disjoint_union_under_capacity(self):
        a = self._part([1], [], 4)
        b = self._part([5], [], 4)
        merged = merge_segments([a, b], 4, DropRng(0))
        assert merged.ids[0, :2].tolist() == [1, 5]
        assert merged.num_spikes[0] == 2

    def test_all_empty_parts(self):
        parts = [SparseSpikeBatch.empty(2, 4) for _ in range(3)]
        merged = merge_segments(parts, 4, DropRng(0))
        assert not merged.num_grads.any()

    def test_overflow_drops_to_capacity(self):
        parts = [
            self._part([0, 1], [], 4),
            self._part([5], [], 4),
            self._part([8, 9], [], 4),
            self._part([12], [], 4),
        ]
        merged = merge_segments(parts, 4, DropRng(21))
        assert merged.num_spikes[0] == 4
        assert set(merged.ids[0, :4].tolist()) <= {0, 1, 5, 8, 9, 12}
        merged.validate()

    def test_grad_values_follow_ids(self):
        a = self._part([2], [3], 4)
        b = self._part([7], [6], 4)
        merged = merge_segments([a, b], 4, DropRng(0))
        assert merged.ids[0, :4].tolist() == [2, 7, 3, 6]
        # values 1,2 per part mapped onto their original ids
        assert merged.grad_values[0, :4].tolist() == [1.0, 1.0, 2.0, 2.0]

    def test_overlapping_ranges_rejected(self):
        a = self._part([1], [], 4)
        b = self._part([1], [], 4)
        with pytest.raises(ContractViolation):
            merge_segments([a, b], 4, DropRng(0))

    def test_merge_deterministic_and_tree_fixed(self):
        parts = [self._part([k * 3, k * 3 + 1], [], 8) for k in range(5)]
        m1 = merge_segments(parts, 8, DropRng(5, 1))
        m2 = merge_segments(
            [self._part([k * 3, k * 3 + 1], [], 8) for k in range(5)],
            8,
            DropRng(5, 1),
        )
        assert np.array_equal(m1.ids, m2.ids)

    def test_merge_segments_spike_precedence(self):
        a = self._part([0, 1, 2], [3], 6)
        b = self._part([10, 11, 12], [13], 6)
        merged = merge_segments([a, b], 6, DropRng(1))
        assert merged.num_spikes[0] == 6  # all six spikes kept
        assert merged.num_grads[0] == 6  # gradient-only entries squeezed out


class TestDropStatistics:
    def test_chi_square_uniformity(self):
        # 8 of 16 always-firing neurons retained; over many seeds the
        # retention counts must be uniform (chi-square p > 0.01).
        n, n_max, trials = 16, 8, 10000
        u = np.full((1, n), 2.0, dtype=np.float32)
        p = params(n)
        counts = np.zeros(n)
        for seed in range(trials):
            out = encode_sparse(u, p, n_max, DropRng(seed))
            counts[out.ids[0, :n_max]] += 1
        expected = trials * n_max / n
        stat = ((counts - expected) ** 2 / expected).sum()
        pvalue = stats.chi2.sf(stat, df=n - 1)
        assert pvalue > 0.01
