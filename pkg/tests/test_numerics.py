import numpy as np
import pytest

from dpopt import (Histogram, InvalidArgumentError, gaussian_vector, histogram,
                   l2_norm, rng_stream, stream_key, summarize)


class TestGaussianVector:
    def test_zero_variance_is_exact_zeros(self):
        out = gaussian_vector(seed=7, stream_id=1, dim=4, std=0.0)
        assert out.shape == (4,)
        assert np.all(out == 0.0)

    def test_deterministic_for_same_key(self):
        a = gaussian_vector(seed=7, stream_id=1, dim=4, std=1.0)
        b = gaussian_vector(seed=7, stream_id=1, dim=4, std=1.0)
        np.testing.assert_array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = gaussian_vector(seed=7, stream_id=1, dim=64, std=1.0)
        b = gaussian_vector(seed=7, stream_id=2, dim=64, std=1.0)
        c = gaussian_vector(seed=8, stream_id=1, dim=64, std=1.0)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_moments_at_large_dim(self):
        # Monte-Carlo bound at 3 standard errors: SE(mean)=1e-3, SE(std)~7e-4
        x = gaussian_vector(seed=7, stream_id=1, dim=10**6, std=1.0)
        assert abs(x.mean()) < 0.004
        assert abs(x.std() - 1.0) < 0.01

    def test_std_scales_samples(self):
        unit = gaussian_vector(seed=3, stream_id=5, dim=100, std=1.0)
        scaled = gaussian_vector(seed=3, stream_id=5, dim=100, std=2.5)
        np.testing.assert_allclose(scaled, 2.5 * unit)

    def test_invalid_arguments(self):
        with pytest.raises(InvalidArgumentError):
            gaussian_vector(seed=1, stream_id=0, dim=0, std=1.0)
        with pytest.raises(InvalidArgumentError):
            gaussian_vector(seed=1, stream_id=0, dim=4, std=-1.0)

    def test_outputs_always_finite(self):
        x = gaussian_vector(seed=11, stream_id=9, dim=10**5, std=1e300)
        assert np.isfinite(x).all()


class TestStreamKey:
    def test_domains_do_not_collide(self):
        keys = {stream_key(d, i) for d in range(1, 7) for i in range(1000)}
        assert len(keys) == 6000

    def test_index_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            stream_key(1, -1)
        with pytest.raises(InvalidArgumentError):
            stream_key(1, 2**48)

    def test_rng_stream_reproducible(self):
        g1 = rng_stream(42, stream_key(4, 17))
        g2 = rng_stream(42, stream_key(4, 17))
        np.testing.assert_array_equal(g1.random(10), g2.random(10))


class TestL2Norm:
    def test_hand_values(self):
        assert l2_norm(np.array([3.0, 4.0])) == 5.0
        assert l2_norm(np.array([0.0, 0.0, 0.0])) == 0.0
        assert l2_norm(np.array([1.0, 1.0, 1.0, 1.0])) == 2.0

    def test_absolute_homogeneity(self):
        gen = np.random.Generator(np.random.Philox(key=np.array([1, 2], dtype=np.uint64)))
        for _ in range(20):
            v = gen.standard_normal(13)
            a = float(gen.standard_normal())
            assert np.isclose(l2_norm(a * v), abs(a) * l2_norm(v), rtol=1e-12)


class TestSummarize:
    def test_symmetric_odd_length(self):
        s = summarize([1, 2, 3, 4, 5])
        assert (s.min, s.q1, s.median, s.q3, s.max, s.mean) == (1, 2, 3, 4, 5, 3)

    def test_constant_input(self):
        s = summarize([2.5, 2.5, 2.5])
        assert s.min == s.q1 == s.median == s.q3 == s.max == s.mean == 2.5

    def test_even_length_median(self):
        assert summarize([1, 2, 3, 4]).median == 2.5

    def test_order_constraints_and_permutation_invariance(self):
        gen = np.random.Generator(np.random.Philox(key=np.array([5, 6], dtype=np.uint64)))
        v = gen.standard_normal(101)
        s = summarize(v)
        assert s.min <= s.q1 <= s.median <= s.q3 <= s.max
        assert s.min <= s.mean <= s.max
        assert summarize(gen.permutation(v)) == s

    def test_method_recorded(self):
        assert summarize([1.0]).method == "linear"

    def test_empty_rejected(self):
        with pytest.raises(InvalidArgumentError):
            summarize([])


class TestHistogram:
    def test_boundary_convention(self):
        h = histogram([0.0, 0.5, 1.0], [0.0, 0.5, 1.0])
        # last bin closed on the right: 1.0 lands in [0.5, 1.0]
        np.testing.assert_array_equal(h.counts, [1, 2])
        assert h.underflow == 0 and h.overflow == 0

    def test_empty_values(self):
        h = histogram([], [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(h.counts, [0, 0])

    def test_under_and_overflow(self):
        h = histogram([-1.0, 2.0], [0.0, 1.0])
        np.testing.assert_array_equal(h.counts, [0])
        assert h.underflow == 1 and h.overflow == 1

    def test_total_conservation(self):
        gen = np.random.Generator(np.random.Philox(key=np.array([9, 9], dtype=np.uint64)))
        v = gen.standard_normal(1000)
        h = histogram(v, np.linspace(-1, 1, 9))
        assert h.total == 1000

    def test_bad_edges_rejected(self):
        with pytest.raises(InvalidArgumentError):
            histogram([1.0], [0.0, 0.0, 1.0])
        with pytest.raises(InvalidArgumentError):
            histogram([1.0], [0.0])

    def test_is_dataclass_with_arrays(self):
        h = histogram([0.5], [0.0, 1.0])
        assert isinstance(h, Histogram)
        assert h.counts.dtype.kind in "iu"
