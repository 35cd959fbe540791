import numpy as np
import pytest

from oracles import components_4, naive_centroids, two_plateau
from polsarclf.errors import DimensionMismatch, KTooLarge
from polsarclf.superpixels import (
    SlicParams,
    enforce_connectivity,
    init_centers,
    load_segments,
    save_segments,
    segment_centroids,
    slic_distance,
    slic_segment,
)


def straddlers(labels, boundary):
    """Pixels in segments that cover both sides of a vertical boundary, minority side."""
    total = 0
    for k in np.unique(labels):
        cols = np.nonzero(labels == k)[1]
        left = int(np.sum(cols < boundary))
        right = len(cols) - left
        total += min(left, right)
    return total


def all_connected(labels):
    return all(n == 1 for n in components_4(labels).values())


class TestDistance:
    def test_same_pixel(self):
        assert slic_distance((2, 3), (2, 3), [1, 2], [1, 2], 10, 5) == 0

    def test_345(self):
        assert slic_distance((0, 0), (3, 4), np.zeros(5), np.zeros(5), 10, 10) == 5

    @pytest.mark.parametrize("m,s", [(0.1, 1), (10, 10), (40, 3)])
    def test_feature_only(self, m, s):
        assert slic_distance((1, 1), (1, 1), [1, 0, 0, 0, 0], np.zeros(5), m, s) == 1

    def test_bad_s(self):
        with pytest.raises(ValueError):
            slic_distance((0, 0), (1, 1), [0], [0], 1, 0)


class TestInit:
    def test_exact_grid(self):
        seeds = init_centers(np.zeros((100, 100, 2)), 100)
        assert seeds.s == 10 and seeds.count == 100
        assert sorted(set(seeds.rows.tolist())) == list(range(5, 100, 10))
        assert sorted(set(seeds.cols.tolist())) == list(range(5, 100, 10))

    def test_constant_field_stays_on_grid(self):
        seeds = init_centers(np.ones((60, 60, 3)), 36)
        assert set(seeds.rows.tolist()) == set(range(5, 60, 10))

    def test_k_equals_pixels(self):
        seeds = init_centers(np.random.default_rng(0).normal(size=(4, 5, 2)), 20)
        got = sorted(zip(seeds.rows.tolist(), seeds.cols.tolist()))
        assert got == [(y, x) for y in range(4) for x in range(5)]

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            init_centers(np.zeros((3, 3, 1)), 10)

    def test_moves_off_edge(self):
        f = two_plateau(30, 30, boundary=15, u=1)
        seeds = init_centers(f, 1)
        # the single seed sits at (15, 15), on the step; it moves to the flat side
        assert seeds.cols[0] != 15 or seeds.rows[0] != 15


class TestSegment:
    def test_constant_tile(self):
        sp = slic_segment(np.zeros((128, 128, 5)), SlicParams(64))
        s2 = sp.s ** 2
        assert sp.n_segments == 64
        assert np.all(sp.counts >= s2 / 2) and np.all(sp.counts <= 2 * s2)
        assert all_connected(sp.labels)

    def test_two_plateau_small_m(self):
        f = two_plateau(32, 64, boundary=37, u=5)
        sp = slic_segment(f, SlicParams(8, compactness=0.5))
        assert straddlers(sp.labels, 37) == 0

    def test_two_plateau_large_m_is_grid_like(self):
        f = two_plateau(32, 64, boundary=37, u=5)
        big = slic_segment(f, SlicParams(8, compactness=1000.0))
        grid = slic_segment(np.zeros_like(f), SlicParams(8, compactness=1000.0))
        assert np.mean(big.labels == grid.labels) > 0.95
        assert straddlers(big.labels, 37) > 0

    def test_straddle_monotone_in_m(self):
        f = two_plateau(32, 64, boundary=37, u=5, noise=0.02, seed=1)
        counts = [straddlers(slic_segment(f, SlicParams(8, compactness=m)).labels, 37)
                  for m in (0.5, 5.0, 50.0, 500.0)]
        assert counts == sorted(counts)

    def test_deterministic(self, rng):
        f = rng.normal(size=(40, 40, 4))
        a = slic_segment(f, SlicParams(16))
        b = slic_segment(f.copy(), SlicParams(16))
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.features.tobytes() == b.features.tobytes()

    def test_partition(self, rng):
        f = rng.normal(size=(48, 48, 3)) * 0.2
        f[:, 20:] += 1
        k = 36
        sp = slic_segment(f, SlicParams(k))
        assert sp.labels.min() == 0 and sp.labels.max() == sp.n_segments - 1
        assert k / 2 <= sp.n_segments <= 2 * k
        assert sp.counts.sum() == 48 * 48
        assert all_connected(sp.labels)

    def test_centroids_are_means(self, rng):
        f = rng.normal(size=(30, 30, 4))
        sp = slic_segment(f, SlicParams(9))
        np.testing.assert_allclose(sp.features, naive_centroids(f, sp.labels), atol=1e-9)

    def test_assignment_optimal_at_convergence(self, rng):
        f = rng.normal(size=(40, 40, 3)) * 0.3
        f[10:30, 10:30] += 1
        sp = slic_segment(f, SlicParams(16, max_iters=100))
        assert sp.converged
        c = sp.raw_centers
        s, m = sp.s, 10.0
        for y in range(40):
            for x in range(40):
                mine = sp.raw_labels[y, x]
                d = [(m / s) * np.hypot(y - c[j, 0], x - c[j, 1]) + np.linalg.norm(f[y, x] - c[j, 2:])
                     if abs(y - c[j, 0]) <= s and abs(x - c[j, 1]) <= s else np.inf
                     for j in range(len(c))]
                assert d[mine] <= min(d) + 1e-12

    def test_bad_field(self):
        with pytest.raises(DimensionMismatch):
            slic_segment(np.zeros((4, 4)), SlicParams(1))
        with pytest.raises(ValueError):
            slic_segment(np.full((4, 4, 1), np.nan), SlicParams(1))


class TestConnectivity:
    def test_idempotent(self):
        labels = np.repeat(np.repeat(np.arange(4).reshape(2, 2), 5, 0), 5, 1).astype(np.int32)
        out = enforce_connectivity(labels, 0.25, 5, np.zeros((10, 10, 1)))
        np.testing.assert_array_equal(out, labels)
        np.testing.assert_array_equal(enforce_connectivity(out, 0.25, 5, np.zeros((10, 10, 1))), out)

    def test_orphan_absorbed(self):
        labels = np.zeros((9, 9), dtype=np.int32)
        labels[4, 4] = 1
        out = enforce_connectivity(labels, 0.25, 4, np.zeros((9, 9, 2)))
        assert np.all(out == 0)

    def test_orphan_goes_to_nearest_feature(self):
        labels = np.zeros((6, 10), dtype=np.int32)
        labels[:, 5:] = 1
        labels[2, 4] = 2
        f = np.zeros((6, 10, 1))
        f[:, 5:] = 1.0
        f[2, 4] = 0.9
        out = enforce_connectivity(labels, 0.25, 4, f)
        assert out[2, 4] == out[0, 9]

    def test_checkerboard(self):
        labels = (np.add.outer(np.arange(16), np.arange(16)) % 2).astype(np.int32)
        f = labels[..., None].astype(np.float64)
        out = enforce_connectivity(labels, 0.25, 4, f)
        assert all_connected(out)
        assert np.bincount(out.ravel()).min() >= 0.25 * 16


class TestCentroids:
    def test_single_pixel(self):
        f = np.arange(12, dtype=float).reshape(2, 2, 3)
        labels = np.array([[0, 1], [1, 1]])
        counts, my, mx, feats = segment_centroids(f, labels)
        np.testing.assert_array_equal(feats[0], f[0, 0])
        assert counts.tolist() == [1, 3] and my[0] == 0 and mx[0] == 0

    def test_two_pixels(self):
        f = np.array([[[0.2] * 5, [0.4] * 5]])
        _, _, mx, feats = segment_centroids(f, np.zeros((1, 2), int))
        np.testing.assert_allclose(feats[0], 0.3, atol=1e-15)
        assert mx[0] == 0.5

    def test_random_matches_naive(self, rng):
        f = rng.normal(size=(17, 23, 4))
        labels = rng.integers(0, 7, size=(17, 23))
        feats = segment_centroids(f, labels)[3]
        np.testing.assert_allclose(feats, naive_centroids(f, labels), atol=1e-12)


def test_segments_roundtrip(tmp_path, rng):
    sp = slic_segment(rng.normal(size=(20, 20, 3)), SlicParams(4))
    save_segments(sp, tmp_path / "seg.plsr")
    back = load_segments(tmp_path / "seg.plsr")
    np.testing.assert_array_equal(back.labels, sp.labels)
    np.testing.assert_array_equal(back.features, sp.features)
    np.testing.assert_array_equal(back.counts, sp.counts)
    assert back.s == sp.s
