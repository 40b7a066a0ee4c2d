"""Geometry tests: brute-force FPS/KNN oracles, normalization, division."""

import numpy as np
import pytest

from mgt.errors import ConfigError
from mgt.geometry import (PointCloud, ScaleConfig, divide, fps, knn,
                          normalize)


# ---------------------------------------------------------------------------
# brute-force oracles (independent scalar-loop implementations)

def fps_oracle(xyz, count, start):
    n = len(xyz)
    selected = [start]
    dists = [float(((xyz[j] - xyz[start]) ** 2).sum()) for j in range(n)]
    for _ in range(count - 1):
        best, best_d = 0, -1.0
        for j in range(n):
            if dists[j] > best_d:  # strict > keeps the lowest index on ties
                best, best_d = j, dists[j]
        selected.append(best)
        for j in range(n):
            d = float(((xyz[j] - xyz[best]) ** 2).sum())
            if d < dists[j]:
                dists[j] = d
    return np.array(selected)


def knn_oracle(xyz, centers, k):
    rows = []
    for c in centers:
        d = [(float(((xyz[j] - xyz[c]) ** 2).sum()), j) for j in range(len(xyz))]
        d.sort()  # (distance, index) pairs: ties fall to the lowest index
        rows.append([j for _, j in d[:k]])
    return np.array(rows)


def test_fps_matches_oracle_on_random_clouds():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(4, 65))
        xyz = rng.standard_normal((n, 3))
        count = int(rng.integers(1, n + 1))
        got = fps(xyz, count, seed=None)
        np.testing.assert_array_equal(got, fps_oracle(xyz, count, 0))


def test_knn_matches_oracle_on_random_clouds():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(4, 65))
        xyz = rng.standard_normal((n, 3))
        k = int(rng.integers(1, n + 1))
        centers = rng.integers(0, n, size=min(5, n))
        got = knn(xyz, centers, k)
        np.testing.assert_array_equal(got, knn_oracle(xyz, centers, k))


def test_fps_line_hand_case():
    # points on the x-axis at 0, 1, 2, 10; from start 0 the farthest is 10,
    # then 2 (max-min), then 1
    xyz = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [10.0, 0, 0]])
    np.testing.assert_array_equal(fps(xyz, 2, seed=None), [0, 3])
    np.testing.assert_array_equal(fps(xyz, 4, seed=None), [0, 3, 2, 1])


def test_fps_exhaustion_selects_every_point():
    rng = np.random.default_rng(2)
    xyz = rng.standard_normal((17, 3))
    idx = fps(xyz, 17, seed=None)
    assert sorted(idx) == list(range(17))


def test_fps_seeded_start_is_deterministic():
    rng = np.random.default_rng(3)
    xyz = rng.standard_normal((32, 3))
    a = fps(xyz, 8, seed=123)
    b = fps(xyz, 8, seed=123)
    np.testing.assert_array_equal(a, b)
    assert fps(xyz, 8, seed=None)[0] == 0


def test_fps_dispersion_beats_random_subset():
    # min pairwise distance of FPS picks should beat a random subset's
    rng = np.random.default_rng(4)
    xyz = rng.standard_normal((256, 3))

    def min_pair(idx):
        sub = xyz[idx]
        d = np.linalg.norm(sub[:, None] - sub[None, :], axis=-1)
        return d[np.triu_indices(len(idx), 1)].min()

    fps_min = min_pair(fps(xyz, 16, seed=None))
    random_min = np.median([min_pair(rng.choice(256, 16, replace=False))
                            for _ in range(20)])
    assert fps_min > random_min


def test_knn_ties_prefer_lowest_index():
    xyz = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [2.0, 0, 0]])
    # from center 0: distances 0, 1, 1, 4 -> tie between 1 and 2
    np.testing.assert_array_equal(knn(xyz, [0], 3)[0], [0, 1, 2])


def test_knn_self_is_rank_zero():
    rng = np.random.default_rng(5)
    xyz = rng.standard_normal((20, 3))
    rows = knn(xyz, np.arange(20), 4)
    np.testing.assert_array_equal(rows[:, 0], np.arange(20))


def test_normalize_centers_and_scales():
    rng = np.random.default_rng(6)
    pts = rng.standard_normal((50, 3)) * 7 + 3
    out = normalize(PointCloud(pts, 0))
    np.testing.assert_allclose(out.points.mean(axis=0), np.zeros(3), atol=1e-12)
    assert np.linalg.norm(out.points, axis=1).max() == pytest.approx(1.0)


def test_normalize_idempotent():
    rng = np.random.default_rng(7)
    c = normalize(PointCloud(rng.standard_normal((30, 3)), 0))
    c2 = normalize(c)
    np.testing.assert_allclose(c.points, c2.points, atol=1e-12)


def test_normalize_two_points():
    out = normalize(PointCloud(np.array([[0.0, 0, 0], [2.0, 0, 0]]), 0))
    np.testing.assert_allclose(out.points, [[-1, 0, 0], [1, 0, 0]], atol=1e-12)


def test_normalize_degenerate_cloud_unchanged():
    pts = np.zeros((5, 3))
    out = normalize(PointCloud(pts, 0))
    np.testing.assert_allclose(out.points, pts)


def test_normalize_preserves_normal_channels():
    rng = np.random.default_rng(8)
    pts = rng.standard_normal((10, 6))
    out = normalize(PointCloud(pts, 0))
    np.testing.assert_allclose(out.points[:, 3:], pts[:, 3:])


def test_divide_shapes():
    rng = np.random.default_rng(9)
    cloud = normalize(PointCloud(rng.standard_normal((128, 3)), 0))
    scales = ScaleConfig(((16, 16), (32, 8)))
    ps = divide(cloud, scales, seed=None)
    assert ps.n_scales == 2
    assert ps.patches[0].shape == (16, 16, 3)
    assert ps.patches[1].shape == (8, 32, 3)
    assert ps.centers[0].shape == (16, 3)
    assert ps.all_centers_xyz().shape == (24, 3)


def test_divide_patches_contain_their_center():
    rng = np.random.default_rng(10)
    cloud = normalize(PointCloud(rng.standard_normal((64, 3)), 0))
    ps = divide(cloud, ScaleConfig(((8, 8),)), seed=None)
    for row, c in zip(ps.neighbor_indices[0], ps.center_indices[0]):
        assert row[0] == c


def test_divide_deterministic_under_seed():
    rng = np.random.default_rng(11)
    cloud = normalize(PointCloud(rng.standard_normal((64, 3)), 0))
    a = divide(cloud, ScaleConfig(((8, 8), (16, 4))), seed=5)
    b = divide(cloud, ScaleConfig(((8, 8), (16, 4))), seed=5)
    for x, y in zip(a.center_indices, b.center_indices):
        np.testing.assert_array_equal(x, y)


def test_scale_config_validation():
    with pytest.raises(ConfigError):
        ScaleConfig(())                   # empty
    with pytest.raises(ConfigError):
        ScaleConfig(((32, 4), (16, 8)))   # wrong order
    with pytest.raises(ConfigError):
        ScaleConfig(((0, 4),))            # bad K
    assert ScaleConfig(((16, 16), (32, 8))).total_patches == 24


def test_scale_config_check_cloud():
    with pytest.raises(ConfigError):
        ScaleConfig(((64, 4),)).check_cloud(32)


def test_point_cloud_validation():
    with pytest.raises(ConfigError):
        PointCloud(np.zeros((4, 2)), 0)
    with pytest.raises(ConfigError):
        PointCloud(np.array([[np.nan, 0, 0]]), 0)
    with pytest.raises(ConfigError):
        fps(np.zeros((4, 3)), 5)
    with pytest.raises(ConfigError):
        knn(np.zeros((4, 3)), [0], 5)
