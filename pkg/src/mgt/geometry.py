"""Point-cloud normalization and multi-scale patch division.

Patch centers come from greedy farthest-point sampling (FPS) and patches
from K-nearest-neighbor grouping.  Distances use the xyz channels only;
normal channels, when present, ride along as feature payload.

Tie-break rules (shared with the brute-force test oracles): FPS picks the
lowest index among equidistant candidates, KNN sorts neighbors by distance
with ties broken to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

NORM_TOL = 1e-12


@dataclass
class PointCloud:
    """One object: N x C_in coordinate (+ optional normal) matrix and label."""

    points: np.ndarray
    label: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ConfigError("points must be a non-empty N x C matrix")
        if self.points.shape[1] not in (3, 6):
            raise ConfigError("C_in must be 3 (xyz) or 6 (xyz + normal)")
        if not np.all(np.isfinite(self.points)):
            raise ConfigError("point coordinates must be finite")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def channels(self) -> int:
        return self.points.shape[1]

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]


@dataclass(frozen=True)
class ScaleConfig:
    """Ordered (patch size K, patch count S) pairs, small K first."""

    scales: tuple

    def __post_init__(self):
        scales = tuple((int(k), int(s)) for k, s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not 1 <= len(scales) <= 4:
            raise ConfigError("between 1 and 4 scales are supported")
        ks = [k for k, _ in scales]
        if ks != sorted(ks):
            raise ConfigError("scales must be ordered small K to large K")
        for k, s in scales:
            if k < 1 or s < 1:
                raise ConfigError("patch size and patch count must be >= 1")

    def __len__(self):
        return len(self.scales)

    def __iter__(self):
        return iter(self.scales)

    @property
    def total_patches(self) -> int:
        return sum(s for _, s in self.scales)

    def check_cloud(self, n: int) -> None:
        for k, s in self.scales:
            if k > n:
                raise ConfigError(f"patch size {k} exceeds cloud size {n}")
            if s > n:
                raise ConfigError(f"patch count {s} exceeds cloud size {n}")


@dataclass
class PatchSet:
    """Per-scale centers and grouped neighbor points of one cloud."""

    center_indices: list = field(default_factory=list)   # per scale: (S,)
    neighbor_indices: list = field(default_factory=list)  # per scale: (S, K)
    centers: list = field(default_factory=list)           # per scale: (S, C)
    patches: list = field(default_factory=list)           # per scale: (S, K, C)

    @property
    def n_scales(self) -> int:
        return len(self.patches)

    def all_centers_xyz(self) -> np.ndarray:
        return np.concatenate([c[:, :3] for c in self.centers], axis=0)


def normalize(cloud: PointCloud) -> PointCloud:
    """Center xyz at the centroid and scale the max point norm to 1."""
    pts = cloud.points.copy()
    xyz = pts[:, :3]
    xyz = xyz - xyz.mean(axis=0)
    scale = np.sqrt((xyz ** 2).sum(axis=1)).max()
    if scale > NORM_TOL:
        xyz = xyz / scale
    pts[:, :3] = xyz
    return PointCloud(pts, cloud.label)


def fps(xyz: np.ndarray, count: int, seed: int | None = None) -> np.ndarray:
    """Greedy max-min farthest point sampling.

    The start index is drawn from a seeded RNG when ``seed`` is given
    (training mode) and pinned to 0 otherwise (evaluation mode).
    """
    xyz = np.asarray(xyz, dtype=np.float64)[:, :3]
    n = xyz.shape[0]
    if not 1 <= count <= n:
        raise ConfigError(f"fps count {count} out of range for {n} points")
    if seed is None:
        start = 0
    else:
        start = int(np.random.default_rng(seed).integers(n))
    selected = np.empty(count, dtype=np.int64)
    selected[0] = start
    dists = ((xyz - xyz[start]) ** 2).sum(axis=1)
    for i in range(1, count):
        nxt = int(np.argmax(dists))  # first max = lowest index on ties
        selected[i] = nxt
        dists = np.minimum(dists, ((xyz - xyz[nxt]) ** 2).sum(axis=1))
    return selected


def knn(xyz: np.ndarray, center_indices: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest points per center, sorted by distance.

    Squared Euclidean distance on xyz; stable sort keeps the lowest index
    first among ties.  A center that is itself a cloud point therefore
    appears at rank 0 of its own row.
    """
    xyz = np.asarray(xyz, dtype=np.float64)[:, :3]
    n = xyz.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"knn k {k} out of range for {n} points")
    centers = xyz[np.asarray(center_indices, dtype=np.int64)]
    d2 = ((centers[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=-1)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def divide(cloud: PointCloud, scales: ScaleConfig, seed: int | None = None) -> PatchSet:
    """FPS centers then KNN grouping at every scale of ``scales``."""
    scales.check_cloud(cloud.n_points)
    out = PatchSet()
    for scale_idx, (k, s) in enumerate(scales):
        scale_seed = None if seed is None else seed * 4 + scale_idx
        centers = fps(cloud.xyz, s, seed=scale_seed)
        neighbors = knn(cloud.xyz, centers, k)
        out.center_indices.append(centers)
        out.neighbor_indices.append(neighbors)
        out.centers.append(cloud.points[centers])
        out.patches.append(cloud.points[neighbors])
    return out
