"""Dataset ingestion, the PCS1 on-disk format, a synthetic shape
generator, and the missing-point robustness sampler.

PCS1 layout (little-endian): magic "PCS1", version u32 = 1, object count
u32, points-per-object u32, channels u32; per object: label u32 followed
by N * C float32 values row-major.  The manifest is UTF-8 `key=value`
lines with keys classes, train, test, n_points, channels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .geometry import PointCloud, fps, normalize

MAGIC = b"PCS1"
VERSION = 1

SHAPE_NAMES = ("sphere", "cube", "cylinder", "torus")
TORUS_R, TORUS_r = 1.0, 0.4


@dataclass
class DatasetManifest:
    classes: list[str]
    train: str
    test: str
    n_points: int
    channels: int

    def save(self, path) -> None:
        lines = [f"classes={','.join(self.classes)}",
                 f"train={self.train}",
                 f"test={self.test}",
                 f"n_points={self.n_points}",
                 f"channels={self.channels}"]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        fields = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"manifest line without '=': {line!r}")
            key, value = line.split("=", 1)
            fields[key] = value
        try:
            return cls(classes=fields["classes"].split(","),
                       train=fields["train"], test=fields["test"],
                       n_points=int(fields["n_points"]),
                       channels=int(fields["channels"]))
        except KeyError as exc:
            raise FormatError(f"manifest missing key {exc}") from exc


def save_split(path, clouds: list[PointCloud], n_points: int, channels: int) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", VERSION, len(clouds), n_points, channels))
        for cloud in clouds:
            if cloud.points.shape != (n_points, channels):
                raise ConfigError("all objects in one file must share N and C_in")
            fh.write(struct.pack("<I", cloud.label))
            fh.write(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())


def load_split(path, num_classes: int | None = None) -> list[PointCloud]:
    """Load a PCS1 file; clouds are normalized on load."""
    with open(path, "rb") as fh:
        def read(n, what):
            data = fh.read(n)
            if len(data) != n:
                raise FormatError(f"truncated file while reading {what} "
                                  f"at offset {fh.tell() - len(data)}")
            return data

        if read(4, "magic") != MAGIC:
            raise FormatError("bad magic (expected PCS1) at offset 0")
        version, count, n_points, channels = struct.unpack("<IIII", read(16, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported version {version}")
        if channels not in (3, 6) or n_points < 1:
            raise FormatError(f"invalid header: n_points={n_points} channels={channels}")
        clouds = []
        for i in range(count):
            offset = fh.tell()
            (label,) = struct.unpack("<I", read(4, f"label of object {i}"))
            if num_classes is not None and label >= num_classes:
                raise FormatError(
                    f"label {label} out of range at offset {offset}")
            raw = np.frombuffer(
                read(4 * n_points * channels, f"points of object {i}"), dtype="<f4")
            pts = raw.reshape(n_points, channels).astype(np.float64)
            clouds.append(normalize(PointCloud(pts, int(label))))
    return clouds


def load_dataset(manifest_path) -> tuple[DatasetManifest, list[PointCloud], list[PointCloud]]:
    manifest = DatasetManifest.load(manifest_path)
    base = Path(manifest_path).parent
    n = len(manifest.classes)
    train = load_split(base / manifest.train, num_classes=n)
    test = load_split(base / manifest.test, num_classes=n)
    return manifest, train, test


# ---------------------------------------------------------------------------
# synthetic shapes (uniform surface sampling, unit scale before transform)

def sample_sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_cube(n: int, rng: np.random.Generator) -> np.ndarray:
    # six faces of equal area; one coordinate pinned at +-1
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for i in range(n):
        others = [a for a in range(3) if a != axis[i]]
        pts[i, axis[i]] = sign[i]
        pts[i, others[0]] = uv[i, 0]
        pts[i, others[1]] = uv[i, 1]
    return pts


def sample_cylinder(n: int, rng: np.random.Generator) -> np.ndarray:
    # radius 1, height 2; lateral area 4*pi vs caps 2*pi
    pts = np.empty((n, 3))
    on_side = rng.uniform(size=n) < 2.0 / 3.0
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    for i in range(n):
        if on_side[i]:
            pts[i] = [np.cos(theta[i]), np.sin(theta[i]),
                      rng.uniform(-1.0, 1.0)]
        else:
            r = np.sqrt(rng.uniform())
            z = 1.0 if rng.uniform() < 0.5 else -1.0
            pts[i] = [r * np.cos(theta[i]), r * np.sin(theta[i]), z]
    return pts


def sample_torus(n: int, rng: np.random.Generator) -> np.ndarray:
    # rejection-correct for the surface element (R + r cos v)
    pts = np.empty((n, 3))
    filled = 0
    while filled < n:
        u = rng.uniform(0.0, 2.0 * np.pi)
        v = rng.uniform(0.0, 2.0 * np.pi)
        if rng.uniform() > (TORUS_R + TORUS_r * np.cos(v)) / (TORUS_R + TORUS_r):
            continue
        pts[filled] = [(TORUS_R + TORUS_r * np.cos(v)) * np.cos(u),
                       (TORUS_R + TORUS_r * np.cos(v)) * np.sin(u),
                       TORUS_r * np.sin(v)]
        filled += 1
    return pts


_SAMPLERS = {"sphere": sample_sphere, "cube": sample_cube,
             "cylinder": sample_cylinder, "torus": sample_torus}


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def generate_synthetic(per_class: int, n_points: int, seed: int,
                       classes: tuple = SHAPE_NAMES
                       ) -> tuple[list[PointCloud], list[PointCloud]]:
    """Class-balanced synthetic dataset, split 2:1 into train/test.

    ``per_class`` is the total object count per class.  Every object gets
    an independent rigid rotation and scale before normalization.
    """
    if n_points < 64:
        raise ConfigError("n_points must be >= 64")
    unknown = set(classes) - set(_SAMPLERS)
    if unknown:
        raise ConfigError(f"unknown shape classes: {sorted(unknown)}")
    train, test = [], []
    n_train = (2 * per_class + 2) // 3
    for label, name in enumerate(classes):
        sampler = _SAMPLERS[name]
        for i in range(per_class):
            rng = np.random.default_rng((seed, label, i))
            pts = sampler(n_points, rng)
            pts = pts @ _random_rotation(rng).T
            pts *= rng.uniform(0.8, 1.25)
            cloud = normalize(PointCloud(pts, label))
            (train if i < n_train else test).append(cloud)
    return train, test


def fps_drop(cloud: PointCloud, keep: int, seed: int | None = None) -> PointCloud:
    """Retain an FPS-selected subset of ``keep`` points (robustness harness)."""
    if keep < 1:
        raise ConfigError("keep must be >= 1")
    idx = fps(cloud.xyz, keep, seed=seed)
    return PointCloud(cloud.points[idx], cloud.label)
