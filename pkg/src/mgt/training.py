"""Training loop: label-smoothed cross-entropy, momentum SGD under a
cosine-annealed learning rate, the three point-cloud augmentations,
metrics, and best-checkpoint retention.

Everything is deterministic under a fixed seed: shuffling uses a per-epoch
RNG and each sample's augmentation / FPS start draws from a counter-based
stream seeded by (seed, epoch, sample index).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError
from .geometry import PointCloud
from .model import MgtModel, predict


@dataclass
class AugmentConfig:
    scale_lo: float = 0.8
    scale_hi: float = 1.25
    jitter_std: float = 0.02
    jitter_clip: float = 0.05
    max_drop_ratio: float = 0.125
    # resolution augmentation: subsample each training cloud to a uniform
    # random size in [min_keep_ratio * N, N]; 1.0 disables it.  Unlike the
    # duplicate-replacement drop above this changes the point density the
    # patch extractor sees, which is what missing-point corruption does at
    # test time.
    min_keep_ratio: float = 1.0

    def __post_init__(self):
        if not 0 < self.scale_lo <= self.scale_hi:
            raise ConfigError("need 0 < scale_lo <= scale_hi")
        if not 0 <= self.max_drop_ratio < 1:
            raise ConfigError("max_drop_ratio must lie in [0, 1)")
        if not 0 < self.min_keep_ratio <= 1:
            raise ConfigError("min_keep_ratio must lie in (0, 1]")


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 250
    lr0: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 1e-4
    smoothing: float = 0.2
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.smoothing < 1:
            raise ConfigError("smoothing must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


@dataclass
class Metrics:
    confusion: np.ndarray  # [true, predicted] counts

    @property
    def oa(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())

    @property
    def macc(self) -> float:
        totals = self.confusion.sum(axis=1)
        present = totals > 0
        per_class = np.diag(self.confusion)[present] / totals[present]
        return float(per_class.mean())


# ---------------------------------------------------------------------------
# loss and schedule

def label_smooth_ce(logits: Tensor, target: int, smoothing: float,
                    num_classes: int) -> Tensor:
    """Cross-entropy of one sample against the smoothed one-hot target."""
    if not 0 <= target < num_classes:
        raise ConfigError("target out of range")
    shifted = ad.sub(logits, ad.rmax(logits, axis=-1, keepdims=True))
    lse = ad.log(ad.rsum(ad.exp(shifted), axis=-1, keepdims=True))
    logp = ad.sub(shifted, lse)
    weights = np.full(num_classes, smoothing / max(num_classes - 1, 1))
    weights[target] = 1.0 - smoothing
    return -ad.rsum(ad.mul(logp, Tensor(weights)))


def cosine_lr(step: int, total: int, lr0: float) -> float:
    if not 0 <= step <= total:
        raise ConfigError("step out of range")
    return max(float(lr0 * (1.0 + np.cos(np.pi * step / total)) / 2.0), 0.0)


# ---------------------------------------------------------------------------
# optimizer

def no_weight_decay(name: str) -> bool:
    if name in ("class_token", "cls_center"):
        return True
    last = name.rsplit(".", 1)[-1]
    if "gain" in last or "bias" in last:
        return True
    return bool(re.fullmatch(r"b", last) or re.match(r"b[\d_]", last)
                or re.search(r"_b\d*$", last))


class SGD:
    """Momentum SGD; layer-norm affines, biases and the class token are
    excluded from weight decay."""

    def __init__(self, params: dict, lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {n: np.zeros_like(p.data) for n, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ConfigError(f"gradient shape mismatch for {name}")
            g = p.grad
            if self.weight_decay and not no_weight_decay(name):
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v


# ---------------------------------------------------------------------------
# augmentation

def augment(points: np.ndarray, aug: AugmentConfig,
            rng: np.random.Generator) -> np.ndarray:
    """Random zoom, clipped Gaussian jitter, bounded point dropout."""
    pts = points.copy()
    scale = rng.uniform(aug.scale_lo, aug.scale_hi)
    pts[:, :3] *= scale
    if aug.jitter_std > 0:
        jitter = rng.normal(0.0, aug.jitter_std, size=pts[:, :3].shape)
        pts[:, :3] += np.clip(jitter, -aug.jitter_clip, aug.jitter_clip)
    n = pts.shape[0]
    max_drop = int(aug.max_drop_ratio * n)
    if max_drop > 0:
        n_drop = int(rng.integers(0, max_drop + 1))
        if n_drop > 0:
            drop_idx = rng.choice(n, size=n_drop, replace=False)
            keep_mask = np.ones(n, dtype=bool)
            keep_mask[drop_idx] = False
            first_kept = int(np.argmax(keep_mask))
            pts[drop_idx] = pts[first_kept]
    if aug.min_keep_ratio < 1.0:
        lo = max(int(np.ceil(aug.min_keep_ratio * n)), 1)
        keep = int(rng.integers(lo, n + 1))
        if keep < n:
            pts = pts[np.sort(rng.choice(n, size=keep, replace=False))]
    return pts


# ---------------------------------------------------------------------------
# loop

def evaluate(model: MgtModel, clouds: list[PointCloud]) -> Metrics:
    """Deterministic evaluation: no augmentation, FPS start pinned."""
    if not clouds:
        raise ConfigError("cannot evaluate an empty split")
    c = model.config.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    for cloud in clouds:
        pred, _ = predict(cloud, model, seed=None)
        confusion[cloud.label, pred] += 1
    return Metrics(confusion)


def train(model: MgtModel, train_clouds: list[PointCloud],
          test_clouds: list[PointCloud], config: TrainConfig,
          epoch_callback=None) -> dict:
    """Run the full loop; returns history plus the best-OA parameter state.

    History rows carry epoch, lr, train_loss, test_oa, test_macc.  The best
    state is a name -> array snapshot taken whenever test OA improves.  A
    truthy return from ``epoch_callback`` stops training after that epoch.
    """
    if not train_clouds or not test_clouds:
        raise ConfigError("train and test splits must be non-empty")
    params = model.params()
    opt = SGD(params, lr=config.lr0, momentum=config.momentum,
              weight_decay=config.weight_decay)
    c = model.config.num_classes
    history = []
    best_oa, best_state = -1.0, None

    for epoch in range(config.epochs):
        opt.lr = cosine_lr(epoch, config.epochs, config.lr0)
        order = np.random.default_rng((config.seed, epoch)).permutation(len(train_clouds))
        losses = []
        for batch_start in range(0, len(order), config.batch_size):
            batch = order[batch_start:batch_start + config.batch_size]
            opt.zero_grad()
            batch_loss = 0.0
            for j in batch:
                cloud = train_clouds[int(j)]
                rng = np.random.default_rng((config.seed, epoch, int(j) + 1))
                pts = augment(cloud.points, config.aug, rng)
                fps_seed = int(rng.integers(2 ** 31))
                logits = model.forward(PointCloud(pts, cloud.label), seed=fps_seed)
                loss = label_smooth_ce(logits, cloud.label, config.smoothing, c)
                loss = ad.mul(loss, Tensor(1.0 / len(batch)))
                if not np.isfinite(loss.data):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, batch {batch_start // config.batch_size}")
                loss.backward()
                batch_loss += loss.item()
            opt.step()
            losses.append(batch_loss)
        metrics = evaluate(model, test_clouds)
        row = {"epoch": epoch, "lr": opt.lr,
               "train_loss": float(np.mean(losses)),
               "test_oa": metrics.oa, "test_macc": metrics.macc}
        history.append(row)
        if metrics.oa > best_oa:
            best_oa = metrics.oa
            best_state = {n: p.data.copy() for n, p in params.items()}
        if epoch_callback is not None and epoch_callback(row):
            break
    return {"history": history, "best_oa": best_oa, "best_state": best_state}


def load_state(model: MgtModel, state: dict) -> None:
    params = model.params()
    missing = set(params) ^ set(state)
    if missing:
        raise ConfigError(f"state does not match model parameters: {sorted(missing)}")
    for name, p in params.items():
        arr = np.asarray(state[name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise ConfigError(f"shape mismatch for parameter {name}")
        p.data = arr.copy()
