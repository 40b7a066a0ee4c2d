"""Self-attention over patch tokens.

The geodesic variant projects tokens onto a product of unit spheres (one
sphere when ``blocks`` is 1), takes the pairwise great-circle distance
matrix, and uses row-softmaxed negative distances as attention weights
over a learned value projection.  Queries and keys are both the projected
tokens; only the value map is learned.

The dot variant is the standard single-head scaled dot-product baseline
with learned query/key/value projections, kept for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

PROJ_EPS = 1e-12


@dataclass
class AttentionConfig:
    kind: str = "geodesic"          # "geodesic" or "dot"
    blocks: int = 1                 # spheres per token (must divide d_out)
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in ("geodesic", "dot"):
            raise ConfigError(f"unknown attention kind '{self.kind}'")
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass
class AttentionParams:
    """Learned maps; q/k projections exist only in dot mode."""

    w_v: Tensor
    b_v: Tensor
    w_q: Tensor | None = None
    b_q: Tensor | None = None
    w_k: Tensor | None = None
    b_k: Tensor | None = None

    def named(self, prefix: str = "attn") -> dict:
        out = {f"{prefix}.w_v": self.w_v, f"{prefix}.b_v": self.b_v}
        if self.w_q is not None:
            out.update({f"{prefix}.w_q": self.w_q, f"{prefix}.b_q": self.b_q,
                        f"{prefix}.w_k": self.w_k, f"{prefix}.b_k": self.b_k})
        return out


def init_attention(rng: np.random.Generator, d: int,
                   config: AttentionConfig) -> AttentionParams:
    def affine():
        w = rng.standard_normal((d, d)) * np.sqrt(2.0 / d)
        return Tensor(w, requires_grad=True), Tensor(np.zeros(d), requires_grad=True)

    w_v, b_v = affine()
    if config.kind == "dot":
        w_q, b_q = affine()
        w_k, b_k = affine()
        return AttentionParams(w_v, b_v, w_q, b_q, w_k, b_k)
    return AttentionParams(w_v, b_v)


def project_oblique(tokens: Tensor, blocks: int = 1) -> Tensor:
    """Unit-normalize each of ``blocks`` contiguous blocks of every token."""
    t, d = tokens.shape
    if d % blocks != 0:
        raise ConfigError(f"blocks {blocks} must divide token width {d}")
    parts = ad.reshape(tokens, (t, blocks, d // blocks))
    norms = ad.sqrt(ad.rsum(ad.mul(parts, parts), axis=-1, keepdims=True))
    safe = ad.maximum_scalar(norms, PROJ_EPS)
    return ad.reshape(ad.div(parts, safe), (t, d))


def geodesic_dist(q: np.ndarray, k: np.ndarray, blocks: int = 1) -> float:
    """Great-circle distance between two blockwise unit-norm vectors."""
    q = np.asarray(q, dtype=np.float64).reshape(blocks, -1)
    k = np.asarray(k, dtype=np.float64).reshape(blocks, -1)
    dots = np.clip((q * k).sum(axis=1), -1.0, 1.0)
    return float(np.sqrt((np.arccos(dots) ** 2).sum()))


def _pairwise_geodesic(projected: Tensor, blocks: int) -> Tensor:
    """T x T matrix of blockwise great-circle distances.

    The diagonal is masked to exact zero: self-distance is identically 0,
    and evaluating arccos there (block dot = 1 up to rounding) would sit on
    the clamp boundary where neither the value nor the gradient is clean.
    """
    t, d = projected.shape
    parts = ad.transpose(ad.reshape(projected, (t, blocks, d // blocks)),
                         (1, 0, 2))                          # blocks x T x b
    dots = ad.matmul(parts, ad.transpose(parts, (0, 2, 1)))  # blocks x T x T
    angles = ad.arccos(dots)
    dist = ad.sqrt(ad.rsum(ad.mul(angles, angles), axis=0))
    return ad.mul(dist, Tensor(1.0 - np.eye(t)))


def geodesic_attention(tokens: Tensor, params: AttentionParams,
                       config: AttentionConfig) -> Tensor:
    """Attention weighted by negative geodesic distance between tokens."""
    projected = project_oblique(tokens, config.blocks)
    dist = _pairwise_geodesic(projected, config.blocks)
    weights = ad.softmax_rows(ad.mul(dist, Tensor(-1.0 / config.temperature)))
    values = ad.add(ad.matmul(tokens, params.w_v), params.b_v)
    return ad.matmul(weights, values)


def dot_attention(tokens: Tensor, params: AttentionParams,
                  config: AttentionConfig) -> Tensor:
    if params.w_q is None:
        raise ConfigError("dot attention requires q/k projections")
    d = tokens.shape[1]
    q = ad.add(ad.matmul(tokens, params.w_q), params.b_q)
    k = ad.add(ad.matmul(tokens, params.w_k), params.b_k)
    v = ad.add(ad.matmul(tokens, params.w_v), params.b_v)
    logits = ad.mul(ad.matmul(q, ad.transpose(k, (1, 0))), Tensor(1.0 / np.sqrt(d)))
    return ad.matmul(ad.softmax_rows(logits), v)


def attend(tokens: Tensor, params: AttentionParams, config: AttentionConfig) -> Tensor:
    if config.kind == "dot":
        return dot_attention(tokens, params, config)
    return geodesic_attention(tokens, params, config)
