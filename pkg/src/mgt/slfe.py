"""Shared Local Feature Extractor: one fixed-length vector per patch.

Pipeline per scale: lift MLP -> layer norm -> sphere mapping -> mid MLP ->
layer norm -> max-pool/repeat/concat (MRC) -> post MLP -> channel-wise max
over the K points of each patch.  Every per-point stage is symmetric in
the point order, so the pooled patch embedding is permutation invariant.

Channel chain: C_in -> 64 -> 64 -> 128 -> 256 -> d_out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError

SPHERE_EPS = 1e-5
SPHERE_DIM = 64
MID_DIM = 128


@dataclass
class SphereMapParams:
    """Learnable per-channel scale/angle-mix/bias vectors of width d."""

    alpha: Tensor
    beta: Tensor
    bias: Tensor

    def __post_init__(self):
        d = self.alpha.shape
        if self.beta.shape != d or self.bias.shape != d:
            raise ConfigError("alpha, beta and bias must share one dimension")

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]


@dataclass
class SlfeParams:
    lift_w1: Tensor
    lift_b1: Tensor
    lift_w2: Tensor
    lift_b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    sphere: SphereMapParams
    mid_w1: Tensor
    mid_b1: Tensor
    mid_w2: Tensor
    mid_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    post_w1: Tensor
    post_b1: Tensor
    post_w2: Tensor
    post_b2: Tensor

    @property
    def d_out(self) -> int:
        return self.post_w1.shape[1]

    def named(self, prefix: str = "slfe") -> dict:
        out = {}
        for field_name in ("lift_w1", "lift_b1", "lift_w2", "lift_b2",
                           "ln1_gain", "ln1_bias",
                           "mid_w1", "mid_b1", "mid_w2", "mid_b2",
                           "ln2_gain", "ln2_bias",
                           "post_w1", "post_b1", "post_w2", "post_b2"):
            out[f"{prefix}.{field_name}"] = getattr(self, field_name)
        out[f"{prefix}.sphere.alpha"] = self.sphere.alpha
        out[f"{prefix}.sphere.beta"] = self.sphere.beta
        out[f"{prefix}.sphere.bias"] = self.sphere.bias
        return out


def _affine_init(rng, fan_in, fan_out):
    w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
    return Tensor(w, requires_grad=True), Tensor(np.zeros(fan_out), requires_grad=True)


def init_slfe(rng: np.random.Generator, c_in: int, d_out: int) -> SlfeParams:
    lw1, lb1 = _affine_init(rng, c_in, SPHERE_DIM)
    lw2, lb2 = _affine_init(rng, SPHERE_DIM, SPHERE_DIM)
    sphere = SphereMapParams(
        alpha=Tensor(np.ones(SPHERE_DIM), requires_grad=True),
        beta=Tensor(np.zeros(SPHERE_DIM), requires_grad=True),
        bias=Tensor(np.zeros(SPHERE_DIM), requires_grad=True),
    )
    mw1, mb1 = _affine_init(rng, SPHERE_DIM, MID_DIM)
    mw2, mb2 = _affine_init(rng, MID_DIM, MID_DIM)
    pw1, pb1 = _affine_init(rng, 2 * MID_DIM, d_out)
    pw2, pb2 = _affine_init(rng, d_out, d_out)
    return SlfeParams(
        lift_w1=lw1, lift_b1=lb1, lift_w2=lw2, lift_b2=lb2,
        ln1_gain=Tensor(np.ones(SPHERE_DIM), requires_grad=True),
        ln1_bias=Tensor(np.zeros(SPHERE_DIM), requires_grad=True),
        sphere=sphere,
        mid_w1=mw1, mid_b1=mb1, mid_w2=mw2, mid_b2=mb2,
        ln2_gain=Tensor(np.ones(MID_DIM), requires_grad=True),
        ln2_bias=Tensor(np.zeros(MID_DIM), requires_grad=True),
        post_w1=pw1, post_b1=pb1, post_w2=pw2, post_b2=pb2,
    )


def sphere_map(features: Tensor, params: SphereMapParams) -> Tensor:
    """Map patch features onto a near-unit sphere and mix in patch angles.

    Input is S x K x d.  Per patch: center features at the patch mean,
    scale each centered vector to (near) unit length weighted by alpha, add
    beta-weighted mean cosine similarity against every point of the same
    patch (self term included), plus bias.
    """
    if features.data.ndim != 3:
        raise ConfigError("sphere_map expects an S x K x d tensor")
    s, k, d = features.shape
    if d != params.dim:
        raise ConfigError(f"feature width {d} does not match sphere params {params.dim}")

    mean = ad.rmean(features, axis=1, keepdims=True)           # S x 1 x d
    centered = ad.sub(features, mean)                          # S x K x d
    norms = ad.sqrt(ad.rsum(ad.mul(centered, centered), axis=-1, keepdims=True))
    unit = ad.div(centered, ad.add(norms, Tensor(SPHERE_EPS)))

    # pairwise cosine matrix per patch: S x K x K
    gram = ad.matmul(centered, ad.transpose(centered, (0, 2, 1)))
    norm_outer = ad.matmul(norms, ad.transpose(norms, (0, 2, 1)))
    cosines = ad.div(gram, ad.add(norm_outer, Tensor(SPHERE_EPS)))
    cos_mean = ad.rmean(cosines, axis=2, keepdims=True)        # S x K x 1

    term1 = ad.mul(unit, params.alpha)
    term2 = ad.mul(cos_mean, params.beta)
    return ad.add(ad.add(term1, term2), params.bias)


def mrc(features: Tensor) -> Tensor:
    """Max-pool over the K points, repeat, concat: S x K x C -> S x K x 2C."""
    if features.data.ndim != 3:
        raise ConfigError("mrc expects an S x K x C tensor")
    s, k, c = features.shape
    pooled = ad.rmax(features, axis=1, keepdims=True)
    repeated = ad.broadcast_to(pooled, (s, k, c))
    return ad.concat([features, repeated], axis=2)


def _mlp(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    h = ad.gelu(ad.add(ad.matmul(x, w1), b1))
    return ad.add(ad.matmul(h, w2), b2)


def slfe_forward(patches, params: SlfeParams,
                 use_sphere_map: bool = True, use_mrc: bool = True) -> Tensor:
    """Embed S x K x C_in patches into S x d_out vectors."""
    x = patches if isinstance(patches, Tensor) else Tensor(patches)
    if x.data.ndim != 3:
        raise ConfigError("slfe_forward expects an S x K x C_in tensor")

    h = _mlp(x, params.lift_w1, params.lift_b1, params.lift_w2, params.lift_b2)
    h = ad.layer_norm(h, params.ln1_gain, params.ln1_bias)
    if use_sphere_map:
        h = sphere_map(h, params.sphere)
    h = _mlp(h, params.mid_w1, params.mid_b1, params.mid_w2, params.mid_b2)
    h = ad.layer_norm(h, params.ln2_gain, params.ln2_bias)
    if use_mrc:
        h = mrc(h)
    else:
        # duplicate channels so the 256-wide post stage is unchanged
        h = ad.concat([h, h], axis=2)
    h = _mlp(h, params.post_w1, params.post_b1, params.post_w2, params.post_b2)
    return ad.rmax(h, axis=1)
