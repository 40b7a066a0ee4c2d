"""Full classifier: multi-scale embedding, class token, position encoding,
pre-norm transformer encoder, classification head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttentionConfig, AttentionParams, attend, init_attention
from .autodiff import Tensor
from .errors import ConfigError
from .geometry import PointCloud, ScaleConfig, divide
from .slfe import SlfeParams, init_slfe, slfe_forward


@dataclass
class ModelConfig:
    scales: ScaleConfig
    num_classes: int
    c_in: int = 3
    d_out: int = 256
    depth: int = 4                  # encoder layers L
    mlp_ratio: int = 4
    pos_hidden: int = 128
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    use_sphere_map: bool = True
    use_mrc: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.depth < 0:
            raise ConfigError("depth must be >= 0")
        if self.c_in not in (3, 6):
            raise ConfigError("c_in must be 3 or 6")
        if self.d_out % self.attention.blocks != 0:
            raise ConfigError("attention blocks must divide d_out")

    @property
    def n_tokens(self) -> int:
        return 1 + self.scales.total_patches


@dataclass
class EncoderLayer:
    ln1_gain: Tensor
    ln1_bias: Tensor
    attn: AttentionParams
    ln2_gain: Tensor
    ln2_bias: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor

    def named(self, prefix: str) -> dict:
        out = {f"{prefix}.{n}": getattr(self, n)
               for n in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
                         "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2")}
        out.update(self.attn.named(f"{prefix}.attn"))
        return out


class MgtModel:
    """Holds every learnable parameter and the forward passes."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        std = 0.02
        d = config.d_out

        self.slfe: list[SlfeParams] = [
            init_slfe(rng, config.c_in, d) for _ in config.scales]
        self.class_token = Tensor(rng.standard_normal((1, d)) * std,
                                  requires_grad=True)
        self.cls_center = Tensor(rng.standard_normal((1, 3)) * std,
                                 requires_grad=True)

        def affine(fan_in, fan_out):
            # He scaling keeps the token pathway's input dependence on the
            # same order as the static class-token component; with smaller
            # weights the class readout starts noise-dominated and momentum
            # SGD collapses it to the constant (prior-only) solution.
            w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
            return (Tensor(w, requires_grad=True),
                    Tensor(np.zeros(fan_out), requires_grad=True))

        self.pos_w1, self.pos_b1 = affine(3, config.pos_hidden)
        self.pos_w2, self.pos_b2 = affine(config.pos_hidden, d)

        self.layers: list[EncoderLayer] = []
        for _ in range(config.depth):
            w1, b1 = affine(d, config.mlp_ratio * d)
            w2, b2 = affine(config.mlp_ratio * d, d)
            self.layers.append(EncoderLayer(
                ln1_gain=Tensor(np.ones(d), requires_grad=True),
                ln1_bias=Tensor(np.zeros(d), requires_grad=True),
                attn=init_attention(rng, d, config.attention),
                ln2_gain=Tensor(np.ones(d), requires_grad=True),
                ln2_bias=Tensor(np.zeros(d), requires_grad=True),
                mlp_w1=w1, mlp_b1=b1, mlp_w2=w2, mlp_b2=b2))

        self.final_ln_gain = Tensor(np.ones(d), requires_grad=True)
        self.final_ln_bias = Tensor(np.zeros(d), requires_grad=True)
        self.head_w, self.head_b = affine(d, config.num_classes)

    def params(self) -> dict:
        out = {}
        for i, s in enumerate(self.slfe):
            out.update(s.named(f"slfe{i}"))
        out["class_token"] = self.class_token
        out["cls_center"] = self.cls_center
        out.update({"pos.w1": self.pos_w1, "pos.b1": self.pos_b1,
                    "pos.w2": self.pos_w2, "pos.b2": self.pos_b2})
        for i, layer in enumerate(self.layers):
            out.update(layer.named(f"enc{i}"))
        out.update({"final_ln_gain": self.final_ln_gain,
                    "final_ln_bias": self.final_ln_bias,
                    "head.w": self.head_w, "head.b": self.head_b})
        return out

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    # ------------------------------------------------------------------
    def embed(self, cloud: PointCloud, seed: int | None = None) -> Tensor:
        """Cloud -> (S+1) x d_out token sequence with position encoding."""
        if cloud.channels != self.config.c_in:
            raise ConfigError(
                f"cloud has {cloud.channels} channels, model expects {self.config.c_in}")
        patchset = divide(cloud, self.config.scales, seed=seed)
        per_scale = [
            slfe_forward(patchset.patches[i], self.slfe[i],
                         use_sphere_map=self.config.use_sphere_map,
                         use_mrc=self.config.use_mrc)
            for i in range(patchset.n_scales)]
        tokens = ad.concat([self.class_token] + per_scale, axis=0)

        centers = ad.concat(
            [self.cls_center, Tensor(patchset.all_centers_xyz())], axis=0)
        pos_h = ad.gelu(ad.add(ad.matmul(centers, self.pos_w1), self.pos_b1))
        pos = ad.add(ad.matmul(pos_h, self.pos_w2), self.pos_b2)
        return ad.add(tokens, pos)

    def encoder_forward(self, z0: Tensor) -> Tensor:
        """Pre-norm residual encoder; returns num_classes logits."""
        z = z0
        for layer in self.layers:
            normed = ad.layer_norm(z, layer.ln1_gain, layer.ln1_bias)
            z = ad.add(z, attend(normed, layer.attn, self.config.attention))
            normed = ad.layer_norm(z, layer.ln2_gain, layer.ln2_bias)
            h = ad.gelu(ad.add(ad.matmul(normed, layer.mlp_w1), layer.mlp_b1))
            h = ad.add(ad.matmul(h, layer.mlp_w2), layer.mlp_b2)
            z = ad.add(z, h)
        cls = ad.gather(z, [0], axis=0)
        y = ad.layer_norm(cls, self.final_ln_gain, self.final_ln_bias)
        logits = ad.add(ad.matmul(y, self.head_w), self.head_b)
        return ad.reshape(logits, (self.config.num_classes,))

    def forward(self, cloud: PointCloud, seed: int | None = None) -> Tensor:
        return self.encoder_forward(self.embed(cloud, seed=seed))


def predict(cloud: PointCloud, model: MgtModel,
            seed: int | None = None) -> tuple[int, np.ndarray]:
    """Class index (argmax, ties to lowest) and probability vector."""
    logits = model.forward(cloud, seed=seed).data
    shifted = logits - logits.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    return int(np.argmax(probs)), probs
