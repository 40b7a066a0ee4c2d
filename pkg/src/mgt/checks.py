"""Gradient-check suite over the model's differentiable building blocks.

Each group builds a small fixture, composes it to a scalar, and compares
autodiff gradients with central finite differences.  Large parameter
tensors are subsampled with a seeded RNG to keep the suite under its
runtime budget; small tensors are checked exhaustively.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import AttentionConfig, geodesic_attention, init_attention
from .autodiff import Tensor
from .geometry import PointCloud, ScaleConfig, normalize
from .gradcheck import GradCheckReport, grad_check
from .model import MgtModel, ModelConfig
from .slfe import SphereMapParams, mrc, sphere_map
from .training import label_smooth_ce

DEFAULT_TOL = 1e-4
DEFAULT_STEP = 3e-5


def _scalarize(t: Tensor) -> Tensor:
    return ad.rsum(ad.mul(t, t))


def check_sphere_map(step=DEFAULT_STEP, tol=DEFAULT_TOL) -> GradCheckReport:
    rng = np.random.default_rng(11)
    d = 8
    features = Tensor(rng.standard_normal((2, 4, d)), requires_grad=True)
    params = SphereMapParams(
        alpha=Tensor(rng.standard_normal(d) * 0.5, requires_grad=True),
        beta=Tensor(rng.standard_normal(d) * 0.5, requires_grad=True),
        bias=Tensor(rng.standard_normal(d) * 0.5, requires_grad=True))

    def f():
        return _scalarize(sphere_map(features, params))

    return grad_check(f, [features, params.alpha, params.beta, params.bias],
                      step=step, tolerance=tol,
                      names=["features", "alpha", "beta", "bias"])


def check_mrc(step=DEFAULT_STEP, tol=DEFAULT_TOL) -> GradCheckReport:
    rng = np.random.default_rng(12)
    features = Tensor(rng.standard_normal((3, 4, 5)), requires_grad=True)

    def f():
        return _scalarize(mrc(features))

    return grad_check(f, [features], step=step, tolerance=tol, names=["features"])


def check_geodesic_attention(step=DEFAULT_STEP, tol=DEFAULT_TOL) -> GradCheckReport:
    rng = np.random.default_rng(13)
    d = 8
    config = AttentionConfig(kind="geodesic", blocks=1)
    params = init_attention(np.random.default_rng(14), d, config)
    tokens = Tensor(rng.standard_normal((4, d)), requires_grad=True)

    def f():
        return _scalarize(geodesic_attention(tokens, params, config))

    return grad_check(f, [tokens, params.w_v, params.b_v],
                      step=step, tolerance=tol, names=["tokens", "w_v", "b_v"])


def _toy_model() -> tuple[MgtModel, PointCloud]:
    """Small model at a generic, well-conditioned parameter point.

    Parameters are re-randomized away from the training init: at init all
    patch embeddings nearly coincide, which parks the geodesic arccos next
    to its domain boundary where finite differences are meaningless.  A
    strong position encoding keeps the tokens well separated instead.
    """
    config = ModelConfig(
        scales=ScaleConfig(((8, 4),)), num_classes=2, d_out=16, depth=1,
        mlp_ratio=2, pos_hidden=8,
        attention=AttentionConfig(kind="geodesic", blocks=1))
    model = MgtModel(config, seed=21)
    rng = np.random.default_rng(99)
    for name, p in model.params().items():
        last = name.rsplit(".", 1)[-1]
        if "gain" in last:
            p.data = 1.0 + rng.standard_normal(p.data.shape) * 0.1
        elif "bias" in last and "sphere" not in name:
            p.data = rng.standard_normal(p.data.shape) * 0.1
        elif name.startswith("pos.") or name in ("class_token", "cls_center"):
            p.data = rng.standard_normal(p.data.shape) * 1.0
        elif name.startswith(("slfe0.post_w2", "slfe0.post_b2")):
            p.data = rng.standard_normal(p.data.shape) * 0.05
        else:
            p.data = rng.standard_normal(p.data.shape) * 0.2
    cloud_rng = np.random.default_rng(22)
    cloud = normalize(PointCloud(cloud_rng.standard_normal((64, 3)), label=1))
    return model, cloud


def check_encoder_layer(step=DEFAULT_STEP, tol=DEFAULT_TOL,
                        max_elements: int | None = 25) -> GradCheckReport:
    model, _ = _toy_model()
    layer = model.layers[0]
    rng = np.random.default_rng(15)
    z = Tensor(rng.standard_normal((5, model.config.d_out)), requires_grad=True)
    named = layer.named("enc0")

    def f():
        out = model.encoder_forward(z)
        return _scalarize(out)

    return grad_check(f, [z] + list(named.values()), step=step, tolerance=tol,
                      names=["tokens"] + list(named), max_elements=max_elements)


def check_end_to_end(step=DEFAULT_STEP, tol=DEFAULT_TOL,
                     max_elements: int | None = 25) -> dict[str, GradCheckReport]:
    """Per parameter-group checks of the full toy loss."""
    model, cloud = _toy_model()
    params = model.params()

    def f():
        logits = model.forward(cloud, seed=None)
        return label_smooth_ce(logits, cloud.label, 0.2, model.config.num_classes)

    groups = {
        "class_token": ["class_token"],
        "cls_center": ["cls_center"],
        "position_mlp": [n for n in params if n.startswith("pos.")],
        "slfe": [n for n in params if n.startswith("slfe0")],
        "encoder_layer": [n for n in params if n.startswith("enc0")],
        "head": [n for n in params if n.startswith("head.")],
    }
    reports = {}
    for group, names in groups.items():
        reports[group] = grad_check(
            f, [params[n] for n in names], step=step, tolerance=tol,
            names=names, max_elements=max_elements)
    return reports


def run_suite(step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL,
              max_elements: int | None = 25) -> dict[str, GradCheckReport]:
    """All groups; key -> report.  Passing means every max error < tol."""
    reports = {
        "sphere_map": check_sphere_map(step, tol),
        "mrc": check_mrc(step, tol),
        "geodesic_attention": check_geodesic_attention(step, tol),
        "encoder_layer": check_encoder_layer(step, tol, max_elements),
    }
    for group, rep in check_end_to_end(step, tol, max_elements).items():
        reports[f"end_to_end.{group}"] = rep
    return reports
