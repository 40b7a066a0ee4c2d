"""Flat key=value run configuration shared by the CLI and checkpoints.

Every key has a default; unknown keys are rejected.  The fully resolved
configuration is echoed into the output directory before any computation
so every run is reproducible from that file alone.
"""

from __future__ import annotations

from pathlib import Path

from .attention import AttentionConfig
from .errors import ConfigError
from .geometry import ScaleConfig
from .model import ModelConfig
from .training import AugmentConfig, TrainConfig

# key -> (default, parser)
_BOOL = {"true": True, "false": False, "on": True, "off": False, "1": True, "0": False}


def _parse_bool(s):
    try:
        return _BOOL[str(s).strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {s!r}") from None


def parse_scales(text: str) -> ScaleConfig:
    """Parse 'KxS,KxS,...' e.g. '16x16,32x8'."""
    pairs = []
    for item in str(text).split(","):
        item = item.strip()
        if "x" not in item:
            raise ConfigError(f"bad scale entry {item!r}, expected KxS")
        k, s = item.split("x", 1)
        pairs.append((int(k), int(s)))
    return ScaleConfig(tuple(pairs))


def format_scales(scales: ScaleConfig) -> str:
    return ",".join(f"{k}x{s}" for k, s in scales)


DEFAULTS = {
    "data": ("", str),                 # dataset manifest path
    "out": ("runs/default", str),      # output directory
    "scales": ("16x16,32x8", str),
    "d_out": (128, int),
    "depth": (2, int),
    "mlp_ratio": (4, int),
    "pos_hidden": (128, int),
    "attention": ("geodesic", str),
    "blocks": (1, int),
    "temperature": (1.0, float),
    "sphere_map": (True, _parse_bool),
    "mrc": (True, _parse_bool),
    "epochs": (30, int),
    # desk-scale defaults: small batches and a gentler peak rate than the
    # paper's GPU-scale settings, which do not converge at this data size
    "batch_size": (4, int),
    "lr0": (0.005, float),
    "momentum": (0.9, float),
    "weight_decay": (1e-4, float),
    "smoothing": (0.2, float),
    "scale_lo": (0.8, float),
    "scale_hi": (1.25, float),
    "jitter_std": (0.02, float),
    "jitter_clip": (0.05, float),
    "max_drop_ratio": (0.125, float),
    "min_keep_ratio": (1.0, float),
    "seed": (0, int),
}


class RunConfig:
    """Resolved flat configuration with typed accessors."""

    def __init__(self, values: dict | None = None):
        self.values = {k: v for k, (v, _) in DEFAULTS.items()}
        if values:
            self.update(values)

    def update(self, values: dict) -> None:
        for key, raw in values.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown configuration key '{key}'")
            _, parser = DEFAULTS[key]
            self.values[key] = parser(raw) if isinstance(raw, str) else raw

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        cfg = cls()
        text = Path(path).read_text(encoding="utf-8")
        file_values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            file_values[key.strip()] = value.strip()
        cfg.update(file_values)
        if overrides:
            cfg.update(overrides)
        return cfg

    def serialize(self) -> str:
        lines = [f"{k}={self._format(v)}" for k, v in sorted(self.values.items())]
        return "\n".join(lines) + "\n"

    @staticmethod
    def _format(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    # typed views ------------------------------------------------------
    def scale_config(self) -> ScaleConfig:
        return parse_scales(self.values["scales"])

    def model_config(self, num_classes: int, c_in: int = 3) -> ModelConfig:
        return ModelConfig(
            scales=self.scale_config(), num_classes=num_classes, c_in=c_in,
            d_out=self.values["d_out"], depth=self.values["depth"],
            mlp_ratio=self.values["mlp_ratio"],
            pos_hidden=self.values["pos_hidden"],
            attention=AttentionConfig(kind=self.values["attention"],
                                      blocks=self.values["blocks"],
                                      temperature=self.values["temperature"]),
            use_sphere_map=self.values["sphere_map"],
            use_mrc=self.values["mrc"])

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.values["batch_size"], epochs=self.values["epochs"],
            lr0=self.values["lr0"], momentum=self.values["momentum"],
            weight_decay=self.values["weight_decay"],
            smoothing=self.values["smoothing"],
            aug=AugmentConfig(scale_lo=self.values["scale_lo"],
                              scale_hi=self.values["scale_hi"],
                              jitter_std=self.values["jitter_std"],
                              jitter_clip=self.values["jitter_clip"],
                              max_drop_ratio=self.values["max_drop_ratio"],
                              min_keep_ratio=self.values["min_keep_ratio"]),
            seed=self.values["seed"])


def checkpoint_config_text(run_config: RunConfig, num_classes: int, c_in: int) -> str:
    """Config block stored inside checkpoints."""
    lines = [f"model.num_classes={num_classes}", f"model.c_in={c_in}"]
    for k, v in sorted(run_config.values.items()):
        if k in ("data", "out"):
            continue
        prefix = "train." if k in ("batch_size", "epochs", "lr0", "momentum",
                                   "weight_decay", "smoothing", "scale_lo",
                                   "scale_hi", "jitter_std", "jitter_clip",
                                   "max_drop_ratio", "min_keep_ratio",
                                   "seed") else "model."
        lines.append(f"{prefix}{k}={RunConfig._format(v)}")
    return "\n".join(lines) + "\n"


def parse_checkpoint_config(text: str) -> tuple[RunConfig, int, int]:
    """Inverse of checkpoint_config_text -> (run config, num_classes, c_in)."""
    run_values, num_classes, c_in = {}, None, 3
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, value = line.split("=", 1)
        if key == "model.num_classes":
            num_classes = int(value)
        elif key == "model.c_in":
            c_in = int(value)
        else:
            run_values[key.split(".", 1)[1]] = value
    if num_classes is None:
        raise ConfigError("checkpoint config block lacks model.num_classes")
    return RunConfig(run_values), num_classes, c_in
