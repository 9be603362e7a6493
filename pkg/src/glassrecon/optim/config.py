"""Training configuration and its TOML form."""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..losses import LossWeights, RegWeights

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

REPRESENTATIONS = ("local-mlp", "vert-baseline")


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-5
    patch_size: int = 200
    patches_per_step: int = 4
    steps_per_epoch: int | None = None  # None: one patch per view per epoch
    seed: int = 0
    representation: str = "local-mlp"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = 10.0  # global-norm guard; None disables it
    checkpoint_every: int = 10
    chamfer_samples: int = 2000
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.patch_size < 1 or self.patches_per_step < 1:
            raise ValueError("patch size and patches per step must be positive")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation {self.representation!r}; expected one of {REPRESENTATIONS}")
        if not self.lr >= 0:
            raise ValueError("learning rate must be nonnegative")

    def steps_for(self, n_views: int) -> int:
        if self.steps_per_epoch is not None:
            return self.steps_per_epoch
        return max(1, -(-n_views // self.patches_per_step))

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["steps_per_epoch"] is None:
            del d["steps_per_epoch"]
        if d["grad_clip"] is None:
            d["grad_clip"] = 0.0
        return d

    def updated(self, **overrides) -> "TrainConfig":
        """Copy with overrides; ``None`` values are ignored and weight keys
        may be given flat (``corr=0.2``, ``ls=0.1``)."""
        top = {f.name for f in fields(self)} - {"weights"}
        w = asdict(self.weights)
        kw = {}
        for k, v in overrides.items():
            if v is None:
                continue
            if k in top:
                kw[k] = v
            elif k in w and k != "nested":
                w[k] = v
            elif k in w["nested"]:
                w["nested"][k] = v
            else:
                raise KeyError(f"unknown training option {k!r}")
        kw["weights"] = LossWeights(**{**w, "nested": RegWeights(**w["nested"])})
        return replace(self, **kw)


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    train = dict(d.pop("train", {}))
    weights = d.pop("weights", None)
    train.update(d)
    no_clip = train.get("grad_clip") in (0, None) and "grad_clip" in train
    cfg = TrainConfig().updated(**train)
    if no_clip:
        cfg = replace(cfg, grad_clip=None)
    if weights is not None:
        w = dict(weights)
        nested = w.pop("nested", {}) or {}
        cfg = cfg.updated(**w, **nested)
    return cfg


def load_config(path) -> TrainConfig:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))


def dump_config(cfg: TrainConfig) -> str:
    """TOML text with a [train] table and a [weights] table (plus [weights.nested])."""
    d = cfg.to_dict()
    weights = d.pop("weights")
    nested = weights.pop("nested")

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return f'"{v}"'
        return repr(v)

    lines = ["[train]"] + [f"{k} = {fmt(v)}" for k, v in d.items()]
    lines += ["", "[weights]"] + [f"{k} = {fmt(v)}" for k, v in weights.items()]
    lines += ["", "[weights.nested]"] + [f"{k} = {fmt(v)}" for k, v in nested.items()]
    return "\n".join(lines) + "\n"


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
