"""JSON run configuration: trainer hyperparameters, codec depth, codebook path,
critic stack and prompt templates. Validated up front; unknown keys are errors."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .critics import (
    ConstantCritic,
    CriticStack,
    CriticWeights,
    ExternalProcessCritic,
    HashNoiseCritic,
    OccupancyBandCritic,
    OracleAlignmentCritic,
    PhysicalCritic,
    PhysicalWeights,
)
from .errors import OctGrpoError
from .grpo import GrpoConfig
from .shapes import KINDS, ShapeSpec, gen_primitive
from .voxel import read_grid


class ConfigError(OctGrpoError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PhysicalSpec(_Strict):
    type: Literal["physical"]
    stab: float = 1 / 3
    rig: float = 1 / 3
    inter: float = 1 / 3


class OracleSpec(_Strict):
    type: Literal["oracle_iou"]


class ConstantSpec(_Strict):
    type: Literal["constant"]
    c: float = Field(ge=0, le=1)


class BandSpec(_Strict):
    type: Literal["occupancy_band"]
    lo: float = Field(ge=0, le=1)
    hi: float = Field(ge=0, le=1)


class NoiseSpec(_Strict):
    type: Literal["seeded_hash_noise"]
    sigma: float = Field(ge=0)
    seed: int = 0


class ExternalSpec(_Strict):
    type: Literal["external"]
    command: list[str] = Field(min_length=1)


CriticSpec = Annotated[
    Union[PhysicalSpec, OracleSpec, ConstantSpec, BandSpec, NoiseSpec, ExternalSpec],
    Field(discriminator="type"),
]


class WeightSpec(_Strict):
    w_h: float = Field(0.25, ge=0)
    w_v: float = Field(0.25, ge=0)
    w_x: float = Field(0.25, ge=0)
    w_p: float = Field(0.25, ge=0)


class CriticsSpec(_Strict):
    h: Optional[CriticSpec] = None
    v: Optional[CriticSpec] = None
    x: Optional[CriticSpec] = None
    p: Optional[CriticSpec] = None
    weights: WeightSpec = WeightSpec()


class ShapeTemplate(_Strict):
    kind: Literal[KINDS]  # type: ignore[valid-type]
    params: dict[str, float] = {}
    seed: int = 0


class GridTemplate(_Strict):
    grid: str


class PolicySpec(_Strict):
    n_sem: int = Field(8, ge=1)
    n_sem_vocab: int = Field(64, ge=1)
    width: int = Field(32, ge=1)
    window: int = Field(8, ge=1)
    seed: Optional[int] = None


class RunConfig(_Strict):
    G: int = GrpoConfig.G
    eps: float = GrpoConfig.eps
    beta: float = GrpoConfig.beta
    lr_base: float = GrpoConfig.lr_base
    warmup_steps: int = GrpoConfig.warmup_steps
    total_steps: int = GrpoConfig.total_steps
    grad_clip_norm: float = GrpoConfig.grad_clip_norm
    kl_cap_factor: float = GrpoConfig.kl_cap_factor
    kl_ema_decay: float = GrpoConfig.kl_ema_decay
    adam_beta1: float = GrpoConfig.adam_beta1
    adam_beta2: float = GrpoConfig.adam_beta2
    adam_eps: float = GrpoConfig.adam_eps
    weight_decay: float = GrpoConfig.weight_decay
    seed: int = GrpoConfig.seed

    depth: int = Field(2, ge=1, le=4)
    codebook: Optional[str] = None
    critics: CriticsSpec = CriticsSpec(p=PhysicalSpec(type="physical"),
                                       weights=WeightSpec(w_h=0, w_v=0, w_x=0, w_p=1))
    prompts: dict[int, Union[ShapeTemplate, GridTemplate]] = {}
    policy: PolicySpec = PolicySpec()

    @model_validator(mode="after")
    def _oracle_needs_prompts(self):
        slots = [self.critics.h, self.critics.v, self.critics.x, self.critics.p]
        if any(isinstance(s, OracleSpec) for s in slots) and not self.prompts:
            raise ValueError("an oracle_iou critic needs at least one prompt template")
        if any(k < 0 for k in self.prompts):
            raise ValueError("prompt ids must be nonnegative")
        return self

    def grpo(self) -> GrpoConfig:
        return GrpoConfig(**{k: getattr(self, k) for k in GrpoConfig.field_names()})


PAPER_HPARAMS = {
    "G": 4, "eps": 0.1, "beta": 0.01, "lr_base": 1e-6, "warmup_steps": 2000, "grad_clip_norm": 1.0,
    "kl_cap_factor": 1.2, "adam_beta1": 0.9, "adam_beta2": 0.98, "weight_decay": 0.01,
}
PAPER_WEIGHTS = {"w_h": 0.25, "w_v": 0.25, "w_x": 0.25, "w_p": 0.25}


def with_paper_hparams(cfg: RunConfig) -> RunConfig:
    """Overlay the full-scale hyperparameters and equal critic weights."""
    data = cfg.model_dump()
    data.update(PAPER_HPARAMS)
    if "total_steps" not in cfg.model_fields_set or data["total_steps"] < PAPER_HPARAMS["warmup_steps"]:
        data["total_steps"] = max(data["total_steps"], PAPER_HPARAMS["warmup_steps"])
    data["critics"]["weights"] = dict(PAPER_WEIGHTS)
    return _validate(data, Path("."))


def hparam_snapshot(cfg: RunConfig) -> dict:
    """The optimizer-facing subset compared against golden values."""
    out = {k: getattr(cfg, k) for k in PAPER_HPARAMS}
    out["critic_weights"] = cfg.critics.weights.model_dump()
    return out


def _validate(data: dict, base: Path) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(data)
        cfg.grpo()
    except ValidationError as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc
    except OctGrpoError as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc
    return _resolve_paths(cfg, base)


def _resolve_paths(cfg: RunConfig, base: Path) -> RunConfig:
    def fix(p: str) -> str:
        q = Path(p)
        return str(q if q.is_absolute() else base / q)

    update = {}
    if cfg.codebook is not None:
        update["codebook"] = fix(cfg.codebook)
    prompts = {k: (GridTemplate(grid=fix(v.grid)) if isinstance(v, GridTemplate) else v) for k, v in cfg.prompts.items()}
    update["prompts"] = prompts
    return cfg.model_copy(update=update)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _validate(data, path.parent)


def parse_config(data: dict, base=".") -> RunConfig:
    return _validate(data, Path(base))


def load_templates(cfg: RunConfig, dims=(64, 64, 64)) -> dict:
    out = {}
    for pid, t in cfg.prompts.items():
        if isinstance(t, GridTemplate):
            out[pid] = read_grid(t.grid)
        else:
            out[pid] = gen_primitive(ShapeSpec(t.kind, dict(t.params), t.seed), dims)
    return out


def _build_critic(spec, templates):
    if spec is None:
        return None
    if isinstance(spec, PhysicalSpec):
        return PhysicalCritic(PhysicalWeights(spec.stab, spec.rig, spec.inter))
    if isinstance(spec, OracleSpec):
        return OracleAlignmentCritic(templates)
    if isinstance(spec, ConstantSpec):
        return ConstantCritic(spec.c)
    if isinstance(spec, BandSpec):
        return OccupancyBandCritic(spec.lo, spec.hi)
    if isinstance(spec, NoiseSpec):
        return HashNoiseCritic(spec.sigma, spec.seed)
    return ExternalProcessCritic(spec.command)


def build_stack(cfg: RunConfig, templates: dict | None = None) -> CriticStack:
    templates = load_templates(cfg) if templates is None else templates
    c = cfg.critics
    w = c.weights
    return CriticStack({s: _build_critic(getattr(c, s), templates) for s in ("h", "v", "x", "p")},
                       CriticWeights(w.w_h, w.w_v, w.w_x, w.w_p))
