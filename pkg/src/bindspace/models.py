"""Pydantic models for run configuration, manifests and reports."""

from __future__ import annotations

import math
import re
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

MODALITY_PATTERN = re.compile(r"^[a-z][a-z0-9_-]{0,31}$")
BASE_MODALITIES = ("satellite", "ground", "audio", "text")

# Datasets the world always contains: id -> (binding modality, paired modality).
BASE_DATASETS = {"stage1": ("satellite", "ground"), "stage2": ("satellite", "audio")}

FULL_SCALE_LR = 5e-5
DESK_LR = 1e-3


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------


class WorldConfig(BaseModel):
    latent_dim: int = 8
    satellite_dim: int = 16
    ground_dim: int = 16
    audio_dim: int = 12
    text_dim: int = 16
    extra_modalities: Dict[str, int] = {}
    noise_std: float = 0.05
    stage1_pairs: int = 10_000
    stage2_pairs: int = 2_000
    extra_pairs: int = 2_000
    heldout_fraction: float = 0.1
    eval_locations: int = 1_000
    seed: int = 0

    @field_validator("latent_dim", "satellite_dim", "ground_dim", "audio_dim", "text_dim")
    @classmethod
    def validate_dim(cls, v: int) -> int:
        if v < 2:
            raise ValueError("dimensions must be at least 2")
        return v

    @field_validator("extra_modalities")
    @classmethod
    def validate_extra(cls, v: Dict[str, int]) -> Dict[str, int]:
        for name, dim in v.items():
            if not MODALITY_PATTERN.match(name):
                raise ValueError(f"Invalid modality tag {name!r}")
            if name in BASE_MODALITIES:
                raise ValueError(f"{name!r} is already a built-in modality")
            if dim < 2:
                raise ValueError(f"modality {name!r}: dimensions must be at least 2")
        return v

    @field_validator("noise_std")
    @classmethod
    def validate_noise(cls, v: float) -> float:
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError("noise_std must be a finite value >= 0")
        return v

    @field_validator("stage1_pairs", "stage2_pairs", "extra_pairs")
    @classmethod
    def validate_pairs(cls, v: int) -> int:
        if v < 2:
            raise ValueError("a paired dataset needs at least 2 pairs")
        return v

    @field_validator("heldout_fraction")
    @classmethod
    def validate_fraction(cls, v: float) -> float:
        if not 0 <= v < 1:
            raise ValueError("heldout_fraction must lie in [0, 1)")
        return v

    @field_validator("eval_locations")
    @classmethod
    def validate_eval(cls, v: int) -> int:
        if v < 0:
            raise ValueError("eval_locations must be >= 0")
        return v

    @model_validator(mode="after")
    def validate_text_dim(self) -> "WorldConfig":
        if self.text_dim < self.ground_dim:
            raise ValueError("text_dim must be >= ground_dim for pre-aligned text")
        return self

    @property
    def modality_dims(self) -> Dict[str, int]:
        dims = {
            "satellite": self.satellite_dim,
            "ground": self.ground_dim,
            "audio": self.audio_dim,
            "text": self.text_dim,
        }
        dims.update(self.extra_modalities)
        return dims

    @property
    def dataset_modalities(self) -> Dict[str, tuple]:
        datasets = dict(BASE_DATASETS)
        for name in self.extra_modalities:
            datasets[f"satellite-{name}"] = ("satellite", name)
        return datasets

    def dataset_pairs(self, dataset_id: str) -> int:
        if dataset_id == "stage1":
            return self.stage1_pairs
        if dataset_id == "stage2":
            return self.stage2_pairs
        return self.extra_pairs


# ---------------------------------------------------------------------------
# Encoders and stages
# ---------------------------------------------------------------------------


class EncoderConfig(BaseModel):
    kind: Literal["reference", "mlp"] = "mlp"
    hidden: List[int] = [64]
    activation: Literal["relu", "tanh"] = "tanh"
    # Copy the stage's frozen target when layer shapes match.
    warm_start: bool = True

    @field_validator("hidden")
    @classmethod
    def validate_hidden(cls, v: List[int]) -> List[int]:
        if any(h < 1 for h in v):
            raise ValueError("hidden layer widths must be >= 1")
        return v


class OptimizerConfig(BaseModel):
    beta1: float = 0.99
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01

    @field_validator("beta1", "beta2")
    @classmethod
    def validate_beta(cls, v: float) -> float:
        if not 0 <= v < 1:
            raise ValueError("betas must lie in [0, 1)")
        return v

    @field_validator("eps")
    @classmethod
    def validate_eps(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("eps must be positive")
        return v

    @field_validator("weight_decay")
    @classmethod
    def validate_decay(cls, v: float) -> float:
        if v < 0:
            raise ValueError("weight_decay must be >= 0")
        return v


class ScheduleConfig(BaseModel):
    eta_max: float = FULL_SCALE_LR
    eta_min: float = 0.0
    t0: int = 200
    t_mult: int = 2

    @field_validator("t0", "t_mult")
    @classmethod
    def validate_period(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("eta_min", "eta_max")
    @classmethod
    def validate_eta(cls, v: float) -> float:
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError("learning rates must be finite and >= 0")
        return v

    @model_validator(mode="after")
    def validate_order(self) -> "ScheduleConfig":
        if self.eta_min > self.eta_max:
            raise ValueError("eta_min must not exceed eta_max")
        return self


class StageSpec(BaseModel):
    name: str
    trainable: str
    target: str
    loss: Literal["directional", "symmetric"] = "symmetric"
    dataset: str
    epochs: int = 30
    batch_size: int = 128
    optimizer: OptimizerConfig = OptimizerConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    # None: derived from the master seed and the stage name.
    seed: Optional[int] = None
    cache_targets: bool = False

    @field_validator("name")
    @classmethod
    def validate_name(cls, v: str) -> str:
        if not re.match(r"^[A-Za-z0-9][A-Za-z0-9_.-]{0,63}$", v):
            raise ValueError(
                "Stage name must be 1–64 letters, digits, dots, hyphens or underscores"
            )
        return v

    @field_validator("epochs")
    @classmethod
    def validate_epochs(cls, v: int) -> int:
        if v < 0:
            raise ValueError("epochs must be >= 0")
        return v

    @field_validator("batch_size")
    @classmethod
    def validate_batch(cls, v: int) -> int:
        if v < 2:
            raise ValueError("batch_size must be >= 2 for a meaningful InfoNCE")
        return v

    @model_validator(mode="after")
    def validate_roles(self) -> "StageSpec":
        if self.trainable == self.target:
            raise ValueError("trainable and target encoders must differ")
        return self


class RunConfig(BaseModel):
    version: Literal[1] = 1
    seed: int = 0
    world: WorldConfig = WorldConfig()
    joint_dim: int = 32
    encoders: Dict[str, EncoderConfig]
    stages: List[StageSpec]
    eval_k: List[int] = [1, 5, 10]
    output_dir: str = "runs/default"

    @field_validator("joint_dim")
    @classmethod
    def validate_joint(cls, v: int) -> int:
        if v < 1:
            raise ValueError("joint_dim must be >= 1")
        return v

    @field_validator("eval_k")
    @classmethod
    def validate_k(cls, v: List[int]) -> List[int]:
        if not v or any(k < 1 for k in v):
            raise ValueError("eval_k must be a non-empty list of positive integers")
        return sorted(set(v))

    @model_validator(mode="after")
    def validate_consistency(self) -> "RunConfig":
        if "seed" not in self.world.model_fields_set:
            self.world = self.world.model_copy(update={"seed": self.seed})

        dims = self.world.modality_dims
        datasets = self.world.dataset_modalities
        missing = [m for m in dims if m not in self.encoders]
        if missing:
            raise ValueError(f"no encoder configured for modalities {missing}")
        unknown = [e for e in self.encoders if e not in dims]
        if unknown:
            raise ValueError(f"encoders {unknown} do not match any world modality")

        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise ValueError("stage names must be unique")

        trained: List[str] = []
        for i, stage in enumerate(self.stages):
            where = f"stage {i} ({stage.name})"
            for role in ("trainable", "target"):
                if getattr(stage, role) not in self.encoders:
                    raise ValueError(f"{where}: unknown {role} encoder {getattr(stage, role)!r}")
            if self.encoders[stage.trainable].kind != "mlp":
                raise ValueError(f"{where}: reference encoder {stage.trainable!r} is not trainable")
            if stage.trainable in trained:
                raise ValueError(f"{where}: encoder {stage.trainable!r} is already bound by an earlier stage")
            target_kind = self.encoders[stage.target].kind
            if target_kind != "reference" and stage.target not in trained:
                raise ValueError(
                    f"{where}: target {stage.target!r} must be a reference encoder "
                    "or trained by an earlier stage"
                )
            if stage.dataset not in datasets:
                raise ValueError(f"{where}: unknown dataset {stage.dataset!r}")
            if set(datasets[stage.dataset]) != {stage.trainable, stage.target}:
                raise ValueError(
                    f"{where}: dataset {stage.dataset!r} pairs {list(datasets[stage.dataset])}, "
                    f"not [{stage.trainable!r}, {stage.target!r}]"
                )
            trained.append(stage.trainable)
        return self


# ---------------------------------------------------------------------------
# Outputs
# ---------------------------------------------------------------------------


class MetricRecord(BaseModel):
    stage: str
    step: int
    epoch: int
    loss: float
    lr: float
    tau: float


class StageSummary(BaseModel):
    stage: str
    steps: int = 0
    first_epoch_loss: Optional[float] = None
    last_epoch_loss: Optional[float] = None
    heldout_before: Optional[float] = None
    heldout_after: Optional[float] = None
    final_tau: Optional[float] = None


class ManifestFile(BaseModel):
    name: str
    kind: str
    bytes: int
    sha256: str


class Manifest(BaseModel):
    version: Literal[1] = 1
    master_seed: int
    seeds: Dict[str, int]
    files: List[ManifestFile]


class RetrievalReport(BaseModel):
    query_modality: str
    gallery_modality: str
    gallery_size: int
    ranks: List[int]
    recall: Dict[int, float]
    median_rank: float
    baseline: bool = False

    @model_validator(mode="after")
    def validate_ranks(self) -> "RetrievalReport":
        n = self.gallery_size
        if any(r < 1 or r > n for r in self.ranks):
            raise ValueError(f"ranks must lie in [1, {n}]")
        return self


# ---------------------------------------------------------------------------
# Canonical configurations
# ---------------------------------------------------------------------------


def _desk_schedule() -> ScheduleConfig:
    return ScheduleConfig(eta_max=DESK_LR)


def default_run_config(**overrides) -> RunConfig:
    """The canonical two-stage run: satellite onto frozen ground, audio onto frozen satellite."""
    data = dict(
        encoders={
            "satellite": EncoderConfig(),
            "ground": EncoderConfig(kind="reference"),
            "audio": EncoderConfig(),
            "text": EncoderConfig(kind="reference"),
        },
        stages=[
            StageSpec(
                name="bind-satellite",
                trainable="satellite",
                target="ground",
                loss="directional",
                dataset="stage1",
                epochs=30,
                schedule=_desk_schedule(),
            ),
            StageSpec(
                name="bind-audio",
                trainable="audio",
                target="satellite",
                loss="symmetric",
                dataset="stage2",
                epochs=60,
                schedule=_desk_schedule(),
            ),
        ],
    )
    data.update(overrides)
    return RunConfig(**data)


def extended_run_config(modality: str = "elevation", dim: int = 10, **overrides) -> RunConfig:
    """The canonical run plus one extra modality bound to the frozen satellite encoder."""
    base = default_run_config()
    world = WorldConfig(extra_modalities={modality: dim})
    encoders = {**base.encoders, modality: EncoderConfig()}
    stages = list(base.stages) + [
        StageSpec(
            name=f"bind-{modality}",
            trainable=modality,
            target="satellite",
            loss="symmetric",
            dataset=f"satellite-{modality}",
            epochs=60,
            schedule=_desk_schedule(),
        )
    ]
    data = dict(world=world, encoders=encoders, stages=stages)
    data.update(overrides)
    return RunConfig(**data)
