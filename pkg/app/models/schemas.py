"""
Pydantic schemas for run configuration and report records.
Everything that is written to or read from a file goes through these models.
"""

from enum import Enum
from typing import Any, Dict, List, Optional
from pydantic import BaseModel, ConfigDict, Field


# === Enumerations ===

class DatasetKind(str, Enum):
    """Synthetic generator families."""
    BLOBS = "blobs"
    MOONS = "moons"


class SourceMode(str, Enum):
    """How several source domains are presented to the sampler."""
    MULTI = "multi"      # per-domain bins, one domain chosen per cycle
    COMBINE = "combine"  # all source domains merged into one


class PretrainScope(str, Enum):
    """Domains receiving label smoothing during source-only pretraining."""
    NONE = "none"
    SOURCE = "source"


class AdaptScope(str, Enum):
    """Domains receiving label smoothing during adaptation."""
    NONE = "none"
    SOURCE = "source"
    TARGET = "target"
    BOTH = "both"


class ReweighMode(str, Enum):
    """Factors entering the target loss weight."""
    NONE = "none"
    SL = "sl"
    DE = "de"
    DE_SL = "de+sl"


class Phase(str, Enum):
    PRETRAIN = "pretrain"
    ADAPT = "adapt"


class Domain(str, Enum):
    SOURCE = "source"
    TARGET = "target"


# === Run Configuration ===

class DatasetSettings(BaseModel):
    """Synthetic two-domain task description."""
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind = Field(default=DatasetKind.BLOBS, description="Generator family")
    classes: int = Field(default=4, ge=2, description="Class count for blobs (moons always has 2)")
    per_class: int = Field(default=250, ge=1, description="Samples per class and domain")
    noise: float = Field(default=0.3, ge=0, description="Gaussian noise standard deviation")
    rotation: float = Field(default=50.0, description="Target rotation in degrees")
    scale: float = Field(default=1.0, gt=0, description="Target scaling factor")
    source_rotations: List[float] = Field(
        default_factory=lambda: [0.0],
        min_length=1,
        description="One rotation per source domain"
    )
    source_mode: SourceMode = Field(default=SourceMode.MULTI, description="multi or combine")

    @property
    def num_classes(self) -> int:
        return 2 if self.kind == DatasetKind.MOONS else self.classes


class ModelSettings(BaseModel):
    """Network shape and dropout."""
    model_config = ConfigDict(extra="forbid")

    hidden: List[int] = Field(
        default_factory=lambda: [64, 32],
        min_length=1,
        description="Feature extractor widths; the last one is the feature dimension"
    )
    classifier_hidden: int = Field(default=32, ge=1, description="Hidden width of the two-layer classifier")
    dropout_rate: float = Field(default=0.75, ge=0, lt=1, description="Dropout rate on classifier hidden units")
    train_dropout: bool = Field(default=True, description="Apply dropout while training")


class Schedule(BaseModel):
    """Iteration counts and learning rates of both phases."""
    model_config = ConfigDict(extra="forbid")

    pretrain_iterations: int = Field(default=300, ge=1)
    pretrain_lr: float = Field(default=0.1, ge=0)
    adapt_lr: float = Field(default=0.05, ge=0)
    cycles: int = Field(default=30, ge=1, description="Adaptation cycles (one uncertainty extraction each)")
    steps: int = Field(default=20, ge=1, description="SGD steps per cycle")
    resample_period: int = Field(default=10, ge=1, description="Steps between pseudo-label resampling")


class McdSettings(BaseModel):
    """Monte Carlo dropout extraction."""
    model_config = ConfigDict(extra="forbid")

    iterations: int = Field(default=25, ge=2, description="Masked forward passes per extraction")
    rate: float = Field(default=0.75, gt=0, lt=1, description="Dropout rate of the MCD masks")


class BatchSettings(BaseModel):
    """Mixed mini-batch construction."""
    model_config = ConfigDict(extra="forbid")

    size: int = Field(default=64, ge=2, description="Batch size |b| (source + target)")
    beta: int = Field(default=4, ge=1, description="Classes per batch, capped at the class count")


class SmoothingPolicy(BaseModel):
    """Domain specific smoothing: epsilon and the scope per phase."""
    model_config = ConfigDict(extra="forbid")

    epsilon: float = Field(default=0.25, ge=0, lt=1)
    pretrain: PretrainScope = Field(default=PretrainScope.SOURCE)
    adapt: AdaptScope = Field(default=AdaptScope.SOURCE)


class RunConfig(BaseModel):
    """Complete description of one run; the config hash is taken over this model."""
    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=0, ge=0, description="Master seed")
    out_dir: str = Field(default="runs", description="Output directory")
    dataset: DatasetSettings = Field(default_factory=DatasetSettings)
    model: ModelSettings = Field(default_factory=ModelSettings)
    schedule: Schedule = Field(default_factory=Schedule)
    mcd: McdSettings = Field(default_factory=McdSettings)
    batch: BatchSettings = Field(default_factory=BatchSettings)
    dss: SmoothingPolicy = Field(default_factory=SmoothingPolicy)
    reweigh: ReweighMode = Field(default=ReweighMode.DE_SL)


# === Dataset Descriptor ===

class DatasetDescriptor(BaseModel):
    """Everything needed to regenerate one domain bit-for-bit."""
    model_config = ConfigDict(extra="forbid")

    kind: DatasetKind
    num_classes: int = Field(ge=2)
    per_class: int = Field(ge=1)
    rotation: float = 0.0
    scale: float = Field(default=1.0, gt=0)
    noise: float = Field(default=0.0, ge=0)
    seed: int = Field(ge=0)
    domain: str = Field(default="source", description="source, source_<d> or target")


# === Report Records ===

class PhaseMetrics(BaseModel):
    """Accuracy and mean class accuracy of one model on one labeled set."""
    phase: str = Field(description="source_train, source_only or adapted")
    accuracy: float = Field(ge=0, le=1)
    mean_class_accuracy: float = Field(ge=0, le=1)


class ResampleDiagnostics(BaseModel):
    """State of one pseudo-label resampling event."""
    cycle: int
    step: int
    disagreement: float = Field(description="Fraction of samples whose pseudo-label differs from argmax mu")
    fallback_count: int = Field(description="Rows whose resampled scores were all zero")
    bin_occupancy: List[int] = Field(description="Target samples per bin")


class WeightStats(BaseModel):
    """Min/mean/max of the reweighting factors seen during a cycle."""
    count: int = 0
    sl_min: float = 0.0
    sl_mean: float = 0.0
    sl_max: float = 0.0
    de_min: float = 0.0
    de_mean: float = 0.0
    de_max: float = 0.0
    omega_min: float = 0.0
    omega_mean: float = 0.0
    omega_max: float = 0.0
    starved_batches: int = Field(default=0, description="Batches whose target weight products were all zero")


class CycleDiagnostics(BaseModel):
    """One adaptation cycle."""
    cycle: int
    source_domain: int
    snapshot_id: str
    steps_run: int
    starved: bool = False
    resample_events: int
    mean_loss: Optional[float] = Field(default=None, description="Mean SGD loss; None when no step ran")
    mean_sigma: float
    eligible_classes_mean: float
    shortfall_steps: int
    replacement_fraction: float
    resampling: List[ResampleDiagnostics] = Field(default_factory=list)
    weights: WeightStats = Field(default_factory=WeightStats)


class RunManifest(BaseModel):
    """First record of every report file: what was run."""
    seed: int
    config_hash: str
    config: Dict[str, Any] = Field(description="Effective dotted keys and values, without out_dir")
    data: List[DatasetDescriptor] = Field(
        default_factory=list,
        description="Descriptors of the datasets actually used, sources first and target last"
    )


class RunReport(BaseModel):
    """Result of one seeded run."""
    seed: int
    config_hash: str
    reweigh: ReweighMode
    pretrain_snapshot_id: Optional[str] = None
    snapshot_id: Optional[str] = None
    source_train: Optional[PhaseMetrics] = None
    source_only: Optional[PhaseMetrics] = None
    adapted: Optional[PhaseMetrics] = None
    cycles: List[CycleDiagnostics] = Field(default_factory=list)


class SeedSummary(BaseModel):
    """Mean and sample standard deviation over consecutive seeds."""
    config_hash: str
    seeds: List[int]
    source_only_accuracy_mean: float
    source_only_accuracy_std: float
    source_only_mca_mean: float
    source_only_mca_std: float
    adapted_accuracy_mean: float
    adapted_accuracy_std: float
    adapted_mca_mean: float
    adapted_mca_std: float


class AblationRow(SeedSummary):
    """One cell of an ablation grid."""
    label: str
    dss_pre: PretrainScope
    dss_ada: AdaptScope
    reweigh: ReweighMode
    epsilon: float
