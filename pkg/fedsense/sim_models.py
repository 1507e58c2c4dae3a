"""
Pydantic models for experiment descriptions and per-round simulation records.
"""

import math
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class TopologyKind(str, Enum):
    """Network layouts the simulator can build."""
    LINE = "line"
    RING = "ring"
    STAR = "star"
    GRID = "grid"
    RANDOM = "random"


class Scheme(str, Enum):
    """How sensors combine what they learn."""
    DISTRIBUTED = "distributed"
    CENTRALIZED = "centralized"
    FUSION = "fusion"


class ChannelParams(BaseModel):
    """Location-dependent channel between the transmitter and a sensor."""
    transmitter_position: Tuple[float, float] = Field((0.0, 0.0), description="Transmitter coordinates.")
    path_loss_exponent: float = Field(2.0, gt=0, description="Path loss exponent.")
    reference_snr_db: float = Field(20.0, description="SNR at the reference distance, in dB.")
    reference_distance: float = Field(100.0, gt=0, description="Distance at which reference_snr_db holds.")
    phase_offset_range: float = Field(math.pi, ge=0, description="Per-sensor phase offset is drawn from [-r, r] radians.")
    noise_enabled: bool = Field(True, description="Set to false for a noiseless channel.")

    model_config = ConfigDict(frozen=True, extra="forbid")


class DatasetConfig(BaseModel):
    """Per-sensor dataset sizes."""
    samples_per_sensor: int = Field(1000, gt=0)
    target_fraction: float = Field(0.5, gt=0, lt=1)
    train_fraction: float = Field(0.8, gt=0, lt=1)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def check_split_sizes(self) -> "DatasetConfig":
        n_target = int(round(self.samples_per_sensor * self.target_fraction))
        for name, count in (("target", n_target), ("other", self.samples_per_sensor - n_target)):
            n_train = int(round(count * self.train_fraction))
            if n_train < 1 or count - n_train < 1:
                raise ValueError(
                    f"{self.samples_per_sensor} samples per sensor leave the {name} class "
                    f"with {n_train} train and {count - n_train} test samples; both need at least one"
                )
        return self


class TrainConfig(BaseModel):
    """Local training hyperparameters (RMSprop with dropout)."""
    learning_rate: float = Field(0.001, ge=0)
    rmsprop_decay: float = Field(0.9, ge=0, lt=1)
    rmsprop_epsilon: float = Field(1e-7, gt=0)
    dropout_rate: float = Field(0.2, ge=0, lt=1)
    batch_size: int = Field(32, ge=1)
    local_epochs: int = Field(1, ge=1)

    model_config = ConfigDict(frozen=True, extra="forbid")


class LinkModel(BaseModel):
    """Packet loss and broadcast participation probabilities."""
    packet_loss_prob: float = Field(0.0, ge=0, le=1)
    broadcast_prob: float = Field(1.0, gt=0, le=1)

    model_config = ConfigDict(frozen=True, extra="forbid")


class ConvergenceConfig(BaseModel):
    """Best-average-accuracy convergence rule: no gain of epsilon for window rounds."""
    epsilon: float = Field(0.01, gt=0)
    window: int = Field(100, ge=1)

    model_config = ConfigDict(frozen=True, extra="forbid")


class TopologySpec(BaseModel):
    """Which topology to build, or which exported topology file to replay."""
    kind: TopologyKind = TopologyKind.GRID
    comm_range: float = Field(400.0, gt=0)
    n_sensors: int = Field(20, ge=2, description="Sensor count for the random topology.")
    area: Tuple[Tuple[float, float], Tuple[float, float]] = Field(
        ((100.0, 1000.0), (100.0, 1000.0)),
        description="((x_min, x_max), (y_min, y_max)) for the random topology.",
    )
    max_attempts: int = Field(1000, ge=1, description="Layout draws before giving up on a connected random topology.")
    path: Optional[str] = Field(None, description="Topology JSON to load instead of building one.")

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("area")
    @classmethod
    def check_area(cls, area):
        (x_min, x_max), (y_min, y_max) = area
        if x_min >= x_max or y_min >= y_max:
            raise ValueError(f"area bounds must be increasing, got {area}")
        return area


class SimConfig(BaseModel):
    """Full description of one simulation run."""
    topology: TopologySpec = TopologySpec()
    channel: ChannelParams = ChannelParams()
    dataset: DatasetConfig = DatasetConfig()
    training: TrainConfig = TrainConfig()
    link: LinkModel = LinkModel()
    convergence: ConvergenceConfig = ConvergenceConfig()
    scheme: Scheme = Scheme.DISTRIBUTED
    max_rounds: int = Field(2000, ge=1)
    seed: int = Field(0, ge=0)
    energy_per_broadcast: float = Field(1.0, ge=0)
    output_dir: Optional[str] = None

    model_config = ConfigDict(frozen=True, extra="forbid")


# === PER-ROUND RECORDS ===

class RoundOutcome(BaseModel):
    """What happened in one round of the protocol."""
    round_index: int = Field(..., ge=0)
    received_counts: List[int] = Field(default_factory=list, description="Models received by each sensor.")
    broadcasters: List[int] = Field(default_factory=list, description="Sensors that broadcast this round.")
    accuracies: List[float] = Field(default_factory=list, description="Per-sensor accuracy on the global test set.")
    average_accuracy: float = 0.0

    @model_validator(mode="after")
    def check_average(self):
        if self.accuracies and not math.isclose(
            self.average_accuracy, math.fsum(self.accuracies) / len(self.accuracies), abs_tol=1e-12
        ):
            raise ValueError("average_accuracy must be the mean of accuracies")
        return self

    @property
    def received_total(self) -> int:
        return sum(self.received_counts)


class AccuracyTrace(BaseModel):
    """Average accuracy per round (rounds 1..t) and its running maximum."""
    averages: List[float] = Field(default_factory=list)
    bests: List[float] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.averages)

    @property
    def best(self) -> Optional[float]:
        return self.bests[-1] if self.bests else None


class OverheadReport(BaseModel):
    """Accumulated broadcast counts, bytes on air and transmit-energy proxy."""
    total_broadcasts: int = 0
    per_sensor_broadcasts: List[int] = Field(default_factory=list)
    bytes_transmitted: int = 0
    energy: float = 0.0

    @classmethod
    def empty(cls, n_sensors: int) -> "OverheadReport":
        return cls(per_sensor_broadcasts=[0] * n_sensors)
