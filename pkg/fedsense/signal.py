"""
Synthetic BPSK/QPSK observations at each sensor and their 32-value feature vectors.

Symbol sequences are complex numpy arrays (real part = I, imaginary part = Q).
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from fedsense.sim_models import ChannelParams

BITS_PER_SAMPLE = 16
FEATURE_COUNT = 32
FEATURE_COLUMNS = [f"feat_{i:02d}" for i in range(FEATURE_COUNT)]
LABEL_COLUMN = "label"

TARGET_LABEL = 1
OTHER_LABEL = 0

logger = logging.getLogger(__name__)


class Modulation(str, Enum):
    """Transmitter modulation. QPSK is the target signal, BPSK the other signal."""
    BPSK = "bpsk"
    QPSK = "qpsk"

    @property
    def bits_per_symbol(self) -> int:
        return 1 if self is Modulation.BPSK else 2

    @property
    def label(self) -> int:
        return TARGET_LABEL if self is Modulation.QPSK else OTHER_LABEL


@dataclass
class FeatureDataset:
    """Columnar set of labelled samples: row k of features (n, 32) goes with labels[k]."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, FEATURE_COUNT)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.features) != len(self.labels):
            raise ValueError(
                f"features and labels disagree in length: {len(self.features)} vs {len(self.labels)}"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: np.ndarray) -> "FeatureDataset":
        return FeatureDataset(self.features[indices], self.labels[indices])

    @classmethod
    def concat(cls, datasets: Sequence["FeatureDataset"]) -> "FeatureDataset":
        if not datasets:
            return cls.empty()
        return cls(
            np.concatenate([d.features for d in datasets]),
            np.concatenate([d.labels for d in datasets]),
        )

    @classmethod
    def empty(cls) -> "FeatureDataset":
        return cls(np.zeros((0, FEATURE_COUNT)), np.zeros(0, dtype=np.int64))


# === SYMBOLS AND CHANNEL ===

def generate_symbols(
    modulation: Modulation,
    bits: Sequence[int],
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    Map 16 bits onto unit-power BPSK or Gray-coded QPSK symbols.

    Args:
        modulation: BPSK (1 bit/symbol) or QPSK (2 bits/symbol)
        bits: Exactly 16 bits
        rng: Unused; the mapping is deterministic. Accepted so every stage of the
            sample pipeline shares one calling convention.

    Returns:
        Complex array of 16 (BPSK) or 8 (QPSK) symbols
    """
    bits = np.asarray(bits, dtype=np.int64)
    if bits.shape != (BITS_PER_SAMPLE,):
        raise ValueError(f"expected {BITS_PER_SAMPLE} bits, got shape {bits.shape}")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")

    # bit 0 -> +1, bit 1 -> -1 on each axis
    levels = 1.0 - 2.0 * bits
    if modulation is Modulation.BPSK:
        return levels.astype(np.complex128)

    pairs = levels.reshape(-1, 2) / math.sqrt(2.0)
    return pairs[:, 0] + 1j * pairs[:, 1]


def distance(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def amplitude_gain(channel: ChannelParams, d: float) -> float:
    """Amplitude gain (d0 / d) ** (n / 2) of the path-loss model."""
    return (channel.reference_distance / d) ** (channel.path_loss_exponent / 2.0)


def snr_db_at(channel: ChannelParams, d: float) -> float:
    """Per-symbol SNR at distance d."""
    return channel.reference_snr_db - 10.0 * channel.path_loss_exponent * math.log10(d / channel.reference_distance)


def draw_phase_offset(channel: ChannelParams, rng: np.random.Generator) -> float:
    """Draw a sensor's constant phase rotation from [-range, +range]."""
    if channel.phase_offset_range == 0:
        return 0.0
    return float(rng.uniform(-channel.phase_offset_range, channel.phase_offset_range))


def apply_channel(
    symbols: np.ndarray,
    sensor_position: Tuple[float, float],
    channel: ChannelParams,
    rng: np.random.Generator,
    phase_offset: Optional[float] = None,
) -> np.ndarray:
    """
    Pass symbols through path loss, a constant phase rotation and AWGN.

    Args:
        symbols: Complex transmitted symbols
        sensor_position: Receiving sensor coordinates
        channel: Channel parameters
        rng: Random source for the phase (when not given) and the noise
        phase_offset: The sensor's constant rotation; drawn from rng when None

    Returns:
        Complex received symbols
    """
    d = distance(sensor_position, channel.transmitter_position)
    if d == 0:
        raise ValueError("sensor sits on the transmitter; path loss is undefined at distance 0")

    if phase_offset is None:
        phase_offset = draw_phase_offset(channel, rng)

    gain = amplitude_gain(channel, d)
    received = np.asarray(symbols, dtype=np.complex128) * gain * np.exp(1j * phase_offset)
    if not channel.noise_enabled:
        return received

    # Unit average symbol power, so the received signal power is gain**2
    noise_var = gain ** 2 / 10.0 ** (snr_db_at(channel, d) / 10.0)
    sigma = math.sqrt(noise_var / 2.0)
    noise = rng.normal(0.0, sigma, size=received.shape) + 1j * rng.normal(0.0, sigma, size=received.shape)
    return received + noise


# === FEATURES ===

def wrap_phase(angle: np.ndarray) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=np.float64), 2.0 * np.pi)
    # np.mod can round up to 2*pi just above pi
    return np.where(wrapped <= -np.pi, np.pi, wrapped)


def _phase_shifts(symbols: np.ndarray) -> np.ndarray:
    angles = np.angle(symbols)
    shifts = np.empty_like(angles)
    shifts[0] = angles[0]
    shifts[1:] = np.diff(angles)
    return wrap_phase(shifts)


def extract_features(symbols: np.ndarray, modulation: Modulation) -> np.ndarray:
    """
    Compute the 32 phase-shift/power features of one sample.

    BPSK gives one (phase shift, power) pair per symbol. QPSK gives two pairs per
    symbol: one for the symbol itself and one for its in-phase projection, treated
    as a BPSK sub-stream.

    Args:
        symbols: 16 BPSK or 8 QPSK received symbols
        modulation: Modulation the symbols were drawn with

    Returns:
        Feature vector of length 32
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    expected = BITS_PER_SAMPLE // modulation.bits_per_symbol
    if symbols.shape != (expected,):
        raise ValueError(f"{modulation.value} sample needs {expected} symbols, got {symbols.shape}")

    shifts = _phase_shifts(symbols)
    powers = symbols.real ** 2 + symbols.imag ** 2
    if modulation is Modulation.BPSK:
        columns = [shifts, powers]
    else:
        in_phase = symbols.real.astype(np.complex128)
        columns = [shifts, powers, _phase_shifts(in_phase), symbols.real ** 2]

    return np.stack(columns, axis=1).reshape(-1)


# === DATASETS ===

def generate_sensor_dataset(
    sensor_position: Tuple[float, float],
    channel: ChannelParams,
    n_samples: int,
    target_fraction: float,
    rng: np.random.Generator,
) -> FeatureDataset:
    """
    Generate one sensor's labelled samples.

    Args:
        sensor_position: Sensor coordinates
        channel: Channel parameters
        n_samples: Number of samples
        target_fraction: Share of QPSK (target) samples
        rng: Random source; the same seed gives the same dataset

    Returns:
        FeatureDataset with round(n_samples * target_fraction) target samples
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    if not 0 < target_fraction < 1:
        raise ValueError("target_fraction must lie strictly between 0 and 1")

    n_target = int(round(n_samples * target_fraction))
    labels = np.zeros(n_samples, dtype=np.int64)
    labels[:n_target] = TARGET_LABEL
    rng.shuffle(labels)

    phase_offset = draw_phase_offset(channel, rng)
    features = np.empty((n_samples, FEATURE_COUNT))
    for k, label in enumerate(labels):
        modulation = Modulation.QPSK if label == TARGET_LABEL else Modulation.BPSK
        bits = rng.integers(0, 2, size=BITS_PER_SAMPLE)
        received = apply_channel(generate_symbols(modulation, bits), sensor_position, channel, rng, phase_offset)
        features[k] = extract_features(received, modulation)

    logger.debug(
        f"Sensor at {sensor_position}: {n_samples} samples, SNR {snr_db_at(channel, distance(sensor_position, channel.transmitter_position)):.1f} dB"
    )
    return FeatureDataset(features, labels)


def split_dataset(
    dataset: FeatureDataset,
    train_fraction: float,
    rng: np.random.Generator,
) -> Tuple[FeatureDataset, FeatureDataset]:
    """
    Stratified train/test split: each class is split with the same fraction.

    Returns:
        (train, test) datasets
    """
    train_idx, test_idx = [], []
    for label in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == label)
        rng.shuffle(idx)
        cut = int(round(len(idx) * train_fraction))
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])

    train = np.sort(np.concatenate(train_idx)) if train_idx else np.zeros(0, dtype=np.int64)
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.zeros(0, dtype=np.int64)
    return dataset.subset(train), dataset.subset(test)


def save_dataset_csv(dataset: FeatureDataset, path: Path) -> Path:
    """Write one row per sample: feat_00..feat_31 then label."""
    frame = pd.DataFrame(dataset.features, columns=FEATURE_COLUMNS)
    frame[LABEL_COLUMN] = dataset.labels
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def load_dataset_csv(path: Path) -> FeatureDataset:
    frame = pd.read_csv(path)
    missing = [c for c in FEATURE_COLUMNS + [LABEL_COLUMN] if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is missing columns: {missing}")
    return FeatureDataset(frame[FEATURE_COLUMNS].to_numpy(dtype=np.float64), frame[LABEL_COLUMN].to_numpy())
