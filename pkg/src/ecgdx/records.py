"""Core record types: waveforms, attributes, labels, and rarity tiers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

STANDARD_LEADS = ["I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"]

ATTRIBUTE_NAMES = ["gender", "age", "heart_rate", "pr_interval", "qt_interval",
                   "qtc_interval", "qrs_duration"]

# clinical reference ranges widened by +-50% of their width so pathological
# values stay inside the unit interval after scaling
_SCALE_RANGES = {
    "heart_rate": (40.0, 120.0),
    "pr_interval": (80.0, 240.0),
    "qt_interval": (260.0, 500.0),
    "qtc_interval": (305.0, 485.0),
    "qrs_duration": (35.0, 135.0),
}

NORMAL_CLASS = "normal"


class DataError(ValueError):
    """Raised for invalid or inconsistent input data."""


@dataclass(frozen=True)
class AttributeVector:
    """Patient and waveform attributes; ``None`` marks a missing value."""

    gender: Optional[int] = None  # 0 male, 1 female
    age: Optional[float] = None  # years
    heart_rate: Optional[float] = None  # bpm
    pr_interval: Optional[float] = None  # ms
    qt_interval: Optional[float] = None  # ms
    qtc_interval: Optional[float] = None  # ms
    qrs_duration: Optional[float] = None  # ms

    def __post_init__(self):
        if self.gender is not None and self.gender not in (0, 1):
            raise DataError(f"gender must be 0, 1 or None, got {self.gender}")
        if self.age is not None and not 0 <= self.age <= 120:
            raise DataError(f"age out of range: {self.age}")
        if self.heart_rate is not None and not 0 < self.heart_rate < 300:
            raise DataError(f"heart_rate out of range: {self.heart_rate}")
        for name in ("pr_interval", "qt_interval", "qtc_interval", "qrs_duration"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise DataError(f"{name} must be positive, got {v}")

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (values, present_mask), both length 7.

        Gender stays binary, age is scaled by 1/100, interval attributes are
        min-max scaled over widened clinical reference ranges. Missing entries
        are zero-filled and masked out.
        """
        values = np.zeros(len(ATTRIBUTE_NAMES), dtype=np.float64)
        present = np.zeros(len(ATTRIBUTE_NAMES), dtype=bool)
        for i, name in enumerate(ATTRIBUTE_NAMES):
            raw = getattr(self, name)
            if raw is None:
                continue
            present[i] = True
            if name == "gender":
                values[i] = float(raw)
            elif name == "age":
                values[i] = raw / 100.0
            else:
                lo, hi = _SCALE_RANGES[name]
                values[i] = (raw - lo) / (hi - lo)
        return values, present


@dataclass(frozen=True)
class LabelVector:
    """Multi-hot labels over an ordered class list."""

    classes: tuple[str, ...]
    values: np.ndarray  # uint8, multi-hot

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.uint8)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "classes", tuple(self.classes))
        if values.shape != (len(self.classes),):
            raise DataError("label vector length does not match class list")
        if NORMAL_CLASS in self.classes:
            i = self.classes.index(NORMAL_CLASS)
            if values[i] == 1 and values.sum() > 1:
                raise DataError("'normal' label is mutually exclusive with disease labels")

    @classmethod
    def from_names(cls, classes: list[str] | tuple[str, ...], positives: list[str]) -> "LabelVector":
        values = np.zeros(len(classes), dtype=np.uint8)
        for name in positives:
            if name not in classes:
                raise DataError(f"unknown class {name!r}")
            values[list(classes).index(name)] = 1
        return cls(tuple(classes), values)

    @property
    def positive_names(self) -> list[str]:
        return [c for c, v in zip(self.classes, self.values) if v]

    @property
    def is_normal(self) -> bool:
        return NORMAL_CLASS in self.positive_names or self.values.sum() == 0


@dataclass
class EcgRecord:
    """One multi-lead ECG with attributes, labels and an optional anomaly mask."""

    record_id: str
    signal: np.ndarray  # [n_leads, D] millivolts
    sampling_rate: int
    lead_names: list[str]
    attributes: AttributeVector
    labels: LabelVector
    anomaly_mask: Optional[np.ndarray] = None  # [n_leads, D] binary
    split_tag: str = "train"

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float32)
        if self.signal.ndim != 2:
            raise DataError(f"signal must be 2-D [n_leads, D], got {self.signal.shape}")
        if self.sampling_rate != 500:
            raise DataError(f"sampling_rate must be 500, got {self.sampling_rate}")
        if not np.isfinite(self.signal).all():
            raise DataError(f"record {self.record_id}: signal contains NaN/Inf")
        if len(self.lead_names) != self.signal.shape[0]:
            raise DataError("lead_names length does not match signal leads")
        if self.anomaly_mask is not None:
            self.anomaly_mask = np.asarray(self.anomaly_mask, dtype=np.uint8)
            if self.anomaly_mask.shape != self.signal.shape:
                raise DataError("anomaly_mask shape must match signal shape")
            self.anomaly_mask.setflags(write=False)
        if self.split_tag not in ("train", "val", "test"):
            raise DataError(f"split_tag must be train/val/test, got {self.split_tag}")
        self.signal.setflags(write=False)

    @property
    def n_leads(self) -> int:
        return self.signal.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    def with_signal(self, signal: np.ndarray) -> "EcgRecord":
        return replace(self, signal=signal)


@dataclass(frozen=True)
class RaritySplit:
    """Class -> tier assignment derived from training-split label counts."""

    tier_of_class: dict[str, str]
    thresholds: tuple[int, int] = (2500, 400)  # (common_min, rare_max)
    train_counts: dict[str, int] = field(default_factory=dict)
    zero_count_classes: tuple[str, ...] = ()

    TIERS = ("common", "uncommon", "rare")

    def classes_in_tier(self, tier: str) -> list[str]:
        return [c for c, t in self.tier_of_class.items() if t == tier]


def build_rarity_split(records: list[EcgRecord], common_min: int = 2500,
                       rare_max: int = 400) -> RaritySplit:
    """Assign each class a rarity tier from its training-split count.

    rare if count < rare_max, common if count > common_min, else uncommon
    (both comparisons strict). Classes absent from training are rare and
    flagged.
    """
    if not records:
        raise DataError("cannot build a rarity split from zero records")
    classes = records[0].labels.classes
    counts = {c: 0 for c in classes}
    for rec in records:
        if rec.labels.classes != classes:
            raise DataError("records carry inconsistent class lists")
        if rec.split_tag != "train":
            continue
        for name in rec.labels.positive_names:
            counts[name] += 1
    tiers: dict[str, str] = {}
    zeros: list[str] = []
    for c, n in counts.items():
        if n == 0:
            tiers[c] = "rare"
            zeros.append(c)
        elif n < rare_max:
            tiers[c] = "rare"
        elif n > common_min:
            tiers[c] = "common"
        else:
            tiers[c] = "uncommon"
    return RaritySplit(tier_of_class=tiers, thresholds=(common_min, rare_max),
                       train_counts=counts, zero_count_classes=tuple(zeros))
