"""Long-tail ECG diagnosis with restoration-based anomaly-detection pretraining."""

__version__ = "0.1.0"

from .records import AttributeVector, EcgRecord, LabelVector, RaritySplit, build_rarity_split
from .synthetic import SynthConfig, generate_synthetic, generate_longtail_dataset

__all__ = [
    "AttributeVector", "EcgRecord", "LabelVector", "RaritySplit", "build_rarity_split",
    "SynthConfig", "generate_synthetic", "generate_longtail_dataset",
]
