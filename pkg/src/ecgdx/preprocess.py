"""Signal conditioning: band-pass/notch filtering, R-peak detection,
heartbeat segmentation, trend extraction, and train-statistics normalization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import butter, filtfilt, iirnotch, sosfiltfilt

from . import kernels
from .records import EcgRecord, DataError


class PreprocessError(ValueError):
    """Fatal per-record preprocessing failure."""


@dataclass(frozen=True)
class PreprocessConfig:
    band_low_hz: float = 0.5
    band_high_hz: float = 40.0
    butter_order: int = 3
    notch_hz: float = 50.0
    notch_q: float = 30.0
    beat_len: int = 320  # resampled samples per heartbeat
    trend_avg_window: int = 25
    rpeak_window_s: float = 2.0
    rpeak_quantile: float = 0.95
    rpeak_threshold_factor: float = 0.6
    refractory_s: float = 0.2
    qrs_band_hz: tuple[float, float] = (8.0, 25.0)  # detector-internal band limit

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


DEFAULT_PREPROCESS = PreprocessConfig()


def filter_signal(raw: np.ndarray, rate: int, config: PreprocessConfig = DEFAULT_PREPROCESS) -> np.ndarray:
    """Zero-phase band-pass (Butterworth) then power-line notch filtering.

    Forward-backward application keeps R-peak positions unshifted. Output
    length equals input length.
    """
    if rate != 500:
        raise PreprocessError(f"expected 500 Hz input, got {rate}")
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise PreprocessError("filter_signal expects a 1-D signal")
    # forward-backward filtering needs enough samples to pad the edges
    min_len = 3 * (2 * config.butter_order + 1) * 3
    if raw.size < min_len:
        raise PreprocessError(f"signal of {raw.size} samples is too short to filter")
    nyq = rate / 2.0
    sos = butter(config.butter_order, [config.band_low_hz / nyq, config.band_high_hz / nyq],
                 btype="bandpass", output="sos")
    y = sosfiltfilt(sos, raw)
    b, a = iirnotch(config.notch_hz / nyq, config.notch_q)
    y = filtfilt(b, a, y)
    return y


def detect_rpeaks(filtered: np.ndarray, rate: int,
                  config: PreprocessConfig = DEFAULT_PREPROCESS) -> np.ndarray:
    """Adaptive-threshold R-peak detector; no learnable parameters.

    The signal is limited to the QRS band, squared, and compared against
    0.6x its rolling 95th percentile over a 2 s window. Regions above the
    threshold contribute one candidate each; candidates are refined to the
    energy apex of the input signal nearby, and a 200 ms refractory period
    keeps only the strongest of close peaks. Output indices are strictly
    increasing; invariant under positive rescaling of the input.
    """
    filtered = np.asarray(filtered, dtype=np.float64)
    if filtered.size < 2 * rate:
        raise PreprocessError("R-peak detection needs at least 2 s of signal")
    nyq = rate / 2.0
    lo, hi = config.qrs_band_hz
    sos = butter(2, [lo / nyq, hi / nyq], btype="bandpass", output="sos")
    energy = sosfiltfilt(sos, filtered) ** 2
    window = int(config.rpeak_window_s * rate)
    threshold = config.rpeak_threshold_factor * kernels.rolling_quantile(
        energy, window, config.rpeak_quantile)
    above = energy > threshold
    if not above.any():
        return np.array([], dtype=np.int64)
    # contiguous above-threshold regions -> one candidate per region
    idx = np.flatnonzero(above)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    region_starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    region_ends = np.concatenate([idx[breaks], [idx[-1]]]) + 1
    raw_energy = filtered * filtered
    refine = int(0.04 * rate)
    candidates = []
    for s, e in zip(region_starts, region_ends):
        c = s + int(np.argmax(energy[s:e]))
        a = max(0, c - refine)
        b = min(filtered.size, c + refine + 1)
        candidates.append(a + int(np.argmax(raw_energy[a:b])))
    refractory = int(config.refractory_s * rate)
    peaks: list[int] = []
    for c in sorted(set(candidates)):
        if peaks and c - peaks[-1] < refractory:
            if raw_energy[c] > raw_energy[peaks[-1]]:
                peaks[-1] = c
        else:
            peaks.append(c)
    return np.array(peaks, dtype=np.int64)


def beat_spans(rpeaks: np.ndarray, n_samples: int) -> list[tuple[int, int]]:
    """Beat boundaries at midpoints between adjacent R-peaks.

    The first span starts at 0 and the last ends at n_samples, so the spans
    tile [0, n_samples) exactly.
    """
    rpeaks = np.asarray(rpeaks, dtype=np.int64)
    if rpeaks.size < 2:
        raise PreprocessError("need at least 2 R-peaks to segment heartbeats")
    mids = (rpeaks[:-1] + rpeaks[1:]) // 2
    bounds = np.concatenate([[0], mids, [n_samples]])
    return [(int(bounds[i]), int(bounds[i + 1])) for i in range(len(bounds) - 1)]


@dataclass(frozen=True)
class HeartbeatSegment:
    parent_id: str
    lead: int
    values: np.ndarray  # length beat_len
    source_span: tuple[int, int]


def segment_heartbeats(filtered: np.ndarray, rpeaks: np.ndarray,
                       config: PreprocessConfig = DEFAULT_PREPROCESS,
                       parent_id: str = "", lead: int = 0) -> list[HeartbeatSegment]:
    """Cut one lead into per-beat segments resampled to a fixed length."""
    filtered = np.asarray(filtered, dtype=np.float64)
    spans = beat_spans(rpeaks, filtered.size)
    segments = []
    for s, e in spans:
        values = kernels.resample_linear(filtered[s:e], config.beat_len)
        segments.append(HeartbeatSegment(parent_id=parent_id, lead=lead,
                                         values=values, source_span=(s, e)))
    return segments


def extract_trend(global_signal: np.ndarray,
                  config: PreprocessConfig = DEFAULT_PREPROCESS) -> np.ndarray:
    """Moving-average smoothing followed by a first-difference window.

    Edge replication keeps the output the same length as the input; the
    difference step removes any constant offset.
    """
    x = np.asarray(global_signal, dtype=np.float64)
    if x.ndim != 1:
        raise PreprocessError("extract_trend expects a 1-D signal")
    w = config.trend_avg_window
    padded = np.pad(x, (w // 2, w - 1 - w // 2), mode="edge")
    smooth = np.convolve(padded, np.full(w, 1.0 / w), mode="valid")
    trend = np.empty_like(smooth)
    trend[0] = 0.0
    trend[1:] = smooth[1:] - smooth[:-1]
    return trend


@dataclass(frozen=True)
class NormStats:
    """Per-lead z-score statistics computed on the training split."""

    mean: np.ndarray
    std: np.ndarray  # floored at 1e-6

    STD_FLOOR = 1e-6

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, payload: dict) -> "NormStats":
        return cls(mean=np.asarray(payload["mean"], dtype=np.float64),
                   std=np.asarray(payload["std"], dtype=np.float64))


def compute_norm_stats(signals: list[np.ndarray]) -> NormStats:
    """Per-lead mean/std over a list of [n_leads, D] arrays (train split only)."""
    if not signals:
        raise DataError("cannot compute normalization statistics from zero records")
    stacked = np.concatenate([np.asarray(s, dtype=np.float64) for s in signals], axis=1)
    mean = stacked.mean(axis=1)
    std = np.maximum(stacked.std(axis=1), NormStats.STD_FLOOR)
    return NormStats(mean=mean, std=std)


def normalize_signal(signal: np.ndarray, stats: NormStats) -> np.ndarray:
    """Apply stored per-lead z-score statistics. Applied exactly once in the
    pipeline; re-application would shift the data again."""
    signal = np.asarray(signal, dtype=np.float64)
    return (signal - stats.mean[:, None]) / stats.std[:, None]


@dataclass
class PreprocessedRecord:
    record_id: str
    normalized: np.ndarray  # [n_leads, D] float32, filtered + z-scored
    trend: np.ndarray  # [n_leads, D] float32
    rpeaks: np.ndarray  # int64, detected on lead II
    spans: list[tuple[int, int]]  # empty when unsegmentable
    is_normal: bool
    labels: np.ndarray  # multi-hot uint8
    attr_values: np.ndarray  # length 7 float64
    attr_present: np.ndarray  # length 7 bool
    anomaly_mask: Optional[np.ndarray] = None

    @property
    def segmentable(self) -> bool:
        return len(self.spans) >= 2


RPEAK_LEAD = 1  # lead II by convention; spans are shared across leads


def preprocess_record(record: EcgRecord, stats: NormStats,
                      config: PreprocessConfig = DEFAULT_PREPROCESS) -> PreprocessedRecord:
    """Full per-record pipeline: filter, normalize, detect beats, extract trend."""
    filtered = np.stack([filter_signal(record.signal[i], record.sampling_rate, config)
                         for i in range(record.n_leads)])
    normalized = normalize_signal(filtered, stats)
    lead_idx = RPEAK_LEAD if record.n_leads > RPEAK_LEAD else 0
    rpeaks = detect_rpeaks(normalized[lead_idx], record.sampling_rate, config)
    spans = beat_spans(rpeaks, record.n_samples) if rpeaks.size >= 2 else []
    trend = np.stack([extract_trend(normalized[i], config) for i in range(record.n_leads)])
    values, present = record.attributes.normalized()
    return PreprocessedRecord(
        record_id=record.record_id,
        normalized=normalized.astype(np.float32),
        trend=trend.astype(np.float32),
        rpeaks=rpeaks,
        spans=spans,
        is_normal=record.labels.is_normal,
        labels=np.asarray(record.labels.values, dtype=np.uint8),
        attr_values=values,
        attr_present=present,
        anomaly_mask=record.anomaly_mask,
    )


def preprocess_dataset(records: list[EcgRecord], stats: Optional[NormStats] = None,
                       config: PreprocessConfig = DEFAULT_PREPROCESS,
                       cache_dir: Optional[Path] = None) -> tuple[list[PreprocessedRecord], NormStats]:
    """Preprocess a list of records, computing train statistics if needed.

    When ``cache_dir`` is given, per-record results are cached in npz
    containers keyed by (record_id, config hash) and reused on rerun.
    """
    if stats is None:
        train_signals = [np.stack([filter_signal(r.signal[i], r.sampling_rate, config)
                                   for i in range(r.n_leads)])
                         for r in records if r.split_tag == "train"]
        stats = compute_norm_stats(train_signals)
    key = config.hash()
    out = []
    for rec in records:
        cached = None
        if cache_dir is not None:
            path = Path(cache_dir) / key / f"{rec.record_id}.npz"
            if path.exists():
                cached = _load_cached(path, rec)
        if cached is None:
            cached = preprocess_record(rec, stats, config)
            if cache_dir is not None:
                path = Path(cache_dir) / key / f"{rec.record_id}.npz"
                path.parent.mkdir(parents=True, exist_ok=True)
                _save_cached(path, cached, key)
        out.append(cached)
    return out, stats


def _save_cached(path: Path, pre: PreprocessedRecord, config_hash: str) -> None:
    np.savez_compressed(
        path,
        meta=json.dumps({"record_id": pre.record_id, "config_hash": config_hash,
                         "is_normal": bool(pre.is_normal), "format": "ecgdx-preproc-v1"}),
        normalized=pre.normalized, trend=pre.trend, rpeaks=pre.rpeaks,
        spans=np.asarray(pre.spans, dtype=np.int64).reshape(-1, 2),
        labels=pre.labels, attr_values=pre.attr_values, attr_present=pre.attr_present,
        anomaly_mask=pre.anomaly_mask if pre.anomaly_mask is not None else np.zeros((0, 0), np.uint8),
    )


def _load_cached(path: Path, rec: EcgRecord) -> Optional[PreprocessedRecord]:
    try:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("record_id") != rec.record_id:
            return None
        mask = data["anomaly_mask"]
        return PreprocessedRecord(
            record_id=meta["record_id"],
            normalized=data["normalized"], trend=data["trend"], rpeaks=data["rpeaks"],
            spans=[(int(s), int(e)) for s, e in data["spans"]],
            is_normal=bool(meta["is_normal"]), labels=data["labels"],
            attr_values=data["attr_values"], attr_present=data["attr_present"],
            anomaly_mask=mask if mask.size else None,
        )
    except Exception:
        return None
