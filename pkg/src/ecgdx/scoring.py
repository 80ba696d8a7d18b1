"""Test-time anomaly scoring and localization.

The point-level score map combines a global term (uncertainty-scaled squared
restoration error plus trend-restoration error) with a local term assembled
by projecting each heartbeat's restoration error back onto its source span.
The record-level anomaly score is the mean of the map.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from . import kernels
from .model import EcgRestorationModel
from .preprocess import PreprocessedRecord


@dataclass
class ScoreMap:
    record_id: str
    values: np.ndarray  # [n_leads, D] non-negative
    global_only: bool = False  # set when the record was unsegmentable

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("score map contains non-finite values")
        if (self.values < 0).any():
            raise ValueError("score map must be non-negative")


@dataclass
class ScoreResult:
    score_map: ScoreMap
    anomaly_score: float
    class_probs: np.ndarray  # [n_classes]


@torch.no_grad()
def score_record(pre: PreprocessedRecord, model: EcgRestorationModel,
                 batch_limit: int = 32) -> ScoreResult:
    """Score one preprocessed record with unmasked inputs.

    Every heartbeat is paired with the full signal in turn; the global and
    trend error terms are averaged over those pairings, the local terms are
    resampled back onto their source spans (which tile the signal exactly).
    Unsegmentable records fall back to the global branch alone.
    """
    model.eval()
    n_leads, d_len = pre.normalized.shape
    x = torch.from_numpy(pre.normalized)[None]  # [1, L, D]
    trend = torch.from_numpy(pre.trend)[None]
    d_local = model.config.d_local

    if not pre.segmentable:
        out = model(x, None, trend)
        s_global = _global_term(pre.normalized, out, 0)
        score = ScoreMap(record_id=pre.record_id, values=s_global, global_only=True)
        logits = out.class_logits[0].numpy()
        return ScoreResult(score_map=score, anomaly_score=float(score.values.mean()),
                           class_probs=_sigmoid(logits))

    spans = pre.spans
    beats = np.empty((len(spans), n_leads, d_local), dtype=np.float32)
    for m, (s, e) in enumerate(spans):
        for lead in range(n_leads):
            beats[m, lead] = kernels.resample_linear(
                pre.normalized[lead, s:e].astype(np.float64), d_local)

    s_global_acc = np.zeros((n_leads, d_len), dtype=np.float64)
    s_local = np.zeros((n_leads, d_len), dtype=np.float64)
    logits_acc = np.zeros(model.config.n_classes, dtype=np.float64)
    n_pairs = len(spans)
    for start in range(0, n_pairs, batch_limit):
        chunk = beats[start:start + batch_limit]
        b = chunk.shape[0]
        out = model(x.expand(b, -1, -1), torch.from_numpy(chunk), trend.expand(b, -1, -1))
        for i in range(b):
            s_global_acc += _global_term(pre.normalized, out, i)
            logits_acc += out.class_logits[i].numpy()
        rest = out.local_branch.restored.numpy()
        unc = out.local_branch.uncertainty.numpy()
        for i in range(b):
            m = start + i
            s, e = spans[m]
            err = (chunk[i].astype(np.float64) - rest[i]) ** 2 / unc[i]
            for lead in range(n_leads):
                s_local[lead, s:e] = kernels.resample_linear(err[lead], e - s)
    s_map = s_global_acc / n_pairs + s_local
    score = ScoreMap(record_id=pre.record_id, values=s_map)
    probs = _sigmoid(logits_acc / n_pairs)
    return ScoreResult(score_map=score, anomaly_score=float(s_map.mean()),
                       class_probs=probs)


def _global_term(clean: np.ndarray, out, i: int) -> np.ndarray:
    restored = out.global_branch.restored[i].numpy()
    sigma = out.global_branch.uncertainty[i].numpy()
    trend_restored = out.trend_branch.restored[i].numpy()
    clean = clean.astype(np.float64)
    return (clean - restored) ** 2 / sigma + (clean - trend_restored) ** 2


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


@torch.no_grad()
def score_dataset(pres: list[PreprocessedRecord], model: EcgRestorationModel,
                  with_maps: bool = False) -> dict:
    """Score a list of records; returns stacked arrays for evaluation."""
    anomaly_scores, probs, maps, flags = [], [], [], []
    for pre in pres:
        res = score_record(pre, model)
        anomaly_scores.append(res.anomaly_score)
        probs.append(res.class_probs)
        flags.append(res.score_map.global_only)
        if with_maps:
            maps.append(res.score_map.values)
    return {
        "anomaly_scores": np.array(anomaly_scores),
        "class_probs": np.stack(probs),
        "score_maps": maps,
        "global_only": np.array(flags),
        "record_ids": [p.record_id for p in pres],
    }


@torch.no_grad()
def classify_batch(pres: list[PreprocessedRecord], model: EcgRestorationModel,
                   batch_size: int = 32, rng_seed: int = 999_331) -> np.ndarray:
    """Classification probabilities only (one random beat per record).

    Cheaper than full scoring when score maps are not needed, e.g. for
    threshold fitting on validation data.
    """
    model.eval()
    rng = np.random.default_rng(rng_seed)
    d_local = model.config.d_local
    out_probs = []
    for start in range(0, len(pres), batch_size):
        chunk = pres[start:start + batch_size]
        n_leads = chunk[0].normalized.shape[0]
        globals_np = np.stack([p.normalized for p in chunk])
        trends_np = np.stack([p.trend for p in chunk])
        beats = np.zeros((len(chunk), n_leads, d_local), dtype=np.float32)
        for i, p in enumerate(chunk):
            if p.segmentable:
                m = int(rng.integers(0, len(p.spans)))
                s, e = p.spans[m]
                for lead in range(n_leads):
                    beats[i, lead] = kernels.resample_linear(
                        p.normalized[lead, s:e].astype(np.float64), d_local)
        out = model(torch.from_numpy(globals_np), torch.from_numpy(beats),
                    torch.from_numpy(trends_np))
        out_probs.append(torch.sigmoid(out.class_logits).numpy())
    return np.concatenate(out_probs)
