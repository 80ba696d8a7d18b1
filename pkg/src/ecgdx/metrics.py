"""Evaluation metrics and the rarity-stratified report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .records import DataError, RaritySplit


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUROC (Mann-Whitney statistic, average ranks for ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def threshold_metrics(scores: np.ndarray, labels: np.ndarray,
                      threshold: float) -> tuple[float, float, float, float]:
    """(sensitivity, specificity, F1, precision) at ``scores >= threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pred = scores >= threshold
    tp = int((pred & labels).sum())
    tn = int((~pred & ~labels).sum())
    fp = int((pred & ~labels).sum())
    fn = int((~pred & labels).sum())
    sensitivity = tp / (tp + fn) if tp + fn else 0.0
    specificity = tn / (tn + fp) if tn + fp else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = (2 * precision * sensitivity / (precision + sensitivity)
          if precision + sensitivity else 0.0)
    return sensitivity, specificity, f1, precision


def precision_at_recall(scores: np.ndarray, labels: np.ndarray,
                        recall_target: float = 0.90) -> float:
    """Best precision among thresholds whose recall still meets the target."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if labels.sum() == 0:
        raise DataError("precision_at_recall needs at least one positive")
    best = None
    for t in np.unique(scores):
        sens, _, _, prec = threshold_metrics(scores, labels, t)
        if sens >= recall_target and (best is None or prec > best):
            best = prec
    if best is None:
        raise DataError(f"no threshold reaches recall {recall_target}")
    return float(best)


def dice_localization(score_map: np.ndarray, ground_truth_mask: np.ndarray,
                      threshold: float) -> float:
    """Overlap between the thresholded score map and the annotated mask.
    Two empty masks count as perfect agreement."""
    pred = np.asarray(score_map, dtype=np.float64) >= threshold
    truth = np.asarray(ground_truth_mask).astype(bool)
    if pred.shape != truth.shape:
        raise DataError("score map and ground-truth mask shapes differ")
    inter = int((pred & truth).sum())
    total = int(pred.sum()) + int(truth.sum())
    if total == 0:
        return 1.0
    return 2.0 * inter / total


def youden_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Threshold maximizing sensitivity + specificity - 1 (lowest on ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    best_t, best_j = None, -np.inf
    for t in np.unique(scores):
        sens, spec, _, _ = threshold_metrics(scores, labels, t)
        j = sens + spec - 1.0
        if j > best_j:
            best_j, best_t = j, float(t)
    return best_t if best_t is not None else 0.0


@dataclass
class StratumMetrics:
    stratum: str
    n_records: int
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)
    macro: dict[str, float] = field(default_factory=dict)
    omitted: bool = False
    omitted_reason: str = ""


@dataclass
class MetricsReport:
    classification: dict[str, StratumMetrics] = field(default_factory=dict)
    detection: dict[str, dict[str, float]] = field(default_factory=dict)
    localization: dict[str, float] = field(default_factory=dict)
    thresholds: dict[str, float] = field(default_factory=dict)
    detection_threshold: Optional[float] = None
    localization_threshold: Optional[float] = None

    def to_json(self) -> str:
        def _enc(o):
            if isinstance(o, StratumMetrics):
                return o.__dict__
            if isinstance(o, (np.floating, np.integer)):
                return float(o)
            raise TypeError(type(o))
        return json.dumps(self.__dict__, default=_enc, indent=2)


_METRIC_KEYS = ("auroc", "f1", "sensitivity", "specificity", "precision_at_recall90")


def _class_metrics(scores: np.ndarray, labels: np.ndarray, threshold: float) -> dict[str, float]:
    out: dict[str, float] = {}
    out["auroc"] = auroc(scores, labels)
    sens, spec, f1, _ = threshold_metrics(scores, labels, threshold)
    out["sensitivity"], out["specificity"], out["f1"] = sens, spec, f1
    try:
        out["precision_at_recall90"] = precision_at_recall(scores, labels, 0.90)
    except DataError:
        out["precision_at_recall90"] = float("nan")
    return out


def classification_report(
    class_probs: np.ndarray,  # [n_records, n_classes]
    label_matrix: np.ndarray,  # [n_records, n_classes] multi-hot
    classes: list[str],
    rarity: RaritySplit,
    thresholds: dict[str, float],
) -> dict[str, StratumMetrics]:
    """Per-class metrics macro-averaged within each rarity stratum.

    A record enters a stratum's subset when it carries at least one label of
    that tier, so records may appear in several strata. Strata or classes
    without both positives and negatives are omitted with a marker rather
    than zero-filled.
    """
    label_matrix = np.asarray(label_matrix).astype(bool)
    report: dict[str, StratumMetrics] = {}
    for stratum in ("all",) + RaritySplit.TIERS:
        if stratum == "all":
            cls_in = list(classes)
            rec_sel = np.ones(label_matrix.shape[0], dtype=bool)
        else:
            cls_in = [c for c in classes if rarity.tier_of_class.get(c) == stratum]
            cls_idx = [classes.index(c) for c in cls_in]
            rec_sel = label_matrix[:, cls_idx].any(axis=1) if cls_idx else np.zeros(
                label_matrix.shape[0], dtype=bool)
        sm = StratumMetrics(stratum=stratum, n_records=int(rec_sel.sum()))
        if not cls_in or rec_sel.sum() == 0:
            sm.omitted = True
            sm.omitted_reason = "no classes in tier" if not cls_in else "no test records in tier"
            report[stratum] = sm
            continue
        for c in cls_in:
            j = classes.index(c)
            y = label_matrix[rec_sel, j]
            if y.sum() == 0 or y.sum() == y.size:
                continue  # degenerate one-vs-rest problem: skip, not zero-fill
            sm.per_class[c] = _class_metrics(class_probs[rec_sel, j], y,
                                             thresholds.get(c, 0.5))
        if sm.per_class:
            for key in _METRIC_KEYS:
                vals = [m[key] for m in sm.per_class.values() if np.isfinite(m[key])]
                sm.macro[key] = float(np.mean(vals)) if vals else float("nan")
        else:
            sm.omitted = True
            sm.omitted_reason = "no class with both positives and negatives"
        report[stratum] = sm
    return report


def detection_report(anomaly_scores: np.ndarray, is_abnormal: np.ndarray,
                     label_matrix: np.ndarray, classes: list[str],
                     rarity: RaritySplit, threshold: float) -> dict[str, dict[str, float]]:
    """Record-level anomaly detection metrics per rarity stratum.

    Each stratum pits its abnormal records against all normal records.
    """
    is_abnormal = np.asarray(is_abnormal).astype(bool)
    label_matrix = np.asarray(label_matrix).astype(bool)
    out: dict[str, dict[str, float]] = {}
    normal_sel = ~is_abnormal
    for stratum in ("all",) + RaritySplit.TIERS:
        if stratum == "all":
            sel = np.ones(is_abnormal.size, dtype=bool)
        else:
            cls_idx = [classes.index(c) for c, t in rarity.tier_of_class.items()
                       if t == stratum and c in classes]
            abn_sel = label_matrix[:, cls_idx].any(axis=1) & is_abnormal if cls_idx else np.zeros(
                is_abnormal.size, dtype=bool)
            sel = abn_sel | normal_sel
        y = is_abnormal[sel]
        if y.sum() == 0 or y.sum() == y.size:
            out[stratum] = {"omitted": True}
            continue
        out[stratum] = _class_metrics(anomaly_scores[sel], y, threshold)
    return out


def localization_report(score_maps: list[np.ndarray], masks: list[np.ndarray],
                        threshold: float) -> dict[str, float]:
    """Point-level AUROC plus Dice at a fixed global threshold, over all
    annotated (lead, sample) positions."""
    if not score_maps:
        return {"omitted": True}
    flat_scores = np.concatenate([s.ravel() for s in score_maps])
    flat_truth = np.concatenate([m.ravel() for m in masks])
    out: dict[str, float] = {}
    if 0 < flat_truth.sum() < flat_truth.size:
        out["auroc"] = auroc(flat_scores, flat_truth)
    dices = [dice_localization(s, m, threshold) for s, m in zip(score_maps, masks)]
    out["dice"] = float(np.mean(dices))
    return out


def fit_class_thresholds(val_probs: np.ndarray, val_labels: np.ndarray,
                         classes: list[str]) -> dict[str, float]:
    """Per-class operating thresholds maximizing Youden's J on validation.
    Frozen before any test data is touched."""
    thresholds: dict[str, float] = {}
    val_labels = np.asarray(val_labels).astype(bool)
    for j, c in enumerate(classes):
        y = val_labels[:, j]
        if 0 < y.sum() < y.size:
            thresholds[c] = youden_threshold(val_probs[:, j], y)
        else:
            thresholds[c] = 0.5
    return thresholds


def fit_localization_threshold(score_maps: list[np.ndarray], masks: list[np.ndarray],
                               n_candidates: int = 40) -> float:
    """Global score threshold maximizing mean Dice on validation records."""
    if not score_maps:
        return 0.5
    flat = np.concatenate([s.ravel() for s in score_maps])
    qs = np.linspace(0.5, 0.999, n_candidates)
    candidates = np.quantile(flat, qs)
    best_t, best_d = float(candidates[0]), -1.0
    for t in np.unique(candidates):
        d = float(np.mean([dice_localization(s, m, t) for s, m in zip(score_maps, masks)]))
        if d > best_d:
            best_d, best_t = d, float(t)
    return best_t
