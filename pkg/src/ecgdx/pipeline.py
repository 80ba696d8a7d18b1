"""High-level wiring: preprocess datasets, fit operating thresholds on the
validation split, and produce the rarity-stratified metrics report."""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .metrics import (
    MetricsReport,
    classification_report,
    detection_report,
    fit_class_thresholds,
    fit_localization_threshold,
    localization_report,
    youden_threshold,
)
from .model import EcgRestorationModel
from .preprocess import PreprocessedRecord
from .records import RaritySplit
from .scoring import score_dataset


def _localization_subset(pres: list[PreprocessedRecord], maps: list[np.ndarray]
                         ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Records whose annotation marks at least one anomalous point."""
    score_maps, masks = [], []
    for pre, s_map in zip(pres, maps):
        if pre.anomaly_mask is not None and pre.anomaly_mask.sum() > 0:
            score_maps.append(s_map)
            masks.append(pre.anomaly_mask)
    return score_maps, masks


def evaluate_checkpoint(model: EcgRestorationModel,
                        pres_val: list[PreprocessedRecord],
                        pres_test: list[PreprocessedRecord],
                        rarity: RaritySplit,
                        classes: list[str],
                        with_localization: bool = True) -> MetricsReport:
    """Score validation and test splits, freeze thresholds on validation,
    then report classification, detection and localization metrics."""
    val = score_dataset(pres_val, model, with_maps=with_localization)
    val_labels = np.stack([p.labels for p in pres_val]).astype(bool)
    thresholds = fit_class_thresholds(val["class_probs"], val_labels, classes)

    val_abnormal = np.array([not p.is_normal for p in pres_val])
    if 0 < val_abnormal.sum() < val_abnormal.size:
        det_threshold = youden_threshold(val["anomaly_scores"], val_abnormal)
    else:
        det_threshold = float(np.median(val["anomaly_scores"])) if len(pres_val) else 0.0

    loc_threshold = 0.5
    if with_localization:
        v_maps, v_masks = _localization_subset(pres_val, val["score_maps"])
        loc_threshold = fit_localization_threshold(v_maps, v_masks)

    test = score_dataset(pres_test, model, with_maps=with_localization)
    test_labels = np.stack([p.labels for p in pres_test]).astype(bool)
    test_abnormal = np.array([not p.is_normal for p in pres_test])

    report = MetricsReport(thresholds=thresholds, detection_threshold=det_threshold,
                           localization_threshold=loc_threshold)
    report.classification = classification_report(test["class_probs"], test_labels,
                                                  classes, rarity, thresholds)
    if 0 < test_abnormal.sum() < test_abnormal.size:
        report.detection = detection_report(test["anomaly_scores"], test_abnormal,
                                            test_labels, classes, rarity, det_threshold)
    if with_localization:
        t_maps, t_masks = _localization_subset(pres_test, test["score_maps"])
        report.localization = localization_report(t_maps, t_masks, loc_threshold)
    return report


def split_records(pres: list[PreprocessedRecord], records) -> dict[str, list]:
    """Group preprocessed records by their source records' split tags."""
    by_id = {r.record_id: r.split_tag for r in records}
    out: dict[str, list] = {"train": [], "val": [], "test": []}
    for p in pres:
        out[by_id[p.record_id]].append(p)
    return out


def save_report(report: MetricsReport, path: Path) -> None:
    Path(path).write_text(report.to_json())
