"""PhysioNet WFDB ingestion (format 16) and rarity-aware dataset manifests.

Supports two metadata schemas: the PTB-XL database CSV (with scp_codes and
stratified folds) and a plain CSV with explicit label and attribute columns.
The binary reader accepts the format-16 subset used by PTB-XL: int16
little-endian interleaved frames, one sample per signal per frame.
"""

from __future__ import annotations

import ast
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .records import (
    STANDARD_LEADS,
    AttributeVector,
    DataError,
    EcgRecord,
    LabelVector,
    RaritySplit,
)

WFDB_INVALID = -32768  # invalid-sample sentinel in format 16


@dataclass
class IngestReport:
    n_requested: int = 0
    n_loaded: int = 0
    errors: list[dict] = field(default_factory=list)
    flagged: list[dict] = field(default_factory=list)

    def add_error(self, record_id: str, message: str) -> None:
        self.errors.append({"record_id": record_id, "error": message})

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)


# ---------------------------------------------------------------------------
# binary format


def write_wfdb(path: Path, record_id: str, signal: np.ndarray, fs: int,
               lead_names: list[str], gain: float = 1000.0,
               comments: Optional[list[str]] = None) -> None:
    """Write header + format-16 sample file (millivolts in, ADC units out)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n_leads, n_samples = signal.shape
    adc = np.clip(np.round(signal * gain), -32767, 32767).astype("<i2")
    frames = adc.T.reshape(-1)
    (path / f"{record_id}.dat").write_bytes(frames.tobytes())
    lines = [f"{record_id} {n_leads} {fs} {n_samples}"]
    for i, name in enumerate(lead_names):
        first = int(adc[i, 0]) if n_samples else 0
        lines.append(f"{record_id}.dat 16 {gain:g}(0)/mV 16 0 {first} 0 0 {name}")
    for c in comments or []:
        lines.append(f"# {c}")
    (path / f"{record_id}.hea").write_text("\n".join(lines) + "\n")


def read_wfdb(header_path: Path) -> tuple[np.ndarray, int, list[str]]:
    """Read a format-16 record; returns (signal [n_leads, D] in mV, fs, leads).

    Invalid samples (-32768) become NaN so downstream validation rejects the
    record. Truncated sample files raise DataError.
    """
    header_path = Path(header_path)
    lines = [ln.strip() for ln in header_path.read_text().splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{header_path}: empty header")
    head = lines[0].split()
    if len(head) < 4:
        raise DataError(f"{header_path}: malformed record line")
    n_sig = int(head[1])
    fs = int(float(head[2].split("/")[0]))
    n_samples = int(head[3])
    gains, baselines, names, dat_files = [], [], [], []
    for ln in lines[1:1 + n_sig]:
        parts = ln.split()
        if len(parts) < 3:
            raise DataError(f"{header_path}: malformed signal line {ln!r}")
        dat_files.append(parts[0])
        fmt = parts[1]
        if fmt.split("x")[0] != "16":
            raise DataError(f"{header_path}: unsupported format {fmt!r}")
        gain_spec = parts[2].split("/")[0]
        if "(" in gain_spec:
            g, b = gain_spec.split("(")
            gains.append(float(g) if float(g) != 0 else 200.0)
            baselines.append(int(b.rstrip(")")))
        else:
            gains.append(float(gain_spec) if float(gain_spec) != 0 else 200.0)
            baselines.append(0)
        names.append(parts[-1] if len(parts) >= 9 else f"ch{len(names)}")
    if len(set(dat_files)) != 1:
        raise DataError(f"{header_path}: multi-file records are not supported")
    dat_path = header_path.parent / dat_files[0]
    raw = np.frombuffer(dat_path.read_bytes(), dtype="<i2")
    if raw.size != n_sig * n_samples:
        raise DataError(f"{dat_path}: truncated sample file "
                        f"({raw.size} values, expected {n_sig * n_samples})")
    adc = raw.reshape(n_samples, n_sig).T.astype(np.float64)
    signal = np.where(adc == WFDB_INVALID, np.nan,
                      (adc - np.array(baselines)[:, None]) / np.array(gains)[:, None])
    return signal, fs, names


# ---------------------------------------------------------------------------
# metadata schemas


def _parse_ptbxl_metadata(root: Path, metadata: Path) -> tuple[list[dict], list[str]]:
    scp_path = root / "scp_statements.csv"
    if not scp_path.exists():
        raise DataError(f"PTB-XL metadata needs {scp_path}")
    subclass_of: dict[str, str] = {}
    with open(scp_path, newline="") as fh:
        for row in csv.DictReader(fh):
            code = row.get("") or row.get("code") or list(row.values())[0]
            if row.get("diagnostic") not in ("1", "1.0"):
                continue
            sub = row.get("diagnostic_subclass") or ""
            if sub:
                subclass_of[code] = sub
    classes = sorted(set(subclass_of.values()))
    rows = []
    with open(metadata, newline="") as fh:
        for row in csv.DictReader(fh):
            codes = ast.literal_eval(row["scp_codes"])
            labels = sorted({subclass_of[c] for c in codes if c in subclass_of})
            fold = int(float(row["strat_fold"]))
            split = "test" if fold == 10 else ("val" if fold == 9 else "train")
            age = row.get("age")
            sex = row.get("sex")
            rows.append({
                "record_id": row["ecg_id"],
                "filename": row["filename_hr"],
                "labels": labels,
                "split": split,
                "age": float(age) if age not in (None, "", "nan") else None,
                "gender": int(float(sex)) if sex not in (None, "", "nan") else None,
            })
    return rows, classes


def _parse_simple_metadata(metadata: Path) -> tuple[list[dict], list[str]]:
    rows = []
    label_set: set[str] = set()
    numeric = ("age", "heart_rate", "pr_interval", "qt_interval", "qtc_interval",
               "qrs_duration")
    with open(metadata, newline="") as fh:
        for row in csv.DictReader(fh):
            labels = [s for s in (row.get("labels") or "").replace(";", "|").split("|") if s]
            label_set.update(labels)
            entry = {
                "record_id": row["record_id"],
                "filename": row.get("filename", row["record_id"]),
                "labels": labels,
                "split": row.get("split", "train"),
            }
            sex = row.get("gender", row.get("sex"))
            entry["gender"] = int(float(sex)) if sex not in (None, "") else None
            for name in numeric:
                v = row.get(name)
                entry[name] = float(v) if v not in (None, "") else None
            rows.append(entry)
    return rows, sorted(label_set)


def load_wfdb_dataset(root_path: Path, metadata: Optional[Path] = None,
                      class_list: Optional[list[str]] = None,
                      ) -> tuple[list[EcgRecord], IngestReport]:
    """Load a WFDB dataset described by a metadata table.

    Record-level failures (unreadable, truncated, NaN samples) are collected
    in the ingest report and skipped; metadata inconsistencies (duplicate
    ids, referenced waveform files missing entirely) abort the run. Records
    come back sorted by record_id so ingestion is idempotent.
    """
    root = Path(root_path)
    report = IngestReport()
    if metadata is None:
        headers = sorted(root.glob("**/*.hea")) if root.exists() else []
        if not headers:
            return [], report
        rows = [{"record_id": h.stem, "filename": str(h.relative_to(root))[:-4],
                 "labels": [], "split": "train"} for h in headers]
        classes = class_list or []
    else:
        metadata = Path(metadata)
        if not metadata.exists():
            raise DataError(f"metadata file not found: {metadata}")
        with open(metadata, newline="") as fh:
            header = fh.readline()
        if "scp_codes" in header:
            rows, classes = _parse_ptbxl_metadata(root, metadata)
        else:
            rows, classes = _parse_simple_metadata(metadata)
        if class_list is not None:
            classes = class_list
    ids = [r["record_id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise DataError("metadata/waveform mismatch: duplicate record ids in metadata")
    report.n_requested = len(rows)
    records = []
    for row in rows:
        header_path = root / f"{row['filename']}.hea"
        if not header_path.exists():
            raise DataError(f"metadata/waveform mismatch: {header_path} does not exist")
        rid = str(row["record_id"])
        try:
            signal, fs, lead_names = read_wfdb(header_path)
            if np.isnan(signal).any():
                raise DataError(f"record {rid}: NaN samples after ingestion")
            labels = LabelVector.from_names(classes, [l for l in row["labels"] if l in classes])
            attrs = AttributeVector(**{k: row.get(k) for k in
                                       ("gender", "age", "heart_rate", "pr_interval",
                                        "qt_interval", "qtc_interval", "qrs_duration")
                                       if row.get(k) is not None})
            records.append(EcgRecord(
                record_id=rid, signal=signal, sampling_rate=fs,
                lead_names=lead_names if len(lead_names) == signal.shape[0]
                else STANDARD_LEADS[:signal.shape[0]],
                attributes=attrs, labels=labels, split_tag=row.get("split", "train")))
        except DataError as exc:
            report.add_error(rid, str(exc))
    records.sort(key=lambda r: r.record_id)
    report.n_loaded = len(records)
    return records, report


def write_manifest(records: list[EcgRecord], rarity: RaritySplit, path: Path) -> None:
    """Dataset manifest: every record with its split and label tiers."""
    payload = {
        "format": "ecgdx-manifest-v1",
        "n_records": len(records),
        "thresholds": {"common_min": rarity.thresholds[0], "rare_max": rarity.thresholds[1]},
        "tier_of_class": rarity.tier_of_class,
        "train_counts": rarity.train_counts,
        "zero_count_classes": list(rarity.zero_count_classes),
        "records": [
            {"record_id": r.record_id, "split": r.split_tag,
             "labels": r.labels.positive_names,
             "tiers": sorted({rarity.tier_of_class[l] for l in r.labels.positive_names})}
            for r in records
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def export_synthetic_wfdb(records: list[EcgRecord], out_dir: Path) -> Path:
    """Write synthetic records as a WFDB dataset with a simple metadata CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta_path = out_dir / "metadata.csv"
    cols = ["record_id", "filename", "labels", "split", "gender", "age", "heart_rate",
            "pr_interval", "qt_interval", "qtc_interval", "qrs_duration"]
    with open(meta_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for rec in records:
            write_wfdb(out_dir, rec.record_id, rec.signal, rec.sampling_rate, rec.lead_names)
            a = rec.attributes
            writer.writerow([rec.record_id, rec.record_id, "|".join(rec.labels.positive_names),
                             rec.split_tag, _fmt(a.gender), _fmt(a.age), _fmt(a.heart_rate),
                             _fmt(a.pr_interval), _fmt(a.qt_interval), _fmt(a.qtc_interval),
                             _fmt(a.qrs_duration)])
    return meta_path


def _fmt(v) -> str:
    return "" if v is None else f"{v}"
