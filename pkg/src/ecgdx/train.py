"""Training strategies (individual, two-stage, joint), linear probing, and
content-addressed checkpointing."""

from __future__ import annotations

import hashlib
import json
import subprocess
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import kernels
from .losses import LossWeights, asymmetric_class_loss, attribute_loss, combined_ad_loss
from .masking import apply_mask, make_global_mask, make_local_mask
from .model import EcgRestorationModel, ModelConfig
from .preprocess import NormStats, PreprocessConfig, PreprocessedRecord


class TrainingGuardError(RuntimeError):
    """Raised when a training precondition is violated (e.g. label leakage)."""


STRATEGIES = ("individual", "two_stage", "joint")


@dataclass
class TrainConfig:
    strategy: str = "joint"
    epochs: int = 50
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 32
    seed: int = 0
    device: str = "cpu"
    global_mask_ratio: float = 0.3
    local_mask_ratio: float = 0.5
    loss_weights: LossWeights = field(default_factory=LossWeights)
    include_abnormal_restoration: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Single cosine cycle: lr(0) == lr0, lr(last step) == 0, non-increasing."""
    if total_steps <= 1:
        return lr0
    return lr0 * 0.5 * (1.0 + float(np.cos(np.pi * step / (total_steps - 1))))


@dataclass
class CheckpointManifest:
    checkpoint_id: str
    stage: str  # pretrained_ad | classifier_only | finetuned | joint | probed
    model_config: dict
    preprocess_hash: str
    class_list: list[str]
    norm_stats: dict
    epoch: int
    metrics: dict
    parent_id: Optional[str] = None
    seed: int = 0
    git_describe: str = ""
    train_config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def save_checkpoint(model: EcgRestorationModel, manifest_fields: dict,
                    ckpt_dir: Path) -> CheckpointManifest:
    """Persist weights plus manifest under a content-derived id."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    tmp = ckpt_dir / "_staging.pt"
    torch.save(model.state_dict(), tmp)
    digest = hashlib.sha256()
    digest.update(tmp.read_bytes())
    digest.update(json.dumps(manifest_fields, sort_keys=True, default=str).encode())
    ckpt_id = digest.hexdigest()[:16]
    manifest = CheckpointManifest(checkpoint_id=ckpt_id, git_describe=_git_describe(),
                                  **manifest_fields)
    target = ckpt_dir / ckpt_id
    target.mkdir(exist_ok=True)
    tmp.replace(target / "weights.pt")
    (target / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_checkpoint(ckpt_dir: Path, checkpoint_id: str) -> tuple[EcgRestorationModel, CheckpointManifest]:
    target = Path(ckpt_dir) / checkpoint_id
    manifest = CheckpointManifest(**json.loads((target / "manifest.json").read_text()))
    config = ModelConfig(**manifest.model_config)
    model = EcgRestorationModel(config)
    model.load_state_dict(torch.load(target / "weights.pt", weights_only=True))
    model.eval()
    return model, manifest


# ---------------------------------------------------------------------------
# batching


class _Batcher:
    """Deterministic mini-batch assembly with per-step mask/beat sampling."""

    def __init__(self, records: list[PreprocessedRecord], config: TrainConfig,
                 model_config: ModelConfig):
        self.records = records
        self.config = config
        self.model_config = model_config

    def epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.config.seed, 7919, epoch])
        order = np.arange(len(self.records))
        rng.shuffle(order)
        return order

    def _local_beat(self, rec: PreprocessedRecord, rng: np.random.Generator) -> np.ndarray:
        d = self.model_config.d_local
        n_leads = rec.normalized.shape[0]
        if not rec.segmentable:
            return np.zeros((n_leads, d), dtype=np.float32)
        m = int(rng.integers(0, len(rec.spans)))
        s, e = rec.spans[m]
        beat = np.empty((n_leads, d), dtype=np.float32)
        for lead in range(n_leads):
            beat[lead] = kernels.resample_linear(rec.normalized[lead, s:e].astype(np.float64), d)
        return beat

    def build(self, idx: np.ndarray, epoch: int, step: int, masked: bool) -> dict:
        rng = np.random.default_rng([self.config.seed, epoch, step, 104729])
        recs = [self.records[i] for i in idx]
        n_leads = self.model_config.n_leads
        globals_np = np.stack([r.normalized for r in recs])
        trends_np = np.stack([r.trend for r in recs])
        locals_np = np.stack([self._local_beat(r, rng) for r in recs])
        if masked:
            seeds = rng.integers(0, 2 ** 62, size=(len(recs), n_leads, 2))
            g_masked = globals_np.copy()
            l_masked = locals_np.copy()
            for b in range(len(recs)):
                for lead in range(n_leads):
                    gm = make_global_mask(globals_np.shape[-1], self.config.global_mask_ratio,
                                          int(seeds[b, lead, 0]))
                    g_masked[b, lead] = apply_mask(globals_np[b, lead], gm)
                    lm = make_local_mask(self.model_config.d_local, self.config.local_mask_ratio,
                                         int(seeds[b, lead, 1]))
                    l_masked[b, lead] = apply_mask(locals_np[b, lead], lm)
        else:
            g_masked, l_masked = globals_np, locals_np
        return {
            "global_clean": torch.from_numpy(globals_np),
            "global_in": torch.from_numpy(g_masked),
            "local_clean": torch.from_numpy(locals_np),
            "local_in": torch.from_numpy(l_masked),
            "trend": torch.from_numpy(trends_np),
            "labels": torch.from_numpy(np.stack([r.labels for r in recs]).astype(np.float32)),
            "attr_values": torch.from_numpy(np.stack([r.attr_values for r in recs]).astype(np.float32)),
            "attr_present": torch.from_numpy(np.stack([r.attr_present for r in recs])),
            "is_normal": torch.from_numpy(np.array([r.is_normal for r in recs])),
            "segmentable": torch.from_numpy(np.array([r.segmentable for r in recs])),
        }


def _ad_loss_parts(model: EcgRestorationModel, batch: dict,
                   restrict_restoration: bool = False) -> dict[str, torch.Tensor]:
    """Forward pass plus the four pretraining loss components.

    With ``restrict_restoration`` the restoration terms average over the
    normal samples of the batch only (attribute and classification terms
    always see every sample).
    """
    out = model(batch["global_in"], batch["local_in"], batch["trend"])
    keep = batch["is_normal"].to(torch.float32) if restrict_restoration else torch.ones(
        batch["global_in"].shape[0])
    denom = torch.clamp(keep.sum(), min=1.0)
    seg = batch["segmentable"].to(torch.float32) * keep

    g_per = ((batch["global_clean"] - out.global_branch.restored) ** 2
             / out.global_branch.uncertainty
             + torch.log(out.global_branch.uncertainty)).flatten(1).sum(1)
    l_per = ((batch["local_clean"] - out.local_branch.restored) ** 2
             / out.local_branch.uncertainty
             + torch.log(out.local_branch.uncertainty)).flatten(1).sum(1)
    t_per = ((batch["global_clean"] - out.trend_branch.restored) ** 2).flatten(1).sum(1)

    parts = {
        "global": (g_per * keep).sum() / denom,
        "local": (l_per * seg).sum() / torch.clamp(seg.sum(), min=1.0),
        "trend": (t_per * keep).sum() / denom,
        "attr": attribute_loss(batch["attr_values"], out.attr_pred, batch["attr_present"]),
        "logits": out.class_logits,
    }
    return parts


def _log_step(log_path: Optional[Path], payload: dict) -> None:
    if log_path is None:
        return
    with open(log_path, "a") as fh:
        fh.write(json.dumps(payload) + "\n")


def _run_training(
    model: EcgRestorationModel,
    train_recs: list[PreprocessedRecord],
    val_recs: list[PreprocessedRecord],
    config: TrainConfig,
    objective: str,  # "ad" | "class" | "joint"
    trainable: Optional[list[torch.nn.Parameter]] = None,
    log_path: Optional[Path] = None,
) -> tuple[dict, dict]:
    """Shared loop. Returns (best_state, history)."""
    torch.manual_seed(config.seed)
    batcher = _Batcher(train_recs, config, model.config)
    params = trainable if trainable is not None else [p for p in model.parameters()
                                                      if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay,
                            betas=(0.9, 0.999))
    steps_per_epoch = max(1, len(train_recs) // config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    w = config.loss_weights
    history = {"train": [], "val": []}
    best = {"loss": float("inf"), "state": None, "epoch": -1}
    step = 0
    for epoch in range(config.epochs):
        model.train()
        order = batcher.epoch_order(epoch)
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            if idx.size == 0:
                continue
            for group in opt.param_groups:
                group["lr"] = cosine_lr(step, total_steps, config.lr)
            masked = objective in ("ad", "joint")
            batch = batcher.build(idx, epoch, b, masked=masked)
            restrict = objective == "joint" and not config.include_abnormal_restoration
            entry = {"step": step, "epoch": epoch, "lr": opt.param_groups[0]["lr"]}
            if objective == "class":
                out = model(batch["global_in"], batch["local_in"], batch["trend"])
                probs = torch.sigmoid(out.class_logits)
                loss = asymmetric_class_loss(batch["labels"], probs, w)
                entry["L_class"] = float(loss)
            else:
                parts = _ad_loss_parts(model, batch, restrict_restoration=restrict)
                loss = combined_ad_loss(parts["global"], parts["local"], parts["trend"],
                                        parts["attr"], w)
                entry.update(L_global=float(parts["global"]), L_local=float(parts["local"]),
                             L_trend=float(parts["trend"]), L_pred=float(parts["attr"]))
                if objective == "joint":
                    probs = torch.sigmoid(parts["logits"])
                    class_l = asymmetric_class_loss(batch["labels"], probs, w)
                    loss = loss + class_l
                    entry["L_class"] = float(class_l)
            opt.zero_grad()
            loss.backward()
            opt.step()
            entry["loss"] = float(loss)
            history["train"].append(entry)
            _log_step(log_path, entry)
            step += 1
        val_entry = _validate(model, val_recs, config, objective)
        val_entry["epoch"] = epoch
        history["val"].append(val_entry)
        _log_step(log_path, {"val": val_entry})
        if val_entry["loss"] < best["loss"]:
            best = {"loss": val_entry["loss"], "epoch": epoch,
                    "state": {k: v.detach().clone() for k, v in model.state_dict().items()}}
    return best, history


@torch.no_grad()
def _validate(model: EcgRestorationModel, val_recs: list[PreprocessedRecord],
              config: TrainConfig, objective: str) -> dict:
    model.eval()
    if not val_recs:
        return {"loss": float("nan")}
    batcher = _Batcher(val_recs, config, model.config)
    w = config.loss_weights
    totals: dict[str, float] = {}
    n_batches = 0
    order = np.arange(len(val_recs))
    for b in range(0, len(val_recs), config.batch_size):
        idx = order[b:b + config.batch_size]
        # fixed epoch/step keys make validation masks identical across epochs
        batch = batcher.build(idx, epoch=999_983, step=b, masked=objective in ("ad", "joint"))
        if objective == "class":
            out = model(batch["global_in"], batch["local_in"], batch["trend"])
            probs = torch.sigmoid(out.class_logits)
            loss = asymmetric_class_loss(batch["labels"], probs, w)
            totals["loss"] = totals.get("loss", 0.0) + float(loss)
        else:
            restrict = objective == "joint" and not config.include_abnormal_restoration
            parts = _ad_loss_parts(model, batch, restrict_restoration=restrict)
            restoration = float(parts["global"] + w.alpha * parts["local"]
                                + w.beta * parts["trend"])
            totals["restoration"] = totals.get("restoration", 0.0) + restoration
            loss_val = restoration + float(w.gamma * parts["attr"])
            if objective == "joint":
                probs = torch.sigmoid(parts["logits"])
                loss_val += float(asymmetric_class_loss(batch["labels"], probs, w))
            totals["loss"] = totals.get("loss", 0.0) + loss_val
        n_batches += 1
    return {k: v / n_batches for k, v in totals.items()}


def _manifest_fields(stage: str, model: EcgRestorationModel, config: TrainConfig,
                     preprocess_hash: str, class_list: list[str], stats: NormStats,
                     epoch: int, metrics: dict, parent_id: Optional[str]) -> dict:
    return dict(stage=stage, model_config=asdict(model.config),
                preprocess_hash=preprocess_hash, class_list=list(class_list),
                norm_stats=stats.to_json(), epoch=epoch, metrics=metrics,
                parent_id=parent_id, seed=config.seed,
                train_config={k: v for k, v in asdict(config).items() if k != "loss_weights"})


def pretrain_ad(train_recs: list[PreprocessedRecord], val_recs: list[PreprocessedRecord],
                config: TrainConfig, model_config: ModelConfig, preprocess_hash: str,
                class_list: list[str], stats: NormStats, ckpt_dir: Path,
                log_path: Optional[Path] = None) -> CheckpointManifest:
    """Self-supervised restoration pretraining on normal records only."""
    for rec in list(train_recs) + list(val_recs):
        if not rec.is_normal:
            raise TrainingGuardError(
                f"abnormal record {rec.record_id!r} passed to anomaly-detection pretraining")
    model = EcgRestorationModel(model_config)
    best, history = _run_training(model, train_recs, val_recs, config, "ad",
                                  log_path=log_path)
    last_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    # retain last alongside best; the returned checkpoint is the best one
    save_checkpoint(model, _manifest_fields(
        "pretrained_ad", model, config, preprocess_hash, class_list, stats,
        config.epochs - 1, {"val": history["val"][-1] if history["val"] else {}}, None),
        ckpt_dir)
    if best["state"] is not None:
        model.load_state_dict(best["state"])
    manifest = save_checkpoint(model, _manifest_fields(
        "pretrained_ad", model, config, preprocess_hash, class_list, stats,
        best["epoch"], {"val_loss": best["loss"], "history_len": len(history["val"])}, None),
        ckpt_dir)
    model.load_state_dict(last_state)
    return manifest


def train_classifier(train_recs: list[PreprocessedRecord], val_recs: list[PreprocessedRecord],
                     config: TrainConfig, model_config: ModelConfig, preprocess_hash: str,
                     class_list: list[str], stats: NormStats, ckpt_dir: Path,
                     frozen_backbone: Optional[str] = None,
                     log_path: Optional[Path] = None) -> CheckpointManifest:
    """With a frozen backbone this is the two-stage strategy (only the
    classification head updates); without one it is the individual
    supervised baseline."""
    if frozen_backbone is not None:
        model, parent = load_checkpoint(ckpt_dir, frozen_backbone)
        for p in model.parameters():
            p.requires_grad_(False)
        for p in model.class_head.parameters():
            p.requires_grad_(True)
        trainable = list(model.class_head.parameters())
        stage, parent_id = "finetuned", parent.checkpoint_id
    else:
        torch.manual_seed(config.seed)
        model = EcgRestorationModel(model_config)
        trainable = None
        stage, parent_id = "classifier_only", None
    best, history = _run_training(model, train_recs, val_recs, config, "class",
                                  trainable=trainable, log_path=log_path)
    return save_checkpoint(model, _manifest_fields(
        stage, model, config, preprocess_hash, class_list, stats, config.epochs - 1,
        {"val": history["val"][-1] if history["val"] else {},
         "best_val_loss": best["loss"]}, parent_id), ckpt_dir)


def train_joint(train_recs: list[PreprocessedRecord], val_recs: list[PreprocessedRecord],
                config: TrainConfig, ckpt_dir: Path, init_checkpoint: str,
                preprocess_hash: str, class_list: list[str], stats: NormStats,
                log_path: Optional[Path] = None) -> CheckpointManifest:
    """Simultaneous optimization of the restoration model and classifier,
    initialized from a pretraining checkpoint."""
    model, parent = load_checkpoint(ckpt_dir, init_checkpoint)
    for p in model.parameters():
        p.requires_grad_(True)
    best, history = _run_training(model, train_recs, val_recs, config, "joint",
                                  log_path=log_path)
    return save_checkpoint(model, _manifest_fields(
        "joint", model, config, preprocess_hash, class_list, stats, config.epochs - 1,
        {"val": history["val"][-1] if history["val"] else {},
         "best_val_loss": best["loss"]}, parent.checkpoint_id), ckpt_dir)


def linear_probe(external_recs: list[PreprocessedRecord], val_recs: list[PreprocessedRecord],
                 config: TrainConfig, ckpt_dir: Path, checkpoint: str,
                 external_classes: list[str], preprocess_hash: str, stats: NormStats,
                 log_path: Optional[Path] = None) -> CheckpointManifest:
    """Retrain only the final linear layer on an external taxonomy."""
    model, parent = load_checkpoint(ckpt_dir, checkpoint)
    torch.manual_seed(config.seed)
    model.replace_class_head_final(len(external_classes))
    for p in model.parameters():
        p.requires_grad_(False)
    for p in model.classifier_final_layer().parameters():
        p.requires_grad_(True)
    trainable = list(model.classifier_final_layer().parameters())
    best, history = _run_training(model, external_recs, val_recs, config, "class",
                                  trainable=trainable, log_path=log_path)
    return save_checkpoint(model, _manifest_fields(
        "probed", model, config, preprocess_hash, external_classes, stats,
        config.epochs - 1,
        {"val": history["val"][-1] if history["val"] else {},
         "n_external_classes": len(external_classes)}, parent.checkpoint_id), ckpt_dir)
