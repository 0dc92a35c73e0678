"""Two-stage orchestration: supervised source training, then source-free
target adaptation with per-epoch pseudo-labeling and the temperature-scaled
objective.

The adaptation entry point takes only a feature matrix for the target domain,
so by construction it can never read target labels. Label-dependent
diagnostics (target accuracy, pseudo-label quality) enter the run report
through an optional caller-supplied hook that closes over the labeled view
and calls evaluate / pseudo_label_metrics itself.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import FeatureDataset, make_batches, split
from .errors import ContractViolation, InvalidArgument
from .ftsp import FtspConfig, PseudoLabelSet, ftsp_pipeline
from .mathcore import PROB_CLAMP, derive_seed, make_rng, softmax
from .model import AdapterClassifier, OptimState, forward, backward, init_model, sgd_step
from .tsal import TsalConfig, mixup, one_hot, smooth_labels, tsal_batch


@dataclass
class SourceTrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr0: float = 1e-2
    label_smoothing: float = 0.1
    train_fraction: float = 0.85
    hidden_dim: int = 256
    activation: str = "identity"
    nesterov: bool = True
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise InvalidArgument("epochs must be >= 1 and batch_size >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidArgument("train_fraction must lie in (0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise InvalidArgument("label_smoothing must lie in [0, 1)")
        if self.lr0 <= 0 or self.hidden_dim < 1:
            raise InvalidArgument("lr0 must be > 0 and hidden_dim >= 1")


@dataclass
class AdaptConfig:
    epochs: int = 15
    batch_size: int = 64
    lr0: float = 1e-2
    mixup_enabled: bool = True
    nesterov: bool = True
    ftsp: FtspConfig = field(default_factory=FtspConfig)
    tsal: TsalConfig = field(default_factory=TsalConfig)
    seed: int = 0

    def validate(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise InvalidArgument("epochs must be >= 1 and batch_size >= 2")
        if self.lr0 <= 0:
            raise InvalidArgument("lr0 must be > 0")
        if self.epochs != self.tsal.epochs:
            raise InvalidArgument(
                f"adapt epochs ({self.epochs}) must match the loss schedule length ({self.tsal.epochs})"
            )
        self.ftsp.validate()
        self.tsal.validate()


@dataclass
class EvalMetrics:
    accuracy: float
    per_class_accuracy: np.ndarray  # (C,)
    confusion: np.ndarray  # (C, C), rows = true class


@dataclass
class RunReport:
    """Per-epoch adaptation diagnostics plus the run configuration echo."""

    records: list[dict]
    seed: int
    config: dict
    final_metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "config": self.config, "records": self.records, "final": self.final_metrics}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_dis", "mean_div", "pl_acc", "target_acc", "trusted_prec"])
            for rec in self.records:
                writer.writerow(
                    [
                        rec["epoch"],
                        rec["mean_dis"],
                        rec["mean_div"],
                        rec.get("pseudo_label_accuracy", ""),
                        rec.get("target_accuracy", ""),
                        rec.get("trusted_precision", ""),
                    ]
                )


def _smoothed_ce_batch(logits: np.ndarray, target_rows: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy against smoothed one-hot rows and its logit gradient."""
    p = softmax(logits)
    B = logits.shape[0]
    loss = float(-(target_rows * np.log(np.maximum(p, PROB_CLAMP))).sum() / B)
    return loss, (p - target_rows) / B


def evaluate(model: AdapterClassifier, ds: FeatureDataset) -> EvalMetrics:
    """Argmax accuracy, per-class accuracy and confusion over every sample."""
    if not ds.labeled:
        raise InvalidArgument("evaluate requires a labeled dataset")
    _, logits, _ = forward(model, ds.features)
    pred = logits.argmax(axis=1)
    C = ds.num_classes
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (ds.labels, pred), 1)
    row_counts = confusion.sum(axis=1)
    per_class = np.where(row_counts > 0, np.diag(confusion) / np.maximum(row_counts, 1), 0.0)
    return EvalMetrics(
        accuracy=float((pred == ds.labels).mean()),
        per_class_accuracy=per_class,
        confusion=confusion,
    )


def pseudo_label_metrics(pls: PseudoLabelSet, true_labels: np.ndarray) -> dict:
    """Quality of a pseudo-label set against ground truth.

    trusted_precision counts every (class, slot) entry of the trusted set, so
    a sample selected by two classes contributes twice.
    """
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if true_labels.shape[0] != pls.labels.shape[0]:
        raise InvalidArgument("true_labels length must match the pseudo-label set")
    correct = pls.labels == true_labels
    retained_acc = float(correct[pls.retained].mean()) if pls.retained.any() else 0.0
    ts = pls.trusted
    selecting = np.repeat(np.arange(ts.num_classes), ts.k)
    hits = true_labels[ts.indices.reshape(-1)] == selecting
    return {
        "pl_accuracy": float(correct.mean()),
        "retained_pl_accuracy": retained_acc,
        "trusted_precision": float(hits.mean()),
    }


def make_eval_hook(target: FeatureDataset):
    """Per-epoch diagnostics closure for adapt(); owns the labeled view."""
    if not target.labeled:
        raise InvalidArgument("eval hook needs a labeled target dataset")

    def hook(epoch: int, model: AdapterClassifier, pls: PseudoLabelSet) -> dict:
        pl = pseudo_label_metrics(pls, target.labels)
        return {
            "pseudo_label_accuracy": pl["pl_accuracy"],
            "retained_pl_accuracy": pl["retained_pl_accuracy"],
            "trusted_precision": pl["trusted_precision"],
            "target_accuracy": evaluate(model, target).accuracy,
        }

    return hook


def train_source(cfg: SourceTrainConfig, source: FeatureDataset) -> tuple[AdapterClassifier, list[dict]]:
    """Stage 1: supervised fine-tuning on the labeled source domain.

    Stratified train/validation split, smoothed cross-entropy, SGD on the
    power-law schedule. Returns the checkpoint with the best validation
    accuracy (ties resolved to the earliest epoch) and per-epoch records.
    """
    cfg.validate()
    if not source.labeled:
        raise InvalidArgument("train_source requires a labeled source dataset")
    counts = np.bincount(source.labels, minlength=source.num_classes)
    if (counts == 0).any():
        missing = int(np.nonzero(counts == 0)[0][0])
        raise InvalidArgument(f"source dataset is missing class {missing}")

    rng_split = make_rng(derive_seed(cfg.seed, "source-split"))
    rng_init = make_rng(derive_seed(cfg.seed, "source-init"))
    rng_batch = make_rng(derive_seed(cfg.seed, "source-batches"))

    train, val = split(source, cfg.train_fraction, rng_split)
    model = init_model(source.dim, cfg.hidden_dim, source.num_classes, cfg.activation, rng_init)
    batches_per_epoch = len(make_batches(train.n, cfg.batch_size, shuffle=False, drop_singletons=False))
    opt = OptimState(
        total_steps=cfg.epochs * batches_per_epoch,
        base_lr={"adapter": cfg.lr0, "classifier": cfg.lr0},
        nesterov=cfg.nesterov,
    )

    onehots = one_hot(train.labels, train.num_classes)
    targets = smooth_labels(onehots, cfg.label_smoothing)

    best_acc = -1.0
    best_model = model.copy()
    records = []
    for epoch in range(cfg.epochs):
        plan = make_batches(train.n, cfg.batch_size, shuffle=True, drop_singletons=False, rng=rng_batch)
        losses = []
        for idx in plan:
            _, logits, cache = forward(model, train.features[idx])
            loss, dL = _smoothed_ce_batch(logits, targets[idx])
            grads = backward(model, cache, dL)
            sgd_step(model, opt, grads)
            losses.append(loss)
        val_acc = evaluate(model, val).accuracy
        records.append({"epoch": epoch, "mean_loss": float(np.mean(losses)), "val_accuracy": val_acc})
        if val_acc > best_acc:
            best_acc = val_acc
            best_model = model.copy()
    return best_model, records


def adapt(
    cfg: AdaptConfig,
    model: AdapterClassifier,
    target_features: np.ndarray,
    eval_hook=None,
) -> tuple[AdapterClassifier, RunReport]:
    """Stage 2: source-free adaptation of the adapter on unlabeled features.

    Every epoch re-derives pseudo-labels with the current adapter, smooths
    them, and minimizes the temperature-scaled loss over shuffled batches
    (singletons dropped), optionally with MixUp. The classifier stays frozen;
    the final-epoch model is returned, with no validation-based selection.
    """
    cfg.validate()
    if not model.classifier_frozen:
        raise InvalidArgument("adapt requires classifier_frozen=True on entry")
    X = np.asarray(target_features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise InvalidArgument(f"target features must be (N, {model.input_dim}), got {X.shape}")

    n = X.shape[0]
    probe = make_batches(n, cfg.batch_size, shuffle=False, drop_singletons=True)
    batches_per_epoch = len(probe)
    if batches_per_epoch == 0:
        raise InvalidArgument("target set too small for one non-singleton batch")
    opt = OptimState(
        total_steps=cfg.epochs * batches_per_epoch,
        base_lr={"adapter": cfg.lr0, "classifier": cfg.lr0},
        nesterov=cfg.nesterov,
    )
    rng_batch = make_rng(derive_seed(cfg.seed, "adapt-batches"))
    rng_mix = make_rng(derive_seed(cfg.seed, "adapt-mixup"))

    records = []
    for epoch in range(cfg.epochs):
        pls = ftsp_pipeline(model, X, cfg.ftsp)
        targets = smooth_labels(one_hot(pls.labels, model.num_classes), cfg.tsal.smoothing)

        dis_sum, div_sum = 0.0, 0.0
        plan = make_batches(n, cfg.batch_size, shuffle=True, drop_singletons=True, rng=rng_batch)
        for idx in plan:
            Xb, Tb = X[idx], targets[idx]
            if cfg.mixup_enabled:
                Xb, Tb, _ = mixup(Xb, Tb, rng_mix)
            _, logits, cache = forward(model, Xb)
            result = tsal_batch(logits, Tb, epoch, cfg.tsal)
            dis_sum += result.dis
            div_sum += result.div
            grads = backward(model, cache, result.dL_dlogits)
            sgd_step(model, opt, grads)

        record = {
            "epoch": epoch,
            "mean_dis": dis_sum / len(plan),
            "mean_div": div_sum / len(plan),
        }
        if eval_hook is not None:
            record.update(eval_hook(epoch, model, pls))
        records.append(record)

    if opt.t != opt.total_steps:
        raise ContractViolation(f"adaptation took {opt.t} steps, schedule expected {opt.total_steps}")

    report = RunReport(
        records=records,
        seed=cfg.seed,
        config=_config_echo(cfg),
        final_metrics={k: v for k, v in records[-1].items() if k != "epoch"},
    )
    return model, report


def _config_echo(cfg: AdaptConfig) -> dict:
    echo = asdict(cfg)
    return echo
