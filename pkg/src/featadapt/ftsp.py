"""Pseudo-labeling from a few trusted samples.

For each class, the K target samples the current model assigns that class
with the highest probability form a tiny labeled training set (a sample may
be trusted by several classes at once). A simple classifier fit on the
L2-normalized trusted features then pseudo-labels the whole target set.
Optional refinement removes the least confident fraction per pseudo-class
and fills the gaps back in by label spreading over an RBF affinity graph.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import InvalidArgument, NumericError
from .mathcore import l2_normalize_rows, softmax, topk_indices
from .model import AdapterClassifier, forward

STAGE_TRUSTED = "trusted_classifier"
STAGE_SPREADING = "spreading"

# Dense N x N affinity; beyond this the graph no longer fits desk-scale memory.
MAX_SPREADING_SIZE = 20000


@dataclass
class FtspConfig:
    k: int = 3
    classifier: str = "mlr"  # "mlr" | "lda"
    mlr_l2_lambda: float = 1e-3
    lda_shrinkage: float = 0.99
    deletion_frac: float = 0.20
    rbf_gamma: float = 20.0
    spread_alpha: float = 0.2
    spread_max_iter: int = 30
    spread_tol: float = 1e-3
    refinement_enabled: bool = True

    def validate(self):
        if self.k < 1:
            raise InvalidArgument("k must be >= 1")
        if self.classifier not in ("mlr", "lda"):
            raise InvalidArgument(f"unknown trusted classifier {self.classifier!r}")
        if not 0.0 <= self.deletion_frac < 1.0:
            raise InvalidArgument("deletion_frac must lie in [0, 1)")
        if self.rbf_gamma <= 0:
            raise InvalidArgument("rbf_gamma must be > 0")
        if not 0.0 < self.spread_alpha < 1.0:
            raise InvalidArgument("spread_alpha must lie in (0, 1)")
        if not 0.0 <= self.lda_shrinkage <= 1.0:
            raise InvalidArgument("lda_shrinkage must lie in [0, 1]")
        if self.mlr_l2_lambda < 0:
            raise InvalidArgument("mlr_l2_lambda must be >= 0")


@dataclass
class TrustedSet:
    """Per class: K sample indices, descending by selection probability."""

    indices: np.ndarray  # (C, K) int
    probs: np.ndarray  # (C, K) float

    @property
    def num_classes(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]


@dataclass
class TrustedClassifier:
    kind: str  # "mlr" | "lda"
    weight: np.ndarray  # (C, h), over L2-normalized features
    bias: np.ndarray  # (C,)


@dataclass
class PseudoLabelSet:
    labels: np.ndarray  # (N,) int
    confidence: np.ndarray  # (N,) float in [0, 1]
    retained: np.ndarray  # (N,) bool
    stage: np.ndarray  # (N,) str, STAGE_TRUSTED or STAGE_SPREADING
    trusted: TrustedSet
    num_isolated: int = 0


def select_trusted(probs: np.ndarray, k: int) -> TrustedSet:
    """Per class c, the k row indices maximizing column c of probs."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise InvalidArgument("select_trusted expects an N x C probability matrix")
    if (probs < -1e-12).any() or (np.abs(probs.sum(axis=1) - 1.0) > 1e-6).any():
        raise InvalidArgument("select_trusted rows must be probability vectors")
    n, c = probs.shape
    if k > n:
        raise InvalidArgument(f"k={k} exceeds the number of samples {n}")
    indices = np.empty((c, k), dtype=np.int64)
    for cls in range(c):
        indices[cls] = topk_indices(probs[:, cls], k)
    sel_probs = probs[indices, np.arange(c)[:, None]]
    return TrustedSet(indices=indices, probs=sel_probs)


def build_trusted_dataset(target_features: np.ndarray, ts: TrustedSet) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalized trusted rows with the selecting class as label.

    A sample trusted by several classes appears once per selecting class.
    """
    feats = np.asarray(target_features, dtype=np.float64)
    C, K = ts.indices.shape
    X = feats[ts.indices.reshape(-1)]
    y = np.repeat(np.arange(C), K)
    return l2_normalize_rows(X), y


def _mlr_objective(W, b, X, Y, l2_lambda):
    logits = X @ W.T + b
    p = softmax(logits)
    log_p = np.log(np.maximum(p, 1e-12))
    n = X.shape[0]
    value = float(-(Y * log_p).sum() / n + 0.5 * l2_lambda * (W * W).sum())
    g = (p - Y) / n
    grad_w = g.T @ X + l2_lambda * W
    grad_b = g.sum(axis=0)
    return value, grad_w, grad_b


def fit_mlr(
    X: np.ndarray,
    y: np.ndarray,
    l2_lambda: float = 1e-3,
    max_iter: int = 1000,
    grad_tol: float = 1e-6,
    num_classes: int | None = None,
    on_step=None,
) -> TrustedClassifier:
    """Multinomial logistic regression by full-batch gradient descent.

    Minimizes mean softmax cross-entropy plus (l2_lambda/2) ||W||^2 (bias
    unregularized). Each iteration backtracks from step 1.0, halving until
    the objective decreases; the objective is therefore non-increasing.
    ``on_step`` is called with the objective value after each accepted step.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    C = int(num_classes if num_classes is not None else y.max() + 1)
    present = np.unique(y)
    if len(present) != C or present[0] != 0 or present[-1] != C - 1:
        raise InvalidArgument("fit_mlr needs at least one sample of every class")
    n, h = X.shape
    Y = np.zeros((n, C))
    Y[np.arange(n), y] = 1.0

    W = np.zeros((C, h))
    b = np.zeros(C)
    value, grad_w, grad_b = _mlr_objective(W, b, X, Y, l2_lambda)
    for _ in range(max_iter):
        grad_norm = np.sqrt((grad_w * grad_w).sum() + (grad_b * grad_b).sum())
        if grad_norm <= grad_tol:
            break
        step = 1.0
        accepted = False
        while step > 1e-12:
            W_try = W - step * grad_w
            b_try = b - step * grad_b
            value_try, gw_try, gb_try = _mlr_objective(W_try, b_try, X, Y, l2_lambda)
            if value_try < value:
                W, b, value, grad_w, grad_b = W_try, b_try, value_try, gw_try, gb_try
                accepted = True
                if on_step is not None:
                    on_step(value)
                break
            step *= 0.5
        if not accepted:
            break
    return TrustedClassifier(kind="mlr", weight=W, bias=b)


def fit_lda(
    X: np.ndarray,
    y: np.ndarray,
    shrinkage: float = 0.99,
    num_classes: int | None = None,
) -> TrustedClassifier:
    """Linear discriminant analysis with shrinkage toward an isotropic target.

    The pooled within-class covariance is shrunk as
    (1 - s) * Sigma + s * (tr(Sigma) / h) * I and the linear scores are
    mu_c' inv(Sigma_hat) x - 0.5 mu_c' inv(Sigma_hat) mu_c + ln(1/C) with
    uniform priors. Trusted sets with one sample per class have zero scatter;
    the isotropic level is floored at 1 then, which reduces the rule to
    nearest class mean.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise InvalidArgument("shrinkage must lie in [0, 1]")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    C = int(num_classes if num_classes is not None else y.max() + 1)
    present = np.unique(y)
    if len(present) != C or present[0] != 0 or present[-1] != C - 1:
        raise InvalidArgument("fit_lda needs at least one sample of every class")
    n, h = X.shape

    means = np.stack([X[y == c].mean(axis=0) for c in range(C)])
    centered = X - means[y]
    sigma = centered.T @ centered / n
    iso = float(np.trace(sigma)) / h
    if iso <= 0.0:
        iso = 1.0
    shrunk = (1.0 - shrinkage) * sigma + shrinkage * iso * np.eye(h)

    try:
        factor = cho_factor(shrunk, lower=True)
    except LinAlgError as exc:
        raise NumericError(
            "shrunk covariance is singular; use shrinkage > 0 for degenerate trusted sets"
        ) from exc
    W = cho_solve(factor, means.T).T  # rows mu_c' inv(Sigma_hat)
    bias = -0.5 * (W * means).sum(axis=1) + np.log(1.0 / C)
    return TrustedClassifier(kind="lda", weight=W, bias=bias)


def infer_pseudo(tc: TrustedClassifier, target_features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities and argmax labels over the whole target set.

    Features are re-normalized here so the classifier always sees the space
    it was fit in.
    """
    Z = l2_normalize_rows(np.asarray(target_features, dtype=np.float64))
    scores = Z @ tc.weight.T + tc.bias
    probs = softmax(scores)
    return probs, probs.argmax(axis=1)


def delete_uncertain(probs: np.ndarray, labels: np.ndarray, deletion_frac: float) -> np.ndarray:
    """Per pseudo-class, drop the floor(frac * n_c) least confident samples.

    Confidence is the classifier probability of the assigned class. Retention
    ties prefer the smaller index, so deletion ties drop the larger index.
    """
    if not 0.0 <= deletion_frac < 1.0:
        raise InvalidArgument("deletion_frac must lie in [0, 1)")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    retained = np.zeros(labels.shape[0], dtype=bool)
    for c in range(probs.shape[1]):
        idx = np.nonzero(labels == c)[0]
        if idx.size == 0:
            continue
        # +1e-9 absorbs float noise so e.g. 0.3 * 10 still floors to 3.
        n_drop = int(np.floor(deletion_frac * idx.size + 1e-9))
        keep = topk_indices(probs[idx, c], idx.size - n_drop) if n_drop < idx.size else []
        retained[idx[keep]] = True
    return retained


def label_spreading(
    features: np.ndarray,
    labels: np.ndarray,
    retained: np.ndarray,
    gamma: float = 20.0,
    alpha: float = 0.2,
    max_iter: int = 30,
    tol: float = 1e-3,
    num_classes: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Graph label spreading F <- alpha S F + (1 - alpha) Y to completion.

    features must be L2-normalized rows. The affinity is the RBF kernel
    exp(-gamma ||x_i - x_j||^2) with zero diagonal, symmetrically normalized.
    Y is one-hot on retained rows and zero elsewhere; iteration starts at Y
    and stops when the max-abs change falls to tol or at max_iter. Every
    sample is relabeled by the row argmax (soft clamping: retained rows may
    flip). Rows that end with zero mass keep their incoming label and are
    returned in the isolated mask.
    """
    X = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    retained = np.asarray(retained, dtype=bool)
    n = X.shape[0]
    if n > MAX_SPREADING_SIZE:
        raise InvalidArgument(f"label_spreading builds a dense graph; N={n} exceeds {MAX_SPREADING_SIZE}")
    if not retained.any():
        raise InvalidArgument("label_spreading needs at least one retained label")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgument("alpha must lie in (0, 1)")
    if gamma <= 0:
        raise InvalidArgument("gamma must be > 0")

    if num_classes is None:
        num_classes = int(labels.max()) + 1
    sq_norms = (X * X).sum(axis=1)
    d2 = sq_norms[:, None] + sq_norms[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    W = np.exp(-gamma * d2)
    np.fill_diagonal(W, 0.0)
    deg = W.sum(axis=1)
    inv_sqrt = np.where(deg > 0.0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    S = inv_sqrt[:, None] * W * inv_sqrt[None, :]

    Y = np.zeros((n, num_classes))
    rows = np.nonzero(retained)[0]
    Y[rows, labels[rows]] = 1.0
    F = Y.copy()
    for _ in range(max_iter):
        F_next = alpha * (S @ F) + (1.0 - alpha) * Y
        delta = float(np.abs(F_next - F).max())
        F = F_next
        if delta <= tol:
            break

    out = F.argmax(axis=1)
    isolated = F.sum(axis=1) <= 0.0
    out[isolated] = labels[isolated]
    return out, F, isolated


def ftsp_pipeline(model: AdapterClassifier, target_features_raw: np.ndarray, cfg: FtspConfig) -> PseudoLabelSet:
    """Full pseudo-labeling pass over the target set with the current model.

    Stages: forward to adapter features and source-path probabilities, trusted
    selection, trusted-classifier fit (on normalized features), inference over
    all samples, then optional deletion + label spreading.
    """
    cfg.validate()
    feats, logits, _ = forward(model, target_features_raw)
    source_probs = softmax(logits)
    ts = select_trusted(source_probs, cfg.k)
    X_tr, y_tr = build_trusted_dataset(feats, ts)
    if cfg.classifier == "mlr":
        tc = fit_mlr(X_tr, y_tr, l2_lambda=cfg.mlr_l2_lambda, num_classes=model.num_classes)
    else:
        tc = fit_lda(X_tr, y_tr, shrinkage=cfg.lda_shrinkage, num_classes=model.num_classes)
    probs, labels = infer_pseudo(tc, feats)

    n = labels.shape[0]
    if not cfg.refinement_enabled:
        return PseudoLabelSet(
            labels=labels,
            confidence=probs[np.arange(n), labels],
            retained=np.ones(n, dtype=bool),
            stage=np.full(n, STAGE_TRUSTED, dtype="<U18"),
            trusted=ts,
        )

    retained = delete_uncertain(probs, labels, cfg.deletion_frac)
    normalized = l2_normalize_rows(feats)
    final, F, isolated = label_spreading(
        normalized,
        labels,
        retained,
        gamma=cfg.rbf_gamma,
        alpha=cfg.spread_alpha,
        max_iter=cfg.spread_max_iter,
        tol=cfg.spread_tol,
        num_classes=model.num_classes,
    )
    row_mass = F.sum(axis=1)
    confidence = np.where(
        row_mass > 0.0,
        F[np.arange(n), final] / np.maximum(row_mass, 1e-300),
        probs[np.arange(n), final],
    )
    stage = np.where(retained & (final == labels), STAGE_TRUSTED, STAGE_SPREADING).astype("<U18")
    return PseudoLabelSet(
        labels=final,
        confidence=confidence,
        retained=retained,
        stage=stage,
        trusted=ts,
        num_isolated=int(isolated.sum()),
    )


def export_pseudo_labels(pls: PseudoLabelSet, path) -> None:
    """CSV dump with header index,label,confidence,retained,stage."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label", "confidence", "retained", "stage"])
        for i in range(pls.labels.shape[0]):
            writer.writerow(
                [i, int(pls.labels[i]), f"{pls.confidence[i]:.6f}", int(pls.retained[i]), pls.stage[i]]
            )
