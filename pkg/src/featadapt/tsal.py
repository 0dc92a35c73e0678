"""Temperature-scaled adaptive loss for self-training.

The objective on a batch of logits L (B x C) with per-sample target rows Y
(smoothed pseudo-labels, possibly mixed) at epoch t is

    q_i   = softmax(l_i / tau_dis(t)) + alpha * y_i        (mass 1 + alpha)
    dis   = (1/B) sum_i H(q_i, softmax(l_i))               (cross-entropy)
    p_bar = (1/B) sum_i softmax(l_i / tau_div(t))
    div   = -H(p_bar)
    loss  = dis + div

Both temperatures follow linear per-epoch schedules: tau_dis from 1.0 to 1.5
(softening the self-prediction so pseudo-labels stay competitive late in
training), tau_div from 0.5 to 1.0 (sharpening early predictions so the
batch-mean entropy starts higher).

By default q is detached: the loss gradient treats the tempered softmax
inside q as a constant. Full gradient flow through q is available behind
``detach_target=False``, with its own analytic path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .mathcore import PROB_CLAMP, entropy, softmax


@dataclass
class TsalConfig:
    alpha: float = 0.3
    smoothing: float = 0.1
    tau_dis_start: float = 1.0
    tau_dis_end: float = 1.5
    tau_div_start: float = 0.5
    tau_div_end: float = 1.0
    epochs: int = 15
    detach_target: bool = True

    def validate(self):
        if self.alpha < 0:
            raise InvalidArgument("alpha must be >= 0")
        if not 0.0 <= self.smoothing < 1.0:
            raise InvalidArgument("smoothing must lie in [0, 1)")
        for name in ("tau_dis_start", "tau_dis_end", "tau_div_start", "tau_div_end"):
            if getattr(self, name) <= 0:
                raise InvalidArgument(f"{name} must be > 0")
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")


@dataclass
class TsalBatchResult:
    loss: float
    dis: float
    div: float
    dL_dlogits: np.ndarray
    p_bar: np.ndarray


def _interp(start: float, end: float, t: int, epochs: int) -> float:
    if not 0 <= t <= epochs - 1:
        raise InvalidArgument(f"epoch index {t} outside [0, {epochs - 1}]")
    if epochs == 1:
        return start
    return start + (end - start) * t / (epochs - 1)


def tau_dis(t: int, cfg: TsalConfig) -> float:
    """Discriminability temperature at epoch t (linear schedule)."""
    return _interp(cfg.tau_dis_start, cfg.tau_dis_end, t, cfg.epochs)


def tau_div(t: int, cfg: TsalConfig) -> float:
    """Diversity temperature at epoch t (linear schedule)."""
    return _interp(cfg.tau_div_start, cfg.tau_div_end, t, cfg.epochs)


def smooth_labels(one_hot: np.ndarray, smoothing: float) -> np.ndarray:
    """Label smoothing: y * (1 - S) + S / C, rowwise for matrices."""
    y = np.asarray(one_hot, dtype=np.float64)
    flat = y.reshape(-1, y.shape[-1])
    if not (np.isin(flat, (0.0, 1.0)).all() and (flat.sum(axis=-1) == 1.0).all()):
        raise InvalidArgument("smooth_labels expects one-hot input")
    C = y.shape[-1]
    return y * (1.0 - smoothing) + smoothing / C


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def target_distribution(logits: np.ndarray, y_smooth: np.ndarray, t: int, cfg: TsalConfig) -> np.ndarray:
    """Mixture target softmax(l / tau_dis(t)) + alpha * y_smooth.

    Unnormalized on purpose: each row carries mass 1 + alpha.
    """
    logits = np.asarray(logits, dtype=np.float64)
    y_smooth = np.asarray(y_smooth, dtype=np.float64)
    if logits.shape != y_smooth.shape:
        raise InvalidArgument("logits and y_smooth must share a shape")
    return softmax(logits, tau_dis(t, cfg)) + cfg.alpha * y_smooth


def _softmax_vjp(s: np.ndarray, g: np.ndarray, temperature: float) -> np.ndarray:
    """Rowwise vector-Jacobian product of softmax(l / temperature).

    Given s = softmax(l / temperature) and upstream row gradients g with
    respect to s, returns gradients with respect to l:
    (1/temperature) * s * (g - <g, s>).
    """
    inner = (g * s).sum(axis=1, keepdims=True)
    return s * (g - inner) / temperature


def tsal_batch(logits: np.ndarray, targets: np.ndarray, t: int, cfg: TsalConfig) -> TsalBatchResult:
    """Loss, both terms and the exact dL/dlogits for one batch.

    ``targets`` rows are the (smoothed, possibly mixed) pseudo-label
    distributions: nonnegative, each summing to 1. One-hot rows are the
    unsmoothed special case.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if logits.ndim != 2 or logits.shape != targets.shape:
        raise InvalidArgument(f"expected matching B x C matrices, got {logits.shape} and {targets.shape}")
    B, C = logits.shape
    if B < 2:
        raise InvalidArgument("tsal_batch needs B >= 2 (diversity is degenerate on singletons)")
    if (targets < -1e-12).any() or (np.abs(targets.sum(axis=1) - 1.0) > 1e-6).any():
        raise InvalidArgument("target rows must be probability distributions")

    p = softmax(logits)  # predictions at temperature 1
    log_p = np.log(np.maximum(p, PROB_CLAMP))
    u = softmax(logits, tau_dis(t, cfg))  # tempered self-prediction inside q
    q = u + cfg.alpha * targets
    dis = float(-(q * log_p).sum() / B)

    tdv = tau_div(t, cfg)
    s = softmax(logits, tdv)
    p_bar = s.mean(axis=0)
    div = -entropy(p_bar)

    # dis gradient: d/dl H(q, softmax(l)) = (sum q) * p - q for constant q.
    mass = q.sum(axis=1, keepdims=True)
    dL = (mass * p - q) / B
    if not cfg.detach_target:
        # Extra flow through u: d/dl of -sum_c u_c(l) * log p_c with log p
        # treated as the (clamped) coefficient it multiplies.
        dL += _softmax_vjp(u, -log_p, tau_dis(t, cfg)) / B

    # div gradient through p_bar: d(-H)/d p_bar = log p_bar + 1.
    g_pbar = np.log(np.maximum(p_bar, 1e-300)) + 1.0
    dL += _softmax_vjp(s, np.broadcast_to(g_pbar, s.shape), tdv) / B

    return TsalBatchResult(loss=dis + div, dis=dis, div=div, dL_dlogits=dL, p_bar=p_bar)


def mixup(
    X: np.ndarray,
    targets: np.ndarray,
    rng: np.random.Generator,
    beta_a: float = 0.3,
    beta_b: float = 0.3,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Convex batch interpolation with one Beta(beta_a, beta_b) ratio per batch.

    The mixing ratio is produced from two seeded Gamma draws so the stream is
    deterministic and platform-stable.
    """
    X = np.asarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if X.shape[0] != targets.shape[0] or X.shape[0] < 2:
        raise InvalidArgument("mixup needs matching row counts with B >= 2")
    ga = rng.gamma(beta_a)
    gb = rng.gamma(beta_b)
    lam = 0.5 if ga + gb == 0.0 else ga / (ga + gb)
    perm = rng.permutation(X.shape[0])
    X_mix = lam * X + (1.0 - lam) * X[perm]
    targets_mix = lam * targets + (1.0 - lam) * targets[perm]
    return X_mix, targets_mix, float(lam)
