"""Deterministic numeric primitives: tempered softmax, entropies, top-K, row
normalization and seeded random generators.

Everything here is pure and operates in float64. Natural logarithms throughout.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import InvalidArgument

# Probabilities are clamped at this floor before any logarithm so that one-hot
# targets against a saturated softmax stay finite.
PROB_CLAMP = 1e-12

# Norms below this floor are treated as zero (all-zero rows stay all-zero).
NORM_FLOOR = 1e-12


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Tempered softmax over the last axis, exp(l/T - max) normalized.

    Max-subtraction keeps the computation overflow-safe for logit magnitudes
    up to at least 1e4. The argmax is preserved for any temperature > 0.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[-1] < 1:
        raise InvalidArgument("softmax needs at least one logit")
    if not np.isfinite(temperature) or temperature <= 0.0:
        raise InvalidArgument(f"temperature must be finite and > 0, got {temperature}")
    if not np.isfinite(logits).all():
        raise InvalidArgument("softmax received non-finite logits")
    scaled = logits / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p: np.ndarray) -> float:
    """Shannon entropy -sum p ln p in nats, with 0 * ln 0 := 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidArgument("entropy expects a probability vector")
    if (p < -1e-12).any() or (p > 1.0 + 1e-12).any():
        raise InvalidArgument("entropy: entries outside [0, 1]")
    if abs(p.sum() - 1.0) > 1e-6:
        raise InvalidArgument(f"entropy: probabilities sum to {p.sum()!r}, not 1")
    mask = p > 0.0
    return float(-(p[mask] * np.log(p[mask])).sum())


def cross_entropy(target: np.ndarray, p: np.ndarray) -> float:
    """Cross-entropy -sum target ln p in nats.

    The target only needs nonnegative entries; it may carry mass != 1 (the
    mixture targets used by the adaptation loss sum to 1 + alpha). ``p`` is
    clamped at PROB_CLAMP before the log.
    """
    target = np.asarray(target, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if target.shape != p.shape or target.ndim != 1:
        raise InvalidArgument(f"cross_entropy: shape mismatch {target.shape} vs {p.shape}")
    if (target < 0.0).any():
        raise InvalidArgument("cross_entropy: negative target entry")
    return float(-(target * np.log(np.maximum(p, PROB_CLAMP))).sum())


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, descending; ties go to the smaller index."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise InvalidArgument("topk_indices expects a vector")
    n = values.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgument(f"k={k} outside [1, {n}]")
    if not np.isfinite(values).all():
        raise InvalidArgument("topk_indices received non-finite values")
    # Stable sort of the negated values: equal entries keep ascending index order.
    return np.argsort(-values, kind="stable")[:k]


def l2_normalize_rows(X: np.ndarray) -> np.ndarray:
    """Divide each row by its Euclidean norm; rows with norm below the floor
    are returned unchanged."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgument("l2_normalize_rows expects a matrix")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.maximum(norms, NORM_FLOOR)


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give bit-identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed: int, tag: str) -> int:
    """Fold a stage tag into a base seed, giving a stable 64-bit child seed.

    Uses a cryptographic hash rather than Python's hash() so the derivation is
    identical across processes and platforms.
    """
    digest = hashlib.blake2b(f"{int(seed)}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
