"""Adapter + linear classifier stack with manual gradients, the SGD update
and binary checkpoints.

The trainable stack is features -> affine adapter (optionally tanh) ->
frozen-able linear classifier -> logits. Gradients are propagated by hand
from a caller-supplied dL/dlogits so every step stays exactly checkable
against finite differences.

Checkpoint file (little-endian):

    magic "TABM" | u32 version=1 | u32 d | u32 h | u32 C | u8 activation |
    u8 frozen | 2 zero bytes | float64 params: adapter_weight (h x d,
    row-major), adapter_bias (h), classifier_weight (C x h), classifier_bias (C)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, FormatError, InvalidArgument

CKPT_MAGIC = b"TABM"
CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIIIIBB2x")

ACTIVATIONS = ("identity", "tanh")


@dataclass
class AdapterClassifier:
    adapter_weight: np.ndarray  # (h, d)
    adapter_bias: np.ndarray  # (h,)
    classifier_weight: np.ndarray  # (C, h)
    classifier_bias: np.ndarray  # (C,)
    activation: str = "identity"
    classifier_frozen: bool = False
    # Bumped on every parameter update; lets backward() detect stale caches.
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"activation must be one of {ACTIVATIONS}")
        h, d = self.adapter_weight.shape
        c = self.classifier_weight.shape[0]
        if self.adapter_bias.shape != (h,) or self.classifier_weight.shape != (c, h) or self.classifier_bias.shape != (c,):
            raise InvalidArgument("model parameter shapes are mutually inconsistent")

    @property
    def input_dim(self) -> int:
        return self.adapter_weight.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.adapter_weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.classifier_weight.shape[0]

    def copy(self) -> "AdapterClassifier":
        return AdapterClassifier(
            adapter_weight=self.adapter_weight.copy(),
            adapter_bias=self.adapter_bias.copy(),
            classifier_weight=self.classifier_weight.copy(),
            classifier_bias=self.classifier_bias.copy(),
            activation=self.activation,
            classifier_frozen=self.classifier_frozen,
        )


@dataclass
class ForwardCache:
    model: AdapterClassifier
    model_version: int
    inputs: np.ndarray
    pre_activation: np.ndarray
    features: np.ndarray


@dataclass
class ParamGrads:
    adapter_weight: np.ndarray
    adapter_bias: np.ndarray
    classifier_weight: np.ndarray
    classifier_bias: np.ndarray


def init_model(
    input_dim: int,
    hidden_dim: int,
    num_classes: int,
    activation: str,
    rng: np.random.Generator,
) -> AdapterClassifier:
    """Glorot-normal weights, zero biases."""

    def glorot(fan_out, fan_in):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        return scale * rng.standard_normal((fan_out, fan_in))

    return AdapterClassifier(
        adapter_weight=glorot(hidden_dim, input_dim),
        adapter_bias=np.zeros(hidden_dim),
        classifier_weight=glorot(num_classes, hidden_dim),
        classifier_bias=np.zeros(num_classes),
        activation=activation,
    )


def forward(m: AdapterClassifier, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Batched forward pass: returns (features B x h, logits B x C, cache)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.input_dim:
        raise InvalidArgument(f"expected input of shape (B, {m.input_dim}), got {X.shape}")
    pre = X @ m.adapter_weight.T + m.adapter_bias
    feats = np.tanh(pre) if m.activation == "tanh" else pre
    logits = feats @ m.classifier_weight.T + m.classifier_bias
    cache = ForwardCache(model=m, model_version=m.version, inputs=X, pre_activation=pre, features=feats)
    return feats, logits, cache


def backward(m: AdapterClassifier, cache: ForwardCache, dL_dlogits: np.ndarray) -> ParamGrads:
    """Chain rule from logit gradients back to all parameters.

    dL_dlogits is taken as-is (the loss functions already bake in their 1/B
    factors), so the returned gradients are exactly the gradients of that
    scalar loss. Frozen classifier parameters get zero-filled gradient blocks.
    """
    if cache.model is not m or cache.model_version != m.version:
        raise ContractViolation("backward called with a stale or mismatched forward cache")
    dL = np.asarray(dL_dlogits, dtype=np.float64)
    B = cache.inputs.shape[0]
    if dL.shape != (B, m.num_classes):
        raise InvalidArgument(f"dL_dlogits shape {dL.shape} does not match batch ({B}, {m.num_classes})")

    if m.classifier_frozen:
        d_cw = np.zeros_like(m.classifier_weight)
        d_cb = np.zeros_like(m.classifier_bias)
    else:
        d_cw = dL.T @ cache.features
        d_cb = dL.sum(axis=0)

    d_feats = dL @ m.classifier_weight
    if m.activation == "tanh":
        d_pre = d_feats * (1.0 - np.tanh(cache.pre_activation) ** 2)
    else:
        d_pre = d_feats
    d_aw = d_pre.T @ cache.inputs
    d_ab = d_pre.sum(axis=0)
    return ParamGrads(adapter_weight=d_aw, adapter_bias=d_ab, classifier_weight=d_cw, classifier_bias=d_cb)


def lr_at(t: int, total_steps: int, lr0: float) -> float:
    """Power-law decay lr0 * (1 + 10 t/T)^(-0.75)."""
    if total_steps < 1 or not 0 <= t <= total_steps:
        raise InvalidArgument(f"need 0 <= t <= T with T >= 1, got t={t}, T={total_steps}")
    return lr0 * (1.0 + 10.0 * t / total_steps) ** (-0.75)


@dataclass
class OptimState:
    """SGD with Nesterov momentum, coupled L2 weight decay and global-norm
    gradient clipping, on the power-law learning-rate schedule."""

    total_steps: int
    base_lr: dict[str, float]  # parameter groups: "adapter", "classifier"
    momentum: float = 0.9
    weight_decay: float = 1e-3
    nesterov: bool = True
    clip_norm: float = 5.0
    t: int = 0
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidArgument("total_steps must be >= 1")


def _param_slots(m: AdapterClassifier, grads: ParamGrads):
    slots = [
        ("adapter", "adapter_weight", m.adapter_weight, grads.adapter_weight),
        ("adapter", "adapter_bias", m.adapter_bias, grads.adapter_bias),
    ]
    if not m.classifier_frozen:
        slots += [
            ("classifier", "classifier_weight", m.classifier_weight, grads.classifier_weight),
            ("classifier", "classifier_bias", m.classifier_bias, grads.classifier_bias),
        ]
    return slots


def sgd_step(m: AdapterClassifier, opt: OptimState, grads: ParamGrads) -> None:
    """One update: weight decay, global-norm clip, Nesterov momentum, t += 1.

    Frozen classifier parameters are excluded from the norm and never touched.
    """
    if opt.t >= opt.total_steps:
        raise ContractViolation(f"sgd_step past the schedule end (t={opt.t}, T={opt.total_steps})")
    slots = _param_slots(m, grads)
    for _, name, param, grad in slots:
        if grad.shape != param.shape:
            raise InvalidArgument(f"gradient shape mismatch for {name}")

    effective = []
    for group, name, param, grad in slots:
        g = grad + opt.weight_decay * param
        effective.append((group, name, param, g))

    global_norm = np.sqrt(sum(float((g * g).sum()) for _, _, _, g in effective))
    if global_norm > opt.clip_norm:
        scale = opt.clip_norm / global_norm
        effective = [(grp, name, p, g * scale) for grp, name, p, g in effective]

    for group, name, param, g in effective:
        lr = lr_at(opt.t, opt.total_steps, opt.base_lr[group])
        v = opt.velocities.get(name)
        if v is None:
            v = np.zeros_like(param)
        v = opt.momentum * v + g
        opt.velocities[name] = v
        step = g + opt.momentum * v if opt.nesterov else v
        param -= lr * step

    opt.t += 1
    m.version += 1


def save_checkpoint(m: AdapterClassifier, path) -> None:
    path = Path(path)
    act_tag = ACTIVATIONS.index(m.activation)
    payload = bytearray(
        _CKPT_HEADER.pack(
            CKPT_MAGIC, CKPT_VERSION, m.input_dim, m.hidden_dim, m.num_classes, act_tag, int(m.classifier_frozen)
        )
    )
    for arr in (m.adapter_weight, m.adapter_bias, m.classifier_weight, m.classifier_bias):
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C")
    path.write_bytes(bytes(payload))


def load_checkpoint(path) -> AdapterClassifier:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _CKPT_HEADER.size:
        raise FormatError(f"truncated checkpoint header in {path.name}", offset=len(raw))
    magic, version, d, h, c, act_tag, frozen = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CKPT_MAGIC!r}", offset=0)
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    if d < 1 or h < 1 or c < 1:
        raise FormatError("checkpoint declares empty dimensions", offset=8)
    if act_tag >= len(ACTIVATIONS):
        raise FormatError(f"unknown activation tag {act_tag}", offset=20)
    if frozen not in (0, 1):
        raise FormatError(f"frozen flag must be 0 or 1, got {frozen}", offset=21)

    counts = [h * d, h, c * h, c]
    expected = _CKPT_HEADER.size + 8 * sum(counts)
    if len(raw) != expected:
        raise FormatError(
            f"checkpoint payload size {len(raw)} does not match declared shapes (expected {expected})",
            offset=min(len(raw), expected),
        )
    offset = _CKPT_HEADER.size
    arrays = []
    for count in counts:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64))
        offset += 8 * count
    return AdapterClassifier(
        adapter_weight=arrays[0].reshape(h, d),
        adapter_bias=arrays[1],
        classifier_weight=arrays[2].reshape(c, h),
        classifier_bias=arrays[3],
        activation=ACTIVATIONS[act_tag],
        classifier_frozen=bool(frozen),
    )
