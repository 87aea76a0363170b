"""Attribute localization head, scale gate and attribute revision.

Forward functions accept either one feature grid ``(C, H, W)`` or a batch
``(B, C, H, W)``; the leading axis is carried through every intermediate.
"""

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .numerics import (
    ShapeError,
    attribute_softmax,
    conv1x1,
    sigmoid_vec,
    spatial_mean,
    spatial_softmax,
)

ACTIVATIONS = ("sigmoid", "softmax")
ADAPTERS = ("identity", "linear")


@dataclass(frozen=True)
class ModelConfig:
    num_attributes: int
    feature_channels: int
    input_channels: Optional[int] = None
    use_scu: bool = True
    use_global: bool = True
    use_arm: bool = True
    revision_activation: str = "sigmoid"
    adapter: str = "identity"

    def __post_init__(self):
        if self.num_attributes < 1 or self.feature_channels < 1:
            raise ValueError("num_attributes and feature_channels must be >= 1")
        if self.revision_activation not in ACTIVATIONS:
            raise ValueError(f"revision_activation must be one of {ACTIVATIONS}")
        if self.adapter not in ADAPTERS:
            raise ValueError(f"adapter must be one of {ADAPTERS}")
        if self.adapter == "identity" and self.input_channels not in (None, self.feature_channels):
            raise ValueError("identity adapter requires input_channels == feature_channels")

    @property
    def in_channels(self):
        return self.feature_channels if self.input_channels is None else self.input_channels

    def with_ablation(self, name):
        """Return a copy with one named ablation switched on."""
        if name in (None, "none", "full"):
            return self
        if name == "no-arm":
            return replace(self, use_arm=False)
        if name == "no-scu":
            return replace(self, use_scu=False)
        if name == "no-global":
            return replace(self, use_global=False)
        if name == "softmax-revision":
            return replace(self, revision_activation="softmax")
        if name == "no-mse":
            # loss-side ablation; the head itself is unchanged
            return self
        raise ValueError(f"unknown ablation {name!r}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class ParameterSet:
    """All trainable state. Also used as the gradient container."""

    wa: np.ndarray
    ba: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wg: np.ndarray
    bg: np.ndarray
    wr: np.ndarray
    br: np.ndarray
    adapter_w: Optional[np.ndarray] = None
    adapter_b: Optional[np.ndarray] = None

    KERNEL_GROUPS = ("a", "v", "g", "r")

    def items(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value

    def names(self):
        return [name for name, _ in self.items()]

    def copy(self):
        return ParameterSet(**{f.name: None if getattr(self, f.name) is None
                               else getattr(self, f.name).copy() for f in fields(self)})

    def zeros_like(self):
        return ParameterSet(**{f.name: None if getattr(self, f.name) is None
                               else np.zeros_like(getattr(self, f.name)) for f in fields(self)})

    @property
    def has_adapter(self):
        return self.adapter_w is not None

    def equals(self, other):
        if self.names() != other.names():
            return False
        return all(np.array_equal(a, getattr(other, n)) for n, a in self.items())


@dataclass
class ForwardTrace:
    x: np.ndarray
    attention: np.ndarray
    saliency: np.ndarray
    phi_local: np.ndarray
    phi_global: np.ndarray
    gate_pre: np.ndarray
    gate: np.ndarray
    phi: np.ndarray
    revision_pre: np.ndarray
    revision: np.ndarray
    x_mean: np.ndarray = field(repr=False, default=None)


def _glorot(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_parameters(config, seed):
    """Glorot-uniform kernels, zero biases; a linear adapter starts at identity
    when it is square so stage-one training sees the raw features."""
    rng = np.random.default_rng(seed)
    na, c = config.num_attributes, config.feature_channels
    kernels = {}
    for g in ParameterSet.KERNEL_GROUPS:
        kernels[f"w{g}"] = _glorot(rng, na, c)
        kernels[f"b{g}"] = np.zeros(na)
    if config.adapter == "linear":
        cin = config.in_channels
        if cin == c:
            kernels["adapter_w"] = np.eye(c)
        else:
            kernels["adapter_w"] = _glorot(rng, c, cin)
        kernels["adapter_b"] = np.zeros(c)
    return ParameterSet(**kernels)


def apply_adapter(x_raw, params):
    if not params.has_adapter:
        return np.asarray(x_raw, dtype=np.float64)
    return conv1x1(x_raw, params.adapter_w, params.adapter_b)


def alm_forward(x, params):
    """Attention ``W``, saliency map ``V`` and attention-pooled local prediction."""
    attention = spatial_softmax(conv1x1(x, params.wa, params.ba))
    saliency = conv1x1(x, params.wv, params.bv)
    phi_local = (attention * saliency).sum(axis=(-2, -1))
    return attention, saliency, phi_local


def global_feature(saliency):
    return spatial_mean(saliency)


def scale_gate(x, params):
    return sigmoid_vec(spatial_mean(conv1x1(x, params.wg, params.bg)))


def fuse(phi_local, phi_global, gate, config):
    phi_local = np.asarray(phi_local, dtype=np.float64)
    phi_global = np.asarray(phi_global, dtype=np.float64)
    gate = np.asarray(gate, dtype=np.float64)
    if not (phi_local.shape == phi_global.shape == gate.shape):
        raise ShapeError(
            f"fuse length mismatch: {phi_local.shape}, {phi_global.shape}, {gate.shape}")
    if not config.use_global:
        return phi_local.copy()
    if not config.use_scu:
        return 0.5 * (phi_local + phi_global)
    return gate * phi_local + (1.0 - gate) * phi_global


def _revision_from_pre(pre, config):
    if not config.use_arm:
        return np.ones_like(pre)
    if config.revision_activation == "softmax":
        return attribute_softmax(pre)
    return sigmoid_vec(pre)


def revision_vector(x, params, config):
    return _revision_from_pre(spatial_mean(conv1x1(x, params.wr, params.br)), config)


def revise_semantics(r, S):
    """Image-level semantics: row ``n`` of ``S`` scaled by ``r[n]``.

    ``r`` may be batched ``(B, N_A)``, giving ``(B, N_A, N_C)``.
    """
    r = np.asarray(r, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or r.shape[-1] != S.shape[0]:
        raise ShapeError(f"revision length {r.shape} does not match semantics {S.shape}")
    return r[..., :, None] * S


def model_forward(x_raw, params, S, config):
    """Run the full head; returns ``(trace, revised)``."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    if x_raw.ndim < 3 or x_raw.shape[-3] != config.in_channels:
        raise ShapeError(
            f"input shape {x_raw.shape} does not match {config.in_channels} input channels")
    x = apply_adapter(x_raw, params)
    attention, saliency, phi_local = alm_forward(x, params)
    phi_global = global_feature(saliency)
    x_mean = spatial_mean(x)
    # mean of a 1x1 conv equals the conv of the mean
    gate_pre = x_mean @ params.wg.T + params.bg
    gate = sigmoid_vec(gate_pre)
    phi = fuse(phi_local, phi_global, gate, config)
    revision_pre = x_mean @ params.wr.T + params.br
    revision = _revision_from_pre(revision_pre, config)
    trace = ForwardTrace(
        x=x, attention=attention, saliency=saliency, phi_local=phi_local,
        phi_global=phi_global, gate_pre=gate_pre, gate=gate, phi=phi,
        revision_pre=revision_pre, revision=revision, x_mean=x_mean,
    )
    # with ARM off the revision is all-ones, so this reproduces S exactly
    return trace, revise_semantics(revision, S)
