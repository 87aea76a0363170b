"""Cosine cross-entropy plus attribute MSE, with exact analytic gradients.

A batch is a feature array ``(B, C_in, H, W)`` with integer class ids. Cross
entropy runs over the seen classes only; the columns of the full semantic
matrix that belong to seen classes are selected by ``seen``.
"""

from dataclasses import dataclass

import numpy as np

from .model import model_forward
from .numerics import EPS, cosine_matrix, logsumexp

STAGES = ("kernels_only", "end_to_end")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 20.0
    lam: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")


@dataclass
class BatchLoss:
    total: float
    ce: float
    mse: float
    logits: np.ndarray


def _seen_ids(S, seen):
    if seen is None:
        return np.arange(S.shape[1])
    return np.asarray(sorted(seen), dtype=np.int64)


def _target_index(labels, seen_ids):
    labels = np.asarray(labels, dtype=np.int64)
    lookup = {int(c): k for k, c in enumerate(seen_ids)}
    try:
        return np.array([lookup[int(y)] for y in labels], dtype=np.int64)
    except KeyError as exc:
        raise IndexError(f"label {exc.args[0]} is not a seen class") from None


def class_logits(phi, revised, tau):
    """``tau * cos(phi_i, psi_i(s_k))`` for every sample ``i`` and column ``k``."""
    return tau * cosine_matrix(phi, revised)


def ce_loss(trace, revised, labels, cfg, seen=None):
    """Mean softmax cross-entropy of temperature-scaled cosine logits.

    ``revised`` is ``(B, N_A, N_C)``; returns ``(loss, logits)`` with logits over
    the seen classes in ascending id order.
    """
    seen_ids = _seen_ids(revised[0], seen)
    target = _target_index(labels, seen_ids)
    logits = class_logits(trace.phi, revised[:, :, seen_ids], cfg.tau)
    nll = logsumexp(logits, axis=-1) - logits[np.arange(len(target)), target]
    return float(nll.mean()), logits


def mse_loss(trace, revised, labels):
    labels = np.asarray(labels, dtype=np.int64)
    target = revised[np.arange(len(labels)), :, labels]
    if target.shape != trace.phi.shape:
        raise ValueError(f"shape mismatch {target.shape} vs {trace.phi.shape}")
    return float(((trace.phi - target) ** 2).sum(axis=-1).mean())


def total_loss(x, labels, params, S, model_cfg, loss_cfg, seen=None):
    if len(labels) == 0:
        raise ValueError("empty batch")
    trace, revised = model_forward(x, params, S, model_cfg)
    ce, logits = ce_loss(trace, revised, labels, loss_cfg, seen)
    mse = mse_loss(trace, revised, labels)
    return BatchLoss(total=ce + loss_cfg.lam * mse, ce=ce, mse=mse, logits=logits)


def _cosine_grads(a, b):
    """Gradients of cos(a_i, b_ik) w.r.t. ``a`` and ``b``.

    ``a``: (B, N); ``b``: (B, N, K). Returns ``da`` (B, N, K) and ``db`` (B, N, K).
    Norms below ``EPS`` are treated as the constant ``EPS``.
    """
    na = np.linalg.norm(a, axis=-1)                       # (B,)
    nb = np.linalg.norm(b, axis=-2)                       # (B, K)
    da_n = np.maximum(na, EPS)
    db_n = np.maximum(nb, EPS)
    dots = np.einsum("bn,bnk->bk", a, b)
    denom = da_n[:, None] * db_n                          # (B, K)
    ga = b / denom[:, None, :]
    gb = np.broadcast_to(a[:, :, None], b.shape) / denom[:, None, :]
    a_live = (na > EPS).astype(np.float64)
    b_live = (nb > EPS).astype(np.float64)
    safe_na2 = np.where(na > EPS, na, 1.0) ** 2
    safe_nb2 = np.where(nb > EPS, nb, 1.0) ** 2
    cos = dots / denom
    ga = ga - (a_live / safe_na2)[:, None, None] * cos[:, None, :] * a[:, :, None]
    gb = gb - (b_live / safe_nb2)[:, None, :] * cos[:, None, :] * b
    return ga, gb


def loss_and_grad(x, labels, params, S, model_cfg, loss_cfg, stage="end_to_end", seen=None):
    """Forward, loss and the gradient of the total loss for every parameter."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    S = np.asarray(S, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    x_raw = np.asarray(x, dtype=np.float64)
    trace, revised = model_forward(x_raw, params, S, model_cfg)
    seen_ids = _seen_ids(S, seen)
    target = _target_index(labels, seen_ids)
    B = len(labels)
    rows = np.arange(B)
    tau, lam = loss_cfg.tau, loss_cfg.lam

    psi_seen = revised[:, :, seen_ids]                    # (B, N_A, K)
    logits = class_logits(trace.phi, psi_seen, tau)
    nll = logsumexp(logits, axis=-1) - logits[rows, target]
    ce = float(nll.mean())
    resid = trace.phi - revised[rows, :, labels]          # (B, N_A)
    mse = float((resid ** 2).sum(axis=-1).mean())
    loss = BatchLoss(total=ce + lam * mse, ce=ce, mse=mse, logits=logits)

    # d loss / d logits
    probs = np.exp(logits - logsumexp(logits, axis=-1)[:, None])
    dlogits = probs
    dlogits[rows, target] -= 1.0
    dlogits /= B

    gcos_phi, gcos_psi = _cosine_grads(trace.phi, psi_seen)
    dphi = tau * np.einsum("bk,bnk->bn", dlogits, gcos_phi)
    dpsi = np.zeros_like(revised)
    dpsi[:, :, seen_ids] = tau * dlogits[:, None, :] * gcos_psi
    dmse = (2.0 * lam / B) * resid
    dphi += dmse
    dpsi[rows, :, labels] -= dmse

    grads = params.zeros_like()
    cfg = model_cfg
    x_feat, x_mean = trace.x, trace.x_mean
    hw = x_feat.shape[-1] * x_feat.shape[-2]
    dx_mean = np.zeros_like(x_mean)

    # revision head
    if cfg.use_arm:
        dr = np.einsum("bnk,nk->bn", dpsi, S)
        r = trace.revision
        if cfg.revision_activation == "softmax":
            dpre = r * (dr - (r * dr).sum(axis=-1, keepdims=True))
        else:
            dpre = dr * r * (1.0 - r)
        grads.wr = dpre.T @ x_mean
        grads.br = dpre.sum(axis=0)
        dx_mean += dpre @ params.wr

    # fusion and gate
    if not cfg.use_global:
        dphi_l, dphi_g = dphi, None
    elif not cfg.use_scu:
        dphi_l = dphi_g = 0.5 * dphi
    else:
        g = trace.gate
        dphi_l = g * dphi
        dphi_g = (1.0 - g) * dphi
        dgate_pre = dphi * (trace.phi_local - trace.phi_global) * g * (1.0 - g)
        grads.wg = dgate_pre.T @ x_mean
        grads.bg = dgate_pre.sum(axis=0)
        dx_mean += dgate_pre @ params.wg

    # attention-pooled local prediction and global pooling
    W, V = trace.attention, trace.saliency
    dV = dphi_l[:, :, None, None] * W
    if dphi_g is not None:
        dV = dV + dphi_g[:, :, None, None] / hw
    dW = dphi_l[:, :, None, None] * V
    dZa = W * (dW - (W * dW).sum(axis=(-2, -1), keepdims=True))

    grads.wa = np.einsum("bkhw,bchw->kc", dZa, x_feat)
    grads.ba = dZa.sum(axis=(0, 2, 3))
    grads.wv = np.einsum("bkhw,bchw->kc", dV, x_feat)
    grads.bv = dV.sum(axis=(0, 2, 3))

    if params.has_adapter and stage == "end_to_end":
        dx = (np.einsum("kc,bkhw->bchw", params.wa, dZa)
              + np.einsum("kc,bkhw->bchw", params.wv, dV)
              + dx_mean[:, :, None, None] / hw)
        grads.adapter_w = np.einsum("bchw,bdhw->cd", dx, x_raw)
        grads.adapter_b = dx.sum(axis=(0, 2, 3))
    return loss, grads


def backward(x, labels, params, S, model_cfg, loss_cfg, stage="end_to_end", seen=None):
    return loss_and_grad(x, labels, params, S, model_cfg, loss_cfg, stage, seen)[1]


def finite_diff_oracle(x, labels, params, S, model_cfg, loss_cfg, step=1e-5,
                       stage="end_to_end", seen=None):
    """Central differences of the total loss, one scalar parameter at a time."""
    if not step > 0:
        raise ValueError("step must be positive")
    grads = params.zeros_like()
    for name, value in params.items():
        if name.startswith("adapter") and stage == "kernels_only":
            continue
        out = getattr(grads, name)
        flat = value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = total_loss(x, labels, params, S, model_cfg, loss_cfg, seen).total
            flat[k] = orig - step
            down = total_loss(x, labels, params, S, model_cfg, loss_cfg, seen).total
            flat[k] = orig
            out.reshape(-1)[k] = (up - down) / (2.0 * step)
    return grads


def central_difference(f, theta, step=1e-5):
    """Scalar central difference, exposed for checking the oracle itself."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat, g = theta.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = f(theta)
        flat[k] = orig - step
        down = f(theta)
        flat[k] = orig
        g[k] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-7):
    """Max elementwise ``|a - n| / max(|a|, |n|)``.

    Entries whose absolute difference is within ``floor`` count as exact; this
    keeps finite-difference round-off on identically-zero gradients (the
    attention bias, for one) from dominating the figure.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    err = np.where(diff <= floor, 0.0, diff / scale)
    return float(err.max())
