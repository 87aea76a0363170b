"""Conventional and generalized zero-shot prediction and the S/U/H protocol."""

from dataclasses import dataclass, field

import numpy as np

from .model import model_forward
from .numerics import cosine_matrix


CZSL_SEMANTICS = ("revised", "raw")


class EvalConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    seen: tuple
    unseen: tuple

    def __post_init__(self):
        object.__setattr__(self, "seen", tuple(sorted(int(c) for c in self.seen)))
        object.__setattr__(self, "unseen", tuple(sorted(int(c) for c in self.unseen)))
        if set(self.seen) & set(self.unseen):
            raise EvalConfigError("seen and unseen class sets overlap")

    @property
    def all_classes(self):
        return tuple(sorted(self.seen + self.unseen))


@dataclass(frozen=True)
class GzslConfig:
    mu: float = 0.0
    tau: float = 20.0

    def __post_init__(self):
        if not self.tau > 0:
            raise EvalConfigError("tau must be positive")


@dataclass
class EvalReport:
    T1: float
    S: float
    U: float
    H: float
    per_class: dict = field(default_factory=dict)
    seen_predictions: int = 0

    def to_dict(self):
        return {"T1": self.T1, "S": self.S, "U": self.U, "H": self.H,
                "per_class": {str(k): v for k, v in sorted(self.per_class.items())}}


def _argmax_lowest(scores, ids):
    """Column of the maximum score; ties go to the smallest id (``ids`` ascending)."""
    return ids[np.argmax(scores, axis=-1)]


def class_cosines(phi, revised):
    """Cosine between each fused prediction and every class column."""
    phi = np.asarray(phi, dtype=np.float64)
    revised = np.asarray(revised, dtype=np.float64)
    return cosine_matrix(phi, revised)


def czsl_predict(phi, revised, split):
    """Best unseen class by cosine. ``phi`` may be (N_A,) or (B, N_A)."""
    if not split.unseen:
        raise EvalConfigError("conventional ZSL needs at least one unseen class")
    ids = np.asarray(split.unseen)
    cos = class_cosines(phi, np.asarray(revised)[..., ids])
    return _argmax_lowest(cos, ids)


def gzsl_scores(phi, revised, split, cfg):
    ids = np.asarray(split.all_classes)
    if ids.size == 0:
        raise EvalConfigError("no classes to predict")
    scores = cfg.tau * class_cosines(phi, np.asarray(revised)[..., ids])
    penalty = np.isin(ids, split.seen) * cfg.mu
    return scores - penalty, ids


def gzsl_predict(phi, revised, split, cfg):
    """Calibrated-stacking argmax over seen and unseen classes."""
    scores, ids = gzsl_scores(phi, revised, split, cfg)
    return _argmax_lowest(scores, ids)


def per_class_accuracies(truth, predicted, classes):
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    accs = {}
    for c in sorted(int(k) for k in classes):
        hit = truth == c
        n = int(hit.sum())
        if n == 0:
            raise EvalConfigError(f"class {c} has no samples")
        accs[c] = 100.0 * float((predicted[hit] == c).sum()) / n
    return accs


def per_class_top1(truth, predicted, classes):
    """Mean over classes of within-class accuracy, in percent."""
    truth = np.asarray(truth)
    stray = set(int(t) for t in truth) - set(int(c) for c in classes)
    if stray:
        raise EvalConfigError(f"labels {sorted(stray)} are outside the evaluated classes")
    accs = per_class_accuracies(truth, predicted, classes)
    return float(np.mean(list(accs.values())))


def harmonic_mean(s, u):
    if s < 0 or u < 0:
        raise ValueError("accuracies must be non-negative")
    if s + u == 0:
        return 0.0
    return 2.0 * s * u / (s + u)


def predict_batch(x, params, S, model_cfg, batch_size=256):
    """Fused predictions and revised semantics for every image."""
    phis, revs = [], []
    for start in range(0, len(x), batch_size):
        trace, revised = model_forward(x[start:start + batch_size], params, S, model_cfg)
        phis.append(trace.phi)
        revs.append(revised)
    return np.concatenate(phis), np.concatenate(revs)


def report_from_predictions(phi, revised, labels, split, gzsl_cfg,
                            czsl_semantics="revised", raw=None):
    """Score precomputed predictions: T1 on unseen images, S/U/H on all of them.

    ``czsl_semantics="raw"`` ranks unseen classes against the unrevised class
    matrix ``raw`` for T1; GZSL always uses the per-image revised semantics.
    """
    if czsl_semantics not in CZSL_SEMANTICS:
        raise EvalConfigError(f"czsl_semantics must be one of {CZSL_SEMANTICS}")
    if czsl_semantics == "raw" and raw is None:
        raise EvalConfigError("raw CZSL scoring needs the class semantic matrix")
    labels = np.asarray(labels, dtype=np.int64)
    unseen_mask = np.isin(labels, split.unseen)
    seen_mask = np.isin(labels, split.seen)
    if unseen_mask.any():
        targets = revised[unseen_mask]
        if czsl_semantics == "raw":
            targets = np.broadcast_to(np.asarray(raw, dtype=np.float64), targets.shape)
        czsl = czsl_predict(phi[unseen_mask], targets, split)
        t1 = per_class_top1(labels[unseen_mask], czsl, sorted(set(labels[unseen_mask].tolist())))
    else:
        t1 = 0.0
    gz = gzsl_predict(phi, revised, split, gzsl_cfg)
    present_seen = sorted(set(labels[seen_mask].tolist()))
    present_unseen = sorted(set(labels[unseen_mask].tolist()))
    s = per_class_top1(labels[seen_mask], gz[seen_mask], present_seen) if present_seen else 0.0
    u = per_class_top1(labels[unseen_mask], gz[unseen_mask], present_unseen) if present_unseen else 0.0
    per_class = per_class_accuracies(labels, gz, present_seen + present_unseen)
    return EvalReport(T1=t1, S=s, U=u, H=harmonic_mean(s, u), per_class=per_class,
                      seen_predictions=int(np.isin(gz, split.seen).sum()))


def evaluate(x, labels, params, S, split, model_cfg, gzsl_cfg, czsl_semantics="revised"):
    phi, revised = predict_batch(np.asarray(x, dtype=np.float64), params, S, model_cfg)
    return report_from_predictions(phi, revised, labels, split, gzsl_cfg, czsl_semantics, S)
