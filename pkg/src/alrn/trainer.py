"""Episode sampling, momentum SGD and the two-stage training schedule."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, ParameterSet, init_parameters
from .objective import LossConfig, loss_and_grad

logger = logging.getLogger(__name__)

ADAPTER_PARAMS = ("adapter_w", "adapter_b")


class ConfigError(ValueError):
    """Training configuration cannot be satisfied by the dataset."""


class NumericalError(RuntimeError):
    """Loss or gradient became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    model_cfg: ModelConfig
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    n_pre: int = 5
    epochs_total: int = 20
    batches_per_epoch: int = 300
    n_way: int = 16
    k_shot: int = 2
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.n_pre <= self.epochs_total:
            raise ConfigError(f"need 0 <= n_pre <= epochs_total, got {self.n_pre}/{self.epochs_total}")
        if self.n_way < 1 or self.k_shot < 1 or self.batches_per_epoch < 1:
            raise ConfigError("n_way, k_shot and batches_per_epoch must be positive")

    @property
    def batch_size(self):
        return self.n_way * self.k_shot


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    loss: float
    ce: float
    mse: float
    seconds: float

    def to_dict(self):
        return {"epoch": self.epoch, "stage": self.stage, "loss": self.loss,
                "ce": self.ce, "mse": self.mse, "seconds": self.seconds}


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def append(self, rec):
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise ValueError("epochs must be appended in order")
        self.records.append(rec)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self):
        return [r.loss for r in self.records]


def stream_rngs(seed):
    """Independent generators for initialization and episode sampling."""
    init_ss, episode_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(episode_ss)


def sample_episode(labels, seen, n_way, k_shot, rng):
    """Indices of ``n_way`` distinct seen classes with ``k_shot`` samples each.

    Samples within a class are drawn without replacement. Returns an index
    array of length ``n_way * k_shot``, grouped by class.
    """
    labels = np.asarray(labels)
    seen = sorted(int(c) for c in seen)
    by_class = {c: np.flatnonzero(labels == c) for c in seen}
    eligible = [c for c in seen if len(by_class[c]) >= k_shot]
    if len(seen) < n_way:
        raise ConfigError(f"episode needs {n_way} seen classes, dataset has {len(seen)}")
    if len(eligible) < n_way:
        short = [c for c in seen if len(by_class[c]) < k_shot]
        raise ConfigError(
            f"episode needs {n_way} classes with >= {k_shot} samples; "
            f"only {len(eligible)} qualify (short: {short})")
    classes = rng.choice(eligible, size=n_way, replace=False)
    picks = [rng.choice(by_class[int(c)], size=k_shot, replace=False) for c in classes]
    return np.concatenate(picks)


def sgd_step(params, grads, velocity, lr, momentum, weight_decay, frozen=()):
    """Classical momentum with L2 decay folded into the gradient. Updates in place;
    parameters named in ``frozen`` and their velocities are left untouched."""
    for name, theta in params.items():
        if name in frozen:
            continue
        g = getattr(grads, name)
        v = getattr(velocity, name)
        v *= momentum
        v += g + weight_decay * theta
        theta -= lr * v
    return params, velocity


def train(x, labels, S, seen, cfg, params=None, callback=None):
    """Two-stage training on seen-class samples.

    Epochs before ``cfg.n_pre`` update only the four attribute kernels; later
    epochs also update the adapter. Velocity carries across the switch.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    init_rng, episode_rng = stream_rngs(cfg.seed)
    if params is None:
        params = init_parameters(cfg.model_cfg, init_rng)
    velocity = params.zeros_like()
    log = TrainLog()
    for epoch in range(cfg.epochs_total):
        stage = "kernels_only" if epoch < cfg.n_pre else "end_to_end"
        frozen = ADAPTER_PARAMS if stage == "kernels_only" else ()
        t0 = time.perf_counter()
        totals = np.zeros(3)
        for b in range(cfg.batches_per_epoch):
            idx = sample_episode(labels, seen, cfg.n_way, cfg.k_shot, episode_rng)
            # overflow is reported below as a NumericalError, not as warnings
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grad(x[idx], labels[idx], params, S, cfg.model_cfg,
                                            cfg.loss_cfg, stage=stage, seen=seen)
            if not math.isfinite(loss.total):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            sgd_step(params, grads, velocity, cfg.learning_rate, cfg.momentum,
                     cfg.weight_decay, frozen=frozen)
            totals += (loss.total, loss.ce, loss.mse)
        totals /= cfg.batches_per_epoch
        rec = EpochRecord(epoch, stage, *map(float, totals), time.perf_counter() - t0)
        log.append(rec)
        logger.info("epoch %d [%s] loss=%.4f ce=%.4f mse=%.4f", epoch, stage, *totals)
        if callback is not None:
            callback(rec)
    return params, log
