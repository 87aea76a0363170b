import numpy as np
import pytest

from alrn.data_io import SynthSpec, generate_synthetic
from alrn.model import ModelConfig, init_parameters
from alrn.objective import LossConfig
from alrn.presets import PRESETS
from alrn.trainer import (
    ConfigError,
    NumericalError,
    TrainConfig,
    TrainLog,
    EpochRecord,
    sample_episode,
    sgd_step,
    stream_rngs,
    train,
)


def tiny_config(**kw):
    base = dict(model_cfg=ModelConfig(6, 8, adapter="linear"), loss_cfg=LossConfig(),
                n_pre=1, epochs_total=3, batches_per_epoch=4, n_way=3, k_shot=2, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def tiny_data():
    ds = generate_synthetic(SynthSpec(num_classes=5, num_seen=3, samples_per_class=6,
                                      num_attributes=6, channels=8, height=3, width=3, seed=2))
    return ds, ds.train


def test_batch_size_of_default_episode():
    cfg = TrainConfig(ModelConfig(2, 2), LossConfig())
    assert (cfg.n_way, cfg.k_shot, cfg.batch_size) == (16, 2, 32)


def test_sgd_scalar_recurrence():
    from alrn.model import ParameterSet
    mk = lambda v: ParameterSet(*(np.array([v]) for _ in range(8)))
    params, grads, vel = mk(1.0), mk(0.5), mk(0.2)
    sgd_step(params, grads, vel, lr=0.001, momentum=0.9, weight_decay=0.00001)
    assert vel.wa[0] == pytest.approx(0.68001, abs=1e-15)
    assert params.wa[0] == pytest.approx(0.99931999, abs=1e-15)


def test_sgd_frozen_params_untouched():
    from alrn.model import ParameterSet
    mk = lambda v: ParameterSet(*(np.array([v]) for _ in range(10)))
    params, grads, vel = mk(1.0), mk(0.5), mk(0.2)
    sgd_step(params, grads, vel, 0.1, 0.9, 0.01, frozen=("adapter_w", "adapter_b"))
    assert params.adapter_w[0] == 1.0 and vel.adapter_w[0] == 0.2
    assert params.wa[0] != 1.0


def test_n_pre_presets():
    assert PRESETS["cub"]["train"]["n_pre"] == 5
    assert PRESETS["sun"]["train"]["n_pre"] == 5
    assert PRESETS["awa2"]["train"]["n_pre"] == 1


def test_episode_shape_and_distinctness():
    labels = np.repeat(np.arange(6), 5)
    rng = np.random.default_rng(0)
    for _ in range(200):
        idx = sample_episode(labels, range(6), 4, 3, rng)
        assert len(idx) == 12
        assert len(set(idx.tolist())) == 12
        cls = labels[idx]
        assert len(set(cls.tolist())) == 4
        assert all((cls == c).sum() == 3 for c in set(cls.tolist()))


def test_episode_never_draws_unseen():
    labels = np.repeat(np.arange(6), 4)
    idx = sample_episode(labels, [1, 3, 5], 3, 2, np.random.default_rng(1))
    assert set(labels[idx].tolist()) == {1, 3, 5}


def test_episode_too_few_classes():
    with pytest.raises(ConfigError, match="16 seen classes"):
        sample_episode(np.repeat(np.arange(12), 3), range(12), 16, 2, np.random.default_rng(0))


def test_episode_class_too_small():
    labels = np.array([0, 0, 1, 2, 2])
    with pytest.raises(ConfigError, match=r"short: \[1\]"):
        sample_episode(labels, [0, 1, 2], 3, 2, np.random.default_rng(0))


def test_episode_deterministic():
    labels = np.repeat(np.arange(6), 5)
    a = sample_episode(labels, range(6), 4, 2, np.random.default_rng(9))
    b = sample_episode(labels, range(6), 4, 2, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_stream_rngs_independent():
    init, episode = stream_rngs(0)
    assert init.random() != episode.random()


def test_train_log_is_ordered():
    log = TrainLog()
    log.append(EpochRecord(0, "kernels_only", 1.0, 1.0, 0.0, 0.1))
    with pytest.raises(ValueError):
        log.append(EpochRecord(0, "kernels_only", 1.0, 1.0, 0.0, 0.1))


def test_adapter_frozen_in_first_stage(tiny_data):
    ds, tr = tiny_data
    cfg = tiny_config(n_pre=3, epochs_total=3)
    start = init_parameters(cfg.model_cfg, stream_rngs(0)[0])
    params, _ = train(tr.features, tr.labels, ds.semantics, ds.seen, cfg)
    np.testing.assert_array_equal(params.adapter_w, start.adapter_w)
    np.testing.assert_array_equal(params.adapter_b, start.adapter_b)
    assert not np.array_equal(params.wa, start.wa)


def test_adapter_moves_in_second_stage(tiny_data):
    ds, tr = tiny_data
    cfg = tiny_config(n_pre=1, epochs_total=2)
    start = init_parameters(cfg.model_cfg, stream_rngs(0)[0])
    params, log = train(tr.features, tr.labels, ds.semantics, ds.seen, cfg)
    assert not np.array_equal(params.adapter_w, start.adapter_w)
    assert [r.stage for r in log] == ["kernels_only", "end_to_end"]


def test_training_is_deterministic(tiny_data):
    ds, tr = tiny_data
    a, la = train(tr.features, tr.labels, ds.semantics, ds.seen, tiny_config())
    b, lb = train(tr.features, tr.labels, ds.semantics, ds.seen, tiny_config())
    assert a.equals(b)
    assert la.losses == lb.losses


def test_non_finite_loss_reports_position(tiny_data):
    ds, tr = tiny_data
    x = tr.features.copy()
    x[:] = np.nan
    with pytest.raises(NumericalError, match="epoch 0, batch 0"):
        train(x, tr.labels, ds.semantics, ds.seen, tiny_config())


def test_callback_receives_each_epoch(tiny_data):
    ds, tr = tiny_data
    seen = []
    train(tr.features, tr.labels, ds.semantics, ds.seen, tiny_config(), callback=seen.append)
    assert [r.epoch for r in seen] == [0, 1, 2]
    assert set(seen[0].to_dict()) >= {"epoch", "stage", "loss", "ce", "mse"}


def test_loss_decreases_on_planted_data(tiny_data):
    ds, tr = tiny_data
    cfg = tiny_config(epochs_total=8, batches_per_epoch=20, learning_rate=0.01)
    _, log = train(tr.features, tr.labels, ds.semantics, ds.seen, cfg)
    assert log.losses[-1] < log.losses[0]
