import numpy as np
import pytest

from dropkan.autograd import LossKind
from dropkan.data import DatasetSplits, split, toy_blobs
from dropkan.layers import DropMode, KanLayer, KanNetwork, build_network, drop_configs
from dropkan.splines import EdgeGrid
from dropkan.train import (
    AdamConfig, AdamState, MetricLog, MetricRecord, NonFiniteError, TrainConfig, adam_step, epoch_batches,
    evaluate, train,
)


@pytest.fixture(scope="module")
def blobs():
    return split(toy_blobs(200, seed=0), seed=0)


def test_adam_zero_gradient_leaves_parameters():
    p = np.array([0.3, -1.2])
    state = AdamState.zeros_like([p])
    adam_step([p], [np.zeros(2)], state, 0.01)
    np.testing.assert_array_equal(p, [0.3, -1.2])
    assert state.t == 1


def test_adam_moves_against_constant_gradient():
    p = np.array([0.0, 0.0])
    g = np.array([2.5, -0.1])
    state = AdamState.zeros_like([p])
    for _ in range(50):
        adam_step([p], [g], state, 0.01)
    assert p[0] < 0 < p[1]
    assert state.t == 50


def test_adam_first_step_by_hand():
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    p = np.array([1.0])
    adam_step([p], [np.array([1.0])], AdamState.zeros_like([p]), 0.01, AdamConfig(0.9, 0.999, 1e-8))
    expected = 1.0 - 0.01 / (1.0 + 1e-8)
    assert p[0] == pytest.approx(expected, rel=1e-12, abs=0)
    assert 1.0 - p[0] == pytest.approx(0.01, rel=1e-7)


def test_adam_rejects_non_finite_gradient():
    p = np.array([1.0, 2.0])
    state = AdamState.zeros_like([p])
    with pytest.raises(NonFiniteError) as info:
        adam_step([p], [np.array([np.nan, 0.0])], state, 0.01)
    assert info.value.step == 1
    assert state.t == 0
    np.testing.assert_array_equal(p, [1.0, 2.0])


def test_adam_rejects_misaligned_inputs():
    p = np.zeros(2)
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(3)], AdamState.zeros_like([p]), 0.01)
    with pytest.raises(ValueError):
        adam_step([p, p], [np.zeros(2)], AdamState.zeros_like([p]), 0.01)


@pytest.mark.parametrize("kwargs", [{"steps": 0}, {"batch_size": 0}, {"learning_rate": 0.0}, {"eval_every": 0}])
def test_train_config_validation(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_single_step_does_one_update(blobs):
    net = build_network([2, 3, 2], np.random.default_rng(0))
    before = [p.copy() for p in net.params()]
    calls = []
    train(net, blobs, TrainConfig(steps=1), on_step=lambda step, _: calls.append(step))
    assert calls == [1]
    assert any(not np.array_equal(a, b) for a, b in zip(before, net.params()))


def test_training_is_deterministic(blobs):
    logs, weights = [], []
    for _ in range(2):
        net = build_network([2, 3, 2], np.random.default_rng(5),
                            drops=drop_configs(DropMode.DROPKAN_PA, True, 0.3, 2))
        net, metrics = train(net, blobs, TrainConfig(steps=40, eval_every=10, seed=9))
        logs.append(metrics)
        weights.append(net.params())
    assert logs[0] == logs[1]
    assert logs[0].to_jsonl() == logs[1].to_jsonl()
    for a, b in zip(*weights):
        np.testing.assert_array_equal(a, b)


def test_different_seeds_differ(blobs):
    out = []
    for seed in (1, 2):
        net = build_network([2, 3, 2], np.random.default_rng(5))
        out.append(train(net, blobs, TrainConfig(steps=20, seed=seed))[0].params()[2].copy())
    assert not np.array_equal(*out)


def test_blobs_are_learned(blobs):
    net = build_network([2, 4, 2], np.random.default_rng(0))
    _, metrics = train(net, blobs, TrainConfig(steps=300, seed=0))
    assert metrics.for_split("test")[-1].accuracy >= 0.95


def test_metric_cadence(blobs):
    net = build_network([2, 2], np.random.default_rng(0))
    _, metrics = train(net, blobs, TrainConfig(steps=25, eval_every=10))
    assert [r.step for r in metrics.for_split("valid")] == [10, 20, 25]
    assert [r.step for r in metrics.for_split("train")] == [10, 20, 25]
    assert [r.step for r in metrics.for_split("test")] == [25]


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_training_surfaces_non_finite_loss(blobs):
    net = build_network([2, 2], np.random.default_rng(0))
    # opposite huge logits: their gap overflows and the loss becomes inf
    net.layers[0].w_b[0] = 1.7e308
    net.layers[0].w_b[1] = -1.7e308
    with pytest.raises(NonFiniteError) as info:
        train(net, blobs, TrainConfig(steps=5))
    assert info.value.step == 1
    assert str(info.value).count("step 1") == 1


def identity_net(n_classes):
    grid = EdgeGrid()
    w_b = np.eye(n_classes)
    return KanNetwork([KanLayer(grid, w_b, np.zeros_like(w_b), np.zeros((n_classes, n_classes, grid.n_basis)))])


def test_evaluate_perfect_predictions():
    # silu is increasing, so the largest input stays the largest output
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 3, 20)
    x = rng.uniform(0, 0.5, size=(20, 3))
    x[np.arange(20), labels] = 1.0
    acc, loss = evaluate(identity_net(3), x, labels)
    assert acc == 1.0 and loss > 0


def test_evaluate_single_sample():
    acc, _ = evaluate(identity_net(2), np.array([[0.2, 0.9]]), np.array([0]))
    assert acc in (0.0, 1.0)
    assert acc == 0.0


def test_evaluate_rejects_empty_split():
    with pytest.raises(ValueError):
        evaluate(identity_net(2), np.zeros((0, 2)), np.zeros(0, dtype=int))


def test_mse_training_on_single_output(blobs):
    net = build_network([2, 3, 1], np.random.default_rng(0))
    _, metrics = train(net, blobs, TrainConfig(steps=100, loss=LossKind.MSE))
    assert metrics.for_split("test")[-1].accuracy >= 0.9


def test_metric_log_round_trip():
    log = MetricLog()
    log.add(MetricRecord(10, "valid", 0.5, 0.75, wall_time=1.25))
    log.add(MetricRecord(10, "train", 0.4, 0.8))
    text = log.to_jsonl()
    assert "wall_time" not in text
    assert MetricLog.from_jsonl(text) == log
    assert "wall_time" in log.to_jsonl(include_time=True)
    with pytest.raises(ValueError):
        log.add(MetricRecord(5, "valid", 0.1, 0.9))


def test_epoch_batches_cover_every_row():
    batches = epoch_batches(10, 4, np.random.default_rng(0))
    epoch = [next(batches) for _ in range(3)]
    assert [len(b) for b in epoch] == [4, 4, 2]
    assert sorted(np.concatenate(epoch).tolist()) == list(range(10))
    second = np.concatenate([next(batches) for _ in range(3)])
    assert sorted(second.tolist()) == list(range(10))


def test_train_accepts_loaded_bundle(tmp_path, blobs):
    blobs.save(tmp_path / "b.npz")
    loaded = DatasetSplits.load(tmp_path / "b.npz")
    a = train(build_network([2, 2], np.random.default_rng(0)), blobs, TrainConfig(steps=5))[1]
    b = train(build_network([2, 2], np.random.default_rng(0)), loaded, TrainConfig(steps=5))[1]
    assert a == b
