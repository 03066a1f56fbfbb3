#!/usr/bin/env python3
"""
Tests for Adam, early stopping, the training loop and the finite-difference oracle
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from app.core.errors import ConfigError, DomainError
from app.servies.dataset_service import quadrants_generate
from app.servies.head_service import head_loss
from app.servies.network_service import ArchSpec, init_network
from app.servies.training_service import (
    Adam,
    EarlyStopping,
    TrainConfig,
    finite_difference_gradient,
    gradient_check,
    make_train_config,
    train,
    validation_partition,
)


def small_net(head="condor", seed=0, hidden=(6,)):
    return init_network(ArchSpec(input_dim=2, hidden=list(hidden), head=head, num_ranks=4), seed)


def test_train_config_defaults():
    config = TrainConfig()
    assert (config.max_epochs, config.patience, config.validation_split) == (100, 10, 0.2)
    assert (config.lr, config.beta1, config.beta2, config.eps) == (0.001, 0.9, 0.999, 1e-8)
    assert config.batch_size == 32


@pytest.mark.parametrize("overrides", [
    {"patience": 0},
    {"patience": 20, "max_epochs": 10},
    {"validation_split": 0.0},
    {"validation_split": 1.0},
    {"lr": -1.0},
])
def test_invalid_train_config(overrides):
    with pytest.raises(ConfigError):
        make_train_config(**overrides)


def test_adam_zero_gradient_is_a_no_op():
    params = {"w": np.array([1.0, -2.0]), "b": np.array([0.5])}
    before = {k: v.copy() for k, v in params.items()}
    Adam(params).step(params, {k: np.zeros_like(v) for k, v in params.items()})
    for name in params:
        np.testing.assert_array_equal(params[name], before[name])


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, 1.0])}
    optimizer = Adam(params, lr=0.1)
    optimizer.step(params, {"w": np.array([2.0, -3.0])})
    np.testing.assert_allclose(params["w"], [0.9, 1.1], atol=1e-6)
    assert optimizer.state.step == 1


def test_early_stopping_rule():
    net = small_net()
    stopper = EarlyStopping(patience=2)
    assert not stopper(1, 1.0, net)
    assert not stopper(2, 0.5, net)
    assert not stopper(3, 0.5, net)
    assert stopper(4, 0.7, net)
    assert stopper.best_epoch == 2
    assert stopper.best_loss == 0.5


def test_finite_differences_of_square():
    assert finite_difference_gradient(lambda t: float(t) ** 2, 3.0, 1e-4) == pytest.approx(6.0, abs=1e-7)


def test_finite_differences_of_linear_function():
    grad = finite_difference_gradient(lambda t: 2.0 * t[0] - 3.0 * t[1] + 1.0, np.array([0.3, -0.7]))
    np.testing.assert_allclose(grad, [2.0, -3.0], atol=1e-9)
    with pytest.raises(DomainError):
        finite_difference_gradient(lambda t: 0.0, np.zeros(2), step=0.0)


def test_finite_differences_restore_parameters():
    params = {"a": np.array([1.0, 2.0]), "b": np.array([[3.0]])}
    grad = finite_difference_gradient(lambda p: float(np.sum(p["a"] ** 2) + p["b"][0, 0]), params)
    np.testing.assert_allclose(grad["a"], [2.0, 4.0], atol=1e-7)
    np.testing.assert_allclose(grad["b"], [[1.0]], atol=1e-7)
    np.testing.assert_array_equal(params["a"], [1.0, 2.0])


def test_ml_loss_gradient_through_two_layers():
    rng = np.random.default_rng(0)
    net = small_net(hidden=(5, 4), seed=2)
    x = rng.normal(size=(6, 2))
    net.forward(x)
    while net.min_preactivation_margin() < 1e-3:
        x = rng.normal(size=(6, 2))
        net.forward(x)
    assert gradient_check(net, x, rng.integers(1, 5, size=6)) <= 1e-5


def test_validation_partition_takes_last_fraction():
    train_idx, val_idx = validation_partition(100, 0.2, np.random.default_rng(0))
    order = np.random.default_rng(0).permutation(100)
    np.testing.assert_array_equal(val_idx, order[80:])
    np.testing.assert_array_equal(train_idx, order[:80])
    with pytest.raises(ConfigError):
        validation_partition(4, 0.1, np.random.default_rng(0))


def test_zero_learning_rate_stops_after_patience_plus_one():
    ds = quadrants_generate(200, seed=0)
    model = train(small_net(), ds, TrainConfig(lr=0.0, patience=3, max_epochs=50))
    assert model.history.epochs == 4
    assert model.history.stopped_early
    assert model.history.best_epoch == 1


def test_training_restores_best_validation_parameters():
    ds = quadrants_generate(300, seed=1)
    config = TrainConfig(max_epochs=15, patience=3, seed=5)
    model = train(small_net(seed=1), ds, config)
    history = model.history
    assert len(history.val_loss) == history.epochs == len(history.train_loss)
    assert history.best_val_loss == min(history.val_loss)

    _, val_idx = validation_partition(ds.size, config.validation_split, np.random.default_rng(config.seed))
    val_loss, _ = head_loss("condor", model.logits(ds.features[val_idx]), ds.ranks[val_idx], 4)
    assert val_loss == history.best_val_loss


def test_training_is_deterministic():
    ds = quadrants_generate(200, seed=2)
    config = TrainConfig(max_epochs=5, patience=2, seed=3)
    a = train(small_net(seed=3), ds, config)
    b = train(small_net(seed=3), ds, config)
    assert a.history.val_loss == b.history.val_loss
    for name, value in a.net.parameters().items():
        np.testing.assert_array_equal(value, b.net.parameters()[name])


def test_training_reduces_loss():
    ds = quadrants_generate(400, seed=3)
    model = train(small_net(seed=0, hidden=(10, 10)), ds, TrainConfig(max_epochs=30, patience=30, lr=0.01))
    assert model.history.best_val_loss < model.history.val_loss[0]
    assert model.predict(ds.features).shape == (400,)


def test_training_preconditions():
    ds = quadrants_generate(50, seed=0)
    with pytest.raises(ConfigError):
        train(init_network(ArchSpec(input_dim=2, hidden=[], head="condor", num_ranks=5), 0), ds)
    with pytest.raises(ConfigError):
        train(small_net(), ds, loss="coral")
    model = train(small_net(), ds, TrainConfig(max_epochs=2, patience=1), loss="condor-wbce")
    assert model.head.value == "condor-wbce"
