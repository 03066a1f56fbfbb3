"""
Training Service
Mini-batch Adam training with a held-out validation split, early stopping on
validation loss and a central finite-difference gradient oracle
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.core.config import validate_config
from app.core.errors import ConfigError, DomainError
from app.servies.dataset_service import Dataset
from app.servies.head_service import HeadKind, get_head, head_loss, head_marginals, head_predict
from app.servies.network_service import Network, Params

logger = logging.getLogger("condor-ordinal.training")


class TrainConfig(BaseModel):
    max_epochs: int = Field(default=100, ge=1)
    patience: int = Field(default=10, ge=1)
    validation_split: float = Field(default=0.2, gt=0.0, lt=1.0)
    lr: float = Field(default=0.001, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    batch_size: int = Field(default=32, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _patience_within_epochs(self) -> "TrainConfig":
        if self.patience > self.max_epochs:
            raise ValueError(f"patience ({self.patience}) must not exceed max_epochs ({self.max_epochs})")
        return self


def make_train_config(**overrides: Any) -> TrainConfig:
    """TrainConfig with defaults, raising ConfigError instead of ValidationError"""
    return validate_config(TrainConfig, overrides)


@dataclass
class AdamState:
    """First/second moments mirroring the parameter set, plus the step count"""
    m: Params
    v: Params
    step: int = 0


class Adam:
    def __init__(self, params: Params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
        )

    @classmethod
    def from_config(cls, params: Params, config: TrainConfig) -> "Adam":
        return cls(params, config.lr, config.beta1, config.beta2, config.eps)

    def step(self, params: Params, grads: Params) -> None:
        """Update params in place"""
        self.state.step += 1
        t = self.state.step
        for name, value in params.items():
            grad = grads[name]
            m = self.state.m[name]
            v = self.state.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class EarlyStopping:
    """
    Tracks the best validation loss and the parameters that achieved it

    An epoch improves only when its loss is strictly below the best so far.
    Training stops after `patience` consecutive epochs without improvement.
    """

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best_state: Optional[Params] = None
        self.wait = 0

    def __call__(self, epoch: int, val_loss: float, net: Network) -> bool:
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_state = net.get_state()
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch - 1] if self.best_epoch else float("inf")


@dataclass
class TrainedModel:
    net: Network
    head: HeadKind
    history: TrainHistory

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self.net.forward(features)

    def marginals(self, features: np.ndarray) -> np.ndarray:
        return head_marginals(self.head, self.logits(features))

    def predict(self, features: np.ndarray) -> np.ndarray:
        return head_predict(self.head, self.logits(features))


def _resolve_loss(net: Network, loss: Optional[Union[str, HeadKind]]) -> HeadKind:
    if loss is None:
        return net.head
    definition = get_head(loss)
    current = get_head(net.head)
    if definition.layer != current.layer or definition.output_width(net.num_ranks) != net.arch.output_width:
        raise ConfigError(f"Loss {definition.kind.value!r} does not fit a {net.head.value!r} output layer")
    return definition.kind


def validation_partition(n: int, validation_split: float, rng: np.random.Generator):
    """(train indices, validation indices): the last round(n * split) rows of one shuffle"""
    n_val = int(round(n * validation_split))
    if n_val == 0 or n_val >= n:
        raise ConfigError(f"validation_split={validation_split} leaves an empty split for {n} examples")
    order = rng.permutation(n)
    return order[: n - n_val], order[n - n_val:]


def train(net: Network, dataset: Dataset, config: Optional[TrainConfig] = None,
          loss: Optional[Union[str, HeadKind]] = None,
          weights: Optional[np.ndarray] = None) -> TrainedModel:
    """
    Train a network in place and restore its best-validation parameters

    Args:
        net: freshly initialized network; its head picks the loss unless `loss` is given
        dataset: training data (labels must use the network's K)
        config: TrainConfig, defaults when omitted
        loss: optional head kind whose loss replaces the default one
        weights: importance weights for the WBCE losses

    Returns:
        TrainedModel wrapping the same network object plus its history
    """
    config = config or TrainConfig()
    kind = _resolve_loss(net, loss)
    if dataset.size == 0:
        raise DomainError("Cannot train on an empty dataset")
    if dataset.alphabet.K != net.num_ranks:
        raise ConfigError(f"Dataset has K={dataset.alphabet.K} ranks but the network expects {net.num_ranks}")

    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = validation_partition(dataset.size, config.validation_split, rng)
    x_val, y_val = dataset.features[val_idx], dataset.ranks[val_idx]
    num_ranks = net.num_ranks

    params = net.parameters()
    optimizer = Adam.from_config(params, config)
    stopper = EarlyStopping(config.patience)
    history = TrainHistory()

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(train_idx)
        total = 0.0
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            logits = net.forward(dataset.features[batch])
            batch_loss, grad = head_loss(kind, logits, dataset.ranks[batch], num_ranks, weights)
            optimizer.step(params, net.backward(grad))
            total += batch_loss * batch.size
        history.train_loss.append(total / order.size)

        val_loss, _ = head_loss(kind, net.forward(x_val), y_val, num_ranks, weights)
        history.val_loss.append(float(val_loss))
        logger.debug(f"epoch {epoch}: train_loss={history.train_loss[-1]:.6f} val_loss={val_loss:.6f}")

        if stopper(epoch, float(val_loss), net):
            history.stopped_early = True
            logger.info(f"Early stopping at epoch {epoch}; best val_loss {stopper.best_loss:.6f} at epoch {stopper.best_epoch}")
            break

    net.set_state(stopper.best_state)
    history.best_epoch = stopper.best_epoch
    logger.info(
        f"Trained {kind.value} for {history.epochs} epochs "
        f"(best epoch {history.best_epoch}, val_loss {history.best_val_loss:.6f})"
    )
    return TrainedModel(net=net, head=kind, history=history)


def _central_differences(evaluate: Callable[[], float], values: np.ndarray, step: float) -> np.ndarray:
    grad = np.zeros(values.shape, dtype=np.float64)
    flat = values.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        upper = evaluate()
        flat[i] = original - step
        lower = evaluate()
        flat[i] = original
        grad_flat[i] = (upper - lower) / (2.0 * step)
    return grad


def finite_difference_gradient(f: Callable[[Any], float], theta: Union[float, np.ndarray, Dict[str, np.ndarray]],
                               step: float = 1e-4) -> Union[float, np.ndarray, Dict[str, np.ndarray]]:
    """
    Central differences (f(theta + h) - f(theta - h)) / 2h per coordinate

    `theta` may be a scalar, an array or a dict of arrays. Dict entries are
    perturbed in place (so f may read live network parameters) and restored.
    """
    if not step > 0:
        raise DomainError(f"step must be positive, got {step}")
    if isinstance(theta, dict):
        return {
            name: _central_differences(lambda: float(f(theta)), value, step)
            for name, value in theta.items()
        }
    work = np.array(theta, dtype=np.float64)
    grad = _central_differences(lambda: float(f(work)), work, step)
    return float(grad) if grad.ndim == 0 else grad


def relative_error(analytic: Params, numeric: Params) -> float:
    """Norm-wise ||a - n|| / (||a|| + ||n||) over the whole parameter vector"""
    a = np.concatenate([analytic[name].reshape(-1) for name in sorted(analytic)])
    n = np.concatenate([numeric[name].reshape(-1) for name in sorted(analytic)])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-300))


def gradient_check(net: Network, features: np.ndarray, ranks: np.ndarray,
                   loss: Optional[Union[str, HeadKind]] = None, step: float = 1e-4) -> float:
    """Relative error between backprop and finite differences of the batch-mean loss"""
    kind = _resolve_loss(net, loss)
    num_ranks = net.num_ranks

    def objective(_params: Params) -> float:
        value, _ = head_loss(kind, net.forward(features), ranks, num_ranks)
        return float(value)

    _, grad = head_loss(kind, net.forward(features), ranks, num_ranks)
    analytic = {name: value.copy() for name, value in net.backward(grad).items()}
    numeric = finite_difference_gradient(objective, net.parameters(), step)
    return relative_error(analytic, numeric)
