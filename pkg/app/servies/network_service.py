"""
Network Service
Minimal dense network engine: dense/ReLU layers, the CONDOR / CORAL /
categorical output layers, reverse-mode gradients, seeded Glorot init and
checkpoint files
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from app.core.config import settings, validate_config
from app.core.errors import DataFormatError, DomainError, NumericError
from app.servies.head_service import HeadKind, get_head, parse_head

logger = logging.getLogger("condor-ordinal.network")

CHECKPOINT_FORMAT_VERSION = 1
META_KEY = "__meta__"

Params = Dict[str, np.ndarray]


class ArchSpec(BaseModel):
    """Layer chain input -> hidden dense layers -> head"""
    input_dim: int = Field(ge=1)
    hidden: List[int] = Field(default_factory=list)
    activation: Literal["relu", "linear"] = "relu"
    head: HeadKind
    num_ranks: int = Field(ge=2)

    @field_validator("hidden")
    @classmethod
    def _positive_widths(cls, widths: List[int]) -> List[int]:
        if any(width < 1 for width in widths):
            raise ValueError(f"hidden layer widths must be >= 1, got {widths}")
        return widths

    @field_validator("head", mode="before")
    @classmethod
    def _known_head(cls, value: Any) -> HeadKind:
        return parse_head(value)

    @property
    def output_width(self) -> int:
        return get_head(self.head).output_width(self.num_ranks)


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _activation_grad(pre: np.ndarray, grad: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        # subgradient 0 at exactly 0
        return grad * (pre > 0.0)
    return grad


class DenseLayer:
    """y = act(x W + b)"""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, activation: str = "linear"):
        self.weight = weight
        self.bias = bias
        self.activation = activation
        self._input: Optional[np.ndarray] = None
        self._pre: Optional[np.ndarray] = None
        self.grads: Params = {}

    def params(self) -> Params:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input = x
        self._pre = x @ self.weight + self.bias
        return _activate(self._pre, self.activation)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_pre = _activation_grad(self._pre, grad_out, self.activation)
        self.grads = {
            "weight": self._input.T @ grad_pre,
            "bias": grad_pre.sum(axis=0),
        }
        return grad_pre @ self.weight.T

    @property
    def preactivation(self) -> Optional[np.ndarray]:
        return self._pre


class CoralLayer:
    """Shared score a(x) = x w, logits_k = a(x) + b_k"""

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        self.weight = weight
        self.bias = bias
        self._input: Optional[np.ndarray] = None
        self.grads: Params = {}

    def params(self) -> Params:
        return {"weight": self.weight, "bias": self.bias}

    def score(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._input = x
        return self.score(x)[:, None] + self.bias[None, :]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        grad_score = grad_out.sum(axis=1)
        self.grads = {
            "weight": self._input.T @ grad_score,
            "bias": grad_out.sum(axis=0),
        }
        return np.outer(grad_score, self.weight)


Layer = Union[DenseLayer, CoralLayer]


class Network:
    """Dense upstream layers followed by one head layer producing logits"""

    def __init__(self, arch: ArchSpec, layers: List[Layer]):
        self.arch = arch
        self.layers = layers

    @property
    def head(self) -> HeadKind:
        return self.arch.head

    @property
    def num_ranks(self) -> int:
        return self.arch.num_ranks

    def _named_layers(self) -> List[Tuple[str, Layer]]:
        names = [f"layer{i}" for i in range(len(self.layers) - 1)] + ["head"]
        return list(zip(names, self.layers))

    def parameters(self) -> Params:
        """Live references to every trainable array, keyed 'layer0.weight', ..., 'head.bias'"""
        return {
            f"{name}.{key}": value
            for name, layer in self._named_layers()
            for key, value in layer.params().items()
        }

    def gradients(self) -> Params:
        return {
            f"{name}.{key}": value
            for name, layer in self._named_layers()
            for key, value in layer.grads.items()
        }

    def get_state(self) -> Params:
        return {name: value.copy() for name, value in self.parameters().items()}

    def set_state(self, state: Params) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise DomainError(f"State is missing parameters: {sorted(missing)}")
        for name, value in params.items():
            if state[name].shape != value.shape:
                raise DomainError(f"Shape mismatch for {name}: {state[name].shape} vs {value.shape}")
            value[...] = state[name]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Head logits for a (N, input_dim) batch"""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.arch.input_dim:
            raise DomainError(f"Expected features of shape (N, {self.arch.input_dim}), got {x.shape}")
        out = x
        for index, layer in enumerate(self.layers):
            out = layer.forward(out)
            if not np.all(np.isfinite(out)):
                raise NumericError("Non-finite activations", layer_index=index)
        return out

    def backward(self, grad_logits: np.ndarray) -> Params:
        """Back-propagate d loss / d logits; returns gradients keyed like parameters()"""
        grad = np.asarray(grad_logits, dtype=np.float64)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return self.gradients()

    def min_preactivation_margin(self) -> float:
        """Smallest |pre-activation| of the ReLU layers in the last forward pass"""
        margins = [
            float(np.min(np.abs(layer.preactivation)))
            for layer in self.layers
            if isinstance(layer, DenseLayer) and layer.activation == "relu" and layer.preactivation is not None
        ]
        return min(margins) if margins else float("inf")

    def num_parameters(self) -> int:
        return int(sum(value.size for value in self.parameters().values()))


def _glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape: Tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_network(arch: ArchSpec, rng: np.random.Generator) -> Network:
    layers: List[Layer] = []
    width = arch.input_dim
    for units in arch.hidden:
        layers.append(DenseLayer(
            _glorot_uniform(rng, width, units, (width, units)),
            np.zeros(units),
            arch.activation,
        ))
        width = units

    head = get_head(arch.head)
    out = arch.output_width
    if head.layer == "coral":
        layers.append(CoralLayer(_glorot_uniform(rng, width, 1, (width,)), np.zeros(out)))
    else:
        layers.append(DenseLayer(_glorot_uniform(rng, width, out, (width, out)), np.zeros(out)))
    return Network(arch, layers)


def init_network(arch: Union[ArchSpec, Dict[str, Any]], seed: int) -> Network:
    """Deterministic Glorot-uniform weights and zero biases for a given seed"""
    if not isinstance(arch, ArchSpec):
        arch = validate_config(ArchSpec, arch)
    net = build_network(arch, np.random.default_rng(seed))
    logger.debug("Initialized %s network %s with %d parameters (seed=%d)",
                 arch.head.value, [arch.input_dim, *arch.hidden, arch.output_width],
                 net.num_parameters(), seed)
    return net


def save_checkpoint(net: Network, path: Union[str, Path], config_hash: str = "") -> Path:
    """
    Write a checkpoint archive

    Layout: a NumPy .npz with one array per parameter name and a JSON string
    under '__meta__' holding format_version, arch, config_hash and
    service_version.
    """
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "arch": net.arch.model_dump(mode="json"),
        "config_hash": config_hash,
        "service_version": settings.SERVICE_VERSION,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, **net.parameters(), **{META_KEY: np.array(json.dumps(meta, sort_keys=True))})
    except OSError as e:
        raise OSError(f"Failed to write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint saved: {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Network, Dict[str, Any]]:
    """Rebuild a Network from save_checkpoint output; returns (network, meta)"""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if META_KEY not in archive.files:
            raise DataFormatError("Checkpoint has no metadata entry", path=path)
        meta = json.loads(str(archive[META_KEY]))
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise DataFormatError(f"Unsupported checkpoint format {meta.get('format_version')}", path=path)
        state = {name: archive[name] for name in archive.files if name != META_KEY}

    arch = validate_config(ArchSpec, meta["arch"])
    net = build_network(arch, np.random.default_rng(0))
    try:
        net.set_state(state)
    except DomainError as e:
        raise DataFormatError(f"Checkpoint does not match its architecture: {e}", path=path) from e
    return net, meta
