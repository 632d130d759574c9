"""Parameter storage, Adam and EMA shadows."""

import hashlib
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional

import numpy as np

from src.numerics.tensor import Tensor
from src.utils.error_handler import ShapeError
from src.utils.logger import logger


@dataclass
class AdamState:
    """First/second moment estimates and step count of one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParamStore:
    """Named parameter tensors with optimiser state and optional EMA shadows."""

    def __init__(self, dtype: type = np.float64, seed: int = 0) -> None:
        """Initialize an empty store.

        Args:
            dtype: Float type of every parameter
            seed: Base seed mixed into per-layer initialisation streams
        """
        self.dtype = dtype
        self.seed = seed
        self.params: Dict[str, Tensor] = {}
        self.trainable: Dict[str, bool] = {}
        self.adam: Dict[str, AdamState] = {}
        self.shadows: Dict[str, np.ndarray] = {}
        self.global_step = 0
        self.frozen = False

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        """Register a parameter (or return the existing one with the same name).

        Args:
            name: Fully qualified parameter name
            value: Initial value
            trainable: Whether Adam updates it

        Returns:
            Parameter tensor
        """
        if name in self.params:
            existing = self.params[name]
            if existing.shape != np.shape(value):
                raise ShapeError(f"parameter {name} re-registered with shape {np.shape(value)}")
            return existing
        tensor = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=trainable and not self.frozen)
        self.params[name] = tensor
        self.trainable[name] = trainable
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: object) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self, prefix: str = "") -> List[str]:
        return [name for name in self.params if name.startswith(prefix)]

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def grads(self) -> Dict[str, np.ndarray]:
        """Collect gradients of trainable parameters (zeros where none were reached)."""
        return {
            name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            for name, tensor in self.params.items()
            if self.trainable[name]
        }

    def freeze(self) -> None:
        """Stop recording gradients for every parameter."""
        self.frozen = True
        for tensor in self.params.values():
            tensor.requires_grad = False
            tensor.grad = None

    def checksum(self, prefix: str = "") -> str:
        """SHA-256 over names and raw bytes of parameters under ``prefix``."""
        digest = hashlib.sha256()
        for name in sorted(self.names(prefix)):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return digest.hexdigest()

    def set_value(self, name: str, value: np.ndarray) -> None:
        tensor = self.params[name]
        if tensor.shape != np.shape(value):
            raise ShapeError(f"parameter {name}: expected {tensor.shape}, got {np.shape(value)}")
        tensor.data = np.asarray(value, dtype=self.dtype).copy()

    def copy_from(self, other: "ParamStore", source_prefix: str, target_prefix: str) -> int:
        """Copy values whose names share a suffix under two prefixes.

        Returns:
            Number of parameters copied
        """
        copied = 0
        for name in other.names(source_prefix):
            target = target_prefix + name[len(source_prefix):]
            if target in self.params:
                self.set_value(target, other[name].data)
                copied += 1
        return copied

    def init_shadows(self) -> None:
        """Start EMA shadows as copies of the current parameters."""
        self.shadows = {
            name: tensor.data.copy() for name, tensor in self.params.items() if self.trainable[name]
        }

    @contextmanager
    def shadows_applied(self) -> Iterator[None]:
        """Temporarily evaluate with EMA shadows in place of the parameters."""
        if not self.shadows:
            yield
            return
        backup = {name: self.params[name].data for name in self.shadows}
        for name, shadow in self.shadows.items():
            self.params[name].data = shadow
        try:
            yield
        finally:
            for name, data in backup.items():
                self.params[name].data = data


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """Apply one bias-corrected Adam update.

    Args:
        store: Parameters to update in place
        grads: Gradient per parameter name
        lr: Learning rate
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator stabiliser

    Returns:
        The updated store

    Raises:
        ShapeError: If a gradient shape differs from its parameter
    """
    for name, grad in grads.items():
        param = store.params[name]
        if np.shape(grad) != param.shape:
            raise ShapeError(f"gradient for {name} has shape {np.shape(grad)}, expected {param.shape}")
        state = store.adam.get(name)
        if state is None:
            state = AdamState(m=np.zeros_like(param.data), v=np.zeros_like(param.data))
            store.adam[name] = state
        state.step += 1
        state.m = beta1 * state.m + (1 - beta1) * grad
        state.v = beta2 * state.v + (1 - beta2) * grad * grad
        m_hat = state.m / (1 - beta1**state.step)
        v_hat = state.v / (1 - beta2**state.step)
        param.data = (param.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(store.dtype, copy=False)
    return store


def ema_update(
    store: ParamStore, decay: float, every_k: int, global_step: int
) -> ParamStore:
    """Blend parameters into their EMA shadows on eligible steps.

    On steps where ``global_step % every_k == 0`` each shadow becomes
    ``decay * shadow + (1 - decay) * param``; other steps leave shadows alone.
    """
    if global_step % every_k:
        return store
    if not store.shadows:
        logger.debug("EMA update requested before shadows were initialised; initialising now")
        store.init_shadows()
        return store
    for name, shadow in store.shadows.items():
        store.shadows[name] = decay * shadow + (1 - decay) * store.params[name].data
    return store


def parameter_count(store: ParamStore, prefix: Optional[str] = None) -> int:
    names = store.names(prefix) if prefix else list(store.params)
    return int(sum(store[name].data.size for name in names))
