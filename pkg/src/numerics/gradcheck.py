"""Central finite-difference gradient checker."""

from typing import Callable, Dict, Mapping, Optional

import numpy as np

from src.numerics.tensor import Tensor
from src.utils.error_handler import UsageError


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``|a - n| / max(|a|, |n|, 1e-8)`` with Euclidean norms."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def numerical_gradient(
    loss_fn: Callable[[], Tensor],
    tensor: Tensor,
    eps: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Central differences of a scalar loss with respect to one tensor.

    Args:
        loss_fn: Rebuilds the loss from the current tensor values
        tensor: Tensor perturbed in place
        eps: Perturbation size
        max_entries: Only check this many randomly chosen entries (others stay NaN)
        rng: Generator used to pick checked entries

    Returns:
        Array shaped like ``tensor`` holding estimated partial derivatives
    """
    if tensor.dtype != np.float64:
        raise UsageError("finite-difference checks require float64 tensors")
    flat = tensor.data.reshape(-1)
    indices = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        indices = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
    grad = np.full(flat.size, np.nan)
    for index in indices:
        original = flat[index]
        flat[index] = original + eps
        plus = loss_fn().item()
        flat[index] = original - eps
        minus = loss_fn().item()
        flat[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad.reshape(tensor.shape)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    eps: float = 1e-5,
    max_entries: Optional[int] = 64,
    seed: int = 0,
) -> Dict[str, float]:
    """Compare backward gradients with central differences.

    Args:
        loss_fn: Builds a scalar loss from ``tensors``
        tensors: Named float64 tensors with ``requires_grad`` set
        eps: Perturbation size
        max_entries: Entries checked per tensor (None checks all)
        seed: Seed for picking checked entries

    Returns:
        Relative error per tensor name
    """
    for tensor in tensors.values():
        tensor.grad = None
    loss_fn().backward()
    analytic = {
        name: t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        for name, t in tensors.items()
    }
    rng = np.random.default_rng(seed)
    errors: Dict[str, float] = {}
    for name, tensor in tensors.items():
        numeric = numerical_gradient(loss_fn, tensor, eps, max_entries, rng)
        checked = ~np.isnan(numeric)
        errors[name] = relative_error(analytic[name][checked], numeric[checked])
    return errors
