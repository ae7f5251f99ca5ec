"""
Dense tensor math with reverse-mode differentiation.

Forward ops are thin, shape-checked wrappers over torch so that every model
in the package speaks one vocabulary of operations. Gradients come from
torch's autograd tape; `backward` collects them by parameter name and
`adamw_step` applies them.
"""

import logging
import random
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from showcaseflow.core.exceptions import EmptyAxisError, NonFiniteValueError, ShapeMismatchError

logger = logging.getLogger(__name__)

# Additive pre-softmax mask for blocked attention positions.
MASK_VALUE = -1e9


def seed_everything(seed: int, deterministic: bool = True, num_threads: Optional[int] = None) -> None:
    """
    Seed python, numpy and torch RNGs and pin torch to reproducible kernels.

    Args:
        seed: Seed shared by every generator
        deterministic: Force deterministic torch algorithms
        num_threads: Intra-op thread count; fixed reduction order needs 1
    """
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
    if num_threads:
        torch.set_num_threads(num_threads)


def check_finite(tensor: torch.Tensor, op: str) -> torch.Tensor:
    """Raise NonFiniteValueError naming `op` if `tensor` holds NaN or inf."""
    if not torch.isfinite(tensor).all():
        raise NonFiniteValueError(f"non-finite value produced by {op}")
    return tensor


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeMismatchError(f"matmul: inner dims differ, {tuple(a.shape)} @ {tuple(b.shape)}")
    return torch.matmul(a, b)


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError as e:
        raise ShapeMismatchError(f"add: shapes {tuple(a.shape)} and {tuple(b.shape)} do not broadcast") from e
    return a + b


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.relu(x)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    if x.shape[axis] == 0:
        raise EmptyAxisError("softmax over an empty axis")
    return torch.softmax(x, dim=axis)


def log_softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    if x.shape[axis] == 0:
        raise EmptyAxisError("log_softmax over an empty axis")
    return torch.log_softmax(x, dim=axis)


def layer_norm(
    x: torch.Tensor,
    weight: Optional[torch.Tensor] = None,
    bias: Optional[torch.Tensor] = None,
    eps: float = 1e-5,
) -> torch.Tensor:
    """Normalize over the last axis, then scale and shift."""
    if x.shape[-1] == 0:
        raise EmptyAxisError("layer_norm over an empty axis")
    return torch.nn.functional.layer_norm(x, (x.shape[-1],), weight, bias, eps)


def mean_pool(x: torch.Tensor, axis: int, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Mean over `axis`, counting only positions where `mask` is true.

    Sums accumulate in float64 and the result is cast back to `x.dtype`.

    Args:
        x: Input tensor
        axis: Axis to pool over
        mask: Boolean tensor of x's shape without the trailing feature axis,
            or None to pool every position

    Raises:
        EmptyAxisError: If any pooled slice has no valid position
    """
    if x.shape[axis] == 0:
        raise EmptyAxisError("mean_pool over an empty axis")
    if mask is None:
        return x.to(torch.float64).mean(dim=axis).to(x.dtype)

    weights = mask.to(torch.float64)
    while weights.dim() < x.dim():
        weights = weights.unsqueeze(-1)
    counts = weights.sum(dim=axis)
    if (counts == 0).any():
        raise EmptyAxisError("mean_pool over a fully masked axis")
    pooled = (x.to(torch.float64) * weights).sum(dim=axis) / counts
    return pooled.to(x.dtype)


def scaled_dot_attention(
    q: torch.Tensor,
    k: torch.Tensor,
    v: torch.Tensor,
    mask: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    softmax(QK^T / sqrt(d) + M) V with an additive mask.

    Args:
        q: (..., n_q, d) queries
        k: (..., n_k, d) keys
        v: (..., n_k, d_v) values
        mask: Boolean tensor broadcastable to (..., n_q, n_k); False blocks

    Returns:
        Tuple of (output, attention weights)
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatchError(
            f"attention: incompatible q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}"
        )
    scores = torch.matmul(q, k.transpose(-2, -1)) / (q.shape[-1] ** 0.5)
    if mask is not None:
        try:
            torch.broadcast_shapes(mask.shape, scores.shape)
        except RuntimeError as e:
            raise ShapeMismatchError(
                f"attention mask {tuple(mask.shape)} does not broadcast to scores {tuple(scores.shape)}"
            ) from e
        scores = scores + (~mask.bool()).to(scores.dtype) * MASK_VALUE
    weights = softmax(scores, axis=-1)
    return torch.matmul(weights, v), weights


def causal_mask(length: int, device: Optional[torch.device] = None) -> torch.Tensor:
    """Lower-triangular boolean mask; position t sees positions <= t."""
    return torch.tril(torch.ones(length, length, dtype=torch.bool, device=device))


def embedding_lookup(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeMismatchError(f"token id out of range for a table of {table.shape[0]} rows")
    return torch.nn.functional.embedding(ids, table)


def log(x: torch.Tensor) -> torch.Tensor:
    return check_finite(torch.log(x), "log")


def exp(x: torch.Tensor) -> torch.Tensor:
    return check_finite(torch.exp(x), "exp")


def concat(tensors: Sequence[torch.Tensor], axis: int = 0) -> torch.Tensor:
    if not tensors:
        raise EmptyAxisError("concat of an empty tensor list")
    try:
        return torch.cat(list(tensors), dim=axis)
    except RuntimeError as e:
        raise ShapeMismatchError(f"concat: {e}") from e


def backward(
    loss: torch.Tensor,
    parameters: Mapping[str, torch.Tensor],
    retain_graph: bool = False,
) -> Dict[str, torch.Tensor]:
    """
    Gradients of a scalar loss for every named parameter.

    Parameters not on the path to the loss get all-zero gradients.

    Raises:
        ShapeMismatchError: If the loss is not a scalar
        NonFiniteValueError: If any gradient is non-finite
    """
    if loss.numel() != 1:
        raise ShapeMismatchError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    names = list(parameters)
    tensors = [parameters[name] for name in names]
    grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True, retain_graph=retain_graph)

    origin = type(loss.grad_fn).__name__ if loss.grad_fn is not None else "leaf"
    result: Dict[str, torch.Tensor] = {}
    for name, tensor, grad in zip(names, tensors, grads):
        if grad is None:
            grad = torch.zeros_like(tensor)
        if not torch.isfinite(grad).all():
            raise NonFiniteValueError(f"non-finite gradient for {name} (loss produced by {origin})")
        result[name] = grad
    return result


def make_adamw(
    parameters: Iterable[torch.Tensor],
    lr: float,
    weight_decay: float = 0.01,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> torch.optim.AdamW:
    """AdamW optimizer with zero-initialized moment state."""
    return torch.optim.AdamW(list(parameters), lr=lr, weight_decay=weight_decay, betas=betas, eps=eps)


def adamw_step(
    optimizer: torch.optim.Optimizer,
    parameters: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor],
) -> None:
    """
    Apply one optimizer update from a name -> gradient mapping.

    Raises:
        NonFiniteValueError: If a gradient is non-finite
    """
    for name, param in parameters.items():
        grad = grads.get(name)
        if grad is None:
            param.grad = None
            continue
        if not torch.isfinite(grad).all():
            raise NonFiniteValueError(f"non-finite gradient for {name}")
        param.grad = grad.detach().clone()
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)
