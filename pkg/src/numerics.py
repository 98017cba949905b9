"""
SCKD-Discovery Numerics
Dense matrix helpers, probability transforms, divergences and gradient checks.
Desk-scale Novel Class Discovery
"""

from typing import Callable, Dict, Union

import numpy as np
from scipy.special import rel_entr
from scipy.special import softmax as _scipy_softmax

from .errors import ConfigurationError, ContractError, NumericError

# Probabilities are clamped to this floor before any logarithm.
PROB_FLOOR = 1e-12

ACTIVATIONS = ("tanh", "relu")

Gradients = Dict[str, np.ndarray]
ParamsLike = Union[np.ndarray, Dict[str, np.ndarray]]


def check_finite(values: np.ndarray, name: str = "values") -> np.ndarray:
    """Raise NumericError if any entry is NaN or infinite."""
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{name} contains non-finite entries")
    return values


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """
    Coerce input to a finite 2-D float64 array with at least one row and column.

    Args:
        values: Array-like input (a 1-D input becomes a single row).
        name: Name used in error messages.

    Returns:
        The validated array.
    """
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[np.newaxis, :]
    if matrix.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got {matrix.ndim} dimensions")
    if matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ContractError(f"{name} must have at least one row and column, got {matrix.shape}")
    return check_finite(matrix, name)


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    """
    Temperature softmax over the last axis.

    Args:
        logits: Vector or matrix of logits (rows are independent).
        temperature: Positive softmax temperature.

    Returns:
        Probabilities with the same shape as ``logits``.
    """
    if not temperature > 0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    check_finite(logits, "logits")
    # scipy subtracts the row max before exponentiating
    return _scipy_softmax(logits / temperature, axis=-1)


def kl_divergence(target, prediction) -> Union[float, np.ndarray]:
    """
    KL(target || prediction) with the prediction clamped to PROB_FLOOR.

    Vectors give a scalar; matrices give one divergence per row.
    """
    target = np.asarray(target, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if target.shape != prediction.shape:
        raise ContractError(f"shape mismatch: target {target.shape} vs prediction {prediction.shape}")
    for name, dist in (("target", target), ("prediction", prediction)):
        check_finite(dist, name)
        if np.any(np.abs(dist.sum(axis=-1) - 1.0) > 1e-6):
            raise ContractError(f"{name} rows must sum to 1")

    per_row = rel_entr(target, np.maximum(prediction, PROB_FLOOR)).sum(axis=-1)
    # rel_entr is exact at 0 but rounding can leave tiny negatives
    per_row = np.maximum(per_row, 0.0)
    if per_row.ndim == 0:
        return float(per_row)
    return per_row


def cosine_similarity(u, v) -> float:
    """Cosine of the angle between two vectors; a zero vector gives 0."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ContractError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(cosine_matrix(u[np.newaxis, :], v[np.newaxis, :])[0, 0])


def cosine_matrix(a, b) -> np.ndarray:
    """
    Pairwise cosine similarities between the rows of ``a`` (n×k) and ``b`` (m×k).

    Rows with zero norm produce zero similarity.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ContractError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return np.clip(unit_rows(a) @ unit_rows(b).T, -1.0, 1.0)


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale every row to unit norm, leaving zero rows at zero."""
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return matrix / safe


def unit_rows_backward(matrix: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """
    Pull a gradient w.r.t. ``unit_rows(matrix)`` back to ``matrix``.

    For y = x / |x| the Jacobian-vector product is (g - y (y·g)) / |x|;
    zero rows receive zero gradient.
    """
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    unit = matrix / safe
    projected = grad - unit * np.sum(unit * grad, axis=1, keepdims=True)
    return np.where(norms > 0, projected / safe, 0.0)


def activate(pre: np.ndarray, kind: str) -> np.ndarray:
    """Apply the named nonlinearity elementwise."""
    if kind == "tanh":
        return np.tanh(pre)
    if kind == "relu":
        return np.maximum(pre, 0.0)
    raise ConfigurationError(f"unknown activation '{kind}', expected one of {ACTIVATIONS}")


def activate_grad(pre: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the named nonlinearity at the pre-activation values."""
    if kind == "tanh":
        return 1.0 - np.tanh(pre) ** 2
    if kind == "relu":
        return (pre > 0).astype(np.float64)
    raise ConfigurationError(f"unknown activation '{kind}', expected one of {ACTIVATIONS}")


def finite_difference_gradient(
    loss_fn: Callable[[ParamsLike], float],
    params: ParamsLike,
    h: float = 1e-5
) -> ParamsLike:
    """
    Central-difference gradient estimate.

    Args:
        loss_fn: Deterministic scalar function of ``params``.
        params: A single array or a dict of named arrays.
        h: Step size.

    Returns:
        Gradient estimate with the same structure as ``params``.
    """
    if not h > 0:
        raise ConfigurationError(f"step h must be positive, got {h}")

    if isinstance(params, dict):
        work = {name: np.array(block, dtype=np.float64) for name, block in params.items()}
        return {
            name: _central_differences(lambda: loss_fn(work), work[name], h)
            for name in work
        }

    work = np.array(params, dtype=np.float64)
    return _central_differences(lambda: loss_fn(work), work, h)


def _central_differences(evaluate: Callable[[], float], block: np.ndarray, h: float) -> np.ndarray:
    """Perturb ``block`` in place one entry at a time."""
    grad = np.zeros_like(block)
    flat = block.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = float(evaluate())
        flat[i] = original - h
        lower = float(evaluate())
        flat[i] = original
        out[i] = (upper - lower) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, threshold: float = 1e-6) -> float:
    """
    Largest elementwise relative error over entries whose magnitude exceeds ``threshold``.

    Entries below the threshold in both arrays are compared absolutely.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ContractError(f"shape mismatch: {analytic.shape} vs {numeric.shape}")
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    big = scale > threshold
    worst = 0.0
    if np.any(big):
        worst = float(np.max(np.abs(analytic[big] - numeric[big]) / scale[big]))
    if np.any(~big):
        worst = max(worst, float(np.max(np.abs(analytic[~big] - numeric[~big]))))
    return worst
