"""Differentiable primitive operations with hand-derived backward passes.

Every op accepts either a single vector (1-D) or a batch of vectors (2-D,
rows are samples) and returns the matching shape. Backward passes are the
exact adjoints of the forwards; the test suite checks them against central
finite differences.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand dimensions are inconsistent."""


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ShapeError(f"expected a vector or batch of vectors, got shape {x.shape}")


def linear_forward(x, W, b) -> np.ndarray:
    """Affine map W @ x + b.

    x: (in,) or (n, in); W: (out, in); b: (out,). Returns (out,) or (n, out).
    """
    xb, squeeze = _as_batch(x)
    W = np.asarray(W)
    b = np.asarray(b)
    if W.ndim != 2:
        raise ShapeError(f"W must be 2-D, got shape {W.shape}")
    if xb.shape[1] != W.shape[1]:
        raise ShapeError(f"x has dim {xb.shape[1]} but W has {W.shape[1]} columns")
    if b.shape != (W.shape[0],):
        raise ShapeError(f"b has shape {b.shape} but W has {W.shape[0]} rows")
    y = xb @ W.T
    y += b
    return y[0] if squeeze else y


def linear_backward(x, W, upstream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of linear_forward: (dW, db, dx).

    dW = upstream ⊗ x (summed over the batch), db = upstream (summed),
    dx = upstream @ W.
    """
    xb, squeeze = _as_batch(x)
    ub, usq = _as_batch(upstream)
    W = np.asarray(W)
    if squeeze != usq or xb.shape[0] != ub.shape[0]:
        raise ShapeError("x and upstream disagree on batch shape")
    if xb.shape[1] != W.shape[1] or ub.shape[1] != W.shape[0]:
        raise ShapeError(
            f"inconsistent shapes: x {xb.shape}, W {W.shape}, upstream {ub.shape}"
        )
    dW = ub.T @ xb
    db = ub.sum(axis=0)
    dx = ub @ W
    return dW, db, dx[0] if squeeze else dx


def sin_act(x, sigma: float) -> np.ndarray:
    """Elementwise sin(sigma * x)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    out = np.multiply(np.asarray(x), sigma)
    np.sin(out, out=out)
    return out


def sin_act_backward(x, sigma: float, upstream) -> np.ndarray:
    """d/dx of sin_act: upstream * sigma * cos(sigma * x)."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise ShapeError(f"x shape {x.shape} != upstream shape {upstream.shape}")
    out = np.multiply(x, sigma)
    np.cos(out, out=out)
    out *= sigma
    out *= upstream
    return out


def leaky_relu(x, slope: float = 0.01) -> np.ndarray:
    """x where x >= 0, slope * x elsewhere."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must be in (0, 1), got {slope}")
    x = np.asarray(x)
    out = np.multiply(x, slope)
    np.maximum(x, out, out=out)
    return out


def leaky_relu_backward(x, slope: float, upstream) -> np.ndarray:
    """Routes upstream by the forward mask; derivative at exactly 0 is 1."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise ShapeError(f"x shape {x.shape} != upstream shape {upstream.shape}")
    out = np.multiply(upstream, slope)
    np.copyto(out, upstream, where=x >= 0)
    return out
