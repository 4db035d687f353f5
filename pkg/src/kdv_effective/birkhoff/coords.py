"""Action-angle bookkeeping on Birkhoff vectors.

A Birkhoff vector is an array of shape ``(..., N, 2)`` with
``v[..., j-1] = (v_j, v_{-j})``.  Angles follow ``atan2(v_{-j}, v_j)`` so that
``rotate`` by ``theta`` is a counter-clockwise rotation of every pair.
"""
from __future__ import annotations

import numpy as np

TWO_PI = 2 * np.pi


class DomainError(ValueError):
    """Input outside the domain of a coordinate map."""


def actions(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return 0.5 * (v[..., 0] ** 2 + v[..., 1] ** 2)


def wrap_angle(phi: np.ndarray) -> np.ndarray:
    phi = np.mod(phi, TWO_PI)
    # np.mod can round tiny negatives up to exactly 2 pi
    return np.where(phi >= TWO_PI, 0.0, phi)


def angles(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    zero = (v[..., 0] == 0) & (v[..., 1] == 0)
    phi = np.arctan2(v[..., 1], v[..., 0])
    return np.where(zero, 0.0, wrap_angle(phi))


def rotate(v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(np.broadcast_shapes(v.shape, theta.shape + (2,)))
    out[..., 0] = c * v[..., 0] - s * v[..., 1]
    out[..., 1] = s * v[..., 0] + c * v[..., 1]
    return out


def reconstruct(I: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Pairs ``sqrt(2 I_j) (cos theta_j, sin theta_j)``; a right inverse of ``actions``."""
    I = np.asarray(I, dtype=float)
    if np.any(I < 0):
        raise DomainError("actions must be non-negative")
    I, theta = np.broadcast_arrays(I, np.asarray(theta, dtype=float))
    r = np.sqrt(2 * I)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def weighted_norm(v: np.ndarray, r: float = 0.0) -> np.ndarray:
    """``|v|_r = (sum_j j^{1+2r} |b_j|^2)^{1/2}``."""
    v = np.asarray(v, dtype=float)
    j = np.arange(1, v.shape[-2] + 1, dtype=float)
    return np.sqrt(np.sum(j ** (1 + 2 * r) * (v[..., 0] ** 2 + v[..., 1] ** 2), axis=-1))


def action_norm(I: np.ndarray, p: float = 0.0) -> np.ndarray:
    """``|I|_{h^p_I} = 2 sum_j j^{1+2p} |I_j|``."""
    I = np.asarray(I, dtype=float)
    j = np.arange(1, I.shape[-1] + 1, dtype=float)
    return 2 * np.sum(j ** (1 + 2 * p) * np.abs(I), axis=-1)


def flatten(v: np.ndarray) -> np.ndarray:
    """``(..., N, 2) -> (..., 2N)`` with layout ``v_1, v_{-1}, v_2, v_{-2}, ...``."""
    v = np.asarray(v)
    return v.reshape(v.shape[:-2] + (v.shape[-2] * 2,))


def unflatten(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return x.reshape(x.shape[:-1] + (x.shape[-1] // 2, 2))


def rotation_blocks(theta: np.ndarray) -> np.ndarray:
    """Block-diagonal matrix of ``Phi_theta`` in the flattened layout, shape ``(..., 2N, 2N)``."""
    theta = np.asarray(theta, dtype=float)
    N = theta.shape[-1]
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (2, N, 2))
    idx = np.arange(N)
    out[..., idx, 0, idx, 0] = c
    out[..., idx, 0, idx, 1] = -s
    out[..., idx, 1, idx, 0] = s
    out[..., idx, 1, idx, 1] = c
    return out.reshape(theta.shape[:-1] + (2 * N, 2 * N))
