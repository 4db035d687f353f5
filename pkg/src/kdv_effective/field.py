"""Zero-mean real fields on the circle in the normalized trigonometric basis.

A field is stored as an array of shape ``(..., S, 2)`` where ``[..., j-1, 0]``
holds the coefficient of ``cos(j x) / sqrt(pi)`` and ``[..., j-1, 1]`` the
coefficient of ``sin(j x) / sqrt(pi)``.  There is no constant mode, so the
mean value vanishes by construction.  Leading axes are batch axes (paths,
quadrature nodes, ...).

Grid transforms use ``numpy.fft.rfft`` on ``n`` equispaced nodes
``x_i = 2 pi i / n``.  With ``c_s = (a_s - i b_s) / (2 sqrt(pi))`` the field is
``sum_s c_s e^{isx} + c.c.`` and the rfft bin ``s`` equals ``n c_s``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SQRT_PI = np.sqrt(np.pi)


class TruncationError(ValueError):
    """Grid too coarse to represent the requested modes."""


@dataclass(frozen=True)
class FourierField:
    """Truncated field ``sum_{0<|s|<=S} u_s e_s``; ``pairs[j-1] = (u_j, u_{-j})``."""

    pairs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pairs, dtype=float)
        if arr.ndim < 2 or arr.shape[-1] != 2:
            raise ValueError(f"pairs must have shape (..., S, 2), got {arr.shape}")
        object.__setattr__(self, "pairs", arr)

    @property
    def S(self) -> int:
        return self.pairs.shape[-2]

    @classmethod
    def zeros(cls, S: int) -> "FourierField":
        return cls(np.zeros((S, 2)))

    @classmethod
    def from_modes(cls, S: int, modes: dict[int, float]) -> "FourierField":
        """Build from ``{s: u_s}`` with signed mode indices."""
        pairs = np.zeros((S, 2))
        for s, val in modes.items():
            if s == 0 or abs(s) > S:
                raise ValueError(f"mode {s} outside 0 < |s| <= {S}")
            pairs[abs(s) - 1, 0 if s > 0 else 1] = val
        return cls(pairs)

    def coeff(self, s: int) -> float:
        return float(self.pairs[abs(s) - 1, 0 if s > 0 else 1])

    def to_json(self) -> dict:
        coeffs = []
        for j in range(1, self.S + 1):
            coeffs.append([j, float(self.pairs[j - 1, 0])])
            coeffs.append([-j, float(self.pairs[j - 1, 1])])
        return {"S": self.S, "coeffs": coeffs}

    @classmethod
    def from_json(cls, obj: dict | str) -> "FourierField":
        if isinstance(obj, str):
            obj = json.loads(obj)
        return cls.from_modes(int(obj["S"]), {int(s): float(v) for s, v in obj["coeffs"]})


def wavenumbers(S: int) -> np.ndarray:
    return np.arange(1, S + 1, dtype=float)


def dealiased_grid_size(S: int) -> int:
    """Smallest even grid with ``n > 3S``: quadratic products are alias-free on |s| <= S."""
    n = 3 * S + 1
    return n + (n % 2)


def to_grid(pairs: np.ndarray, n_points: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=float)
    S = pairs.shape[-2]
    if n_points < 2 * S + 2:
        raise TruncationError(f"n_points={n_points} < 2S+2={2 * S + 2}")
    spec = np.zeros(pairs.shape[:-2] + (n_points // 2 + 1,), dtype=complex)
    spec[..., 1:S + 1] = n_points * (pairs[..., 0] - 1j * pairs[..., 1]) / (2 * SQRT_PI)
    return np.fft.irfft(spec, n=n_points, axis=-1)


def from_grid(values: np.ndarray, S: int) -> np.ndarray:
    """Project grid values onto modes ``1 <= |s| <= S`` (mean is discarded)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if n < 2 * S + 2:
        raise TruncationError(f"grid of {n} points cannot hold S={S}")
    c = np.fft.rfft(values, axis=-1)[..., 1:S + 1] / n
    out = np.empty(values.shape[:-1] + (S, 2))
    out[..., 0] = 2 * SQRT_PI * c.real
    out[..., 1] = -2 * SQRT_PI * c.imag
    return out


def grid_points(n_points: int) -> np.ndarray:
    return 2 * np.pi * np.arange(n_points) / n_points


def derivative(pairs: np.ndarray, order: int = 1) -> np.ndarray:
    """Coefficients of the ``order``-th x-derivative."""
    pairs = np.asarray(pairs, dtype=float)
    s = wavenumbers(pairs.shape[-2])
    out = pairs
    for _ in range(order):
        nxt = np.empty_like(out)
        # d/dx (a cos + b sin) = s b cos - s a sin
        nxt[..., 0] = s * out[..., 1]
        nxt[..., 1] = -s * out[..., 0]
        out = nxt
    return out


def laplacian(pairs: np.ndarray) -> np.ndarray:
    s = wavenumbers(np.shape(pairs)[-2])
    return -(s**2)[:, None] * np.asarray(pairs, dtype=float)


def kdv_nonlinearity(pairs: np.ndarray) -> np.ndarray:
    """``6 u u_x = 3 (u^2)_x`` projected onto the retained modes, alias-free."""
    pairs = np.asarray(pairs, dtype=float)
    S = pairs.shape[-2]
    n = dealiased_grid_size(S)
    u = to_grid(pairs, n)
    return 3.0 * derivative(from_grid(u * u, S))


def sobolev_norm_sq(pairs: np.ndarray, m: int = 0) -> np.ndarray:
    """``||u||_m^2 = sum_s s^{2m} u_s^2``, the squared L2 norm of the m-th derivative."""
    if m < 0:
        raise ValueError("Sobolev order must be non-negative")
    pairs = np.asarray(pairs, dtype=float)
    s = wavenumbers(pairs.shape[-2])
    return np.sum((s ** (2 * m))[:, None] * pairs**2, axis=(-2, -1))


def sobolev_norm(pairs: np.ndarray, m: int = 0) -> np.ndarray:
    return np.sqrt(sobolev_norm_sq(pairs, m))


def inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """L2 inner product; the basis is orthonormal so this is the coefficient dot product."""
    return np.sum(np.asarray(a) * np.asarray(b), axis=(-2, -1))


def random_field(S: int, amplitude: float, rng: np.random.Generator,
                 decay: float = 0.25) -> np.ndarray:
    """Smooth random field with ``|u_s| ~ exp(-decay |s|)`` scaled to ``||u||_0 = amplitude``."""
    weights = np.exp(-decay * wavenumbers(S))[:, None]
    pairs = rng.standard_normal((S, 2)) * weights
    return amplitude * pairs / sobolev_norm(pairs, 0)
