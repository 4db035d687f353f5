"""KdV actions from the periodic spectrum of the Hill operator ``L = -d^2/dx^2 + u``.

Normalization: the potential is ``u`` itself on ``[0, 2 pi]``; no affine
rescaling is applied.  Periodic eigenfunctions live on ``e^{ikx}``, antiperiodic
ones on ``e^{i(k+1/2)x}``; the unperturbed spectrum is ``(n/2)^2`` and gap ``n``
(edges ``lambda_{2n-1} <= lambda_{2n}`` of the combined ordered spectrum) is
opened at first order by the Fourier mode ``n`` of ``u``.

The action of gap ``n`` is

    I_n = (2/pi) * integral over the gap of arccosh(|Delta(lambda)| / 2) d lambda

with ``Delta`` the Floquet discriminant (trace of the monodromy over one
period).  For a small potential this gives ``I_n = pi gamma_n^2 / (2n)`` with
``gamma_n`` the gap length, and since ``gamma_n = |(u_n, u_{-n})| / sqrt(pi)`` to
first order, ``I_n -> (u_n^2 + u_{-n}^2) / (2n)``: the constant ``2/pi`` is
exactly the one that matches the linear Birkhoff map.  Gap edges are
isospectral invariants of KdV, so these actions are conserved.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg

from ..field import SQRT_PI
from .backends import BirkhoffBackend


class SpectralResolutionError(RuntimeError):
    """Gap edges could not be identified reliably."""


def _fourier_potential(pairs: np.ndarray) -> np.ndarray:
    """Complex coefficients ``q_k``, k = 1..S, with ``u = sum q_k e^{ikx} + c.c.``."""
    return (pairs[:, 0] - 1j * pairs[:, 1]) / (2 * SQRT_PI)


def _hill_matrix(qhat: np.ndarray, K: int, shift: float) -> np.ndarray:
    k = np.arange(-K, K + 1) + shift
    S = len(qhat)
    coeff = np.zeros(4 * K + 1, dtype=complex)  # index m + 2K holds q_m
    coeff[2 * K + 1:2 * K + 1 + min(S, 2 * K)] = qhat[:2 * K]
    coeff[2 * K - np.arange(1, min(S, 2 * K) + 1)] = np.conj(qhat[:2 * K])
    diff = np.subtract.outer(np.arange(2 * K + 1), np.arange(2 * K + 1))
    return np.diag(k**2).astype(complex) + coeff[diff + 2 * K]


def periodic_spectra(pairs: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted periodic and antiperiodic eigenvalues of the Fourier-truncated operator."""
    qhat = _fourier_potential(np.asarray(pairs, dtype=float))
    per = linalg.eigh(_hill_matrix(qhat, K, 0.0), eigvals_only=True)
    anti = linalg.eigh(_hill_matrix(qhat, K, 0.5), eigvals_only=True)
    return np.sort(per), np.sort(anti)


def gap_edges(pairs: np.ndarray, n_gaps: int, K: int) -> np.ndarray:
    """Array ``(n_gaps, 2)`` of ``(lambda_{2n-1}, lambda_{2n})``."""
    if n_gaps > K - 4:
        raise SpectralResolutionError(
            f"n_gaps={n_gaps} exceeds the resolvable spectrum of a {2 * K + 1}-mode basis")
    per, anti = periodic_spectra(pairs, K)
    combined = np.sort(np.concatenate([per, anti]))
    edges = np.empty((n_gaps, 2))
    for n in range(1, n_gaps + 1):
        m = n // 2
        pair = per[2 * m - 1:2 * m + 1] if n % 2 == 0 else anti[2 * m:2 * m + 2]
        expected = combined[2 * n - 1:2 * n + 1]
        if not np.allclose(pair, expected, rtol=0, atol=1e-12 * (1 + abs(expected[1]))):
            raise SpectralResolutionError(
                f"gap {n}: edges {pair} do not match spectrum ordering {expected}")
        edges[n - 1] = pair
    return edges


def _potential_on(x: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    s = np.arange(1, len(pairs) + 1)
    phase = np.multiply.outer(x, s)
    return (np.cos(phase) @ pairs[:, 0] + np.sin(phase) @ pairs[:, 1]) / SQRT_PI


def discriminant(pairs: np.ndarray, lam: np.ndarray, n_steps: int = 2048) -> np.ndarray:
    """Floquet discriminant ``y_1(2pi) + y_2'(2pi)`` by a fourth-order Magnus scheme."""
    pairs = np.asarray(pairs, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    h = 2 * np.pi / n_steps
    left = h * np.arange(n_steps)
    g = np.sqrt(3) / 6
    q1 = _potential_on(left + h * (0.5 - g), pairs)
    q2 = _potential_on(left + h * (0.5 + g), pairs)
    r1 = q1[:, None] - lam[None, :]
    r2 = q2[:, None] - lam[None, :]
    # Omega = [[c, h], [h (r1 + r2) / 2, -c]], traceless
    c = np.sqrt(3) * h**2 / 12 * (r1 - r2)
    low = 0.5 * h * (r1 + r2)
    s2 = c**2 + h * low
    root = np.sqrt(np.abs(s2))
    pos = s2 > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        ch = np.where(pos, np.cosh(root), np.cos(root))
        sh = np.where(root > 0, np.where(pos, np.sinh(root), np.sin(root)) / root, 1.0)
    mats = np.empty(r1.shape + (2, 2))
    mats[..., 0, 0] = ch + sh * c
    mats[..., 0, 1] = sh * h
    mats[..., 1, 0] = sh * low
    mats[..., 1, 1] = ch - sh * c
    # ordered product E_M ... E_1 by pairwise reduction
    while mats.shape[0] > 1:
        if mats.shape[0] % 2:
            mats = np.concatenate([mats[:-2], (mats[-1] @ mats[-2])[None]], axis=0)
            continue
        mats = mats[1::2] @ mats[0::2]
    mono = mats[0]
    return mono[..., 0, 0] + mono[..., 1, 1]


def hill_actions(pairs: np.ndarray, n_gaps: int, K: int | None = None,
                 n_steps: int = 2048, n_quad: int = 16) -> np.ndarray:
    """Actions ``I_1..I_{n_gaps}`` of a single field (shape ``(S, 2)``)."""
    pairs = np.asarray(pairs, dtype=float)
    S = pairs.shape[0]
    K = 4 * S if K is None else K
    edges = gap_edges(pairs, n_gaps, K)
    t, wt = np.polynomial.legendre.leggauss(n_quad)
    t = 0.5 * np.pi * (t + 1)
    wt = 0.5 * np.pi * wt
    centre = edges.mean(axis=1)
    half = 0.5 * (edges[:, 1] - edges[:, 0])
    lam = centre[:, None] - half[:, None] * np.cos(t)[None, :]
    delta = discriminant(pairs, lam.ravel(), n_steps).reshape(lam.shape)
    kappa = np.arccosh(np.maximum(np.abs(delta) / 2, 1.0))
    I = (2 / np.pi) * half * ((kappa * np.sin(t)) @ wt)
    closed = half <= 1e-15 * (1 + np.abs(centre))
    return np.where(closed, 0.0, I)


def quasilinear_residual(fields, n_gaps: int, **kw) -> np.ndarray:
    """Relative size of the nonlinear part of the Birkhoff map, per mode.

    For each field the residual ``sqrt(2 j I_j) - |(u_j, u_{-j})|`` measures how
    far the action deviates from its linearization; the RMS over ``fields``
    divided by the RMS of ``|(u_j, u_{-j})|`` is returned for ``j = 1..n_gaps``.
    """
    fields = np.asarray(fields, dtype=float)
    j = np.arange(1, n_gaps + 1)
    res, ref = [], []
    for u in fields:
        mod = np.hypot(u[:n_gaps, 0], u[:n_gaps, 1])
        res.append(np.sqrt(2 * j * hill_actions(u, n_gaps, **kw)) - mod)
        ref.append(mod)
    return np.sqrt(np.mean(np.square(res), axis=0) / np.mean(np.square(ref), axis=0))


def loglog_slope(j, values) -> float:
    return float(np.polyfit(np.log(j), np.log(values), 1)[0])


class HillBackend(BirkhoffBackend):
    """Actions only; angles, the inverse map and derivatives are not provided."""

    name = "hill"
    capabilities = frozenset({"actions"})

    def __init__(self, S: int, n_gaps: int | None = None, resolution: int | None = None,
                 n_steps: int = 2048, n_quad: int = 16):
        super().__init__(S)
        self.n_gaps = S // 2 if n_gaps is None else n_gaps
        self.K = 4 * S if resolution is None else resolution
        self.n_steps = n_steps
        self.n_quad = n_quad
        if self.n_gaps > self.K - 4:
            raise SpectralResolutionError("n_gaps exceeds the resolvable spectrum")

    def config(self) -> dict:
        return {"name": self.name, "S": self.S, "n_gaps": self.n_gaps,
                "resolution": self.K, "n_steps": self.n_steps}

    def actions_of(self, u):
        u = np.asarray(u, dtype=float)
        flat = u.reshape((-1,) + u.shape[-2:])
        out = np.array([hill_actions(f, self.n_gaps, self.K, self.n_steps, self.n_quad)
                        for f in flat])
        return out.reshape(u.shape[:-2] + (self.n_gaps,))
