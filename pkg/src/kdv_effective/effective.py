"""The effective (averaged) equation in Birkhoff coordinates.

    dv = <P>(v) dtau + sum_cols col(v) dbeta_col

The drift is split as ``<P>(v) = -k^2 v_k + R0(v)``: the heat part is
integrated exactly and everything else, noise included, is explicit:

    v_{n+1} = exp(-k^2 dt) (v_n + R0(v_n) dt + C(v_n) xi_n sqrt(dt)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import averaging, dynamics
from .birkhoff import coords
from .rng import GaussianStreams

CHUNK = 256


class IntegrationError(FloatingPointError):
    def __init__(self, msg, path=None, tau=None, state=None):
        super().__init__(msg)
        self.path = path
        self.tau = tau
        self.state = state


@dataclass
class EffectiveSystem:
    backend: object
    noise: dynamics.NoiseSpec
    quad: averaging.TorusQuadrature
    fields: averaging.PerturbationFields
    stiff_diag: np.ndarray  # per flattened coordinate
    noise_on: bool = True

    @property
    def S(self) -> int:
        return self.backend.S

    @property
    def n_columns(self) -> int:
        return self.quad.size * 2 * self.S

    def drift(self, v) -> np.ndarray:
        return averaging.effective_drift(self.fields.P, v, self.quad)

    def drift_residual(self, v) -> np.ndarray:
        """``R0(v) = <P>(v) - stiff * v``."""
        return self.drift(v) - self.stiff_diag * coords.flatten(np.asarray(v, dtype=float))

    def columns(self, v) -> np.ndarray:
        return averaging.dispersion_columns(self.fields.B, v, self.quad)

    def diffusion(self, v) -> np.ndarray:
        return averaging.averaged_diffusion(self.fields.B, v, self.quad)


def assemble(backend, noise, quad=None, noise_on: bool = True) -> EffectiveSystem:
    averaging.require_full(backend)
    quad = averaging.TorusQuadrature.default(backend.S) if quad is None else quad
    if quad.dims > backend.S:
        raise ValueError("quadrature averages more angles than the backend has pairs")
    fields = averaging.build_perturbation_fields(backend, noise)
    k = np.arange(1, backend.S + 1, dtype=float)
    return EffectiveSystem(backend, noise, quad, fields, np.repeat(-(k**2), 2), noise_on)


def _schedule(grid, dt):
    return dynamics._schedule(np.asarray(grid, dtype=float), dt)


def integrate_batch(sys: EffectiveSystem, v0, T: float, dt: float, seed: int,
                    record_grid=None, paths=(0,), tag: str = "effective"):
    """Paths ``paths`` from ``v0`` (broadcast); returns ``(grid, V)`` with V ``(P, n_rec, S, 2)``.

    Path ``p`` draws its noise from the ``(seed, tag, p)`` stream, so a path
    is reproduced exactly whatever batch it runs in.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    grid = np.linspace(0.0, T, 11) if record_grid is None else np.asarray(record_grid, dtype=float)
    paths = list(paths)
    P = len(paths)
    v = np.broadcast_to(np.asarray(v0, dtype=float), (P, sys.S, 2)).copy()
    if not np.all(np.isfinite(v)):
        raise ValueError("initial state must be finite")
    streams = GaussianStreams(seed, paths, (sys.n_columns,), tag=tag) if sys.noise_on else None
    out = np.empty((P, len(grid), sys.S, 2))
    t = 0.0
    for k, h in _schedule(grid, dt):
        if k is not None:
            out[:, k] = v
            continue
        x = coords.flatten(v)
        cols = (lambda s: sys.columns(coords.unflatten(s))) if streams is not None else None
        x = dynamics.sde_step(x, lambda s: sys.drift_residual(coords.unflatten(s)), cols,
                              h, streams, stiff=sys.stiff_diag, check=False)
        bad = ~np.all(np.isfinite(x), axis=-1)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise IntegrationError(f"effective path {paths[i]} became non-finite near tau={t + h:.6g}",
                                   path=paths[i], tau=t, state=v[i].copy())
        v = coords.unflatten(x)
        t += h
    return grid, out


def integrate(sys: EffectiveSystem, v0, T: float, dt: float = 1e-3, seed: int = 0,
              record_grid=None, path: int = 0) -> dynamics.TrajectoryRecord:
    grid, V = integrate_batch(sys, v0, T, dt, seed, record_grid, [path])
    return _record(grid, V[0], path)


def _record(grid, V, path):
    return dynamics.TrajectoryRecord(tau=grid.copy(), I=coords.actions(V), phi=coords.angles(V),
                                     fields=V, path=path, system="effective")


def ensemble(sys: EffectiveSystem, v0, T: float, dt: float, seed: int, n_paths: int,
             record_grid=None) -> list[dynamics.TrajectoryRecord]:
    records = []
    for start in range(0, n_paths, CHUNK):
        paths = range(start, min(start + CHUNK, n_paths))
        grid, V = integrate_batch(sys, v0, T, dt, seed, record_grid, paths)
        records += [_record(grid, V[i], p) for i, p in enumerate(paths)]
    return records


@dataclass
class ContractionCurve:
    tau: np.ndarray
    mean_sq: np.ndarray
    slope: float | None

    def gronwall_line(self) -> np.ndarray:
        """Line through ``log E|w(0)|^2`` with the measured slope."""
        return np.log(self.mean_sq[0]) + (self.slope or 0.0) * self.tau


def contraction_test(sys: EffectiveSystem, v0a, v0b, T: float, dt: float, seed: int,
                     n_paths: int = 64, record_grid=None) -> ContractionCurve:
    """``E |v^a(tau) - v^b(tau)|_0^2`` for two solutions driven by the same noise.

    ``slope`` is the smallest ``C`` with ``log E|w(tau)|^2 <= log E|w(0)|^2 + C tau``
    on the recorded grid (``None`` when the initial difference vanishes).
    """
    paths = range(n_paths)
    grid, Va = integrate_batch(sys, v0a, T, dt, seed, record_grid, paths)
    _, Vb = integrate_batch(sys, v0b, T, dt, seed, record_grid, paths)
    w2 = coords.weighted_norm(Va - Vb, 0.0) ** 2
    mean_sq = w2.mean(axis=0)
    slope = None
    if mean_sq[0] > 0 and np.all(mean_sq > 0):
        ratio = np.log(mean_sq[1:] / mean_sq[0]) / grid[1:]
        slope = float(np.max(ratio))
    return ContractionCurve(grid, mean_sq, slope)


def propagate_moments(sys: EffectiveSystem, mean0, T: float, dt: float, cov0=None):
    """Exact mean and covariance of the discrete scheme for affine drift and
    state-independent dispersion (the linear backend).

    The drift residual is treated through its affine interpolation around the
    current mean, so the result is exact whenever ``R0`` is affine.
    """
    x = coords.flatten(np.asarray(mean0, dtype=float)).copy()
    n = x.size
    C = np.zeros((n, n)) if cov0 is None else np.array(cov0, dtype=float)
    steps = max(1, int(round(T / dt)))
    h = T / steps
    E = np.exp(sys.stiff_diag * h)
    eye = np.eye(n)
    for _ in range(steps):
        r0 = sys.drift_residual(coords.unflatten(x))
        probe = coords.unflatten(x[None, :] + eye)
        A = (sys.drift_residual(probe) - r0).T  # exact for affine R0
        G = sys.diffusion(coords.unflatten(x)) if sys.noise_on else 0.0
        M = E[:, None] * (eye + h * A)
        x = E * (x + h * r0)
        C = M @ C @ M.T + h * (E[:, None] * G * E[None, :])
    return coords.unflatten(x), C
