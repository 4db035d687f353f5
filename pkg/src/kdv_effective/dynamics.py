"""Time integration of the damped-driven KdV equation and of generic SDEs.

In fast time ``t`` each Fourier pair ``z_s = u_s + i u_{-s}`` obeys

    dz_s = (-nu s^2 - i s^3) z_s dt + N_s(u) dt + sqrt(nu) b_s (dbeta_s + i dbeta_{-s})

where ``N = 6 u u_x`` (alias-free).  The linear part is handled by an
integrating factor (Lawson RK4 for the deterministic step) and the additive
noise by the exact Ornstein-Uhlenbeck increment of the damped mode.  With the
nonlinearity switched off every step is exact.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field
from .birkhoff import coords
from .rng import GaussianStreams

CHUNK = 64  # paths per vectorized batch; fixed so results never depend on threading


class DivergenceError(FloatingPointError):
    """A path left the admissible region; carries the last good state."""

    def __init__(self, msg, path=None, tau=None, state=None):
        super().__init__(msg)
        self.path = path
        self.tau = tau
        self.state = state


class StepError(FloatingPointError):
    """An SDE step produced non-finite values."""


@dataclass(frozen=True)
class NoiseSpec:
    """Forcing amplitudes ``b_s = b_{-s}``, stored once per pair ``s = 1..S``."""

    b: np.ndarray
    decay_order: int | None = None
    decay_const: float | None = None

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        object.__setattr__(self, "b", b)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("b must be a non-empty 1-d array over s = 1..S")
        if np.any(b == 0):
            raise ValueError("all retained b_s must be non-zero")
        if self.decay_order is not None:
            s = np.arange(1, b.size + 1, dtype=float)
            bound = self.decay_const * s ** (-float(self.decay_order))
            if np.any(np.abs(b) > bound * (1 + 1e-12)):
                raise ValueError(
                    f"|b_s| exceeds C_m |s|^-m with m={self.decay_order}, C_m={self.decay_const}")

    @property
    def S(self) -> int:
        return self.b.size

    @classmethod
    def profile(cls, S: int, name: str = "exp", c: float = 1.0, gamma: float = 0.5,
                m: float = 3.0, **kw) -> "NoiseSpec":
        """``exp``: ``c exp(-gamma |s|)``; ``poly``: ``c |s|^-m``; ``values``: explicit list."""
        s = np.arange(1, S + 1, dtype=float)
        if name == "exp":
            return cls(c * np.exp(-gamma * s), **kw)
        if name == "poly":
            return cls(c * s ** (-m), **kw)
        if name == "values":
            vals = np.asarray(kw.pop("values"), dtype=float)
            if vals.size != S:
                raise ValueError("explicit b profile must list S values")
            return cls(vals, **kw)
        raise ValueError(f"unknown noise profile {name!r}")

    def per_coordinate(self) -> np.ndarray:
        """``b`` repeated for the flattened (s, -s) layout."""
        return np.repeat(self.b, 2)


@dataclass
class SpdeConfig:
    nu: float
    T: float
    S: int
    N: int
    seed: int = 0
    dt_fast: float | None = None
    record_grid: np.ndarray | None = None
    nonlinear: bool = True
    noise_on: bool = True
    blowup: float = 50.0
    record_fields: bool = False

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")
        if self.N > self.S:
            raise ValueError("N must not exceed S")
        if self.dt_fast is None:
            self.dt_fast = default_dt_fast(self.S)
        if self.record_grid is None:
            self.record_grid = np.linspace(0.0, self.T, 11)
        grid = np.asarray(self.record_grid, dtype=float)
        if np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > self.T + 1e-12:
            raise ValueError("record grid must be strictly increasing inside [0, T]")
        self.record_grid = grid


def default_dt_fast(S: int) -> float:
    return 0.5 / S**3


@dataclass
class TrajectoryRecord:
    tau: np.ndarray
    I: np.ndarray
    phi: np.ndarray | None
    fields: np.ndarray | None = None
    diagnostics: dict = dc_field(default_factory=dict)
    path: int = 0
    system: str = "spde"

    def jsonl_lines(self, include_fields: bool = False):
        for k, tau in enumerate(self.tau):
            row = {"system": self.system, "path": self.path, "tau": float(tau),
                   "I": self.I[k].tolist(),
                   "phi": None if self.phi is None else self.phi[k].tolist()}
            if include_fields and self.fields is not None:
                row["field"] = field.FourierField(self.fields[k]).to_json()
            yield row


class KdVPropagator:
    """One fast-time step for a batch of fields ``(P, S, 2)``."""

    def __init__(self, S: int, nu: float, nonlinear: bool = True, noise: NoiseSpec | None = None):
        self.S = S
        self.nu = nu
        self.nonlinear = nonlinear
        self.noise = noise
        s = field.wavenumbers(S)
        self.rate = -nu * s**2 - 1j * s**3
        self._cache = {}

    def _factors(self, h):
        if h not in self._cache:
            s = field.wavenumbers(self.S)
            std = None
            if self.noise is not None:
                std = np.abs(self.noise.b[: self.S]) * np.sqrt(
                    -np.expm1(-2 * self.nu * s**2 * h) / (2 * s**2))
            self._cache[h] = (np.exp(self.rate * h), np.exp(self.rate * h / 2), std)
        return self._cache[h]

    def _nl(self, z):
        pairs = np.stack([z.real, z.imag], axis=-1)
        out = field.kdv_nonlinearity(pairs)
        return out[..., 0] + 1j * out[..., 1]

    def step(self, u: np.ndarray, h: float, xi: np.ndarray | None = None) -> np.ndarray:
        E, E2, std = self._factors(h)
        z = u[..., 0] + 1j * u[..., 1]
        if self.nonlinear:
            k1 = self._nl(z)
            k2 = self._nl(E2 * (z + 0.5 * h * k1))
            k3 = self._nl(E2 * z + 0.5 * h * k2)
            k4 = self._nl(E * z + h * E2 * k3)
            z = E * z + (h / 6) * (E * k1 + 2 * E2 * (k2 + k3) + k4)
        else:
            z = E * z
        out = np.stack([z.real, z.imag], axis=-1)
        if xi is not None and std is not None:
            out = out + std[:, None] * xi
        return out


def _schedule(t_grid: np.ndarray, dt: float):
    """Yield ``(record_index or None, h)`` steps hitting every record time exactly."""
    t_prev = 0.0
    for k, t in enumerate(t_grid):
        span = t - t_prev
        if span > 0:
            n = max(1, math.ceil(span / dt - 1e-9))
            h = span / n
            for _ in range(n):
                yield None, h
        yield k, 0.0
        t_prev = t


def integrate_fields(u0: np.ndarray, t_grid, dt: float, nu: float = 0.0,
                     nonlinear: bool = True, noise: NoiseSpec | None = None,
                     streams=None, blowup: float | None = None,
                     on_record=None, path_ids=None) -> np.ndarray:
    """Evolve a batch of fields in fast time and return states at ``t_grid``.

    ``streams`` supplies standard normals of shape ``(P, S, 2)`` per step and
    is required when ``noise`` is given.  ``on_record(k, u)`` is called at
    every record time.
    """
    u = np.array(u0, dtype=float)
    batch = u.ndim == 2
    if batch:
        u = u[None]
    S = u.shape[-2]
    prop = KdVPropagator(S, nu, nonlinear, noise if (noise is not None and nu > 0) else None)
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    out = np.empty((len(t_grid),) + u.shape)
    path_ids = list(range(u.shape[0])) if path_ids is None else list(path_ids)
    t_now = 0.0
    for k, h in _schedule(t_grid, dt):
        if k is not None:
            out[k] = u
            if on_record is not None:
                on_record(k, u)
            continue
        xi = streams() if prop.noise is not None else None
        new = prop.step(u, h, xi)
        norm = field.sobolev_norm(new, 0)
        bad = ~np.isfinite(norm)
        if blowup is not None:
            bad |= norm > blowup
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise DivergenceError(
                f"path {path_ids[i]} diverged at fast time {t_now + h:.6g} "
                f"(||u||_0 = {norm[i]:.3g})",
                path=path_ids[i], tau=(t_now + h) * nu, state=u[i].copy())
        u = new
        t_now += h
    return out[:, 0] if batch else out


def _run_paths(u0, cfg: SpdeConfig, noise: NoiseSpec, backend, paths) -> list[TrajectoryRecord]:
    P = len(paths)
    u_init = np.broadcast_to(np.asarray(u0, dtype=float), (P, cfg.S, 2)).copy()
    streams = GaussianStreams(cfg.seed, paths, (cfg.S, 2), tag="spde") if cfg.noise_on else None
    n_rec = len(cfg.record_grid)
    I = np.empty((P, n_rec, cfg.N))
    has_angles = "angles" in backend.capabilities
    phi = np.empty((P, n_rec, cfg.N)) if has_angles else None
    sob = np.empty((P, n_rec, 4))
    fields = np.empty((P, n_rec, cfg.S, 2)) if cfg.record_fields else None

    def on_record(k, u):
        I[:, k] = backend.actions_of(u)[..., :cfg.N]
        if has_angles:
            phi[:, k] = backend.angles_of(u)[..., :cfg.N]
        for m in range(4):
            sob[:, k, m] = field.sobolev_norm(u, m)
        if fields is not None:
            fields[:, k] = u

    integrate_fields(u_init, cfg.record_grid / cfg.nu, cfg.dt_fast, cfg.nu,
                     cfg.nonlinear, noise if cfg.noise_on else None, streams,
                     cfg.blowup, on_record, path_ids=paths)
    return [TrajectoryRecord(tau=cfg.record_grid.copy(), I=I[i],
                             phi=None if phi is None else phi[i],
                             fields=None if fields is None else fields[i],
                             diagnostics={"sobolev_norms": sob[i]}, path=p)
            for i, p in enumerate(paths)]


def kdv_spde_trajectory(u0, cfg: SpdeConfig, noise: NoiseSpec, backend, path: int = 0):
    """One path of the damped-driven KdV equation recorded on ``cfg.record_grid`` (slow time)."""
    return _run_paths(u0, cfg, noise, backend, [path])[0]


def kdv_ensemble(u0, cfg: SpdeConfig, noise: NoiseSpec, backend, n_paths: int,
                 threads: int = 1) -> list[TrajectoryRecord]:
    """Independent paths ``0..n_paths-1``; output is identical for any ``threads``."""
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    chunks = [list(range(i, min(i + CHUNK, n_paths))) for i in range(0, n_paths, CHUNK)]
    run = lambda ch: _run_paths(u0, cfg, noise, backend, ch)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(ch) for ch in chunks]
    return [rec for part in parts for rec in part]


def sde_step(state, drift, dispersion_columns, dt: float, rng, stiff=None, check=True):
    """Euler-Maruyama step ``x + f(x) dt + sum_c col_c sqrt(dt) xi_c``.

    ``rng`` is a ``numpy.random.Generator`` or a zero-argument callable
    returning the standard normals, shape ``(..., n_cols)``.  ``stiff`` is an optional
    diagonal rate vector treated with the exact factor ``exp(stiff dt)``
    applied to the whole explicit update.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=float)
    inc = x + drift(x) * dt
    if dispersion_columns is not None:
        cols = np.asarray(dispersion_columns(x))
        if cols.shape[-1]:
            shape = cols.shape[:-2] + cols.shape[-1:]
            xi = rng() if callable(rng) else rng.standard_normal(shape)
            if np.shape(xi) != shape:
                raise ValueError(f"noise block of shape {np.shape(xi)}, expected {shape}")
            inc = inc + np.sqrt(dt) * np.einsum("...ac,...c->...a", cols, xi)
    if stiff is not None:
        inc = np.exp(np.asarray(stiff) * dt) * inc
    if check and not np.all(np.isfinite(inc)):
        raise StepError("non-finite state after SDE step")
    return inc


def v_equation_ensemble(v0, fields, nu: float, T: float, dt: float, record_grid,
                        n_paths: int, seed: int = 0, frequencies=None,
                        rotation: bool = True) -> list[TrajectoryRecord]:
    """Fast system written directly in Birkhoff coordinates.

        dv = nu^-1 Omega(W) v dtau + P(v) dtau + B(v) dbeta

    ``fields`` is the ``(DriftField, DispersionField)`` pair of
    :func:`averaging.build_perturbation_fields`; ``frequencies`` are the
    per-pair angular velocities (fast time).  Each step applies the explicit
    Euler-Maruyama update and then the exact rotation by ``W dtau / nu``
    (Lie splitting).  ``rotation=False`` removes the fast rotation.
    """
    drift_f, disp_f = fields
    v0 = np.asarray(v0, dtype=float)
    S = v0.shape[-2]
    W = np.asarray(frequencies, dtype=float) if frequencies is not None else np.zeros(S)
    grid = np.asarray(record_grid, dtype=float)
    records = []
    for start in range(0, n_paths, CHUNK):
        paths = list(range(start, min(start + CHUNK, n_paths)))
        P = len(paths)
        v = np.broadcast_to(v0, (P, S, 2)).copy()
        streams = GaussianStreams(seed, paths, (2 * S,), tag="v-equation")
        Irec = np.empty((P, len(grid), S))
        prec = np.empty((P, len(grid), S))
        for k, h in _schedule(grid, dt):
            if k is not None:
                Irec[:, k] = coords.actions(v)
                prec[:, k] = coords.angles(v)
                continue
            x = coords.flatten(v)
            B = disp_f(v)
            x = x + drift_f(v) * h + np.sqrt(h) * np.einsum(
                "...ac,...c->...a", B, streams())
            v = coords.unflatten(x)
            if rotation:
                v = coords.rotate(v, W * h / nu)
            if not np.all(np.isfinite(v)):
                raise StepError("non-finite state in v-equation")
        records += [TrajectoryRecord(tau=grid.copy(), I=Irec[i], phi=prec[i], path=p,
                                     system="v-equation") for i, p in enumerate(paths)]
    return records
