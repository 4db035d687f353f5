"""Comparing ensembles: action-law distances, the small-damping study,
angle equidistribution and time spent near zero action."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import stats

from . import averaging, dynamics, effective
from .birkhoff import coords

log = logging.getLogger(__name__)


class EmptyLawError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalLaw:
    """Samples ``(n, N)`` of an action vector at one slow time."""

    samples: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] == 0:
            raise EmptyLawError("empirical law has no samples")
        if not np.all(np.isfinite(x)):
            raise ValueError("empirical law has non-finite samples")
        object.__setattr__(self, "samples", x)

    @classmethod
    def from_records(cls, records, index: int = -1) -> "EmpiricalLaw":
        return cls(np.array([r.I[index] for r in records]))

    def marginal(self, k: int) -> np.ndarray:
        """Samples of ``I_k`` (1-based)."""
        return self.samples[:, k - 1]

    def split(self) -> tuple["EmpiricalLaw", "EmpiricalLaw"]:
        half = self.samples.shape[0] // 2
        return EmpiricalLaw(self.samples[:half]), EmpiricalLaw(self.samples[half:2 * half])


def action_law_distance(a: EmpiricalLaw, b: EmpiricalLaw, k: int) -> float:
    """1-Wasserstein distance between the ``k``-th action marginals."""
    return float(stats.wasserstein_distance(a.marginal(k), b.marginal(k)))


def bootstrap_distance_error(a: EmpiricalLaw, b: EmpiricalLaw, k: int,
                             n_boot: int = 200, seed: int = 0) -> float:
    """Bootstrap standard deviation of :func:`action_law_distance`."""
    rng = np.random.default_rng(seed)
    xa, xb = a.marginal(k), b.marginal(k)
    vals = [stats.wasserstein_distance(rng.choice(xa, xa.size), rng.choice(xb, xb.size))
            for _ in range(n_boot)]
    return float(np.std(vals, ddof=1))


@dataclass
class ConvergenceProblem:
    """Everything the small-damping study holds fixed across the arms."""

    backend: object
    noise: dynamics.NoiseSpec
    u0: np.ndarray
    N: int
    quad: object
    T: float = 1.0
    dt_eff: float = 1e-3
    dt_fast: float | None = None
    nonlinear: bool = True
    theta0: float | np.ndarray = 0.0
    seed: int = 0
    threads: int = 1
    n_boot: int = 200
    # "spde": the forced KdV equation; "v-equation": the fast system written in
    # Birkhoff coordinates, with the rotation switchable off (W = 0 control)
    fast_system: str = "spde"
    rotation: bool = True


@dataclass
class ConvergenceReport:
    nus: list
    tau: list
    modes: list
    distance: list  # [nu][tau][mode]
    error: list  # bootstrap standard deviations, same layout
    floor: list  # [tau][mode]
    monotone: list  # [tau][mode]
    within_floor: list  # [tau][mode]: d(smallest nu) <= 2 floor
    n_paths: int
    diagnostics: dict = dc_field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ConvergenceReport":
        return cls(**json.loads(text))


def strictly_decreasing(values) -> bool:
    values = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(values) < 0))


def effective_initial_state(problem: ConvergenceProblem) -> np.ndarray:
    """``V_theta(I_0)`` with ``I_0`` the actions of ``u0``."""
    I0 = problem.backend.actions_of(problem.u0)
    theta = np.broadcast_to(np.asarray(problem.theta0, dtype=float), I0.shape)
    return coords.reconstruct(I0, theta)


def fast_ensemble(problem: ConvergenceProblem, nu: float, n_paths: int, grid):
    """Records of the fast system at damping ``nu``."""
    backend = problem.backend
    if problem.fast_system == "spde":
        cfg = dynamics.SpdeConfig(nu=nu, T=problem.T, S=backend.S, N=problem.N,
                                  seed=problem.seed, dt_fast=problem.dt_fast, record_grid=grid,
                                  nonlinear=problem.nonlinear)
        return dynamics.kdv_ensemble(problem.u0, cfg, problem.noise, backend, n_paths,
                                     threads=problem.threads)
    if problem.fast_system == "v-equation":
        fields = averaging.build_perturbation_fields(backend, problem.noise)
        # Airy frequencies: the linear part of KdV seen through dPsi(0)
        freq = -np.arange(1, backend.S + 1, dtype=float) ** 3
        return dynamics.v_equation_ensemble(backend.forward(problem.u0), fields, nu, problem.T,
                                            problem.dt_eff, grid, n_paths, problem.seed,
                                            freq, problem.rotation)
    raise ValueError(f"unknown fast system {problem.fast_system!r}")


def convergence_study(problem: ConvergenceProblem, nus, n_paths: int, tau_grid) -> ConvergenceReport:
    """Distance between the action law of the forced KdV system at each ``nu``
    and that of the effective equation, on a common slow-time grid.
    """
    nus = [float(x) for x in nus]
    if any(b >= a for a, b in zip(nus, nus[1:])):
        raise ValueError("nu list must be strictly decreasing")
    grid = np.asarray(tau_grid, dtype=float)
    modes = list(range(1, problem.N + 1))
    sys = effective.assemble(problem.backend, problem.noise, problem.quad)
    eff = effective.ensemble(sys, effective_initial_state(problem), problem.T,
                             problem.dt_eff, problem.seed, n_paths, grid)
    arms = [fast_ensemble(problem, nu, n_paths, grid) for nu in nus]
    distance, error = [], []
    for recs in arms:
        d_nu, e_nu = [], []
        for i in range(len(grid)):
            a, b = EmpiricalLaw.from_records(recs, i), EmpiricalLaw.from_records(eff, i)
            d_nu.append([action_law_distance(a, b, k) for k in modes])
            e_nu.append([bootstrap_distance_error(a, b, k, problem.n_boot, problem.seed + i)
                         for k in modes])
        distance.append(d_nu)
        error.append(e_nu)
    floor = []
    for i in range(len(grid)):
        h1, h2 = EmpiricalLaw.from_records(eff, i).split()
        floor.append([action_law_distance(h1, h2, k) for k in modes])
    d = np.array(distance)  # (nu, tau, mode)
    monotone = [[strictly_decreasing(d[:, i, m]) for m in range(len(modes))]
                for i in range(len(grid))]
    within = [[bool(d[-1, i, m] <= 2 * floor[i][m]) for m in range(len(modes))]
              for i in range(len(grid))]
    return ConvergenceReport(nus, grid.tolist(), modes, distance, error, floor,
                             monotone, within, n_paths)


def hann_mollifier(tau, a: float | None = None, b: float | None = None) -> np.ndarray:
    """Raised-cosine bump on ``[a, b]`` sampled on ``tau``, normalized so its
    trapezoid integral is 1."""
    tau = np.asarray(tau, dtype=float)
    a = tau[0] if a is None else a
    b = tau[-1] if b is None else b
    x = (tau - a) / (b - a)
    f = np.where((x >= 0) & (x <= 1), 1 - np.cos(2 * np.pi * x), 0.0)
    return f / (f @ trapezoid_weights(tau))


def trapezoid_weights(tau) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    w = np.zeros_like(tau)
    dt = np.diff(tau)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def circular_ks(angles, weights=None) -> float:
    """Weighted KS distance to the uniform law after centring the circular mean at ``pi``.

    A sample with zero resultant (no preferred direction) is left unrotated.
    """
    phi = np.asarray(angles, dtype=float).ravel()
    w = np.ones_like(phi) if weights is None else np.asarray(weights, dtype=float).ravel()
    total = w.sum()
    if phi.size == 0 or total <= 0:
        raise ValueError("no weight to pool")
    w = w / total
    resultant = np.sum(w * np.exp(1j * phi))
    shift = np.pi - np.angle(resultant) if abs(resultant) > 1e-12 else 0.0
    x = coords.wrap_angle(phi + shift) / (2 * np.pi)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    cdf = np.cumsum(w)
    return float(max(np.max(cdf - x), np.max(x - (cdf - w))))


def angle_equidistribution(phi, tau, f) -> np.ndarray:
    """Per-mode circular KS statistic of angles pooled over paths and slow time.

    ``phi`` is ``(paths, n_tau, N)`` (or a list of trajectory records) and
    ``f`` a density on the ``tau`` grid with unit trapezoid integral.
    """
    if not isinstance(phi, np.ndarray):
        phi = np.array([r.phi for r in phi])
    tau = np.asarray(tau, dtype=float)
    wt = np.asarray(f, dtype=float) * trapezoid_weights(tau)
    if np.sum(wt) <= 0:
        raise ValueError("mollifier has no mass on the grid")
    if abs(np.sum(wt) - 1) > 1e-6:
        raise ValueError(f"mollifier integrates to {np.sum(wt):.6g}, expected 1")
    P = phi.shape[0]
    w = np.broadcast_to((wt / P)[None, :], phi.shape[:2])
    return np.array([circular_ks(phi[..., m], w) for m in range(phi.shape[-1])])


def uniform_ks_floor(weights_shape, tau, f, n_trials: int = 20, seed: int = 0) -> float:
    """Mean circular KS of i.i.d. uniform angles pooled with the same weights."""
    rng = np.random.default_rng(seed)
    P, n_tau = weights_shape
    vals = [angle_equidistribution(rng.uniform(0, 2 * np.pi, (P, n_tau, 1)), tau, f)[0]
            for _ in range(n_trials)]
    return float(np.mean(vals))


def occupation_below(I, tau, delta: float, k: int = 1) -> float:
    """``E int chi(I_k(tau) <= delta) dtau`` by the trapezoid rule.

    ``I`` is ``(paths, n_tau, N)`` or a list of trajectory records.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not isinstance(I, np.ndarray):
        I = np.array([r.I for r in I])
    ind = (I[..., k - 1] <= delta).astype(float)
    return float(np.mean(ind @ trapezoid_weights(tau)))


def write_plot_scripts(report: ConvergenceReport, out_dir, angle_hist=None) -> list[Path]:
    """Gnuplot scripts (with inline data) for ``d(nu)`` and optional angle histograms.

    ``angle_hist`` maps a label to ``(bin_centres, density)``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["set logscale xy", "set xlabel 'nu'", "set ylabel 'W1 distance'", "set key left top"]
    plots = []
    blocks = []
    for m, k in enumerate(report.modes):
        name = f"$mode{k}"
        rows = [f"{nu} {report.distance[i][-1][m]} {report.error[i][-1][m]}"
                for i, nu in enumerate(report.nus)]
        blocks.append(f"{name} << EOD\n" + "\n".join(rows) + "\nEOD")
        plots.append(f"{name} using 1:2:3 with yerrorlines title 'I_{k}'")
        plots.append(f"{report.floor[-1][m]} with lines dashtype 2 title 'floor I_{k}'")
    text = "\n".join(blocks + lines + ["plot " + ", \\\n     ".join(plots)]) + "\n"
    paths = [out / "distance_vs_nu.gp"]
    paths[0].write_text(text)
    if angle_hist:
        blocks, plots = [], []
        for i, (label, (centres, dens)) in enumerate(angle_hist.items()):
            rows = "\n".join(f"{c} {d}" for c, d in zip(centres, dens))
            blocks.append(f"$h{i} << EOD\n{rows}\nEOD")
            plots.append(f"$h{i} using 1:2 with steps title '{label}'")
        text = "\n".join(blocks + ["set xlabel 'angle'", "set ylabel 'density'",
                                   f"plot {1 / (2 * np.pi)} title 'uniform', " + ", ".join(plots)])
        paths.append(out / "angle_histograms.gp")
        paths[1].write_text(text + "\n")
    return paths
