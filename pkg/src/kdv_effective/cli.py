"""Config-driven experiment runner.

    kdv-effective run config.toml [--out DIR] [--seed N] [--threads N] [--validate-only]

A run directory holds JSONL trajectories, JSON reports, gnuplot scripts and a
``manifest.json`` carrying the fully resolved config; ``run manifest.json``
reproduces the run.  Exit codes: 0 ok, 2 invalid config, 3 solver failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, analysis, averaging, dynamics, effective, field
from .birkhoff import coords, make_backend
from .birkhoff.backends import CapabilityError
from .birkhoff.coords import DomainError

log = logging.getLogger("kdv_effective")

SCHEMA_VERSION = 1
MODES = ("spde", "effective", "convergence", "equidistribution", "diagnostics")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "system": {"S": 8, "N": 2, "nu": [0.1], "T": 1.0, "paths": 1, "tau": 11,
               "nonlinear": True, "noise_on": True, "dt_eff": 1e-3,
               "record_fields": False, "theta0": 0.0, "blowup": 50.0},
    "initial": {"kind": "random", "amplitude": 0.1, "decay": 0.25, "seed": 0},
    "backend": {"name": "linear"},
    "noise": {"profile": "exp", "c": 1.0, "gamma": 0.5},
    "quadrature": {},
    "analysis": {"deltas": [0.1, 0.01, 0.001], "n_boot": 200, "ks_trials": 20,
                 "moment_orders": [0, 1, 2, 3], "moment_powers": [1, 2, 3, 4]},
}
SECTIONS = {"system", "initial", "backend", "noise", "quadrature", "analysis"}
TOP_KEYS = {"schema_version", "mode", "seed", "output"} | SECTIONS
NEEDS_FULL = {"effective", "convergence", "diagnostics"}


class ConfigError(ValueError):
    pass


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path) -> dict:
    path = Path(path)
    try:
        if path.suffix == ".json":
            raw = json.loads(path.read_text())
            raw = raw.get("config", raw)  # accept a manifest
        else:
            raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return raw


def validate(raw: dict) -> dict:
    """Fill defaults and check the schema; returns the resolved config."""
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {raw.get('schema_version')!r}")
    if raw.get("mode") not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {raw.get('mode')!r}")
    for sec in SECTIONS & set(raw):
        if not isinstance(raw[sec], dict):
            raise ConfigError(f"[{sec}] must be a table")
    cfg = _merge(DEFAULTS, raw)
    sysc = cfg["system"]
    unknown = set(sysc) - set(DEFAULTS["system"]) - {"dt_fast"}
    if unknown:
        raise ConfigError(f"unknown [system] keys {sorted(unknown)}")
    try:
        S, N = int(sysc["S"]), int(sysc["N"])
        nus = [float(x) for x in np.atleast_1d(sysc["nu"])]
        T = float(sysc["T"])
        paths = int(sysc["paths"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed [system] entry: {exc}") from exc
    if S < 1 or not 1 <= N <= S:
        raise ConfigError("need S >= 1 and 1 <= N <= S")
    if T <= 0 or paths < 1:
        raise ConfigError("T must be positive and paths >= 1")
    if any(not 0 < nu <= 1 for nu in nus):
        raise ConfigError("every nu must lie in (0, 1]")
    if cfg["mode"] == "convergence" and any(b >= a for a, b in zip(nus, nus[1:])):
        raise ConfigError("convergence mode needs a strictly decreasing nu list")
    sysc["nu"] = nus
    try:
        tau_grid(cfg)
        backend = make_backend(cfg["backend"], S)
        build_noise(cfg)
        if cfg["mode"] in NEEDS_FULL or cfg["mode"] == "equidistribution":
            build_quadrature(cfg)
        initial_field(cfg)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["mode"] in NEEDS_FULL:
        try:
            averaging.require_full(backend)
        except CapabilityError as exc:
            raise ConfigError(f"mode {cfg['mode']!r}: {exc}") from exc
    if cfg["mode"] == "equidistribution" and "angles" not in backend.capabilities:
        raise ConfigError(f"backend {backend.name!r} provides no angles")
    if N > getattr(backend, "n_gaps", S):
        raise ConfigError("N exceeds the number of actions the backend provides")
    return cfg


def tau_grid(cfg) -> np.ndarray:
    T = float(cfg["system"]["T"])
    tau = cfg["system"]["tau"]
    if isinstance(tau, int):
        if tau < 2:
            raise ValueError("tau must list at least two snapshots")
        return np.linspace(0.0, T, tau)
    grid = np.asarray(tau, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0) or grid[0] < 0 or grid[-1] > T:
        raise ValueError("tau grid must increase strictly inside [0, T]")
    return grid


def build_noise(cfg) -> dynamics.NoiseSpec:
    spec = dict(cfg["noise"])
    name = spec.pop("profile", "exp")
    m_check = spec.pop("decay_order", None)
    c_check = spec.pop("decay_const", None)
    return dynamics.NoiseSpec.profile(int(cfg["system"]["S"]), name, decay_order=m_check,
                                      decay_const=c_check, **spec)


def build_quadrature(cfg) -> averaging.TorusQuadrature:
    return averaging.TorusQuadrature.from_spec(cfg["quadrature"], int(cfg["system"]["N"]))


def initial_field(cfg) -> np.ndarray:
    S = int(cfg["system"]["S"])
    init = cfg["initial"]
    kind = init.get("kind", "random")
    if kind == "random":
        rng = np.random.default_rng(int(init.get("seed", 0)))
        return field.random_field(S, float(init["amplitude"]), rng, float(init.get("decay", 0.25)))
    if kind == "modes":
        return field.FourierField.from_modes(
            S, {int(k): float(v) for k, v in init["modes"].items()}).pairs
    if kind == "zero":
        return np.zeros((S, 2))
    raise ValueError(f"unknown initial kind {kind!r}")


def config_hash(cfg) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _write_jsonl(path: Path, records, include_fields=False):
    with path.open("w") as fh:
        for rec in records:
            for row in rec.jsonl_lines(include_fields):
                fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def _spde_config(cfg, nu):
    sysc = cfg["system"]
    return dynamics.SpdeConfig(nu=nu, T=float(sysc["T"]), S=int(sysc["S"]), N=int(sysc["N"]),
                               seed=int(cfg["seed"]), dt_fast=sysc.get("dt_fast"),
                               record_grid=tau_grid(cfg), nonlinear=bool(sysc["nonlinear"]),
                               noise_on=bool(sysc["noise_on"]), blowup=float(sysc["blowup"]),
                               record_fields=bool(sysc["record_fields"]))


def _nu_tag(nu):
    return f"{nu:g}"


def run_spde(cfg, out, threads):
    backend = make_backend(cfg["backend"], int(cfg["system"]["S"]))
    noise, u0 = build_noise(cfg), initial_field(cfg)
    files = []
    for nu in cfg["system"]["nu"]:
        recs = dynamics.kdv_ensemble(u0, _spde_config(cfg, nu), noise, backend,
                                     int(cfg["system"]["paths"]), threads)
        path = out / f"spde_nu{_nu_tag(nu)}.jsonl"
        _write_jsonl(path, recs, bool(cfg["system"]["record_fields"]))
        files.append(path)
    return files


def _effective_records(cfg):
    sysc = cfg["system"]
    backend = make_backend(cfg["backend"], int(sysc["S"]))
    noise = build_noise(cfg)
    sys_ = effective.assemble(backend, noise, build_quadrature(cfg), bool(sysc["noise_on"]))
    I0 = backend.actions_of(initial_field(cfg))
    v0 = coords.reconstruct(I0, np.broadcast_to(np.asarray(sysc["theta0"], float), I0.shape))
    return effective.ensemble(sys_, v0, float(sysc["T"]), float(sysc["dt_eff"]),
                              int(cfg["seed"]), int(sysc["paths"]), tau_grid(cfg))


def run_effective(cfg, out, threads):
    recs = _effective_records(cfg)
    path = out / "effective.jsonl"
    _write_jsonl(path, recs, bool(cfg["system"]["record_fields"]))
    return [path]


def run_convergence(cfg, out, threads):
    sysc = cfg["system"]
    backend = make_backend(cfg["backend"], int(sysc["S"]))
    problem = analysis.ConvergenceProblem(
        backend=backend, noise=build_noise(cfg), u0=initial_field(cfg), N=int(sysc["N"]),
        quad=build_quadrature(cfg), T=float(sysc["T"]), dt_eff=float(sysc["dt_eff"]),
        dt_fast=sysc.get("dt_fast"), nonlinear=bool(sysc["nonlinear"]),
        theta0=sysc["theta0"], seed=int(cfg["seed"]), threads=threads,
        n_boot=int(cfg["analysis"]["n_boot"]))
    report = analysis.convergence_study(problem, sysc["nu"], int(sysc["paths"]), tau_grid(cfg))
    path = out / "convergence_report.json"
    path.write_text(report.to_json() + "\n")
    return [path] + analysis.write_plot_scripts(report, out)


def run_equidistribution(cfg, out, threads):
    sysc = cfg["system"]
    backend = make_backend(cfg["backend"], int(sysc["S"]))
    noise, u0, grid = build_noise(cfg), initial_field(cfg), tau_grid(cfg)
    f = analysis.hann_mollifier(grid)
    result, hist = {"tau": grid.tolist(), "nu": [], "ks": []}, {}
    for nu in sysc["nu"]:
        recs = dynamics.kdv_ensemble(u0, _spde_config(cfg, nu), noise, backend,
                                     int(sysc["paths"]), threads)
        phi = np.array([r.phi for r in recs])
        result["nu"].append(nu)
        result["ks"].append(analysis.angle_equidistribution(phi, grid, f).tolist())
        w = np.broadcast_to(f * analysis.trapezoid_weights(grid), phi.shape[:2]).ravel()
        dens, edges = np.histogram(phi[..., 0].ravel(), bins=32, range=(0, 2 * np.pi),
                                   weights=w, density=True)
        hist[f"nu={_nu_tag(nu)}"] = (0.5 * (edges[1:] + edges[:-1]), dens)
    result["floor"] = analysis.uniform_ks_floor((int(sysc["paths"]), len(grid)), grid, f,
                                                int(cfg["analysis"]["ks_trials"]), int(cfg["seed"]))
    path = out / "equidistribution.json"
    path.write_text(json.dumps(result, indent=2) + "\n")
    script = out / "angle_histograms.gp"
    rows = []
    for i, (label, (c, d)) in enumerate(hist.items()):
        rows.append(f"$h{i} << EOD\n" + "\n".join(f"{a} {b}" for a, b in zip(c, d)) + "\nEOD")
    plots = ", ".join(f"$h{i} using 1:2 with steps title '{label}'" for i, label in enumerate(hist))
    script.write_text("\n".join(rows + ["set xlabel 'angle of mode 1'",
                                        f"plot {1 / (2 * np.pi)} title 'uniform', {plots}"]) + "\n")
    return [path, script]


def run_diagnostics(cfg, out, threads):
    sysc = cfg["system"]
    an = cfg["analysis"]
    grid = tau_grid(cfg)
    backend = make_backend(cfg["backend"], int(sysc["S"]))
    noise, u0 = build_noise(cfg), initial_field(cfg)
    eff = _effective_records(cfg)
    I_eff = np.array([r.I for r in eff])
    result = {"tau": grid.tolist(), "occupation": {}, "moments": {}}
    for k in range(1, int(sysc["N"]) + 1):
        result["occupation"][str(k)] = {
            f"{d:g}": analysis.occupation_below(I_eff, grid, float(d), k) for d in an["deltas"]}
    sigma = 1.0 / (4 * np.max(noise.b**2))
    for nu in sysc["nu"]:
        recs = dynamics.kdv_ensemble(u0, _spde_config(cfg, nu), noise, backend,
                                     int(sysc["paths"]), threads)
        sob = np.array([r.diagnostics["sobolev_norms"] for r in recs])  # (P, n_tau, 4)
        entry = {"exp_moment": np.mean(np.exp(sigma * sob[..., 0] ** 2), axis=0).tolist(),
                 "sigma": sigma}
        for m in an["moment_orders"]:
            for p in an["moment_powers"]:
                entry[f"E|u|_{m}^{p}"] = np.mean(sob[..., int(m)] ** int(p), axis=0).tolist()
        result["moments"][_nu_tag(nu)] = entry
    path = out / "diagnostics.json"
    path.write_text(json.dumps(result, indent=2) + "\n")
    return [path]


RUNNERS = {"spde": run_spde, "effective": run_effective, "convergence": run_convergence,
           "equidistribution": run_equidistribution, "diagnostics": run_diagnostics}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(config_path, out=None, seed=None, threads=1, validate_only=False) -> int:
    try:
        raw = load_config(config_path)
        if seed is not None:
            raw["seed"] = int(seed)
        cfg = validate(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if validate_only:
        print(f"config ok ({cfg['mode']}, hash {config_hash(cfg)[:12]})")
        return EXIT_OK
    out = Path(out or cfg.get("output") or f"run-{config_hash(cfg)[:12]}")
    out.mkdir(parents=True, exist_ok=True)
    try:
        files = RUNNERS[cfg["mode"]](cfg, out, max(1, int(threads)))
    except (dynamics.DivergenceError, effective.IntegrationError) as exc:
        print(f"solver failure (path {exc.path}, tau {exc.tau}): {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (dynamics.StepError, DomainError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {"kdv_effective": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "artifacts": {p.name: _sha256(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(files)} artifacts to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kdv-effective", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a TOML config or a manifest")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--validate-only", action="store_true")
    p_run.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.config, args.out, args.seed, args.threads, args.validate_only)


if __name__ == "__main__":
    sys.exit(main())
