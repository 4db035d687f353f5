"""Torus averages of the perturbation written in Birkhoff coordinates.

Pushing the damping and the forcing through ``v = Psi(u)`` gives, in slow time,

    dv = P(v) dtau + B(v) dbeta,   P = P1 + P2,

with ``P1 = dPsi(u) u_xx``, the Ito correction
``P2_a = 1/2 sum_m b_m^2 d^2 Psi_a / du_m^2`` and ``B = dPsi(u) diag(b)``.
Averaging over the rotations ``Phi_theta`` of the first ``N`` pairs produces
the effective drift ``<P>`` and the averaged diffusion ``<B B^T>``; its
non-symmetric square root is realized by quadrature columns
``sqrt(w_q) Phi_{-theta_q} B(Phi_{theta_q} v)`` whose Gram matrix equals the
same-quadrature ``<B B^T>`` identically.

All evaluators accept batches ``(..., S, 2)``; averaged quantities carry the
batch axes in front.
"""
from __future__ import annotations

import functools
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import field
from .birkhoff import coords
from .birkhoff.backends import BirkhoffBackend, CapabilityError
from .birkhoff.numeric import numeric_hessian_diag

log = logging.getLogger(__name__)

LATTICE_NODES = 1 << 13


@dataclass(frozen=True)
class TorusQuadrature:
    """Equal- or positive-weight rule on ``[0, 2 pi)^dims``.

    ``degree`` is the largest ``|k|_inf`` for which every character
    ``exp(i k.theta)``, ``k != 0``, integrates to zero exactly (``-1`` when no
    such guarantee exists, as for Monte Carlo).
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    degree: int
    generator: tuple[int, ...] | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 2 or nodes.shape[0] != w.size:
            raise ValueError("nodes must be (Q, dims) with one weight per node")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w / w.sum())

    @property
    def dims(self) -> int:
        return self.nodes.shape[1]

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @classmethod
    def tensor(cls, dims: int, per_dim: int) -> "TorusQuadrature":
        """Trapezoid nodes ``2 pi i / M`` in each angle; exact for ``|k|_inf < M``."""
        grid = 2 * np.pi * np.arange(per_dim) / per_dim
        nodes = np.array(list(itertools.product(grid, repeat=dims))).reshape(-1, dims)
        return cls(nodes, np.full(len(nodes), 1.0 / len(nodes)), "tensor", per_dim - 1)

    @classmethod
    def lattice(cls, dims: int, total: int = LATTICE_NODES, seed: int | None = 0) -> "TorusQuadrature":
        """Rank-1 Korobov lattice ``2 pi (i z / n + Delta)`` with a random shift.

        The generator ``z = (1, a, a^2, ...) mod n`` maximizes the exactness
        degree over a fixed candidate set; the shift is drawn from ``seed``
        (``None`` disables it).
        """
        z, degree = _korobov_vector(dims, total)
        shift = np.zeros(dims) if seed is None else np.random.default_rng(seed).random(dims)
        i = np.arange(total)[:, None]
        nodes = 2 * np.pi * np.mod(i * np.array(z)[None, :] / total + shift, 1.0)
        return cls(nodes, np.full(total, 1.0 / total), "lattice", degree, tuple(z))

    @classmethod
    def monte_carlo(cls, dims: int, total: int, seed: int = 0) -> "TorusQuadrature":
        nodes = 2 * np.pi * np.random.default_rng(seed).random((total, dims))
        return cls(nodes, np.full(total, 1.0 / total), "mc", -1)

    @classmethod
    def default(cls, dims: int, per_dim: int = 16, seed: int = 0) -> "TorusQuadrature":
        return cls.tensor(dims, per_dim) if dims <= 3 else cls.lattice(dims, seed=seed)

    @classmethod
    def from_spec(cls, spec: dict | None, dims: int) -> "TorusQuadrature":
        spec = dict(spec or {})
        kind = spec.get("kind", "tensor" if dims <= 3 else "lattice")
        seed = int(spec.get("seed", 0))
        if kind == "tensor":
            return cls.tensor(dims, int(spec.get("nodes_per_dim", 16)))
        if kind == "lattice":
            return cls.lattice(dims, int(spec.get("total_nodes", LATTICE_NODES)), seed)
        if kind == "mc":
            return cls.monte_carlo(dims, int(spec.get("total_nodes", 4096)), seed)
        raise ValueError(f"unknown quadrature kind {kind!r}")

    def integrate_character(self, k) -> complex:
        return complex(np.sum(self.weights * np.exp(1j * self.nodes @ np.asarray(k, dtype=float))))

    def node_shift(self, steps) -> np.ndarray:
        """Shift ``sigma`` that maps the node set onto itself."""
        steps = np.asarray(steps)
        if self.kind == "tensor":
            M = self.degree + 1
            return 2 * np.pi * np.mod(steps, M) / M
        if self.kind == "lattice":
            n = self.size
            return 2 * np.pi * np.mod(int(steps) * np.array(self.generator), n) / n
        raise ValueError("Monte Carlo nodes admit no exact shift")


def _lattice_degree(z: np.ndarray, n: int, cap: int) -> int:
    """Largest d <= cap with no dual-lattice point ``0 < |k|_inf <= d``."""
    dims = len(z)
    for d in range(1, cap + 1):
        rng = np.arange(-d, d + 1)
        ks = np.array(np.meshgrid(*([rng] * dims), indexing="ij")).reshape(dims, -1).T
        ks = ks[np.abs(ks).max(axis=1) == d]
        if np.any(np.mod(ks @ z, n) == 0):
            return d - 1
    return cap


@functools.lru_cache(maxsize=None)
def _korobov_vector(dims: int, n: int) -> tuple[tuple[int, ...], int]:
    if dims == 1:
        return (1,), n - 1
    # the enumeration grows like (2 d + 1)^dims; keep it modest
    cap = max(1, min(int((2e5) ** (1 / dims) // 2), n // 2))
    best, best_deg = None, -1
    for a in range(3, min(n, 2003), 2):
        z = np.mod(a ** np.arange(dims, dtype=object), n).astype(np.int64)
        deg = _lattice_degree(z, n, cap)
        if deg > best_deg:
            best, best_deg = z, deg
            if deg == cap:
                break
    return tuple(int(x) for x in best), best_deg


def _pad_angles(theta: np.ndarray, S: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] > S:
        raise ValueError("more averaged angles than Birkhoff pairs")
    pad = [(0, 0)] * (theta.ndim - 1) + [(0, S - theta.shape[-1])]
    return np.pad(theta, pad)


def _orbit(v: np.ndarray, quad: TorusQuadrature) -> tuple[np.ndarray, np.ndarray]:
    """Rotated copies ``(..., Q, S, 2)`` and padded node angles ``(Q, S)``."""
    v = np.asarray(v, dtype=float)
    theta = _pad_angles(quad.nodes, v.shape[-2])
    return coords.rotate(v[..., None, :, :], theta), theta


@dataclass
class DriftField:
    """``v -> P(v)`` in the flattened layout ``(..., 2S)``."""

    evaluate: callable
    tag: str

    def __call__(self, v):
        return self.evaluate(np.asarray(v, dtype=float))


@dataclass
class DispersionField:
    """``v -> B(v)``, shape ``(..., 2S, 2S)``; column ``2(l-1)+c`` is noise ``beta_{+-l}``."""

    evaluate: callable
    tag: str

    def __call__(self, v):
        return self.evaluate(np.asarray(v, dtype=float))


@dataclass
class PerturbationFields:
    P1: DriftField
    P2: DriftField
    B: DispersionField
    P: DriftField

    def __iter__(self):
        # unpacks as (drift, dispersion)
        return iter((self.P, self.B))


def build_perturbation_fields(backend: BirkhoffBackend, noise,
                              numeric_step: float = 1e-3) -> PerturbationFields:
    """Drift ``P1``, Ito term ``P2`` and dispersion ``B`` for ``backend``.

    Backends without an analytic Hessian fall back to central second
    differences for ``P2``.
    """
    backend.require("forward", "inverse", "jacobian")
    S = backend.S
    b_flat = noise.per_coordinate()[: 2 * S]
    if b_flat.size < 2 * S:
        raise ValueError("noise specification has fewer modes than the backend")
    analytic_hessian = "hessian" in backend.capabilities

    def p1(v):
        u = backend.inverse(v)
        jac = backend.jacobian(u)
        return np.einsum("...am,...m->...a", jac, coords.flatten(field.laplacian(u)))

    def hess_diag(u):
        if analytic_hessian:
            return backend.hessian_diag(u)
        flat = u.reshape((-1,) + u.shape[-2:])
        out = np.array([numeric_hessian_diag(backend, x, step=numeric_step) for x in flat])
        return out.reshape(u.shape[:-2] + out.shape[-2:])

    def p2(v):
        return 0.5 * hess_diag(backend.inverse(v)) @ b_flat**2

    def dispersion(v):
        return backend.jacobian(backend.inverse(v)) * b_flat

    def total(v):
        u = backend.inverse(v)
        drift = np.einsum("...am,...m->...a", backend.jacobian(u),
                          coords.flatten(field.laplacian(u)))
        return drift + 0.5 * hess_diag(u) @ b_flat**2

    tag = backend.name
    return PerturbationFields(DriftField(p1, f"{tag}:P1"), DriftField(p2, f"{tag}:P2"),
                              DispersionField(dispersion, f"{tag}:B"),
                              DriftField(total, f"{tag}:P"))


def torus_average(f, v, quad: TorusQuadrature):
    """``<f>(v) = int f(Phi_theta v) d theta``; ``f`` maps ``(..., S, 2)`` to ``(..., *out)``."""
    rotated, _ = _orbit(v, quad)
    vals = np.asarray(f(rotated))
    batch = np.ndim(v) - 2
    return np.tensordot(vals, quad.weights, axes=([batch], [0]))


def _unrotate_vectors(x_flat: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return coords.flatten(coords.rotate(coords.unflatten(x_flat), -theta))


def effective_drift(P, v, quad: TorusQuadrature) -> np.ndarray:
    """``<P>(v) = int Phi_{-theta} P(Phi_theta v) d theta``, flattened ``(..., 2S)``."""
    rotated, theta = _orbit(v, quad)
    back = _unrotate_vectors(P(rotated), theta)
    return np.einsum("...qa,q->...a", back, quad.weights)


def _rotated_dispersion(B, v, quad):
    """``Phi_{-theta_q} B(Phi_{theta_q} v)`` for every node, shape ``(..., Q, 2S, 2S)``."""
    rotated, theta = _orbit(v, quad)
    Bq = B(rotated)
    # rotate each column back: act on the row index pairs
    rows = coords.unflatten(np.swapaxes(Bq, -1, -2))  # (..., Q, cols, S, 2)
    back = coords.rotate(rows, -theta[:, None, :])
    return np.swapaxes(coords.flatten(back), -1, -2)


def averaged_diffusion(B, v, quad: TorusQuadrature, return_residual: bool = False):
    """``<B B^T>(v) = int Phi_{-theta} (B B^T)(Phi_theta v) Phi_theta d theta``, symmetrized."""
    rotated, theta = _orbit(v, quad)
    Bq = B(rotated)
    BBt = Bq @ np.swapaxes(Bq, -1, -2)
    R = coords.rotation_blocks(theta)
    conj = np.swapaxes(R, -1, -2) @ BBt @ R
    avg = np.einsum("...qab,q->...ab", conj, quad.weights)
    sym = 0.5 * (avg + np.swapaxes(avg, -1, -2))
    resid = float(np.max(np.abs(avg - sym), initial=0.0))
    if resid > 1e-13 * max(1.0, float(np.max(np.abs(avg), initial=0.0))):
        log.warning("averaged diffusion asymmetry %.3g", resid)
    return (sym, resid) if return_residual else sym


def dispersion_kernel(B, v, k: int, l: int, theta) -> np.ndarray:
    """``R(k; l, theta)(v) = Phi^k_{-theta_k} B_kl(Phi_theta v)``, a 2x2 block (1-based k, l)."""
    v = np.asarray(v, dtype=float)
    theta = _pad_angles(np.asarray(theta, dtype=float), v.shape[-2])
    Bv = B(coords.rotate(v, theta))
    block = Bv[..., 2 * (k - 1):2 * k, 2 * (l - 1):2 * l]
    c, s = np.cos(theta[..., k - 1]), np.sin(theta[..., k - 1])
    rot_back = np.array([[c, s], [-s, c]])
    rot_back = np.moveaxis(rot_back, (0, 1), (-2, -1)) if rot_back.ndim > 2 else rot_back
    return rot_back @ block


def contracted_kernel(B, v, k: int, l: int, theta) -> np.ndarray:
    """``K_k(l, theta)(v) = v_k^T R(k; l, theta)(v)``, a row 2-vector."""
    v = np.asarray(v, dtype=float)
    return np.einsum("...i,...ij->...j", v[..., k - 1, :], dispersion_kernel(B, v, k, l, theta))


def dispersion_columns(B, v, quad: TorusQuadrature) -> np.ndarray:
    """Columns ``sqrt(w_q) R(.; l, theta_q)(v)``, shape ``(..., 2S, Q * 2S)``.

    Column ``q * 2S + m`` belongs to node ``q`` and noise coordinate ``m``.
    """
    Rq = _rotated_dispersion(B, v, quad) * np.sqrt(quad.weights)[:, None, None]
    Rq = np.moveaxis(Rq, -3, -2)  # (..., 2S, Q, 2S)
    return Rq.reshape(Rq.shape[:-2] + (-1,))


def averaged_action_drift(fields: PerturbationFields, I, quad: TorusQuadrature,
                          theta0=None) -> np.ndarray:
    """Averaged drift of the actions at ``reconstruct(I, theta0)``:

    ``F_k = <v_k . P1_k> + <v_k . P2_k> + 1/2 <sum_j |B_kj|_HS^2>``.
    """
    I = np.asarray(I, dtype=float)
    theta0 = np.zeros(I.shape) if theta0 is None else theta0
    v = coords.reconstruct(I, theta0)

    def integrand(w):
        P = coords.unflatten(fields.P1(w) + fields.P2(w))
        Bw = coords.unflatten(np.swapaxes(fields.B(w), -1, -2))  # (..., cols, S, 2)
        hs = np.sum(Bw**2, axis=(-3, -1))
        return np.sum(w * P, axis=-1) + 0.5 * hs

    return torus_average(integrand, v, quad)


def require_full(backend: BirkhoffBackend):
    missing = {"forward", "inverse", "jacobian"} - set(backend.capabilities)
    if missing:
        raise CapabilityError(
            f"backend {backend.name!r} lacks {sorted(missing)} needed by the averaging pipeline")
