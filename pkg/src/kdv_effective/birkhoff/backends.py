"""Realizations of the nonlinear Fourier transform.

Every backend maps fields of shape ``(..., S, 2)`` to Birkhoff vectors of
shape ``(..., S, 2)``: one action pair per retained Fourier pair.  Derivative
data is returned in the flattened layout of :func:`coords.flatten`:
``jacobian(u)`` has shape ``(..., 2S, 2S)`` with entry ``[a, m] = dv_a/du_m``,
and ``hessian_diag(u)[a, m] = d^2 v_a / du_m^2``.

Members a backend cannot provide raise :class:`CapabilityError`; the
``capabilities`` set lists what is available.
"""
from __future__ import annotations

import numpy as np

from . import coords

ALL_CAPABILITIES = frozenset(
    {"forward", "inverse", "jacobian", "hessian", "actions", "angles", "frequencies"})
FULL_CAPABILITY = frozenset({"forward", "inverse", "jacobian"})


class CapabilityError(RuntimeError):
    """Requested member is not provided by the backend."""


class BirkhoffBackend:
    name = "abstract"
    capabilities: frozenset = frozenset()
    # tolerance for inverse(forward(u)) == u
    inverse_tol = 0.0

    def __init__(self, S: int):
        if S < 1:
            raise ValueError("truncation S must be positive")
        self.S = S

    def require(self, *caps: str):
        missing = set(caps) - set(self.capabilities)
        if missing:
            raise CapabilityError(f"backend {self.name!r} lacks {sorted(missing)}")

    def forward(self, u):
        raise CapabilityError(f"backend {self.name!r} has no forward map")

    def inverse(self, v):
        raise CapabilityError(f"backend {self.name!r} has no inverse map")

    def jacobian(self, u):
        raise CapabilityError(f"backend {self.name!r} has no analytic Jacobian")

    def hessian_diag(self, u):
        raise CapabilityError(f"backend {self.name!r} has no analytic Hessian")

    def frequencies(self, I):
        raise CapabilityError(f"backend {self.name!r} has no frequency map")

    def actions_of(self, u):
        return coords.actions(self.forward(u))

    def angles_of(self, u):
        self.require("angles")
        return coords.angles(self.forward(u))

    def config(self) -> dict:
        return {"name": self.name, "S": self.S}


class LinearBackend(BirkhoffBackend):
    """The linearization at zero: ``v_s = |s|^{-1/2} u_s``.

    It conjugates the Airy flow ``u_t + u_xxx = 0`` to rotation of each pair.
    In the ``atan2(v_{-j}, v_j)`` convention the rotation is clockwise, so the
    angular velocities returned by :meth:`frequencies` are ``-j^3``.
    """

    name = "linear"
    capabilities = frozenset(
        {"forward", "inverse", "jacobian", "hessian", "actions", "angles", "frequencies"})
    inverse_tol = 1e-14

    def __init__(self, S: int):
        super().__init__(S)
        self.scale = np.arange(1, S + 1, dtype=float) ** -0.5

    def forward(self, u):
        return np.asarray(u, dtype=float) * self.scale[:, None]

    def inverse(self, v):
        return np.asarray(v, dtype=float) / self.scale[:, None]

    def jacobian(self, u):
        u = np.asarray(u, dtype=float)
        jac = np.diag(np.repeat(self.scale, 2))
        return np.broadcast_to(jac, u.shape[:-2] + jac.shape)

    def hessian_diag(self, u):
        u = np.asarray(u, dtype=float)
        return np.zeros(u.shape[:-2] + (2 * self.S, 2 * self.S))

    def frequencies(self, I):
        I = np.asarray(I, dtype=float)
        return np.broadcast_to(-np.arange(1, self.S + 1, dtype=float) ** 3, I.shape)


class SyntheticBackend(BirkhoffBackend):
    """``Psi(u) = Q(L u)`` with ``L = dPsi(0)`` the linear map and
    ``Q(w) = w + eps * q(w)`` a fixed quadratic coupling of the first
    ``n_coupled`` pairs.  ``Q`` has an inverse accurate to machine precision
    (Newton's method) and closed-form first and second derivatives, so the
    averaging pipeline can be checked against known answers.

    The coupling tensor is drawn once from ``coupling_seed``, symmetrized in
    its last two indices and normalized to unit Frobenius norm.  The map is
    only used on the ball ``eps * |w_coupled| <= ball``, where ``dQ`` stays
    within ``2 * ball`` of the identity.
    """

    name = "synthetic"
    # Q does not commute with rotations, so no frequency map is exposed
    capabilities = frozenset({"forward", "inverse", "jacobian", "hessian", "actions", "angles"})
    inverse_tol = 1e-12

    def __init__(self, S: int, eps_map: float = 0.1, n_coupled: int = 2,
                 coupling_seed: int = 0, ball: float = 0.3):
        super().__init__(S)
        if not 0 < ball < 0.5:
            raise ValueError("ball must lie in (0, 1/2) for the inverse to contract")
        self.eps = float(eps_map)
        self.n_coupled = min(n_coupled, S)
        self.coupling_seed = coupling_seed
        self.ball = ball
        d = 2 * self.n_coupled
        rng = np.random.default_rng(coupling_seed)
        C = rng.standard_normal((d, d, d))
        C = 0.5 * (C + C.transpose(0, 2, 1))
        self.C = C / np.linalg.norm(C)
        self.scale = np.arange(1, S + 1, dtype=float) ** -0.5
        self._lin = np.repeat(self.scale, 2)

    def config(self) -> dict:
        return {"name": self.name, "S": self.S, "eps_map": self.eps,
                "n_coupled": self.n_coupled, "coupling_seed": self.coupling_seed}

    def _check_ball(self, w_c):
        radius = np.linalg.norm(w_c, axis=-1)
        if np.any(self.eps * radius > self.ball):
            raise coords.DomainError(
                f"|w| = {radius.max():.3g} outside the invertibility ball "
                f"{self.ball / max(self.eps, 1e-300):.3g}")

    def _q(self, w_c):
        d = w_c.shape[-1]
        outer = (w_c[..., :, None] * w_c[..., None, :]).reshape(w_c.shape[:-1] + (d * d,))
        return outer @ self.C.reshape(d, d * d).T

    def synthetic_map(self, w):
        """``Q(w)`` acting on Birkhoff-like vectors of shape ``(..., S, 2)``."""
        x = coords.flatten(np.asarray(w, dtype=float)).copy()
        d = 2 * self.n_coupled
        self._check_ball(x[..., :d])
        x[..., :d] += self.eps * self._q(x[..., :d])
        return coords.unflatten(x)

    def synthetic_map_inverse(self, v, tol=1e-15, max_iter=50):
        """Solve ``Q(w) = v`` by Newton's method started at ``w = v``.

        Inside the ball ``Q`` is a diffeomorphism (``|eps dq| <= 2 ball < 1``),
        so the iteration converges quadratically; it stops once the update is
        below ``tol`` (relative) or stops shrinking at round-off level.
        """
        y = coords.flatten(np.asarray(v, dtype=float))
        d = 2 * self.n_coupled
        y_c = y[..., :d]
        self._check_ball(y_c)
        w_c = y_c.copy()
        scale = 1.0 + np.max(np.abs(y_c), initial=0.0)
        eye = np.eye(d)
        prev = np.inf
        for _ in range(max_iter):
            resid = w_c + self.eps * self._q(w_c) - y_c
            jac = eye + 2 * self.eps * np.einsum("abc,...c->...ab", self.C, w_c)
            step = np.linalg.solve(jac, resid[..., None])[..., 0]
            w_c = w_c - step
            delta = np.max(np.abs(step), initial=0.0)
            if delta <= tol * scale or (delta < 1e-12 * scale and delta >= prev):
                break
            prev = delta
        self._check_ball(w_c)
        x = y.copy()
        x[..., :d] = w_c
        return coords.unflatten(x)

    def forward(self, u):
        return self.synthetic_map(np.asarray(u, dtype=float) * self.scale[:, None])

    def inverse(self, v):
        return self.synthetic_map_inverse(v) / self.scale[:, None]

    def jacobian(self, u):
        u = np.asarray(u, dtype=float)
        w = coords.flatten(u * self.scale[:, None])
        d = 2 * self.n_coupled
        n = 2 * self.S
        jac = np.zeros(u.shape[:-2] + (n, n))
        jac[..., np.arange(n), np.arange(n)] = 1.0
        jac[..., :d, :d] += 2 * self.eps * np.einsum("abc,...c->...ab", self.C, w[..., :d])
        return jac * self._lin

    def hessian(self, u):
        """Full second derivative ``d^2 v_a / du_m du_n``, shape ``(..., 2S, 2S, 2S)``."""
        u = np.asarray(u, dtype=float)
        n = 2 * self.S
        d = 2 * self.n_coupled
        hess = np.zeros(u.shape[:-2] + (n, n, n))
        lin = self._lin[:d]
        hess[..., :d, :d, :d] = 2 * self.eps * self.C * lin[:, None] * lin[None, :]
        return hess

    def hessian_diag(self, u):
        u = np.asarray(u, dtype=float)
        n = 2 * self.S
        d = 2 * self.n_coupled
        out = np.zeros(u.shape[:-2] + (n, n))
        diag = np.einsum("amm->am", self.C) * self._lin[:d] ** 2
        out[..., :d, :d] = 2 * self.eps * diag
        return out


def make_backend(spec: dict | str, S: int) -> BirkhoffBackend:
    """Build a backend from a config entry such as ``{"name": "synthetic", "eps_map": 0.1}``."""
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name")
    if name == "linear":
        return LinearBackend(S)
    if name == "synthetic":
        return SyntheticBackend(S, **spec)
    if name == "hill":
        from .hill import HillBackend
        return HillBackend(S, **spec)
    raise ValueError(f"unknown backend {name!r}; expected linear | hill | synthetic")
