"""Central finite-difference derivatives of a backend's forward map."""
from __future__ import annotations

import numpy as np

from . import coords


class DifferentiationError(FloatingPointError):
    """Finite differences produced non-finite values."""


def _perturbed(u: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    n = u.size
    basis = np.eye(n).reshape((n,) + u.shape) * step
    return u[None] + basis, u[None] - basis


def numeric_jacobian(backend, u, step: float = 1e-5) -> np.ndarray:
    """``dv_a/du_m`` in the flattened layout, shape ``(2S, 2S)``.

    All perturbed evaluations go through one batched ``forward`` call, so the
    result does not depend on evaluation order.
    """
    backend.require("forward")
    u = np.asarray(u, dtype=float)
    plus, minus = _perturbed(u, step)
    fp = coords.flatten(backend.forward(plus))
    fm = coords.flatten(backend.forward(minus))
    jac = ((fp - fm) / (2 * step)).T
    if not np.all(np.isfinite(jac)):
        raise DifferentiationError("non-finite Jacobian entries")
    return jac


def numeric_hessian_diag(backend, u, step: float = 1e-3, coord: int | None = None) -> np.ndarray:
    """``d^2 v_a / du_m^2`` for every output ``a`` and input coordinate ``m``.

    With ``coord`` given, only that input column is returned.
    """
    backend.require("forward")
    u = np.asarray(u, dtype=float)
    plus, minus = _perturbed(u, step)
    f0 = coords.flatten(backend.forward(u))
    fp = coords.flatten(backend.forward(plus))
    fm = coords.flatten(backend.forward(minus))
    hess = ((fp - 2 * f0[None] + fm) / step**2).T
    if not np.all(np.isfinite(hess)):
        raise DifferentiationError("non-finite Hessian entries")
    return hess if coord is None else hess[:, coord]
