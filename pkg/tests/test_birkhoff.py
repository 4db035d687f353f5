import numpy as np
import pytest
from hypothesis import given, strategies as st

from kdv_effective import dynamics, field
from kdv_effective.birkhoff import (CapabilityError, DomainError, HillBackend, LinearBackend,
                                    SpectralResolutionError, SyntheticBackend, action_norm,
                                    actions, angles, hill_actions, make_backend,
                                    numeric_hessian_diag, numeric_jacobian, reconstruct,
                                    rotate, weighted_norm)
from kdv_effective.birkhoff import coords
from kdv_effective.birkhoff.hill import (discriminant, gap_edges, loglog_slope,
                                         quasilinear_residual)
from oracles import floquet_discriminant

angle = st.floats(-20, 20, allow_nan=False)


def pair(a, b):
    return np.array([[a, b]], dtype=float)


@pytest.mark.parametrize("v,expected", [((np.sqrt(2), 0), 1.0), ((0, 0), 0.0), ((3, 4), 12.5)])
def test_actions_examples(v, expected):
    assert actions(pair(*v))[0] == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("v,expected", [((1, 0), 0.0), ((0, 2), np.pi / 2), ((0, 0), 0.0),
                                        ((-1, -1e-300), np.pi)])
def test_angles_examples(v, expected):
    phi = angles(pair(*v))[0]
    assert 0 <= phi < 2 * np.pi
    assert phi == pytest.approx(expected, abs=1e-15)


def test_angle_just_below_zero_wraps_into_range():
    phi = angles(pair(1.0, -1e-17))[0]
    assert 0 <= phi < 2 * np.pi


def test_rotate_examples():
    v = pair(1, 0)
    np.testing.assert_array_equal(rotate(v, np.zeros(1)), v)
    np.testing.assert_allclose(rotate(v, np.array([np.pi / 2])), pair(0, 1), atol=1e-16)


@given(st.integers(0, 2**31 - 1), angle, angle)
def test_rotation_group_law_and_invariance(seed, a, b):
    v = np.random.default_rng(seed).standard_normal((5, 2))
    alpha, beta = np.full(5, a), np.full(5, b)
    np.testing.assert_allclose(rotate(rotate(v, alpha), beta), rotate(v, alpha + beta),
                               atol=1e-12)
    I = actions(v)
    assert np.all(np.abs(actions(rotate(v, alpha)) - I) <= 1e-14 * np.maximum(I, 1e-300) + 1e-300)
    dphi = coords.wrap_angle(angles(rotate(v, alpha)) - angles(v) - a)
    assert np.all(np.minimum(dphi, 2 * np.pi - dphi) < 1e-9)


def test_reconstruct_examples():
    np.testing.assert_allclose(reconstruct(np.array([1.0]), np.array([0.0])),
                               pair(np.sqrt(2), 0))
    assert np.all(reconstruct(np.zeros(3), np.ones(3)) == 0)
    with pytest.raises(DomainError):
        reconstruct(np.array([-1.0]), np.zeros(1))


@given(st.integers(0, 2**31 - 1))
def test_reconstruct_round_trip(seed):
    v = np.random.default_rng(seed).standard_normal((6, 2))
    np.testing.assert_allclose(reconstruct(actions(v), angles(v)), v, atol=1e-12)


def test_norms():
    v = np.array([[1.0, 0.0], [0.0, 2.0]])
    # j^{1+2r}|b_j|^2 with r = 1: 1 + 8 * 4
    assert weighted_norm(v, 1.0) == pytest.approx(np.sqrt(33))
    assert action_norm(actions(v), 0.0) == pytest.approx(2 * (0.5 + 2 * 2))


def test_flatten_and_rotation_blocks():
    rng = np.random.default_rng(0)
    v, th = rng.standard_normal((3, 2)), rng.uniform(0, 6, 3)
    np.testing.assert_allclose(coords.rotation_blocks(th) @ coords.flatten(v),
                               coords.flatten(rotate(v, th)), atol=1e-15)
    np.testing.assert_array_equal(coords.unflatten(coords.flatten(v)), v)


# linear backend

@pytest.mark.parametrize("modes,j,expected", [({1: 1.0}, 1, (1.0, 0.0)), ({4: 2.0}, 4, (1.0, 0.0)),
                                              ({-3: 3.0}, 3, (0.0, np.sqrt(3)))])
def test_linear_forward_examples(modes, j, expected):
    u = field.FourierField.from_modes(4, modes).pairs
    np.testing.assert_allclose(LinearBackend(4).forward(u)[j - 1], expected, atol=1e-15)


def test_linear_zero_and_inverse():
    be = LinearBackend(5)
    assert np.all(be.forward(np.zeros((5, 2))) == 0)
    u = np.random.default_rng(1).standard_normal((5, 2))
    np.testing.assert_allclose(be.inverse(be.forward(u)), u, rtol=be.inverse_tol)


def test_linear_numeric_jacobian_is_diagonal_scaling():
    be = LinearBackend(6)
    u = np.random.default_rng(2).standard_normal((6, 2))
    expected = np.diag(np.repeat(np.arange(1, 7) ** -0.5, 2))
    np.testing.assert_allclose(numeric_jacobian(be, u), expected, atol=1e-10)
    np.testing.assert_allclose(be.jacobian(u), expected, atol=1e-15)
    assert np.abs(numeric_hessian_diag(be, np.zeros((6, 2)))).max() < 1e-6


def test_airy_rotation_conjugacy():
    """Pairs of dPsi(0) u rotate at angular velocity -j^3 under u_t = -u_xxx."""
    S, t = 6, 1.0
    be = LinearBackend(S)
    u0 = np.random.default_rng(3).standard_normal((S, 2))
    u1 = dynamics.integrate_fields(u0, [t], 0.01, 0.0, nonlinear=False)[0]
    v0, v1 = be.forward(u0), be.forward(u1)
    np.testing.assert_allclose(actions(v1), actions(v0), atol=1e-10)
    j = np.arange(1, S + 1)
    advance = coords.wrap_angle(angles(v1) - angles(v0))
    expected = coords.wrap_angle(be.frequencies(actions(v0)) * t)
    np.testing.assert_allclose(np.exp(1j * advance), np.exp(1j * expected), atol=1e-6)
    np.testing.assert_allclose(expected, coords.wrap_angle(-(j**3) * t))


# synthetic backend

def small_v(seed, S=3, radius=0.5):
    return radius * np.random.default_rng(seed).standard_normal((S, 2)) / np.sqrt(2 * S)


def test_synthetic_identity_at_zero_eps():
    be = SyntheticBackend(3, eps_map=0.0)
    w = small_v(0)
    np.testing.assert_array_equal(be.synthetic_map(w), w)


def test_synthetic_inverse_round_trip():
    be = SyntheticBackend(3, eps_map=0.2)
    for seed in range(100):
        w = small_v(seed)
        np.testing.assert_allclose(be.synthetic_map_inverse(be.synthetic_map(w)), w, atol=1e-10)
        u = be.inverse(w)
        np.testing.assert_allclose(be.forward(u), w, atol=1e-12)
    assert np.all(be.forward(np.zeros((3, 2))) == 0)


def test_synthetic_ball_enforced():
    be = SyntheticBackend(2, eps_map=0.5)
    with pytest.raises(DomainError):
        be.synthetic_map(np.full((2, 2), 2.0))


@pytest.mark.parametrize("seed", range(5))
def test_synthetic_derivatives_match_differences(seed):
    be = SyntheticBackend(3, eps_map=0.3, coupling_seed=seed)
    u = be.inverse(small_v(seed))
    np.testing.assert_allclose(numeric_jacobian(be, u, 1e-5), be.jacobian(u), atol=1e-6)
    np.testing.assert_allclose(numeric_hessian_diag(be, u, 1e-3), be.hessian_diag(u), atol=1e-6)
    full = be.hessian(u)
    np.testing.assert_allclose(np.einsum("amm->am", full), be.hessian_diag(u), atol=1e-15)


def test_capabilities_and_factory():
    assert isinstance(make_backend("linear", 4), LinearBackend)
    syn = make_backend({"name": "synthetic", "eps_map": 0.05}, 4)
    assert syn.eps == 0.05
    with pytest.raises(CapabilityError):
        syn.frequencies(np.zeros(4))
    hill = make_backend({"name": "hill", "n_gaps": 3}, 8)
    assert hill.capabilities == {"actions"}
    for call in (hill.forward, hill.inverse, hill.jacobian, hill.angles_of):
        with pytest.raises(CapabilityError):
            call(np.zeros((8, 2)))
    with pytest.raises(ValueError):
        make_backend("nope", 4)


# hill backend

def test_hill_zero_field():
    assert np.all(hill_actions(np.zeros((8, 2)), 4) == 0)


@pytest.mark.parametrize("eps", [0.01, 0.003])
def test_hill_small_amplitude(eps):
    u = field.FourierField.from_modes(8, {1: eps}).pairs
    assert hill_actions(u, 1)[0] == pytest.approx(eps**2 / 2, rel=0.05)


def test_hill_asymptotic_residual_is_cubic():
    """Deviation from the quadratic law shrinks by ~8x when eps halves."""
    base = field.random_field(8, 1.0, np.random.default_rng(5))
    j = np.arange(1, 5)
    res = []
    for eps in (0.04, 0.02, 0.01):
        u = eps * base
        res.append(np.max(np.abs(hill_actions(u, 4) - np.sum(u[:4] ** 2, axis=1) / (2 * j))))
    ratios = np.array(res[:-1]) / np.array(res[1:])
    assert np.all(ratios > 6)


def test_discriminant_matches_ode_oracle():
    u = field.random_field(6, 0.5, np.random.default_rng(7))
    for lam in (-0.3, 0.2, 0.9, 2.5):
        assert discriminant(u, lam, 4096)[0] == pytest.approx(floquet_discriminant(u, lam),
                                                              abs=1e-8)


def test_gap_edges_are_band_edges():
    u = field.random_field(6, 0.5, np.random.default_rng(8))
    edges = gap_edges(u, 3, 24)
    for n, (lo, hi) in enumerate(edges, start=1):
        target = 2.0 if n % 2 == 0 else -2.0
        assert floquet_discriminant(u, lo) == pytest.approx(target, abs=1e-6)
        assert floquet_discriminant(u, hi) == pytest.approx(target, abs=1e-6)


def test_hill_resolution_errors():
    with pytest.raises(SpectralResolutionError):
        hill_actions(np.zeros((4, 2)), 20, K=16)
    with pytest.raises(SpectralResolutionError):
        HillBackend(4, n_gaps=30, resolution=16)


def test_hill_actions_conserved_by_kdv():
    S = 16
    u0 = field.random_field(S, 0.1, np.random.default_rng(11))
    u1 = dynamics.integrate_fields(u0, [1.0], dynamics.default_dt_fast(S), 0.0)[0]
    be = HillBackend(S, n_gaps=8)
    I0, I1 = be.actions_of(u0), be.actions_of(u1)
    assert np.all(I0 >= 0)
    assert np.max(np.abs(I1 - I0) / I0) < 1e-3


def test_quasilinear_residual_is_small_and_linear_in_amplitude():
    base = np.stack([field.random_field(8, 1.0, np.random.default_rng(s)) for s in range(4)])
    r1 = quasilinear_residual(0.01 * base, 4)
    r2 = quasilinear_residual(0.02 * base, 4)
    assert np.all(r1 < 0.05)
    np.testing.assert_allclose(r2 / r1, 2.0, rtol=0.1)


def test_loglog_slope():
    j = np.arange(2, 9)
    assert loglog_slope(j, 3.0 * j**-1.5) == pytest.approx(-1.5)
