import numpy as np
import jax
import jax.numpy as jnp
import chex
import pytest

from src import material
from src import types_ as types
from src.checks import (
    TAYLOR_EPS, density_symmetry_defect, random_gradient, random_rotation,
    taylor_defect, taylor_remainders
)
from src.errors import InvariantError, OrientationError, SpectralError
from src.material import Material


def random_material(rng):
    mu, lam, cp = jax.random.uniform(rng, (3,), minval=.1, maxval=3.)
    return Material(mu=float(mu), lambda_=float(lam), cp=float(cp)).validate()


@pytest.mark.parametrize('field, kwargs', [
    ('mu', dict(mu=-1.)),
    ('lambda', dict(mu=1., lambda_=-1.)),
    ('cp', dict(cp=-.1)),
    ('pexp', dict(pexp=3.)),
    ('beta', dict(beta=6.)),
])
def test_material_invariants(field, kwargs):
    with pytest.raises(InvariantError) as exc:
        Material(**kwargs).validate()
    assert exc.value.field == field


def test_reduced_form_matches_shift_minimization(rng):
    for key in jax.random.split(rng, 10):
        k1, k2 = jax.random.split(key)
        mat = random_material(k1)
        xi = material.sym(jax.random.normal(k2, (100, 2, 2)))
        closed = material.q_phi_red(xi, mat)
        shifted = material.q_phi_red(xi, mat, method='shift')
        np.testing.assert_allclose(closed, shifted, rtol=1e-10)


def test_optimal_shift_of_the_well(mat):
    c, value = material.optimal_shift(-jnp.outer(types.E3, types.E3), mat)
    np.testing.assert_allclose(c, [0., 0., .5], atol=1e-15)
    np.testing.assert_allclose(value, 0., atol=1e-15)


def test_optimal_shift_methods_agree(rng, mat):
    b = material.sym(jax.random.normal(rng, (20, 3, 3)))
    c1, v1 = material.optimal_shift(b, mat, 'closed')
    c2, v2 = material.optimal_shift(b, mat, 'linear')
    chex.assert_trees_all_close((c1, v1), (c2, v2), atol=1e-12)


def test_optimal_shift_is_a_minimum(rng, mat):
    b = material.sym(jax.random.normal(rng, (3, 3)))
    c, value = material.optimal_shift(b, mat)
    for key in jax.random.split(rng, 10):
        other = c + .1 * jax.random.normal(key, (3,))
        shifted = b.at[:, 2].add(other).at[2, :].add(other)
        assert float(material.q_phi(shifted, mat)) >= float(value)


def test_eigh_and_square_root(rng):
    a = jax.random.normal(rng, (5, 3, 3))
    spd = jnp.einsum('nij,nkj->nik', a, a) + .1 * jnp.eye(3)
    w, v = material.eigh3(spd)
    rebuilt = jnp.einsum('nik,nk,njk->nij', v, w, v)
    np.testing.assert_allclose(rebuilt, spd, atol=1e-12)
    root = material.sqrt_spd3(spd)
    np.testing.assert_allclose(root @ root, spd, atol=1e-12)


def test_square_root_rejects_bad_input():
    with pytest.raises(SpectralError):
        material.sqrt_spd3(jnp.diag(jnp.array([1., -1., 2.])))
    with pytest.raises(SpectralError):
        material.sqrt_spd3(jnp.array([[1., 1., 0.], [0., 1., 0.], [0., 0., 1.]]))


def test_phi_vanishes_on_rotations(rng, mat):
    r = random_rotation(rng)
    np.testing.assert_allclose(material.phi(r, mat), 0., atol=1e-14)
    with pytest.raises(OrientationError):
        material.phi(jnp.diag(jnp.array([1., 1., -1.])), mat)


def _unit_directions(rng, n):
    ys = jax.random.normal(rng, (n, 3, 3))
    return ys / jnp.linalg.norm(ys, axis=(1, 2), keepdims=True)


def test_phi_taylor_expansion(rng, mat):
    for y in _unit_directions(rng, 10):
        assert taylor_defect(y, mat) <= 1e-3
        assert np.abs(taylor_remainders(y, mat)).max() <= .1


def test_taylor_remainders_use_phi(rng, mat):
    y = _unit_directions(rng, 1)[0]
    direct = [2 * material.phi(jnp.eye(3) + eps * y, mat) / eps ** 2 - material.q_phi(y, mat)
              for eps in TAYLOR_EPS]
    np.testing.assert_allclose(taylor_remainders(y, mat), direct, rtol=1e-8, atol=1e-10)


@pytest.mark.slow
def test_phi_taylor_expansion_on_fifty_directions(rng):
    for mat, key in zip((Material(), Material(cp=0.), Material(mu=2., lambda_=.5)),
                        jax.random.split(rng, 3)):
        worst = max(taylor_defect(y, mat) for y in _unit_directions(key, 50))
        assert worst <= 1e-3


@pytest.mark.parametrize('h', [1., .5, .1])
def test_energy_well(h, mat):
    f = jnp.diag(jnp.array([1., 1., 1. + mat.well_depth(h)]))
    np.testing.assert_allclose(material.w_h(f, types.E3, h, mat), 0., atol=1e-12)


def test_density_symmetries(rng, mat):
    for key in jax.random.split(rng, 50):
        k1, k2, k3, k4 = jax.random.split(key, 4)
        f = random_gradient(k1)
        lam = jax.random.normal(k2, (3,))
        lam = lam / jnp.linalg.norm(lam)
        r = random_rotation(k3)
        h = float(jax.random.uniform(k4, minval=.1, maxval=1.))
        w = material.w_h(f, lam, h, mat)
        np.testing.assert_allclose(material.w_h(r @ f, r @ lam, h, mat), w, atol=1e-12)
        np.testing.assert_allclose(material.w_h(f, -lam, h, mat), w, atol=1e-12)


@pytest.mark.parametrize('h', [1., .5, .1])
def test_density_symmetries_on_two_hundred_triples(rng, mat, h):
    assert density_symmetry_defect(mat, rng, 200, h) <= 1e-12


def test_spontaneous_strain_inverse(rng, mat):
    f = random_gradient(rng)
    lam = types.E1
    k = material.k_h(f, lam, .5, mat)
    k_inv = material.k_h_inverse(f, lam, .5, mat)
    np.testing.assert_allclose(k @ k_inv, jnp.eye(3), atol=1e-14)


def test_axis_requires_unit_magnetization(mat):
    with pytest.raises(ValueError):
        material.k_h(jnp.eye(3), 2 * types.E3, .5, mat)


def test_adjugate(rng):
    f = random_gradient(rng)
    np.testing.assert_allclose(material.adjugate3(f) @ f, jnp.linalg.det(f) * jnp.eye(3),
                               atol=1e-14)
