import numpy as np
import jax
import jax.numpy as jnp
import pytest

from src import bulk
from src import reduced
from src.checks import random_rotation
from src.errors import OrientationError
from src.fields import Grid2, Grid3
from src.material import Material
from src.reduced import Loads

SMALL = Grid3(Grid2(5, 5), 3)
GRID3 = Grid3(Grid2(9, 9), 5)


def test_catalog_lookup():
    assert bulk.catalog('bump').name == 'bump'
    with pytest.raises(ValueError, match='Unknown profile'):
        bulk.catalog('saddle')
    with pytest.raises(ValueError):
        bulk.catalog('bump', Material(mu=-1.))


def test_moments_of_the_flat_plate():
    a, b = bulk.build_moments(bulk.catalog('zero_e3'), Grid2(5, 5))
    np.testing.assert_allclose(a, jnp.broadcast_to(jnp.array([0., 0., .5]), (5, 5, 3)),
                               atol=1e-15)
    np.testing.assert_allclose(b, 0., atol=1e-15)


def test_bending_moment_at_the_centre(mat):
    _, b = bulk.build_moments(bulk.catalog('bump'), Grid2(5, 5))
    # Δv = -1/8 at the centre of the bump
    expected = .5 * mat.lambda_ * (-1 / 8) / (2 * mat.mu + mat.lambda_)
    np.testing.assert_allclose(b[2, 2], [0., 0., expected], atol=1e-15)


def test_flat_plate_recovery():
    h = .5
    s = Material().well_depth(h)
    state = bulk.recovery_state(bulk.catalog('zero_e3'), h, SMALL)
    points = SMALL.points()
    np.testing.assert_allclose(state.y[..., :2], points[..., :2], atol=1e-15)
    np.testing.assert_allclose(state.y[..., 2], h * (1 + s) * points[..., 2], atol=1e-15)
    expected = jnp.diag(jnp.array([1., 1., 1. + s]))
    np.testing.assert_allclose(state.F, jnp.broadcast_to(expected, SMALL.shape + (3, 3)),
                               atol=1e-14)
    np.testing.assert_allclose(state.lam[..., 2], 1.)


def test_numeric_gradient_converges():
    spec = bulk.catalog('generic')
    h = .5
    errors = []
    for n, nz in ((9, 5), (17, 9)):
        grid3 = Grid3(Grid2(n, n), nz)
        y = bulk.recovery_deformation(spec, h, grid3)
        numeric = bulk.scaled_gradient(y, h, grid3)
        exact = bulk.scaled_gradient(spec, h, grid3)
        errors.append(float(jnp.abs(numeric - exact).max()))
    assert errors[1] < errors[0] / 3


@pytest.mark.parametrize('h', [0., 1.5])
def test_thickness_range(h):
    with pytest.raises(ValueError):
        bulk.recovery_state(bulk.catalog('zero_e3'), h, SMALL)


def test_orientation_is_preserved():
    for name in bulk.CATALOG:
        for h in (.5, .1):
            state = bulk.recovery_state(bulk.catalog(name), h, SMALL)
            assert float(jnp.linalg.det(state.F).min()) > 0.


def test_flat_plate_has_no_elastic_energy():
    for h in (.5, .2, .1):
        assert abs(bulk.bulk_elastic(bulk.catalog('zero_e3'), h, GRID3)) <= 1e-20


def test_shear_energy_approaches_the_membrane_term():
    spec = bulk.catalog('shear')
    e0, terms = bulk.limit_energy(spec, GRID3.section)
    membrane = terms['membrane']
    assert membrane > 0.
    e_el = bulk.bulk_elastic(spec, .05, GRID3)
    np.testing.assert_allclose(e_el, membrane, rtol=1e-2)


def test_elastic_energy_is_linear_in_the_moduli():
    spec = bulk.catalog('generic')
    stiff = spec.with_material(Material(mu=2., lambda_=2., cp=2.))
    np.testing.assert_allclose(bulk.bulk_elastic(stiff, .5, SMALL),
                               2 * bulk.bulk_elastic(spec, .5, SMALL), rtol=1e-10)


def test_rotor_exchange():
    spec = bulk.catalog('rotor')
    h = .5
    s = spec.mat.well_depth(h)
    plain = 4 * np.pi ** 2
    np.testing.assert_allclose(bulk.bulk_exchange(spec, h, GRID3, jacobian=False),
                               plain, rtol=1e-12)
    np.testing.assert_allclose(bulk.bulk_exchange(spec, h, GRID3),
                               plain * (1 + s / 3), rtol=1e-12)


def test_averages_of_the_flat_plate():
    h = .2
    spec = bulk.catalog('zero_e3')
    state = bulk.recovery_state(spec, h, GRID3)
    avg = bulk.averaged_quantities(state, h, GRID3, spec.mat)
    np.testing.assert_allclose(avg.U, 0., atol=1e-12)
    np.testing.assert_allclose(avg.V, 0., atol=1e-10)
    np.testing.assert_allclose(avg.W[..., :2], 0., atol=1e-12)
    np.testing.assert_allclose(avg.W[..., 2], h / 12, rtol=1e-10)
    np.testing.assert_allclose(avg.Z[..., 2], 1., atol=1e-14)


def test_averaged_displacement_of_the_shear():
    h = .2
    spec = bulk.catalog('shear')
    state = bulk.recovery_state(spec, h, GRID3)
    avg = bulk.averaged_quantities(state, h, GRID3, spec.mat)
    limit = bulk.sample_limit_state(spec, GRID3.section)
    np.testing.assert_allclose(avg.U, limit.u, atol=1e-10)


def test_bulk_dissipation():
    up = jnp.broadcast_to(jnp.array([0., 0., 1.]), GRID3.shape + (3,))
    np.testing.assert_allclose(bulk.dissipation_dh(up, -up, GRID3), 2., rtol=1e-14)
    assert float(bulk.dissipation_dh(up, up, GRID3)) == 0.


def test_elastic_density_is_frame_indifferent(rng):
    spec = bulk.catalog('generic')
    state = bulk.recovery_state(spec, .5, SMALL)
    r = random_rotation(rng)
    energy = bulk.bulk_elastic_fields(state.F, state.lam, .5, SMALL, spec.mat)
    rotated = bulk.bulk_elastic_fields(jnp.einsum('ij,...jk->...ik', r, state.F),
                                       jnp.einsum('ij,...j->...i', r, state.lam),
                                       .5, SMALL, spec.mat)
    np.testing.assert_allclose(rotated, energy, rtol=1e-10)
    np.testing.assert_allclose(
        bulk.bulk_elastic_fields(state.F, -state.lam, .5, SMALL, spec.mat), energy, rtol=1e-12)
    assert energy == pytest.approx(bulk.bulk_elastic(spec, .5, SMALL), rel=1e-12)


def test_elastic_fields_reject_reflections(mat):
    f = jnp.broadcast_to(jnp.diag(jnp.array([1., 1., -1.])), SMALL.shape + (3, 3))
    lam = jnp.broadcast_to(jnp.array([0., 0., 1.]), SMALL.shape + (3,))
    with pytest.raises(OrientationError):
        bulk.bulk_elastic_fields(f, lam, .5, SMALL, mat)


def test_gamma_table_of_the_flat_plate():
    hs = (.2, .1)
    rows = bulk.gamma_table(bulk.catalog('zero_e3'), hs, GRID3, GRID3.section,
                            dict(f=(1., 0.), g=1., h=(0., 0., 1.)))
    assert [r['h'] for r in rows] == list(hs)
    for r in rows:
        assert abs(r['E_el']) <= 1e-20
        assert r['E_exc'] == 0.
        np.testing.assert_allclose(r['E_mag'], .5, rtol=1e-14)
        np.testing.assert_allclose(r['E0'], .5, rtol=1e-14)
        np.testing.assert_allclose(r['E0_fd'], .5, rtol=1e-14)
        assert r['err'] <= 1e-14
        np.testing.assert_allclose(r['L0'], 1., rtol=1e-14)
        np.testing.assert_allclose(r['L_h'], 1. + r['h'] ** 4, rtol=1e-12)
        np.testing.assert_allclose(r['F_h'], r['E_h'] - r['L_h'])


def test_load_work_approaches_the_limit():
    spec = bulk.catalog('generic')
    loads = dict(f=(1., -1.), g=2., h=(.5, 0., 1.))
    l0 = bulk.limit_work(spec, Loads.uniform(GRID3.section, **loads), GRID3.section)
    works = [bulk.bulk_work(spec, Loads.uniform(GRID3.section, **loads), h, GRID3)
             for h in (.2, .05)]
    assert abs(works[1] - l0) < abs(works[0] - l0) or abs(works[1] - l0) <= 1e-6
    np.testing.assert_allclose(works[1], l0, rtol=1e-2)


def test_gamma_table_rejects_increasing_thickness():
    with pytest.raises(ValueError):
        bulk.gamma_table(bulk.catalog('zero_e3'), (.1, .2), SMALL, SMALL.section)
    with pytest.raises(ValueError):
        bulk.gamma_table(bulk.catalog('zero_e3'), (), SMALL, SMALL.section)


@pytest.mark.slow
def test_generic_profile_converges():
    grid3 = Grid3(Grid2(33, 33), 9)
    rows = bulk.gamma_table(bulk.catalog('generic'), bulk.GENERIC_SWEEP, grid3, grid3.section)
    errors = [r['err'] for r in rows]
    assert all(b < a for a, b in zip(errors[:-1], errors[1:]))
    assert errors[-1] <= .05 * rows[-1]['E0']


def test_averages_approach_the_limit_state():
    spec = bulk.catalog('generic')
    section = GRID3.section
    limit = bulk.sample_limit_state(spec, section)
    points = jnp.asarray(section.points().reshape(-1, 2))
    grad_v = jax.vmap(jax.grad(spec.v))(points).reshape(section.shape + (2,))
    w_limit = -jnp.concatenate([grad_v, jnp.zeros(section.shape + (1,))], -1) / 12
    w_err, v_err = [], []
    for h in (.1, .02):
        avg = bulk.averaged_quantities(bulk.recovery_state(spec, h, GRID3), h, GRID3, spec.mat)
        w_err.append(float(jnp.abs(avg.W - w_limit).max()))
        v_err.append(float(jnp.abs(avg.V - limit.v).max()))
    assert w_err[1] <= w_err[0] / 3
    assert v_err[1] <= 1e-5


def test_bulk_dissipation_matches_the_reduced_one():
    h = .1
    section = GRID3.section
    pair = [bulk.catalog(name) for name in ('generic', 'rotor')]
    z = [bulk.averaged_quantities(bulk.recovery_state(s, h, GRID3), h, GRID3, s.mat).Z
         for s in pair]
    limits = [bulk.sample_limit_state(s, section).zeta for s in pair]
    np.testing.assert_allclose(bulk.dissipation_dh(z[0], z[1], GRID3),
                               reduced.dissipation_d0(limits[0], limits[1], section),
                               rtol=5e-2)


def test_gamma_table_converges_under_grid_refinement():
    energies = []
    for n in (9, 17, 33):
        grid3 = Grid3(Grid2(n, n), 5)
        row, = bulk.gamma_table(bulk.catalog('generic'), (.2,), grid3, grid3.section)
        energies.append(row['E_h'])
    coarse, fine = abs(energies[1] - energies[0]), abs(energies[2] - energies[1])
    assert fine <= coarse / 3
