import numpy as np
import jax
import jax.numpy as jnp
import pytest

from src import checks
from src import reduced
from src.fields import Grid2
from src.reduced import Loads, LoadSchedule, ReducedState


def test_flat_states(grid, mat):
    energy, terms = reduced.energy_e0(ReducedState.flat(grid), grid, mat)
    np.testing.assert_allclose(energy, .5, rtol=1e-14)
    np.testing.assert_allclose(terms['magstat'], .5, rtol=1e-14)
    for name in ('membrane', 'bending', 'exchange'):
        assert float(terms[name]) == 0.

    energy, terms = reduced.energy_e0(ReducedState.flat(grid, (1., 0., 0.)), grid, mat)
    membrane = .5 * (2 * mat.mu + mat.lambda_red)
    np.testing.assert_allclose(terms['membrane'], membrane, rtol=1e-14)
    np.testing.assert_allclose(energy, membrane, rtol=1e-14)


def test_energy_is_even_in_the_director(rng, grid, mat):
    state = ReducedState.random(rng, grid)
    flipped = state._replace(zeta=-state.zeta)
    np.testing.assert_allclose(reduced.energy_e0(flipped, grid, mat)[0],
                               reduced.energy_e0(state, grid, mat)[0], rtol=1e-14)


def test_random_state_is_admissible(rng, grid):
    ReducedState.random(rng, grid).validate(grid)


def test_validate_rejects_boundary_values(grid):
    state = ReducedState.flat(grid)
    with pytest.raises(ValueError, match='boundary'):
        state._replace(u=state.u.at[0, 4, 0].set(1e-3)).validate(grid)
    with pytest.raises(ValueError, match='boundary'):
        state._replace(v=state.v.at[4, -1].set(1e-3)).validate(grid)
    with pytest.raises(ValueError, match='unit'):
        state._replace(zeta=2 * state.zeta).validate(grid)
    with pytest.raises(AssertionError):
        state._replace(v=jnp.zeros((3, 3))).validate(grid)


def test_work(grid):
    loads = Loads.uniform(grid, f=(1., 1.), g=5., h=(1., 2., 3.))
    work = reduced.work_l0(loads, ReducedState.flat(grid), grid)
    np.testing.assert_allclose(work, 3., rtol=1e-14)
    with pytest.raises(AssertionError):
        reduced.work_l0(Loads.zeros(Grid2(5, 5)), ReducedState.flat(grid), grid)


@pytest.mark.parametrize('times, n', [([0.], 1), ([1., 2.], 2), ([0., 1., 1.], 3), ([0., 1.], 3)])
def test_schedule_rejects_bad_knots(grid, times, n):
    with pytest.raises(ValueError):
        LoadSchedule(times, [Loads.zeros(grid)] * n)


def test_schedule_interpolation(grid):
    start = Loads.uniform(grid, h=(1., 0., 0.))
    schedule = LoadSchedule([0., 1., 3.],
                            [start, start.scale(3.), start.scale(-1.)])
    np.testing.assert_allclose(schedule.loads_at(.5).hfield[..., 0], 2.)
    np.testing.assert_allclose(schedule.loads_at(2.).hfield[..., 0], 1.)
    np.testing.assert_allclose(schedule.rates_at(.5).hfield[..., 0], 2.)
    np.testing.assert_allclose(schedule.rates_at(1.).hfield[..., 0], -2.)
    np.testing.assert_allclose(schedule.rates_at(3.).hfield[..., 0], -2.)
    assert schedule.knots_between(0., 3.) == [1.]
    with pytest.raises(ValueError):
        schedule.loads_at(3.5)


def test_power_integral_matches_work_increment(rng, grid, mat):
    k1, k2 = jax.random.split(rng)
    state = ReducedState.random(k1, grid)
    a = Loads(f=jax.random.normal(k2, grid.shape + (2,)),
              g=jnp.ones(grid.shape),
              hfield=jnp.ones(grid.shape + (3,)))
    schedule = LoadSchedule([0., .4, 1.], [a, a.scale(-2.), a.scale(.5)])
    t0, t1 = .1, .9
    expected = float(reduced.total_f0(t1, state, schedule, grid, mat)
                     - reduced.total_f0(t0, state, schedule, grid, mat))
    np.testing.assert_allclose(reduced.power_integral(state, t0, t1, schedule, grid),
                               expected, rtol=1e-12)


def test_load_rate_norm(grid):
    schedule = LoadSchedule.ramp(Loads.zeros(grid), Loads.uniform(grid, h=(2., 0., 0.)))
    np.testing.assert_allclose(reduced.load_rate_norm(schedule, .5, grid), 2., rtol=1e-14)


def test_gradient_matches_finite_differences(rng, mat):
    grid = Grid2(8, 8)
    k1, k2, k3, k4 = jax.random.split(rng, 4)
    state = ReducedState.random(k1, grid)
    start = Loads(f=jax.random.normal(k2, grid.shape + (2,)),
                  g=jnp.zeros(grid.shape),
                  hfield=jax.random.normal(k3, grid.shape + (3,)))
    schedule = LoadSchedule.ramp(start, start.scale(2.))
    grad = reduced.gradient_f0(.5, state, schedule, grid, mat)
    direction = reduced.project_gradient(ReducedState.random(k4, grid), state, grid)

    def f(s):
        moved = jax.tree_util.tree_map(lambda a, d: a + s * d, state, direction)
        return float(reduced.total_f0(.5, moved, schedule, grid, mat))

    eps = 1e-5
    fd = (f(eps) - f(-eps)) / (2 * eps)
    exact = float(sum(jnp.vdot(g, d) for g, d in zip(grad, direction)))
    np.testing.assert_allclose(fd, exact, rtol=1e-6)


def test_projected_gradient_is_admissible(rng, grid, mat):
    state = ReducedState.random(rng, grid)
    schedule = LoadSchedule.constant(Loads.uniform(grid, f=(1., 0.), g=1.))
    grad = reduced.gradient_f0(0., state, schedule, grid, mat)
    boundary = 1. - grid.interior_mask()
    assert float(jnp.abs(grad.u * boundary[..., None]).max()) == 0.
    assert float(jnp.abs(grad.v * boundary).max()) == 0.
    np.testing.assert_allclose(jnp.sum(grad.zeta * state.zeta, -1), 0., atol=1e-12)


def test_dissipation(rng, grid):
    up = ReducedState.flat(grid).zeta
    np.testing.assert_allclose(reduced.dissipation_d0(up, -up, grid), 2., rtol=1e-14)
    k1, k2 = jax.random.split(rng)
    z1, z2 = reduced.random_director(k1, grid), reduced.random_director(k2, grid)
    assert float(reduced.dissipation_d0(z1, z1, grid)) == 0.
    assert float(reduced.dissipation_d0(z1, z2, grid)) == float(reduced.dissipation_d0(z2, z1, grid))


def test_huber_approaches_dissipation_from_below(rng, grid):
    k1, k2 = jax.random.split(rng)
    z1, z2 = reduced.random_director(k1, grid), reduced.random_director(k2, grid)
    exact = float(reduced.dissipation_d0(z1, z2, grid))
    values = [float(reduced.huber_d0(z2, z1, eps, grid)) for eps in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert values == sorted(values)
    assert values[-1] <= exact
    np.testing.assert_allclose(values[-1], exact, rtol=1e-2)


def test_variation_is_additive(rng, grid):
    zetas = [reduced.random_director(k, grid) for k in jax.random.split(rng, 4)]
    total = reduced.var_d0(zetas, (0, 3), grid)
    np.testing.assert_allclose(
        total, reduced.var_d0(zetas, (0, 1), grid) + reduced.var_d0(zetas, (1, 3), grid),
        rtol=1e-14)
    assert reduced.var_d0(zetas, (2, 2), grid) == 0.
    with pytest.raises(ValueError):
        reduced.var_d0(zetas, (2, 4), grid)


def test_gradient_vanishes_at_the_flat_state(grid, mat):
    schedule = LoadSchedule.constant(Loads.zeros(grid))
    grad = reduced.gradient_f0(0., ReducedState.flat(grid), schedule, grid, mat)
    for leaf in grad:
        assert float(jnp.abs(leaf).max()) == 0.


def _bump(x):
    return x ** 2 * (1 - x) ** 2


def _bump_bending(mat):
    """(1/24)∫Q_red(∇²v) for v = x²(1−x)²y²(1−y)², exact by Gauss–Legendre."""
    x, w = np.polynomial.legendre.leggauss(12)
    x, w = .5 * (x + 1), .5 * w
    dp = 2 * x * (1 - x) * (1 - 2 * x)
    ddp = 2 * (1 - 6 * x + 6 * x ** 2)
    vxx, vyy, vxy = np.outer(ddp, _bump(x)), np.outer(_bump(x), ddp), np.outer(dp, dp)
    q = (2 * mat.mu * (vxx ** 2 + vyy ** 2 + 2 * vxy ** 2)
         + mat.lambda_red * (vxx + vyy) ** 2)
    return float(w @ q @ w) / 24


def test_bump_energy_converges_to_quadrature(mat):
    exact = .5 + _bump_bending(mat)
    errors = []
    for n in (9, 17, 33):
        grid = Grid2(n, n)
        x, y = grid.coords()
        state = ReducedState.flat(grid)._replace(v=jnp.asarray(_bump(x) * _bump(y)))
        energy, terms = reduced.energy_e0(state, grid, mat)
        assert float(terms['membrane']) == 0. and float(terms['exchange']) == 0.
        errors.append(abs(float(energy) - exact))
        assert errors[-1] <= 20 * grid.dx ** 2 * (exact - .5)
    assert errors[-1] < errors[0]


@pytest.mark.slow
def test_gradient_on_twenty_problems(rng, mat):
    assert checks.gradient_defect(mat, rng, 20) <= 1e-6


@pytest.mark.slow
def test_dissipation_is_a_metric_on_five_hundred_triples(rng):
    defects = checks.metric_defects(rng, 500)
    assert defects['symmetry'] == 0.
    assert defects['self'] == 0.
    assert defects['triangle'] <= 1e-12
