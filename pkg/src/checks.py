"""Reduced-scale invariant suite run by the `check` subcommand."""
import logging
from typing import Callable

import numpy as np
import jax
import jax.numpy as jnp

from src import bulk
from src import magnetostatics
from src import material
from src import ops
from src import reduced
from src import types_ as types
from src.config import RunConfig
from src.errors import MagnetoplateError
from src.fields import Grid2, Grid3
from src.material import Material
from src.reduced import Loads, LoadSchedule, ReducedState

log = logging.getLogger(__name__)

Check = Callable[[Material, types.RNG], tuple[bool, str]]
_REGISTRY: list[tuple[str, Check]] = []


def check(name: str) -> Callable[[Check], Check]:
    def register(fn: Check) -> Check:
        _REGISTRY.append((name, fn))
        return fn
    return register


def random_rotation(rng: types.RNG) -> types.Array:
    q, r = jnp.linalg.qr(jax.random.normal(rng, (3, 3)))
    q = q * jnp.sign(jnp.diagonal(r))
    return q * jnp.sign(jnp.linalg.det(q))


def random_gradient(rng: types.RNG, scale: float = .3) -> types.Array:
    return jnp.eye(3) + scale * jax.random.uniform(rng, (3, 3), minval=-1., maxval=1.)


@check('reduced_quadratic_form')
def _reduced_form(mat, rng):
    xi = jax.random.normal(rng, (200, 2, 2))
    xi = material.sym(xi)
    closed = material.q_phi_red(xi, mat)
    shifted = material.q_phi_red(xi, mat, method='shift')
    err = float(jnp.max(jnp.abs(closed - shifted) / jnp.maximum(jnp.abs(closed), 1e-300)))
    return err <= 1e-10, f'max relative error {err:.3g}'


@check('energy_well')
def _energy_well(mat, rng):
    worst = 0.
    for h in (1., .5, .1):
        f = jnp.diag(jnp.array([1., 1., 1. + mat.well_depth(h)]))
        worst = max(worst, abs(float(material.w_h(f, types.E3, h, mat))))
    return worst <= 1e-12, f'max W_h on the well {worst:.3g}'


_w_batch = jax.jit(jax.vmap(material.w_h_delta, in_axes=(0, 0, None, None)))


def density_symmetry_defect(mat: Material, rng: types.RNG, n: int, h: float = .5) -> float:
    """Largest |W_h(RF, Rλ) − W_h(F, λ)| or |W_h(F, −λ) − W_h(F, λ)| over n triples."""
    k1, k2, k3 = jax.random.split(rng, 3)
    f = jax.vmap(random_gradient)(jax.random.split(k1, n))
    lam = jax.random.normal(k2, (n, 3))
    lam = lam / jnp.linalg.norm(lam, axis=-1, keepdims=True)
    r = jax.vmap(random_rotation)(jax.random.split(k3, n))
    eye = jnp.eye(3)
    w = _w_batch(f - eye, lam, h, mat)
    rotated = _w_batch(r @ f - eye, jnp.einsum('nij,nj->ni', r, lam), h, mat)
    flipped = _w_batch(f - eye, -lam, h, mat)
    return float(jnp.maximum(jnp.abs(rotated - w), jnp.abs(flipped - w)).max())


@check('frame_indifference_and_parity')
def _frame(mat, rng):
    worst = density_symmetry_defect(mat, rng, 200)
    return worst <= 1e-12, f'max deviation over 200 triples {worst:.3g}'


TAYLOR_EPS = (4e-3, 2e-3, 1e-3, 5e-4, 2.5e-4)


@jax.jit
def taylor_remainders(y: types.Array, mat: Material) -> types.Array:
    """2Φ(I + εY)/ε² − Q_Φ(Y) over `TAYLOR_EPS`."""
    eps = jnp.asarray(TAYLOR_EPS)
    values = jax.vmap(lambda e: material.phi_delta(e * y, mat))(eps)
    return 2 * values / eps ** 2 - material.q_phi(y, mat)


def taylor_defect(y: types.Array, mat: Material) -> float:
    """Remainder extrapolated to ε = 0, relative to the largest remainder.

    The remainder is c₁ε + c₂ε² + … with c₁ possibly zero; the constant
    term of a cubic fit in ε has to vanish.
    """
    r = np.asarray(taylor_remainders(y, mat))
    t = np.asarray(TAYLOR_EPS) / TAYLOR_EPS[0]
    c0 = np.polyfit(t, r, 3)[-1]
    return abs(c0) / max(np.abs(r).max(), 1e-300)


@check('taylor_expansion')
def _taylor(mat, rng):
    ys = jax.random.normal(rng, (50, 3, 3))
    ys = ys / jnp.linalg.norm(ys, axis=(1, 2), keepdims=True)
    worst = max(taylor_defect(y, mat) for y in ys)
    return worst <= 1e-3, f'max extrapolated remainder {worst:.3g}'


def _small_problem(rng: types.RNG, grid: Grid2) -> tuple[ReducedState, LoadSchedule]:
    k1, k2, k3 = jax.random.split(rng, 3)
    state = ReducedState.random(k1, grid)
    start = Loads(f=jax.random.normal(k2, grid.shape + (2,)),
                  g=jnp.zeros(grid.shape),
                  hfield=jax.random.normal(k3, grid.shape + (3,)))
    return state, LoadSchedule.ramp(start, start.scale(2.))


def gradient_defect(mat: Material, rng: types.RNG, n: int, grid: Grid2 = Grid2(8, 8)) -> float:
    """Worst relative mismatch of `gradient_f0` against central differences over n problems."""
    eps = 1e-5
    worst = 0.
    for key in jax.random.split(rng, n):
        k1, k2 = jax.random.split(key)
        state, schedule = _small_problem(k1, grid)
        grad = reduced.gradient_f0(.5, state, schedule, grid, mat)
        direction = reduced.project_gradient(ReducedState.random(k2, grid), state, grid)

        def f(s):
            moved = jax.tree_util.tree_map(lambda a, d: a + s * d, state, direction)
            return float(reduced.total_f0(.5, moved, schedule, grid, mat))

        fd = (f(eps) - f(-eps)) / (2 * eps)
        exact = float(sum(jnp.vdot(g, d) for g, d in zip(grad, direction)))
        worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-12))
    return worst


@check('gradient_finite_differences')
def _gradient(mat, rng):
    worst = gradient_defect(mat, rng, 20)
    return worst <= 1e-6, f'max relative error over 20 states {worst:.3g}'


@check('static_frozen_director')
def _static(mat, rng):
    grid = Grid2(16, 16)
    initial = ReducedState.random(rng, grid)._replace(zeta=ReducedState.flat(grid).zeta)
    schedule = LoadSchedule.constant(Loads.zeros(grid))
    opts = ops.SolveOptions(freeze_zeta=True, grad_tol=1e-10, cg_tol=1e-12)
    state, report = ops.minimize_f0(initial, 0., schedule, grid, mat, opts)
    err = abs(report.energy - .5)
    sup = float(max(jnp.abs(state.u).max(), jnp.abs(state.v).max()))
    monotone = all(b <= a + 1e-12 for a, b in zip(report.history[:-1], report.history[1:]))
    return err <= 1e-6 and sup <= 1e-6 and monotone, f'|E - 0.5| = {err:.3g}, sup = {sup:.3g}'


def metric_defects(rng: types.RNG, n: int, grid: Grid2 = Grid2(5, 5)) -> dict[str, float]:
    """Symmetry, self-distance and triangle defects of D₀ over n random triples."""
    keys = jax.random.split(rng, 3 * n)
    z = jnp.stack([reduced.random_director(k, grid) for k in keys]).reshape(
        (3, n) + grid.shape + (3,))
    d0 = jax.vmap(lambda a, b: reduced.dissipation_d0(a, b, grid))
    d12, d21, d13, d32 = d0(z[0], z[1]), d0(z[1], z[0]), d0(z[0], z[2]), d0(z[2], z[1])
    return dict(symmetry=float(jnp.abs(d12 - d21).max()),
                self=float(jnp.abs(d0(z[0], z[0])).max()),
                triangle=float(jnp.max(d12 - d13 - d32)))


@check('dissipation_metric')
def _metric(mat, rng):
    worst = metric_defects(rng, 500)
    ok = worst['symmetry'] == 0. and worst['self'] == 0. and worst['triangle'] <= 1e-12
    return ok, ', '.join(f'{k} {v:.3g}' for k, v in worst.items())


@check('huber_below_dissipation')
def _huber(mat, rng):
    grid = Grid2(5, 5)
    k1, k2 = jax.random.split(rng)
    z1, z2 = reduced.random_director(k1, grid), reduced.random_director(k2, grid)
    exact = float(reduced.dissipation_d0(z1, z2, grid))
    values = [float(reduced.huber_d0(z2, z1, eps, grid)) for eps in (1e-1, 1e-2, 1e-3, 1e-4)]
    ok = all(a <= b for a, b in zip(values, values[1:])) and values[-1] <= exact
    return ok, f'D_eps = {values[-1]:.6g}, D0 = {exact:.6g}'


@check('demag_kernel')
def _kernel(mat, rng):
    q = jnp.linspace(0., 50., 501)
    n = np.asarray(magnetostatics.demag_factor(q))
    ok = n[0] == 1. and np.all(np.diff(n) < 0) and n[-1] < .03
    return ok, f'N(0) = {n[0]}, N(50) = {n[-1]:.3g}'


@check('magnetostatic_limit')
def _magstat(mat, rng):
    grid = Grid2(17, 17)
    zeta = bulk.sample_limit_state(bulk.catalog('cos_mode', mat), grid).zeta
    rows = magnetostatics.magnetostatic_limit_check(zeta, (.1, .05, .01), grid)
    worst = max(abs(r['ratio'] - float(magnetostatics.demag_factor(2 * np.pi * r['h'])))
                for r in rows)
    return worst <= 1e-10, f'max |ratio - N(2 pi h)| = {worst:.3g}'


@check('gamma_flat_director')
def _gamma(mat, rng):
    grid2 = Grid2(9, 9)
    rows = bulk.gamma_table(bulk.catalog('zero_e3', mat), (.2, .1), Grid3(grid2, 5), grid2)
    el = max(abs(r['E_el']) for r in rows)
    err = max(r['err'] for r in rows)
    return el <= 1e-20 and err <= 1e-3, f'max E_el = {el:.3g}, max |E_h - E0| = {err:.3g}'


@check('incremental_steps')
def _evolution(mat, rng):
    grid = Grid2(7, 7)
    schedule = LoadSchedule.ramp(Loads.zeros(grid), Loads.uniform(grid, h=(2., 0., 0.)))
    sigma = 1e-3
    opts = ops.SolveOptions(restarts=0, grad_tol=1e-8)
    trace = ops.evolve(ReducedState.flat(grid), ops.Partition.uniform(1., 2),
                       sigma, schedule, grid, mat, opts, n_competitors=2)
    rows = ops.energy_balance_report(trace, schedule, grid, mat)
    monotone = all(b >= a for a, b in zip(trace.var_cum[:-1], trace.var_cum[1:]))
    worst = max(r['aimp_resid'] for r in rows)
    gaps = all(s.gap <= s.slack for s in trace.steps)
    return monotone and gaps and worst <= 1e-8, f'max residual {worst:.3g}'


def run_checks(cfg: RunConfig) -> list[types.Row]:
    mat = cfg.material.build().validate()
    rng = jax.random.PRNGKey(cfg.run.seed)
    results = []
    for (name, fn), key in zip(_REGISTRY, jax.random.split(rng, len(_REGISTRY))):
        try:
            passed, detail = fn(mat, key)
        except (MagnetoplateError, AssertionError, ValueError) as exc:
            passed, detail = False, f'{type(exc).__name__}: {exc}'
        passed = bool(passed)
        log.info('%-32s %s  %s', name, 'ok' if passed else 'FAILED', detail)
        results.append(dict(name=name, passed=passed, detail=detail))
    return results
