"""Minimization of F₀ over clamped reduced states and sampled stability checks."""
import concurrent.futures
import dataclasses
import functools
import logging
from typing import NamedTuple

import numpy as np
import jax
import jax.numpy as jnp
import optax

from src import fields
from src import reduced
from src import types_ as types
from src.fields import Grid2
from src.material import Material
from src.reduced import Loads, LoadSchedule, ReducedState

Array = types.Array
tree_utils = optax.tree_utils

log = logging.getLogger(__name__)

# Armijo decreases below this (relative to |F|) are roundoff.
ROUNDOFF = 1e-14
BB_RANGE = (1e-6, 1e6)


@dataclasses.dataclass(frozen=True)
class SolveOptions:
    max_outer_iters: int = 200
    grad_tol: float = 1e-7
    armijo_c: float = 1e-4
    backtrack: float = .5
    max_backtracks: int = 40
    cg_tol: float = 1e-10
    cg_max_iters: int = 2000
    zeta_steps: int = 10
    freeze_zeta: bool = False
    freeze_uv: bool = False
    restarts: int = 2
    seed: int = 0
    huber_eps: float = 1e-4

    def __post_init__(self) -> None:
        for name in ('grad_tol', 'armijo_c', 'cg_tol', 'huber_eps'):
            if not getattr(self, name) > 0:
                raise ValueError(f'{name} must be positive')
        if not 0 < self.backtrack < 1:
            raise ValueError('backtrack must lie in (0, 1)')
        if min(self.max_outer_iters, self.max_backtracks, self.cg_max_iters) < 1:
            raise ValueError('iteration caps must be positive')


@dataclasses.dataclass
class SolveReport:
    iterations: int
    energy: float
    breakdown: types.Breakdown
    grad_sup: float
    history: list[float]
    converged: bool
    stalled: bool = False
    cg_residual: float = 0.


class Penalty(NamedTuple):
    """weight · D_ε(anchor, ζ) added to F₀."""
    anchor: Array
    eps: float
    weight: float

    @classmethod
    def none(cls, grid: Grid2) -> 'Penalty':
        return cls(anchor=jnp.zeros(grid.shape + (3,)), eps=1., weight=0.)


def _objective(state: ReducedState,
               loads: Loads,
               penalty: Penalty,
               grid: Grid2,
               mat: Material
               ) -> Array:
    f0 = reduced.energy_e0(state, grid, mat)[0] - reduced.work_l0(loads, state, grid)
    d = reduced.huber_d0(state.zeta, penalty.anchor, penalty.eps, grid)
    return f0 + penalty.weight * d


objective = jax.jit(_objective, static_argnames='grid')
_value_and_grad = jax.jit(jax.value_and_grad(_objective), static_argnames='grid')


@functools.partial(jax.jit, static_argnames=('grid', 'maxiter'))
def _solve_displacements(state: ReducedState,
                         loads: Loads,
                         penalty: Penalty,
                         grid: Grid2,
                         mat: Material,
                         tol: float,
                         maxiter: int
                         ) -> tuple[ReducedState, Array]:
    """Exact minimization over (u, v): the objective is quadratic there."""
    mask = grid.interior_mask()

    def grad_uv(uv):
        u, v = uv
        g = jax.grad(_objective)(state._replace(u=u, v=v), loads, penalty, grid, mat)
        return g.u * mask[..., None], g.v * mask

    x0 = (state.u, state.v)
    rhs = jax.tree_util.tree_map(jnp.negative, grad_uv(x0))

    def hvp(p):
        return jax.jvp(grad_uv, (x0,), (p,))[1]

    delta, _ = jax.scipy.sparse.linalg.cg(hvp, rhs, tol=tol, atol=0., maxiter=maxiter)
    resid = tree_utils.tree_l2_norm(tree_utils.tree_sub(hvp(delta), rhs))
    resid = resid / jnp.maximum(tree_utils.tree_l2_norm(rhs), 1e-300)
    u, v = optax.apply_updates(x0, delta)
    return state._replace(u=u, v=v), resid


class _Problem(NamedTuple):
    loads: Loads
    penalty: Penalty
    grid: Grid2
    mat: Material
    opts: SolveOptions

    def value(self, state: ReducedState) -> float:
        return float(objective(state, self.loads, self.penalty,
                               grid=self.grid, mat=self.mat))

    def evaluate(self, state: ReducedState) -> tuple[float, ReducedState]:
        value, grad = _value_and_grad(state, self.loads, self.penalty,
                                      grid=self.grid, mat=self.mat)
        return float(value), reduced.project_gradient(grad, state, self.grid)

    def grad_sup(self, grad: ReducedState) -> float:
        parts = []
        if not self.opts.freeze_uv:
            parts += [grad.u, grad.v]
        if not self.opts.freeze_zeta:
            parts.append(grad.zeta)
        return max((float(jnp.max(jnp.abs(p))) for p in parts), default=0.)


def _armijo(problem: _Problem,
            state: ReducedState,
            value: float,
            gz: Array,
            alpha: float
            ) -> tuple[ReducedState, float, float, bool]:
    """Backtracking along the great-circle retraction ζ ↦ (ζ − αg)/‖ζ − αg‖."""
    opts = problem.opts
    g2 = float(jnp.sum(gz ** 2))
    for _ in range(opts.max_backtracks):
        zeta = fields.normalize(optax.apply_updates(state.zeta, -alpha * gz))
        trial = state._replace(zeta=zeta)
        f = problem.value(trial)
        required = opts.armijo_c * alpha * g2
        decrease = value - f
        if decrease >= required or (
                decrease > 0 and required <= ROUNDOFF * max(1., abs(value))):
            return trial, f, alpha, True
        alpha *= opts.backtrack
    return state, value, alpha, False


def _bb_step(s: Array, y: Array, fallback: float) -> float:
    """Barzilai–Borwein step length, clipped."""
    sy = float(tree_utils.tree_vdot(s, y))
    if sy <= 0:
        return min(2. * fallback, BB_RANGE[1])
    ss = float(tree_utils.tree_vdot(s, s))
    return float(np.clip(ss / sy, *BB_RANGE))


def minimize(initial: ReducedState,
             loads: Loads,
             grid: Grid2,
             mat: Material,
             opts: SolveOptions,
             penalty: Penalty | None = None
             ) -> tuple[ReducedState, SolveReport]:
    """Block alternation: exact (u, v) solves, projected descent steps on ζ."""
    if penalty is None:
        penalty = Penalty.none(grid)
    problem = _Problem(loads, penalty, grid, mat, opts)
    state = initial
    value, grad = problem.evaluate(state)
    history = [value]
    sup = problem.grad_sup(grad)
    converged = sup <= opts.grad_tol
    stalled = False
    cg_residual = 0.
    alpha = 1.
    it = 0
    while not converged and it < opts.max_outer_iters:
        it += 1
        if not opts.freeze_uv:
            trial, resid = _solve_displacements(
                state, loads, penalty, grid, mat, opts.cg_tol, opts.cg_max_iters)
            cg_residual = float(resid)
            f = problem.value(trial)
            if f <= value:
                state, value = trial, f
        if not opts.freeze_zeta:
            value, grad = problem.evaluate(state)
            for _ in range(opts.zeta_steps):
                if float(jnp.max(jnp.abs(grad.zeta))) <= opts.grad_tol:
                    break
                new_state, new_value, step, ok = _armijo(
                    problem, state, value, grad.zeta, alpha)
                if not ok:
                    stalled = True
                    break
                new_value, new_grad = problem.evaluate(new_state)
                alpha = _bb_step(new_state.zeta - state.zeta,
                                 new_grad.zeta - grad.zeta, step)
                state, value, grad = new_state, new_value, new_grad
        value, grad = problem.evaluate(state)
        history.append(value)
        sup = problem.grad_sup(grad)
        converged = sup <= opts.grad_tol
        if stalled and not converged:
            log.warning('Line search stalled at iteration %d, |grad| = %.3g', it, sup)
            break
        stalled = False

    energy, terms = reduced.energy_e0(state, grid, mat)
    breakdown = {k: float(terms[k]) for k in reduced.TERMS}
    breakdown['L0'] = float(reduced.work_l0(loads, state, grid))
    report = SolveReport(
        iterations=it,
        energy=value,
        breakdown=breakdown,
        grad_sup=sup,
        history=history,
        converged=converged,
        stalled=stalled,
        cg_residual=cg_residual,
    )
    log.info('Solve: %d iterations, F = %.12g, |grad| = %.3g, converged = %s',
             it, value, sup, converged)
    return state, report


def minimize_f0(initial: ReducedState,
                t: float,
                schedule: LoadSchedule,
                grid: Grid2,
                mat: Material,
                opts: SolveOptions
                ) -> tuple[ReducedState, SolveReport]:
    initial.validate(grid)
    return minimize(initial, schedule.loads_at(t), grid, mat, opts)


class StabilityReport(NamedTuple):
    margin: float
    log: list[tuple[str, float]]


def _patches(grid: Grid2, n: int = 2) -> list[np.ndarray]:
    ix = np.minimum(np.arange(grid.nx) * n // grid.nx, n - 1)
    iy = np.minimum(np.arange(grid.ny) * n // grid.ny, n - 1)
    return [np.logical_and.outer(ix == i, iy == j)
            for i in range(n) for j in range(n)]


def competitor_family(state: ReducedState,
                      grid: Grid2,
                      n_competitors: int,
                      rng: types.RNG
                      ) -> list[tuple[str, ReducedState]]:
    """Explicit competitors: identity, sign flips, smooth random directors."""
    family = [('self', state), ('flip', state._replace(zeta=-state.zeta))]
    for k, patch in enumerate(_patches(grid)):
        zeta = jnp.where(patch[..., None], -state.zeta, state.zeta)
        family.append((f'patch_{k}', state._replace(zeta=zeta)))
    for k, key in enumerate(jax.random.split(rng, n_competitors)):
        zeta = reduced.random_director(key, grid)
        family.append((f'director_{k}', state._replace(zeta=zeta)))
    return family


def check_stability(state: ReducedState,
                    t: float,
                    schedule: LoadSchedule,
                    grid: Grid2,
                    mat: Material,
                    n_competitors: int,
                    seed: int,
                    opts: SolveOptions | None = None
                    ) -> StabilityReport:
    """Worst sampled margin F₀(t, q̂) + D₀(ζ, ζ̂) − F₀(t, q)."""
    opts = opts or SolveOptions(seed=seed)
    loads = schedule.loads_at(t)
    rng_family, rng_restart = jax.random.split(jax.random.PRNGKey(seed))
    base = float(objective(state, loads, Penalty.none(grid), grid=grid, mat=mat))

    def margin(other: ReducedState) -> float:
        f = float(objective(other, loads, Penalty.none(grid), grid=grid, mat=mat))
        return f + float(reduced.dissipation_d0(state.zeta, other.zeta, grid)) - base

    entries = [(name, margin(q)) for name, q in
               competitor_family(state, grid, n_competitors, rng_family)]

    def restart(key):
        return minimize(ReducedState.random(key, grid), loads, grid, mat, opts)[0]

    keys = list(jax.random.split(rng_restart, opts.restarts)) if opts.restarts else []
    with concurrent.futures.ThreadPoolExecutor(types.max_workers()) as pool:
        restarts = list(pool.map(restart, keys))
    entries += [(f'restart_{k}', margin(q)) for k, q in enumerate(restarts)]
    worst = min(m for _, m in entries)
    log.info('Stability: %d competitors, worst margin %.6g', len(entries), worst)
    return StabilityReport(margin=worst, log=entries)
