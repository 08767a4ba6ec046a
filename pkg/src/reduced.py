"""Reduced plate model: energy E₀, loads L₀, total energy F₀ and dissipation D₀."""
import functools
from typing import NamedTuple, Sequence

import numpy as np
import jax
import jax.numpy as jnp
import chex

from src import fields
from src import types_ as types
from src.fields import Grid2
from src.material import Material, q_phi_red, sym

Array = types.Array

TERMS = ('membrane', 'bending', 'exchange', 'magstat')


class ReducedState(NamedTuple):
    u: Array  # (nx, ny, 2) in-plane displacement
    v: Array  # (nx, ny) deflection
    zeta: Array  # (nx, ny, 3) unit director

    @classmethod
    def flat(cls,
             grid: Grid2,
             director: types.Vector = (0., 0., 1.)
             ) -> 'ReducedState':
        d = jnp.asarray(director, float)
        d = d / jnp.linalg.norm(d)
        return cls(u=jnp.zeros(grid.shape + (2,)),
                   v=jnp.zeros(grid.shape),
                   zeta=jnp.broadcast_to(d, grid.shape + (3,)))

    @classmethod
    def random(cls,
               rng: types.RNG,
               grid: Grid2,
               amplitude: float = .1,
               modes: int = 3
               ) -> 'ReducedState':
        """Smooth admissible state: clamped (u, v), unit director."""
        k1, k2, k3 = jax.random.split(rng, 3)
        x, y = grid.coords()
        bubble = np.sin(np.pi * x / grid.lx) * np.sin(np.pi * y / grid.ly)
        bubble *= grid.interior_mask()
        u = amplitude * bubble[..., None] * smooth_field(k1, grid, 2, modes)
        v = amplitude * bubble ** 2 * smooth_field(k2, grid, 1, modes)[..., 0]
        return cls(u=u, v=v, zeta=random_director(k3, grid, modes))

    def validate(self, grid: Grid2, tol: float = 1e-12) -> 'ReducedState':
        chex.assert_shape(self.u, grid.shape + (2,))
        chex.assert_shape(self.v, grid.shape)
        chex.assert_shape(self.zeta, grid.shape + (3,))
        chex.assert_tree_all_finite(self)
        boundary = 1. - grid.interior_mask()
        if np.abs(np.asarray(self.u) * boundary[..., None]).max() > tol:
            raise ValueError('u must vanish on the boundary')
        if np.abs(np.asarray(self.v) * boundary).max() > tol:
            raise ValueError('v must vanish on the boundary')
        if float(fields.director_norm_error(self.zeta)) > tol:
            raise ValueError('zeta must be unit length at every node')
        return self


def smooth_field(rng: types.RNG, grid: Grid2, dim: int, modes: int = 3) -> Array:
    """Random low-frequency cosine series with decaying amplitudes."""
    coef = jax.random.normal(rng, (modes, modes, dim))
    x, y = grid.coords()
    k = np.arange(modes)
    cx = np.cos(np.pi * k * x[..., None] / grid.lx)
    cy = np.cos(np.pi * k * y[..., None] / grid.ly)
    decay = 1. / (1. + k[:, None] + k[None, :])
    return jnp.einsum('xyk,xyl,kld,kl->xyd', cx, cy, coef, decay)


def random_director(rng: types.RNG, grid: Grid2, modes: int = 3) -> Array:
    k1, k2 = jax.random.split(rng)
    offset = 2. * fields.normalize(jax.random.normal(k1, (3,)))
    return fields.project_sphere(offset + smooth_field(k2, grid, 3, modes))


class Loads(NamedTuple):
    f: Array  # (nx, ny, 2)
    g: Array  # (nx, ny)
    hfield: Array  # (nx, ny, 3)

    @classmethod
    def zeros(cls, grid: Grid2) -> 'Loads':
        return cls.uniform(grid)

    @classmethod
    def uniform(cls,
                grid: Grid2,
                f: types.Vector = (0., 0.),
                g: float = 0.,
                h: types.Vector = (0., 0., 0.)
                ) -> 'Loads':
        return cls(f=jnp.broadcast_to(jnp.asarray(f, float), grid.shape + (2,)),
                   g=jnp.full(grid.shape, float(g)),
                   hfield=jnp.broadcast_to(jnp.asarray(h, float), grid.shape + (3,)))

    def scale(self, c: float) -> 'Loads':
        return jax.tree_util.tree_map(lambda t: c * t, self)


class LoadSchedule:
    """Piecewise-linear loads over knot times 0 = τ₀ < … < τ_M = T."""

    TIME_TOL = 1e-12

    def __init__(self, times: Sequence[float], knots: Sequence[Loads]) -> None:
        times = np.asarray(times, float)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError(f'Need at least two knot times: {times}')
        if times[0] != 0.:
            raise ValueError(f'Schedule must start at t = 0: {times[0]}')
        if np.any(np.diff(times) <= 0):
            raise ValueError(f'Knot times must increase strictly: {times}')
        if len(knots) != len(times):
            raise ValueError(f'{len(knots)} load knots for {len(times)} times')
        chex.assert_tree_all_finite(knots)
        self.times = times
        self.knots = tuple(knots)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @classmethod
    def constant(cls, loads: Loads, horizon: float = 1.) -> 'LoadSchedule':
        return cls([0., horizon], [loads, loads])

    @classmethod
    def ramp(cls, start: Loads, end: Loads, horizon: float = 1.) -> 'LoadSchedule':
        return cls([0., horizon], [start, end])

    def _interval(self, t: float) -> int:
        if not -self.TIME_TOL <= t <= self.horizon + self.TIME_TOL:
            raise ValueError(f't = {t} outside the schedule [0, {self.horizon}]')
        k = int(np.searchsorted(self.times, t, side='right')) - 1
        return min(max(k, 0), len(self.times) - 2)

    def loads_at(self, t: float) -> Loads:
        k = self._interval(t)
        t0, t1 = self.times[k:k + 2]
        theta = (min(max(t, t0), t1) - t0) / (t1 - t0)
        return jax.tree_util.tree_map(
            lambda a, b: (1. - theta) * a + theta * b,
            self.knots[k], self.knots[k + 1])

    def rates_at(self, t: float) -> Loads:
        """Right derivative; the final knot takes the last interval."""
        k = self._interval(t)
        dt = self.times[k + 1] - self.times[k]
        return jax.tree_util.tree_map(
            lambda a, b: (b - a) / dt, self.knots[k], self.knots[k + 1])

    def knots_between(self, t0: float, t1: float) -> list[float]:
        return [float(t) for t in self.times if t0 < t < t1]


def _energy_terms(state: ReducedState, grid: Grid2, mat: Material) -> dict[str, Array]:
    du = fields.grad2(state.u, grid)
    zp = state.zeta[..., :2]
    strain = sym(du) - zp[..., :, None] * zp[..., None, :]
    hess = fields.hessian2(state.v, grid, clamped=True)
    dzeta = fields.grad2(state.zeta, grid)
    return dict(
        membrane=.5 * fields.integrate2(q_phi_red(strain, mat), grid),
        bending=fields.integrate2(q_phi_red(hess, mat), grid) / 24.,
        exchange=fields.integrate2(jnp.sum(dzeta ** 2, (-2, -1)), grid),
        magstat=.5 * fields.integrate2(state.zeta[..., 2] ** 2, grid),
    )


@functools.partial(jax.jit, static_argnames='grid')
def energy_e0(state: ReducedState,
              grid: Grid2,
              mat: Material
              ) -> tuple[Array, dict[str, Array]]:
    terms = _energy_terms(state, grid, mat)
    return sum(terms.values()), terms


@functools.partial(jax.jit, static_argnames='grid')
def work_l0(loads: Loads, state: ReducedState, grid: Grid2) -> Array:
    chex.assert_equal_shape([loads.f, state.u])
    chex.assert_equal_shape([loads.hfield, state.zeta])
    return (fields.integrate2(jnp.sum(loads.f * state.u, -1), grid)
            + fields.integrate2(loads.g * state.v, grid)
            + fields.integrate2(jnp.sum(loads.hfield * state.zeta, -1), grid))


def _f0(state: ReducedState, loads: Loads, grid: Grid2, mat: Material) -> Array:
    return energy_e0(state, grid, mat)[0] - work_l0(loads, state, grid)


def total_f0(t: float,
             state: ReducedState,
             schedule: LoadSchedule,
             grid: Grid2,
             mat: Material
             ) -> Array:
    return _f0(state, schedule.loads_at(t), grid, mat)


def power_dt_f0(t: float,
                state: ReducedState,
                schedule: LoadSchedule,
                grid: Grid2
                ) -> Array:
    """∂ₜF₀(t, state) = −∫ḟ·u − ∫ġ v − ∫ḣ·ζ (right derivative at knots)."""
    return -work_l0(schedule.rates_at(t), state, grid)


def power_integral(state: ReducedState,
                   t0: float,
                   t1: float,
                   schedule: LoadSchedule,
                   grid: Grid2
                   ) -> float:
    """∫_{t0}^{t1} ∂ₜF₀(τ, state) dτ, exact for piecewise-linear loads."""
    cuts = [t0] + schedule.knots_between(t0, t1) + [t1]
    total = 0.
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += (b - a) * float(power_dt_f0(.5 * (a + b), state, schedule, grid))
    return total


def load_rate_norm(schedule: LoadSchedule, t: float, grid: Grid2) -> float:
    """‖ḟ‖₂ + ‖ġ‖₂ + ‖ḣ‖₂ at t."""
    rates = schedule.rates_at(t)

    def l2(sq):
        return jnp.sqrt(fields.integrate2(sq, grid))

    return float(l2(jnp.sum(rates.f ** 2, -1))
                 + l2(rates.g ** 2)
                 + l2(jnp.sum(rates.hfield ** 2, -1)))


@functools.partial(jax.jit, static_argnames='grid')
def dissipation_d0(z1: Array, z2: Array, grid: Grid2) -> Array:
    chex.assert_equal_shape([z1, z2])
    return fields.integrate2(jnp.linalg.norm(z1 - z2, axis=-1), grid)


@functools.partial(jax.jit, static_argnames='grid')
def huber_d0(zeta: Array, anchor: Array, eps: float, grid: Grid2) -> Array:
    """Smoothed D₀: ∫(√(‖ζ − ζ₀‖² + ε²) − ε) ≤ D₀(ζ₀, ζ)."""
    chex.assert_equal_shape([zeta, anchor])
    d2 = jnp.sum((zeta - anchor) ** 2, -1)
    return fields.integrate2(jnp.sqrt(d2 + eps ** 2) - eps, grid)


def var_d0(zetas: Sequence[Array], window: tuple[int, int], grid: Grid2) -> float:
    """Total D₀-variation of a piecewise-constant trace over indices [start, stop]."""
    start, stop = window
    if not 0 <= start <= stop < len(zetas):
        raise ValueError(f'Empty or out-of-range window {window} for {len(zetas)} states')
    return sum((float(dissipation_d0(zetas[i - 1], zetas[i], grid))
                for i in range(start + 1, stop + 1)), 0.)


def project_gradient(grad: ReducedState,
                     state: ReducedState,
                     grid: Grid2
                     ) -> ReducedState:
    """Zero clamped rows and take the Riemannian part of the director gradient."""
    mask = grid.interior_mask()
    return ReducedState(u=grad.u * mask[..., None],
                        v=grad.v * mask,
                        zeta=fields.tangent(grad.zeta, state.zeta))


_f0_grad = jax.jit(jax.grad(_f0), static_argnames='grid')


def gradient_f0(t: float,
                state: ReducedState,
                schedule: LoadSchedule,
                grid: Grid2,
                mat: Material
                ) -> ReducedState:
    """Gradient of F₀ with respect to node values, projected onto admissible directions."""
    grad = _f0_grad(state, schedule.loads_at(t), grid=grid, mat=mat)
    return project_gradient(grad, state, grid)
