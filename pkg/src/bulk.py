"""Bulk plates: recovery deformations, scaled energies and the Γ-table.

A limit state (û, v̂, ζ̂) from the profile catalog is lifted to the
deformation

    y = π_h + s(û, 0) + (s/h) v̂ e₃ − s x₃(∇′v̂, 0) + 2 s h x₃ â + s h x₃² b̂,

with s = h^{β/2}, π_h(x) = (x′, h x₃) and the moments â, b̂ minimizing the
out-of-plane shifts of the membrane and bending strains. Derivatives of
the catalog profiles come from autodiff, so the analytic path is exact.
The Eulerian magnetization is the x₃-independent extension of ζ̂, hence
m∘y = ζ̂(y′).
"""
import dataclasses
import functools
import logging
from typing import NamedTuple, Sequence

import numpy as np
import jax
import jax.numpy as jnp
import chex

from src import fields
from src import magnetostatics
from src import reduced
from src import types_ as types
from src.errors import DegenerateAxisError, OrientationError
from src.fields import Grid2, Grid3
from src.material import (
    Material, adjugate3, embed, optimal_shift, q_phi_red, sym, w_h_delta
)

Array = types.Array

log = logging.getLogger(__name__)

AXIS_TOL = 1e-300
# Thicknesses on which |E_h − E₀| of the generic profile decreases monotonically.
GENERIC_SWEEP = (.05, .025, .0125, .00625)


@dataclasses.dataclass(frozen=True)
class AnsatzSpec:
    """Closed-form limit state on the unit square and the material it lives in."""

    name: str
    u: types.Profile
    v: types.Profile
    zeta: types.Profile
    mat: Material = Material()

    def with_material(self, mat: Material) -> 'AnsatzSpec':
        return dataclasses.replace(self, mat=mat.validate())


def _zero_u(p):
    return jnp.zeros(2)


def _zero_v(p):
    return jnp.zeros(())


def _bubble(p):
    x, y = p
    return x * (1 - x) * y * (1 - y)


def _bump(p):
    return _bubble(p) ** 2


def _shear(p):
    return jnp.stack([_bubble(p), jnp.zeros(())])


def _constant(d):
    d = jnp.asarray(d, float) / np.linalg.norm(d)
    return lambda p: d + 0. * p[0]


def _rotor(p):
    t = 2 * jnp.pi * p[0]
    return jnp.stack([jnp.sin(t), jnp.cos(t), jnp.zeros(())])


def _cos_mode(p):
    t = 2 * jnp.pi * p[0]
    return jnp.stack([jnp.zeros(()), jnp.sin(t), jnp.cos(t)])


_E1 = _constant((1., 0., 0.))
_E3 = _constant((0., 0., 1.))
_TILTED = _constant((1., 0., 2.))

CATALOG = {
    'zero_e3': (_zero_u, _zero_v, _E3),
    'zero_e1': (_zero_u, _zero_v, _E1),
    'bump': (_zero_u, _bump, _E3),
    'shear': (_shear, _zero_v, _E3),
    'rotor': (_zero_u, _zero_v, _rotor),
    'tilted': (_zero_u, _zero_v, _TILTED),
    'cos_mode': (_zero_u, _zero_v, _cos_mode),
    'generic': (_shear, _bump, _TILTED),
}


@functools.lru_cache(maxsize=None)
def catalog(name: str, mat: Material = Material()) -> AnsatzSpec:
    try:
        u, v, zeta = CATALOG[name]
    except KeyError:
        raise ValueError(f'Unknown profile {name!r}; known: {sorted(CATALOG)}') from None
    return AnsatzSpec(name, u, v, zeta, mat.validate())


class BulkState(NamedTuple):
    y: Array  # (nx, ny, nz, 3)
    F: Array  # (nx, ny, nz, 3, 3) scaled gradient ∇_h y
    lam: Array  # (nx, ny, nz, 3) m∘y


def _moments(spec: AnsatzSpec, p: Array) -> tuple[Array, Array]:
    z = spec.zeta(p)
    strain = embed(sym(jax.jacfwd(spec.u)(p))) - jnp.outer(z, z)
    a = optimal_shift(strain, spec.mat)[0]
    b = optimal_shift(-embed(jax.hessian(spec.v)(p)), spec.mat)[0]
    return a, b


def _displacement(spec: AnsatzSpec, x: Array, h: Array) -> Array:
    """y − π_h at one point of Ω."""
    p, x3 = x[:2], x[2]
    s = spec.mat.well_depth(h)
    a, b = _moments(spec, p)
    inplane = jnp.append(spec.u(p) - x3 * jax.grad(spec.v)(p), 0.)
    return (s * inplane
            + (s / h) * spec.v(p) * types.E3
            + s * h * (2 * x3 * a + x3 ** 2 * b))


def _scale_columns(d: Array, h: Array) -> Array:
    return d * jnp.array([1., 1., 1. / h])


@functools.lru_cache(maxsize=None)
def _sampler(spec: AnsatzSpec):

    def point(x, h):
        disp = _displacement(spec, x, h)
        d = _scale_columns(jax.jacfwd(_displacement, argnums=1)(spec, x, h), h)
        y = x * jnp.array([1., 1., h]) + disp
        return dict(
            disp=disp,
            d=d,
            y=y,
            lam=spec.zeta(y[:2]),
            dzeta=jax.jacfwd(spec.zeta)(y[:2]),
        )

    return jax.jit(jax.vmap(point, in_axes=(0, None)))


def _check_h(h: float) -> None:
    if not 0 < h <= 1:
        raise ValueError(f'Thickness must lie in (0, 1]: {h}')


def _check_orientation(d: Array) -> Array:
    det = np.asarray(jnp.linalg.det(jnp.eye(3) + d))
    if det.min() <= 0:
        idx = np.unravel_index(det.argmin(), det.shape)
        raise OrientationError(f'det ∇_h y = {det.min():.6g} at node {idx}')
    return det


def _sample(spec: AnsatzSpec, h: float, grid3: Grid3) -> dict[str, Array]:
    _check_h(h)
    points = grid3.points().reshape(-1, 3)
    out = _sampler(spec)(jnp.asarray(points), jnp.asarray(float(h)))
    out = {k: v.reshape(grid3.shape + v.shape[1:]) for k, v in out.items()}
    out['det'] = _check_orientation(out['d'])
    return out


def build_moments(spec: AnsatzSpec, grid2: Grid2) -> tuple[Array, Array]:
    """â and b̂ sampled at the nodes of `grid2`."""
    points = jnp.asarray(grid2.points().reshape(-1, 2))
    a, b = jax.vmap(functools.partial(_moments, spec))(points)
    return a.reshape(grid2.shape + (3,)), b.reshape(grid2.shape + (3,))


def recovery_deformation(spec: AnsatzSpec, h: float, grid3: Grid3) -> Array:
    return _sample(spec, h, grid3)['y']


def recovery_state(spec: AnsatzSpec, h: float, grid3: Grid3) -> BulkState:
    s = _sample(spec, h, grid3)
    return BulkState(y=s['y'], F=jnp.eye(3) + s['d'], lam=s['lam'])


def scaled_gradient(source: AnsatzSpec | Array, h: float, grid3: Grid3) -> Array:
    """∇_h y = (∂₁y, ∂₂y, h⁻¹∂₃y) as (nx, ny, nz, 3, 3).

    An `AnsatzSpec` is differentiated exactly; a sampled deformation by
    second-order finite differences.
    """
    if isinstance(source, AnsatzSpec):
        return jnp.eye(3) + _sample(source, h, grid3)['d']
    _check_h(h)
    y = jnp.asarray(source)
    chex.assert_shape(y, grid3.shape + (3,))
    section = grid3.section
    cols = [fields.diff(y, section.dx, 0),
            fields.diff(y, section.dy, 1),
            fields.diff(y, grid3.dz, 2) / h]
    return jnp.stack(cols, -1)


@functools.partial(jax.jit, static_argnames='grid3')
def _elastic_integral(d: Array, lam: Array, h: Array, grid3: Grid3, mat: Material) -> Array:
    w = jnp.vectorize(lambda di, li: w_h_delta(di, li, h, mat),
                      signature='(3,3),(3)->()')(d, lam)
    return fields.integrate3(w, grid3) / h ** mat.beta


def _check_axes(f: Array, lam: Array) -> None:
    n = np.linalg.norm(np.asarray(jnp.einsum('...ij,...j->...i', adjugate3(f), lam)), axis=-1)
    if n.min() < AXIS_TOL:
        raise DegenerateAxisError(f'(adj F)·λ vanishes at {int((n < AXIS_TOL).sum())} nodes')


def bulk_elastic(spec: AnsatzSpec, h: float, grid3: Grid3) -> float:
    """h^{−β}∫_Ω W_h(∇_h y, m∘y) for the recovery deformation."""
    s = _sample(spec, h, grid3)
    _check_axes(jnp.eye(3) + s['d'], s['lam'])
    return float(_elastic_integral(s['d'], s['lam'], float(h), grid3, spec.mat))


def bulk_elastic_fields(F: Array,
                        lam: Array,
                        h: float,
                        grid3: Grid3,
                        mat: Material
                        ) -> float:
    """The same integral for arbitrary sampled (F, λ)."""
    _check_h(h)
    chex.assert_shape(F, grid3.shape + (3, 3))
    chex.assert_shape(lam, grid3.shape + (3,))
    _check_orientation(F - jnp.eye(3))
    _check_axes(F, lam)
    return float(_elastic_integral(F - jnp.eye(3), lam, float(h), grid3, mat))


def bulk_exchange(spec: AnsatzSpec, h: float, grid3: Grid3, jacobian: bool = True) -> float:
    """h⁻¹∫_{Ω^y}|∇m|² pulled back to ∫_Ω |(∇m)∘y|² det ∇_h y.

    `jacobian=False` drops the determinant.
    """
    s = _sample(spec, h, grid3)
    density = jnp.sum(s['dzeta'] ** 2, (-2, -1))
    if jacobian:
        density = density * s['det']
    return float(fields.integrate3(density, grid3))


def bulk_work(spec: AnsatzSpec, loads: reduced.Loads, h: float, grid3: Grid3) -> float:
    """L_h of the recovery state for loads scaled to the plate regime."""
    s = _sample(spec, h, grid3)
    chex.assert_shape(loads.g, grid3.section.shape)
    depth = spec.mat.well_depth(h)
    disp = s['disp']
    force = jnp.sum(loads.f[:, :, None] * disp[..., :2], -1) / depth
    normal = loads.g[:, :, None] * s['y'][..., 2] * h / depth
    zeeman = jnp.sum(loads.hfield[:, :, None] * s['lam'], -1) * s['det']
    return float(fields.integrate3(force + normal + zeeman, grid3))


class Averages(NamedTuple):
    U: Array  # (nx, ny, 2)
    V: Array  # (nx, ny)
    W: Array  # (nx, ny, 3)
    Z: Array  # (nx, ny, nz, 3)


def averaged_quantities(state: BulkState, h: float, grid3: Grid3, mat: Material) -> Averages:
    """Thickness averages of the displacement and the Lagrangian magnetization."""
    _check_h(h)
    chex.assert_shape(state.y, grid3.shape + (3,))
    tw = grid3.thickness_weights()
    x3 = grid3.x3()
    depth = mat.well_depth(h)
    disp = state.y - grid3.points() * np.array([1., 1., h])
    U = jnp.einsum('xyzi,z->xyi', disp[..., :2], tw) / depth
    V = jnp.einsum('xyz,z->xy', state.y[..., 2], tw) * h / depth
    W = jnp.einsum('xyzi,z->xyi', disp, tw * x3) / depth
    _check_axes(state.F, state.lam)
    Z = fields.normalize(jnp.einsum('...ij,...j->...i', adjugate3(state.F), state.lam))
    return Averages(U=U, V=V, W=W, Z=Z)


@functools.partial(jax.jit, static_argnames='grid3')
def dissipation_dh(z1: Array, z2: Array, grid3: Grid3) -> Array:
    chex.assert_equal_shape([z1, z2])
    chex.assert_shape(z1, grid3.shape + (3,))
    return fields.integrate3(jnp.linalg.norm(z1 - z2, axis=-1), grid3)


def sample_limit_state(spec: AnsatzSpec, grid2: Grid2) -> reduced.ReducedState:
    points = jnp.asarray(grid2.points().reshape(-1, 2))
    u, v, zeta = (jax.vmap(fn)(points) for fn in (spec.u, spec.v, spec.zeta))
    mask = grid2.interior_mask()
    return reduced.ReducedState(
        u=u.reshape(grid2.shape + (2,)) * mask[..., None],
        v=v.reshape(grid2.shape) * mask,
        zeta=zeta.reshape(grid2.shape + (3,)))


def limit_energy(spec: AnsatzSpec, grid2: Grid2) -> tuple[float, types.Breakdown]:
    """E₀(û, v̂, ζ̂) by quadrature of the exact integrands."""
    mat = spec.mat
    points = jnp.asarray(grid2.points().reshape(-1, 2))

    def densities(p):
        z = spec.zeta(p)
        strain = sym(jax.jacfwd(spec.u)(p)) - jnp.outer(z[:2], z[:2])
        return dict(
            membrane=.5 * q_phi_red(strain, mat),
            bending=q_phi_red(jax.hessian(spec.v)(p), mat) / 24.,
            exchange=jnp.sum(jax.jacfwd(spec.zeta)(p) ** 2),
            magstat=.5 * z[2] ** 2,
        )

    dens = jax.vmap(densities)(points)
    terms = {k: float(fields.integrate2(dens[k].reshape(grid2.shape), grid2))
             for k in reduced.TERMS}
    return sum(terms.values()), terms


def limit_work(spec: AnsatzSpec, loads: reduced.Loads, grid2: Grid2) -> float:
    state = sample_limit_state(spec, grid2)
    return float(reduced.work_l0(loads, state, grid2))


def gamma_table(spec: AnsatzSpec,
                hs: Sequence[float],
                grid3: Grid3,
                grid2: Grid2,
                uniform_loads: dict | None = None
                ) -> list[types.Row]:
    """Bulk energies of the recovery sequence against the reduced E₀.

    `uniform_loads` holds constant limit loads (keys f, g, h as accepted
    by `Loads.uniform`); it adds the load work and total energies.
    """
    hs = [float(h) for h in hs]
    if not hs or any(a <= b for a, b in zip(hs[:-1], hs[1:])):
        raise ValueError(f'Thicknesses must decrease strictly: {hs}')
    e0, _ = limit_energy(spec, grid2)
    e0_fd = float(reduced.energy_e0(sample_limit_state(spec, grid2), grid2, spec.mat)[0])
    if uniform_loads is not None:
        bulk_loads = reduced.Loads.uniform(grid3.section, **uniform_loads)
        l0 = limit_work(spec, reduced.Loads.uniform(grid2, **uniform_loads), grid2)
    section_zeta = sample_limit_state(spec, grid3.section).zeta

    rows = []
    for h in hs:
        e_el = bulk_elastic(spec, h, grid3)
        e_exc = bulk_exchange(spec, h, grid3)
        setup = magnetostatics.DemagSetup(grid3.section, h)
        e_mag = float(magnetostatics.slab_demag_energy(section_zeta, setup))
        e_h = e_el + e_exc + e_mag
        row = dict(h=h, E_el=e_el, E_exc=e_exc, E_mag=e_mag, E_h=e_h,
                   E0=e0, err=abs(e_h - e0), E0_fd=e0_fd)
        if uniform_loads is not None:
            l_h = bulk_work(spec, bulk_loads, h, grid3)
            row.update(L_h=l_h, F_h=e_h - l_h, L0=l0, F0=e0 - l0)
        rows.append(row)
        log.info('%s h = %.4g: E_h = %.12g, E0 = %.12g, |E_h - E0| = %.3g',
                 spec.name, h, e_h, e0, row['err'])
    return rows
