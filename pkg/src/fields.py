"""Uniform tensor grids, finite-difference operators and quadrature.

Fields are node-centred arrays. A scalar field on a `Grid2` has shape
`(nx, ny)`, a d-component field `(nx, ny, d)`; on a `Grid3` the thickness
axis follows the two in-plane axes.
"""
import dataclasses
import os

import numpy as np
import jax.numpy as jnp
import chex

from src import types_ as types
from src.errors import DegenerateDirectorError, GridError

Array = types.Array

SPHERE_TOL = 1e-14


@dataclasses.dataclass(frozen=True)
class Grid2:
    """Nodes of the rectangle [0, lx] × [0, ly], boundary included."""

    nx: int
    ny: int
    lx: float = 1.
    ly: float = 1.

    def __post_init__(self) -> None:
        if self.nx < 3 or self.ny < 3:
            raise GridError(f'Need at least 3 nodes per side: {self.nx, self.ny}')
        if self.lx <= 0 or self.ly <= 0:
            raise GridError(f'Side lengths must be positive: {self.lx, self.ly}')

    @property
    def dx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.nx, self.ny

    @property
    def area(self) -> float:
        return self.lx * self.ly

    @property
    def diameter(self) -> float:
        return float(np.hypot(self.lx, self.ly))

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.linspace(0., self.lx, self.nx)
        y = np.linspace(0., self.ly, self.ny)
        return np.meshgrid(x, y, indexing='ij')

    def points(self) -> np.ndarray:
        """Node coordinates stacked as (nx, ny, 2)."""
        return np.stack(self.coords(), -1)

    def weights(self) -> np.ndarray:
        return np.outer(_trapezoid(self.nx, self.dx), _trapezoid(self.ny, self.dy))

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape)
        mask[1:-1, 1:-1] = 1.
        return mask


@dataclasses.dataclass(frozen=True)
class Grid3:
    """Ω = S × I with I = (-1/2, 1/2) sampled by nz symmetric nodes."""

    section: Grid2
    nz: int

    def __post_init__(self) -> None:
        if self.nz < 3:
            raise GridError(f'Need at least 3 thickness nodes: {self.nz}')

    @property
    def dz(self) -> float:
        return 1. / (self.nz - 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.section.nx, self.section.ny, self.nz

    @property
    def volume(self) -> float:
        return self.section.area

    def x3(self) -> np.ndarray:
        return np.linspace(-.5, .5, self.nz)

    def thickness_weights(self) -> np.ndarray:
        # Composite Simpson integrates the quadratic x3-profiles of the
        # recovery ansatz exactly; trapezoid is the fallback for even nz.
        if self.nz % 2:
            w = np.ones(self.nz)
            w[1:-1:2] = 4.
            w[2:-1:2] = 2.
            return w * self.dz / 3.
        return _trapezoid(self.nz, self.dz)

    def weights(self) -> np.ndarray:
        return self.section.weights()[..., None] * self.thickness_weights()

    def points(self) -> np.ndarray:
        """Node coordinates stacked as (nx, ny, nz, 3)."""
        x, y = self.section.coords()
        x = np.broadcast_to(x[..., None], self.shape)
        y = np.broadcast_to(y[..., None], self.shape)
        z = np.broadcast_to(self.x3(), self.shape)
        return np.stack([x, y, z], -1)


def _trapezoid(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[[0, -1]] = h / 2
    return w


def diff(f: Array, h: float, axis: int) -> Array:
    """First derivative: central inside, second-order one-sided at the ends."""
    f = jnp.moveaxis(f, axis, 0)
    first = (-3. * f[0] + 4. * f[1] - f[2]) / (2. * h)
    interior = (f[2:] - f[:-2]) / (2. * h)
    last = (3. * f[-1] - 4. * f[-2] + f[-3]) / (2. * h)
    out = jnp.concatenate([first[None], interior, last[None]])
    return jnp.moveaxis(out, 0, axis)


def diff2(f: Array, h: float, axis: int) -> Array:
    """Second derivative; boundary nodes reuse the neighbouring 3-point stencil."""
    f = jnp.moveaxis(f, axis, 0)
    interior = (f[2:] - 2. * f[1:-1] + f[:-2]) / h ** 2
    out = jnp.concatenate([interior[:1], interior, interior[-1:]])
    return jnp.moveaxis(out, 0, axis)


def grad2(field: Array, grid: Grid2) -> Array:
    """∇′ of a (nx, ny[, d]) field; the derivative index is appended last."""
    chex.assert_rank(field, {2, 3})
    chex.assert_equal_shape_prefix([field, np.empty(grid.shape)], 2)
    return jnp.stack([diff(field, grid.dx, 0), diff(field, grid.dy, 1)], -1)


def hessian2(field: Array, grid: Grid2, clamped: bool = False) -> Array:
    """(∇′)² of a scalar field as (nx, ny, 2, 2).

    With `clamped` the field is extended by a reflected ghost layer, which
    realizes a vanishing normal derivative on the boundary.
    """
    chex.assert_shape(field, grid.shape)
    dx, dy = grid.dx, grid.dy
    if clamped:
        p = jnp.pad(field, 1, mode='reflect')
        fxx = (p[2:, 1:-1] - 2. * field + p[:-2, 1:-1]) / dx ** 2
        fyy = (p[1:-1, 2:] - 2. * field + p[1:-1, :-2]) / dy ** 2
        fxy = (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2]) / (4. * dx * dy)
    else:
        fxx = diff2(field, dx, 0)
        fyy = diff2(field, dy, 1)
        fxy = diff(diff(field, dx, 0), dy, 1)
    row0 = jnp.stack([fxx, fxy], -1)
    row1 = jnp.stack([fxy, fyy], -1)
    return jnp.stack([row0, row1], -2)


def integrate2(field: Array, grid: Grid2) -> Array:
    chex.assert_shape(field, grid.shape)
    return jnp.sum(grid.weights() * field)


def integrate3(field: Array, grid: Grid3) -> Array:
    chex.assert_shape(field, grid.shape)
    return jnp.sum(grid.weights() * field)


def normalize(field: Array) -> Array:
    """Per-node normalization without checks; safe inside jit."""
    return field / jnp.linalg.norm(field, axis=-1, keepdims=True)


def project_sphere(field: Array) -> Array:
    chex.assert_axis_dimension(field, -1, 3)
    norms = np.asarray(jnp.linalg.norm(field, axis=-1))
    if norms.min() < SPHERE_TOL:
        idx = np.unravel_index(norms.argmin(), norms.shape)
        raise DegenerateDirectorError(
            f'Director at node {idx} has norm {norms.min():.3g}')
    return normalize(field)


def tangent(field: Array, base: Array) -> Array:
    """Project node vectors onto the tangent planes of S² at `base`."""
    return field - jnp.sum(field * base, -1, keepdims=True) * base


def director_norm_error(zeta: Array) -> Array:
    """Largest deviation of a node norm from 1."""
    return jnp.max(jnp.abs(jnp.linalg.norm(zeta, axis=-1) - 1.))


# Dumps.

def _as_components(field: np.ndarray, ndim: int) -> np.ndarray:
    field = np.asarray(field)
    if field.ndim == ndim:
        field = field[..., None]
    return field


def _node_order(arr: np.ndarray, ndim: int) -> np.ndarray:
    """Reorder leading node axes so x runs fastest, then flatten them."""
    axes = tuple(reversed(range(ndim))) + tuple(range(ndim, arr.ndim))
    arr = np.transpose(arr, axes)
    return arr.reshape((-1,) + arr.shape[ndim:])


def write_field(path: str | os.PathLike,
                field: Array,
                grid: Grid2 | Grid3
                ) -> None:
    ndim = 2 if isinstance(grid, Grid2) else 3
    values = _as_components(field, ndim)
    chex.assert_equal_shape_prefix([values, np.empty(grid.shape)], ndim)
    values = _node_order(values, ndim)
    coords = _node_order(grid.points(), ndim)
    names = ['x', 'y', 'z'][:ndim] + [f'c{i}' for i in range(values.shape[1])]
    with open(path, 'w') as f:
        f.write(','.join(names) + '\n')
        for xyz, row in zip(coords, values):
            f.write(','.join(f'{v:.17g}' for v in (*xyz, *row)) + '\n')


def read_field(path: str | os.PathLike, grid: Grid2 | Grid3) -> np.ndarray:
    """Inverse of `write_field`; scalar dumps come back without a component axis."""
    ndim = 2 if isinstance(grid, Grid2) else 3
    data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    values = data[:, ndim:]
    reversed_shape = tuple(reversed(grid.shape))
    values = values.reshape(reversed_shape + (-1,))
    axes = tuple(reversed(range(ndim))) + (ndim,)
    values = np.transpose(values, axes)
    if values.shape[-1] == 1:
        values = values[..., 0]
    return values
