"""Stray-field energy of a thin periodic film with thickness-uniform magnetization."""
import dataclasses
import functools
import logging
from typing import Sequence

import numpy as np
import jax
import jax.numpy as jnp
import chex

from src import fields
from src import types_ as types
from src.errors import GridError, NumericalError
from src.fields import Grid2

Array = types.Array

log = logging.getLogger(__name__)

ZERO_TOL = 1e-14
RESIDUAL_TOL = 1e-8


def _power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclasses.dataclass(frozen=True)
class DemagSetup:
    """Periodic cell [0, lx) × [0, ly) of a film of thickness h.

    The last node row and column of `grid` repeat the first ones.
    """

    grid: Grid2
    h: float

    def __post_init__(self) -> None:
        for n in (self.grid.nx - 1, self.grid.ny - 1):
            if not _power_of_two(n):
                raise GridError(f'Periodic cell counts must be powers of two: '
                                f'{self.grid.nx - 1, self.grid.ny - 1}')
        if not self.h > 0:
            raise ValueError(f'Film thickness must be positive: {self.h}')

    @property
    def cells(self) -> tuple[int, int]:
        return self.grid.nx - 1, self.grid.ny - 1

    def wavevectors(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.cells
        kx = 2 * np.pi * np.fft.fftfreq(nx, self.grid.dx)
        ky = 2 * np.pi * np.fft.fftfreq(ny, self.grid.dy)
        return np.meshgrid(kx, ky, indexing='ij')


def demag_factor(q: Array) -> Array:
    """N(q) = (1 − e^{−q})/q with N(0) = 1."""
    q = jnp.asarray(q, float)
    safe = jnp.where(q > 0, q, 1.)
    return jnp.where(q > 0, -jnp.expm1(-safe) / safe, 1.)


def _periodic_cell(zeta: Array, setup: DemagSetup) -> Array:
    chex.assert_shape(zeta, setup.grid.shape + (3,))
    return zeta[:-1, :-1]


@functools.partial(jax.jit, static_argnames='setup')
def slab_demag_energy(zeta: Array, setup: DemagSetup) -> Array:
    m = _periodic_cell(zeta, setup)
    mh = jnp.fft.fft2(m, axes=(0, 1))
    kx, ky = setup.wavevectors()
    k = np.hypot(kx, ky)
    safe = np.where(k > 0, k, 1.)
    inplane = (kx / safe) * mh[..., 0] + (ky / safe) * mh[..., 1]
    n = demag_factor(k * setup.h)
    density = n * jnp.abs(mh[..., 2]) ** 2 + (1. - n) * jnp.abs(inplane) ** 2
    cells = m.shape[0] * m.shape[1]
    return .5 * setup.grid.area * jnp.sum(density) / cells ** 2


def limit_energy(zeta: Array, grid: Grid2) -> Array:
    """E₀^mag = ½∫ζ₃²."""
    return .5 * fields.integrate2(zeta[..., 2] ** 2, grid)


def magnetostatic_limit_check(zeta: Array,
                              hs: Sequence[float],
                              grid: Grid2
                              ) -> list[types.Row]:
    """Rows (h, E_mag, E0_mag, ratio) for decreasing thicknesses.

    ratio is 1 when both energies vanish and inf when only E0_mag does.
    """
    hs = [float(h) for h in hs]
    if any(a <= b for a, b in zip(hs[:-1], hs[1:])):
        raise ValueError(f'Thicknesses must decrease strictly: {hs}')
    e0 = float(limit_energy(zeta, grid))
    tol = ZERO_TOL * grid.area
    rows = []
    for h in hs:
        e = float(slab_demag_energy(zeta, DemagSetup(grid, h)))
        if abs(e0) <= tol:
            ratio = 1. if abs(e) <= tol else float('inf')
        else:
            ratio = e / e0
        rows.append(dict(h=h, E_mag=e, E0_mag=e0, ratio=ratio))
        log.info('h = %.4g: E_mag = %.12g, ratio = %.12g', h, e, ratio)
    return rows


def poisson_oracle(zeta: Array,
                   setup: DemagSetup,
                   slab_cells: int = 4,
                   height: float = 64.
                   ) -> float:
    """Brute-force (1/2h)∫|∇ψ|² on a periodic box of height `height`·h.

    The potential solves the finite-difference weak form
    Σ D⁺ψ·D⁺φ = Σ χm·D⁺φ with the zero-mean gauge.
    """
    m = np.asarray(_periodic_cell(zeta, setup))
    nx, ny = setup.cells
    dz = setup.h / slab_cells
    nz = int(round(height * slab_cells))
    steps = (setup.grid.dx, setup.grid.dy, dz)

    source = np.zeros((nx, ny, nz, 3))
    source[:, :, :slab_cells] = m[:, :, None]
    sh = jnp.fft.fftn(jnp.asarray(source), axes=(0, 1, 2))
    ks = np.meshgrid(*(2 * np.pi * np.fft.fftfreq(n, d)
                       for n, d in zip((nx, ny, nz), steps)), indexing='ij')
    g = [(np.exp(1j * k * d) - 1.) / d for k, d in zip(ks, steps)]
    norm2 = sum(np.abs(gi) ** 2 for gi in g)
    rhs = sum(np.conj(gi) * sh[..., j] for j, gi in enumerate(g))
    psi_h = jnp.where(norm2 > 0, rhs / np.where(norm2 > 0, norm2, 1.), 0.)

    psi = jnp.fft.ifftn(psi_h).real
    residual = 0.
    for j, d in enumerate(steps):
        w = (jnp.roll(psi, -1, j) - psi) / d - source[..., j]
        residual = residual + (jnp.roll(w, 1, j) - w) / d
    scale = max(float(np.abs(source).max()) / min(steps), 1.)
    if (resid := float(jnp.abs(residual).max())) > RESIDUAL_TOL * scale:
        raise NumericalError(f'Poisson residual {resid:.3g} exceeds tolerance')

    cells = nx * ny * nz
    volume = setup.grid.area * nz * dz
    grad2 = sum(jnp.abs(gi * psi_h) ** 2 for gi in g)
    return float(volume * jnp.sum(grad2) / cells ** 2 / (2 * setup.h))
