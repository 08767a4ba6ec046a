"""Stored energy Φ, its quadratic forms and the magnetoelastic density W_h."""
from typing import NamedTuple

import numpy as np
import jax
import jax.numpy as jnp
import chex

from src import types_ as types
from src.errors import (
    DegenerateAxisError, InvariantError, OrientationError, SpectralError
)

Array = types.Array

JACOBI_SWEEPS = 30
JACOBI_TOL = 1e-14
SYMMETRY_TOL = 1e-12
_PAIRS = ((0, 1), (0, 2), (1, 2))


class Material(NamedTuple):
    mu: float = 1.
    lambda_: float = 1.
    cp: float = 1.
    pexp: float = 4.
    beta: float = 8.

    def validate(self) -> 'Material':
        if not self.mu > 0:
            raise InvariantError('mu', f'must be positive, got {self.mu}')
        if not 2 * self.mu + 3 * self.lambda_ > 0:
            raise InvariantError(
                'lambda', f'2·mu + 3·lambda must be positive, got {self.lambda_}')
        if not self.cp >= 0:
            raise InvariantError('cp', f'must be non-negative, got {self.cp}')
        if not self.pexp > 3:
            raise InvariantError('pexp', f'must exceed 3, got {self.pexp}')
        if not self.beta > max(6., self.pexp):
            raise InvariantError(
                'beta', f'must exceed max(6, pexp), got {self.beta}')
        return self

    @property
    def lambda_red(self) -> float:
        """Second modulus of the reduced (plane) quadratic form."""
        return 2 * self.mu * self.lambda_ / (2 * self.mu + self.lambda_)

    def well_depth(self, h: float) -> float:
        """h^{β/2}: amplitude of the spontaneous strain."""
        return h ** (self.beta / 2)


def sym(a: Array) -> Array:
    return .5 * (a + jnp.swapaxes(a, -1, -2))


def trace(a: Array) -> Array:
    return jnp.trace(a, axis1=-2, axis2=-1)


def embed(xi: Array) -> Array:
    """Place a (..., 2, 2) block into the upper-left corner of a 3×3 zero matrix."""
    pad = [(0, 0)] * (xi.ndim - 2) + [(0, 1), (0, 1)]
    return jnp.pad(xi, pad)


def adjugate3(f: Array) -> Array:
    def a(i, j):
        return f[..., i, j]
    rows = (
        (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1),
         a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2),
         a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)),
        (a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2),
         a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0),
         a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)),
        (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0),
         a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1),
         a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)),
    )
    return jnp.stack([jnp.stack(r, -1) for r in rows], -2)


def _jacobi_rotation(carry: tuple[Array, Array], p: int, q: int
                     ) -> tuple[Array, Array]:
    a, v = carry
    apq = a[p, q]
    active = jnp.abs(apq) > JACOBI_TOL * jnp.sqrt(jnp.sum(a * a))
    theta = (a[q, q] - a[p, p]) / (2. * jnp.where(active, apq, 1.))
    sign = jnp.where(theta >= 0, 1., -1.)
    t = sign / (jnp.abs(theta) + jnp.sqrt(theta ** 2 + 1.))
    t = jnp.where(active, t, 0.)
    c = 1. / jnp.sqrt(t ** 2 + 1.)
    s = t * c
    j = jnp.eye(3).at[p, p].set(c).at[q, q].set(c).at[p, q].set(s).at[q, p].set(-s)
    a = sym(j.T @ a @ j)
    return a, v @ j


def _eigh3(a: Array) -> tuple[Array, Array]:
    """Cyclic Jacobi eigendecomposition of one symmetric 3×3 matrix."""
    chex.assert_shape(a, (3, 3))

    def sweep(_, carry):
        for p, q in _PAIRS:
            carry = _jacobi_rotation(carry, p, q)
        return carry

    a, v = jax.lax.fori_loop(0, JACOBI_SWEEPS, sweep, (sym(a), jnp.eye(3)))
    return jnp.diagonal(a), v


eigh3 = jnp.vectorize(_eigh3, signature='(3,3)->(3),(3,3)')


def sqrt_spd3(a: Array) -> Array:
    """Principal square root of symmetric positive definite 3×3 matrices."""
    chex.assert_axis_dimension(a, -1, 3)
    chex.assert_axis_dimension(a, -2, 3)
    asym = np.abs(np.asarray(a - jnp.swapaxes(a, -1, -2))).max()
    scale = max(1., float(np.abs(np.asarray(a)).max()))
    if asym > SYMMETRY_TOL * scale:
        raise SpectralError(f'Matrix is not symmetric: asymmetry {asym:.3g}')
    w, v = eigh3(a)
    if (wmin := float(np.asarray(w).min())) <= 0:
        raise SpectralError(f'Matrix is not positive definite: smallest eigenvalue {wmin:.6g}')
    return jnp.einsum('...ik,...k,...jk->...ij', v, jnp.sqrt(w), v)


def _stretch(d: Array) -> Array:
    """√((I + D)ᵀ(I + D)) − I computed without cancellation for small D."""
    m = d + d.T + d.T @ d
    w, v = _eigh3(m)
    s = w / (jnp.sqrt(1. + w) + 1.)
    return (v * s) @ v.T


def phi_delta(d: Array, mat: Material) -> Array:
    """Φ(I + D)."""
    e = _stretch(d)
    n2 = jnp.sum(e * e)
    return (mat.mu * n2
            + .5 * mat.lambda_ * jnp.trace(e) ** 2
            + mat.cp * n2 ** (mat.pexp / 2))


def _check_orientation(f: Array) -> None:
    det = np.asarray(jnp.linalg.det(f))
    if det.min() <= 0:
        raise OrientationError(f'Non-positive determinant {det.min():.6g}')


def phi(y: Array, mat: Material) -> Array:
    """Φ(Y) = mu‖U − I‖² + (lambda/2) tr(U − I)² + cp‖U − I‖^pexp, U = √(YᵀY)."""
    chex.assert_shape(y, (3, 3))
    _check_orientation(y)
    return phi_delta(y - jnp.eye(3), mat)


def q_phi(y: Array, mat: Material) -> Array:
    """Hessian of Φ at the identity; acts on trailing 3×3 axes."""
    s = sym(y)
    return (2 * mat.mu * jnp.sum(s * s, (-2, -1))
            + mat.lambda_ * trace(y) ** 2)


def _shifted(b: Array, c: Array) -> Array:
    return b.at[..., :, 2].add(c).at[..., 2, :].add(c)


def _closed_shift(b: Array, mat: Material) -> Array:
    s = -mat.lambda_ * (b[..., 0, 0] + b[..., 1, 1]) / (2 * mat.mu + mat.lambda_)
    return jnp.stack([-b[..., 0, 2], -b[..., 1, 2], .5 * (s - b[..., 2, 2])], -1)


def _linear_shift(b: Array, mat: Material) -> Array:
    def value(c):
        return q_phi(_shifted(b, c), mat)
    zero = jnp.zeros(3)
    g = jax.grad(value)(zero)
    h = jax.hessian(value)(zero)
    return -jnp.linalg.solve(h, g)


def optimal_shift(b: Array,
                  mat: Material,
                  method: str = 'closed'
                  ) -> tuple[Array, Array]:
    """Minimize c ↦ Q_Φ(B + c⊗e₃ + e₃⊗c) over c ∈ R³.

    `method='closed'` uses the explicit minimizer; `'linear'` solves the
    3×3 normal equations. Returns the minimizer and the minimum.
    """
    chex.assert_axis_dimension(b, -1, 3)
    match method:
        case 'closed':
            c = _closed_shift(b, mat)
        case 'linear':
            solve = jnp.vectorize(lambda m: _linear_shift(m, mat),
                                  signature='(3,3)->(3)')
            c = solve(b)
        case _:
            raise ValueError(method)
    return c, q_phi(_shifted(b, c), mat)


def q_phi_red(xi: Array, mat: Material, method: str = 'closed') -> Array:
    """Reduced quadratic form on trailing 2×2 axes."""
    chex.assert_axis_dimension(xi, -1, 2)
    s = sym(xi)
    match method:
        case 'closed':
            return (2 * mat.mu * jnp.sum(s * s, (-2, -1))
                    + mat.lambda_red * trace(xi) ** 2)
        case 'shift':
            return optimal_shift(embed(s), mat, 'linear')[1]
        case _:
            raise ValueError(method)


def _axis(f: Array, lam: Array) -> Array:
    n = adjugate3(f) @ lam
    return n / jnp.linalg.norm(n)


def _check_axis(f: Array, lam: Array, h: float) -> None:
    chex.assert_shape([f], (3, 3))
    chex.assert_shape([lam], (3,))
    chex.assert_scalar_positive(float(h))
    _check_orientation(f)
    if abs(float(jnp.linalg.norm(lam)) - 1.) > SYMMETRY_TOL:
        raise ValueError(f'Magnetization must be a unit vector: {lam}')
    if float(jnp.linalg.norm(adjugate3(f) @ lam)) < 1e-300:
        raise DegenerateAxisError(f'(adj F)·λ vanishes for F={f}, λ={lam}')


def k_h(f: Array, lam: Array, h: float, mat: Material) -> Array:
    _check_axis(f, lam, h)
    n = _axis(f, lam)
    return jnp.eye(3) + mat.well_depth(h) * jnp.outer(n, n)


def k_h_inverse(f: Array, lam: Array, h: float, mat: Material) -> Array:
    _check_axis(f, lam, h)
    n = _axis(f, lam)
    a = mat.well_depth(h)
    return jnp.eye(3) - a / (1. + a) * jnp.outer(n, n)


def w_h_delta(d: Array, lam: Array, h: float, mat: Material) -> Array:
    """W_h(I + D, λ) without checks; √(FᵀF)K_h⁻¹ is formed as I + D'."""
    n = _axis(jnp.eye(3) + d, lam)
    a = mat.well_depth(h)
    e = _stretch(d)
    d = e - a / (1. + a) * (jnp.eye(3) + e) @ jnp.outer(n, n)
    return phi_delta(d, mat)


def _w_h(f: Array, lam: Array, h: float, mat: Material) -> Array:
    return w_h_delta(f - jnp.eye(3), lam, h, mat)


def w_h(f: Array, lam: Array, h: float, mat: Material) -> Array:
    """W_h(F, λ) = Φ(√(FᵀF) K_h(F, λ)⁻¹)."""
    _check_axis(f, lam, h)
    return _w_h(f, lam, h, mat)
