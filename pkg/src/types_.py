import collections.abc
import os
from typing import Callable

import jax
import jax.numpy as jnp

Array = jax.Array
RNG = jax.Array

Vector = tuple[float, ...]
Breakdown = dict[str, float]
Metrics = collections.abc.MutableMapping[str, float | int | str]
Row = dict[str, float | int | str]
Profile = Callable[[Array], Array]

THREADS_ENV = 'MAGNETOPLATE_THREADS'

E1 = jnp.array([1., 0., 0.])
E3 = jnp.array([0., 0., 1.])


def max_workers() -> int:
    n = os.environ.get(THREADS_ENV)
    if n is None:
        return os.cpu_count() or 1
    return max(1, int(n))
