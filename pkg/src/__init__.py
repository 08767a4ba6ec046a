import os


def xla_flags(threads: str | None, flags: str = '') -> str:
    """XLA_FLAGS for a MAGNETOPLATE_THREADS setting; one thread turns off Eigen's pool."""
    if threads is not None and int(threads) == 1:
        flags = f'{flags} --xla_cpu_multi_thread_eigen=false'
    return flags.strip()


if threads := os.environ.get('MAGNETOPLATE_THREADS'):
    os.environ['XLA_FLAGS'] = xla_flags(threads, os.environ.get('XLA_FLAGS', ''))

import jax  # noqa: E402

# Energies are O(h^β) differences of O(1) quantities.
jax.config.update('jax_enable_x64', True)
