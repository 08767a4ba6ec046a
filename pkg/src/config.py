import dataclasses
import logging
import os
import typing
from typing import Any

import numpy as np
import jax.numpy as jnp

from src import fields
from src.errors import ConfigError, GridError, InvariantError
from src.fields import Grid2, Grid3
from src.material import Material
from src.reduced import Loads, LoadSchedule
from src import bulk

Floats = tuple[float, ...]

log = logging.getLogger(__name__)

SCENARIOS = ('flat_e3', 'flat_e1', 'random', 'random_uv')
REQUIRED = ('grid.nx', 'grid.ny')
LOAD_COMPONENTS = dict(f=2, g=1, h=3)


@dataclasses.dataclass
class MaterialConfig:
    mu: float = 1.
    lambda_: float = 1.
    cp: float = 1.
    pexp: float = 4.
    beta: float = 8.

    def build(self) -> Material:
        return Material(self.mu, self.lambda_, self.cp, self.pexp, self.beta)

    def validate(self) -> None:
        try:
            self.build().validate()
        except InvariantError as exc:
            raise ConfigError(f'material.{exc.field}', str(exc)) from exc


@dataclasses.dataclass
class GridConfig:
    nx: int = 17
    ny: int = 17
    nz: int = 9
    lx: float = 1.
    ly: float = 1.

    def build(self) -> Grid2:
        return Grid2(self.nx, self.ny, self.lx, self.ly)

    def build3(self) -> Grid3:
        return Grid3(self.build(), self.nz)

    def validate(self) -> None:
        try:
            self.build3()
        except GridError as exc:
            raise ConfigError('grid', str(exc)) from exc


def _knots(raw: str, dim: int, key: str) -> list[np.ndarray]:
    knots = []
    for chunk in raw.split(';'):
        try:
            values = np.array([float(c) for c in chunk.split(',')])
        except ValueError as exc:
            raise ConfigError(key, f'not a list of numbers: {chunk!r}') from exc
        if values.shape != (dim,):
            raise ConfigError(key, f'expected {dim} components per knot, got {chunk!r}')
        knots.append(values)
    return knots


def _paths(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(';') if p.strip()]


def _resolve(path: str, base_dir: str | os.PathLike) -> str:
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def _node_shape(grid: Grid2, key: str) -> tuple[int, ...]:
    dim = LOAD_COMPONENTS[key]
    return grid.shape + ((dim,) if dim > 1 else ())


def _read_load(path: str, grid: Grid2, key: str) -> np.ndarray:
    name = f'schedule.{key}_file'
    try:
        values = fields.read_field(path, grid)
    except (OSError, ValueError) as exc:
        raise ConfigError(name, f'cannot read {path}: {exc}') from exc
    if values.shape != (shape := _node_shape(grid, key)):
        raise ConfigError(name, f'{path} holds shape {values.shape}, expected {shape}')
    return values


@dataclasses.dataclass
class ScheduleConfig:
    # Per-knot values separated by ';', components by ','.
    # A `<load>_file` key lists field dumps per knot and replaces the values.
    horizon: float = 1.
    times: Floats = ()
    f: str = '0, 0'
    g: str = '0'
    h: str = '0, 0, 0'
    f_file: str = ''
    g_file: str = ''
    h_file: str = ''

    def _sources(self) -> dict[str, list]:
        sources = {}
        for key, dim in LOAD_COMPONENTS.items():
            files = _paths(getattr(self, f'{key}_file'))
            sources[key] = files or _knots(getattr(self, key), dim, f'schedule.{key}')
        return sources

    def _parsed(self) -> tuple[np.ndarray, dict[str, list]]:
        sources = self._sources()
        n = max(2, *map(len, sources.values()))
        if self.times:
            times = np.asarray(self.times, float)
            n = max(n, len(times))
        else:
            times = np.linspace(0., self.horizon, n)
        for key, knots in sources.items():
            if len(knots) not in (1, n):
                raise ConfigError(f'schedule.{key}', f'{len(knots)} knots for {n} times')
        if len(times) != n:
            raise ConfigError('schedule.times', f'{len(times)} times for {n} knots')
        return times, {k: v * n if len(v) == 1 else v for k, v in sources.items()}

    def build(self, grid: Grid2) -> LoadSchedule:
        times, sources = self._parsed()
        cache = {}

        def node_values(key, item):
            if isinstance(item, str):
                if item not in cache:
                    cache[item] = _read_load(item, grid, key)
                return jnp.asarray(cache[item])
            shape = _node_shape(grid, key)
            return jnp.broadcast_to(jnp.reshape(jnp.asarray(item, float), shape[2:]), shape)

        knots = []
        for i in range(len(times)):
            f, g, h = (node_values(k, sources[k][i]) for k in LOAD_COMPONENTS)
            knots.append(Loads(f=f, g=g, hfield=h))
        return LoadSchedule(times, knots)

    def validate(self) -> None:
        if not self.horizon > 0:
            raise ConfigError('schedule.horizon', f'must be positive, got {self.horizon}')
        for key in LOAD_COMPONENTS:
            for path in _paths(getattr(self, f'{key}_file')):
                if not os.path.exists(path):
                    raise ConfigError(f'schedule.{key}_file', f'no such file: {path}')
        times = self._parsed()[0]
        if times[0] != 0. or np.any(np.diff(times) <= 0):
            raise ConfigError('schedule.times', f'must start at 0 and increase: {times}')


@dataclasses.dataclass
class SolverConfig:
    grad_tol: float = 1e-7
    max_outer_iters: int = 200
    cg_tol: float = 1e-10
    cg_max_iters: int = 2000
    zeta_steps: int = 10
    restarts: int = 2
    freeze_zeta: bool = False
    freeze_uv: bool = False

    def validate(self) -> None:
        for name in ('grad_tol', 'cg_tol'):
            if not getattr(self, name) > 0:
                raise ConfigError(f'solver.{name}', 'must be positive')
        for name in ('max_outer_iters', 'cg_max_iters'):
            if getattr(self, name) < 1:
                raise ConfigError(f'solver.{name}', 'must be at least 1')
        if self.restarts < 0 or self.zeta_steps < 1:
            raise ConfigError('solver', 'restarts must be >= 0 and zeta_steps >= 1')


@dataclasses.dataclass
class EvolutionConfig:
    nsteps: int = 8
    times: Floats = ()
    sigma: float = 1e-3
    huber_eps: float = 1e-4
    n_competitors: int = 4
    balance_constant: float = 1.

    def validate(self) -> None:
        if not self.sigma > 0:
            raise ConfigError('evolution.sigma', f'must be positive, got {self.sigma}')
        if not self.huber_eps > 0:
            raise ConfigError('evolution.huber_eps', f'must be positive, got {self.huber_eps}')
        if not self.times and self.nsteps < 1:
            raise ConfigError('evolution.nsteps', 'must be at least 1')
        if self.times and (self.times[0] != 0. or np.any(np.diff(self.times) <= 0)):
            raise ConfigError('evolution.times', f'must start at 0 and increase: {self.times}')
        if self.n_competitors < 0:
            raise ConfigError('evolution.n_competitors', 'must be non-negative')


def _check_decreasing(hs: Floats, key: str) -> None:
    if not hs:
        raise ConfigError(key, 'empty thickness list')
    if any(a <= b for a, b in zip(hs[:-1], hs[1:])) or hs[-1] <= 0:
        raise ConfigError(key, f'must be positive and strictly decreasing: {hs}')


@dataclasses.dataclass
class GammaConfig:
    spec: str = 'zero_e3'
    h: Floats = (.2, .1, .05, .025)
    f: Floats = ()
    g: Floats = ()
    hfield: Floats = ()

    def uniform_loads(self) -> dict | None:
        if not (self.f or self.g or self.hfield):
            return None
        return dict(f=self.f or (0., 0.),
                    g=self.g[0] if self.g else 0.,
                    h=self.hfield or (0., 0., 0.))

    def validate(self) -> None:
        if self.spec not in bulk.CATALOG:
            raise ConfigError('gamma.spec', f'unknown profile {self.spec!r}')
        _check_decreasing(self.h, 'gamma.h')
        if self.h[0] > 1:
            raise ConfigError('gamma.h', 'thicknesses must not exceed 1')
        for key, dim in (('f', 2), ('g', 1), ('hfield', 3)):
            if (n := len(getattr(self, key))) not in (0, dim):
                raise ConfigError(f'gamma.{key}', f'expected {dim} components, got {n}')


@dataclasses.dataclass
class MagstatConfig:
    profile: str = 'cos_mode'
    h: Floats = (.1, .05, .01)
    oracle: bool = False

    def validate(self) -> None:
        if self.profile not in bulk.CATALOG:
            raise ConfigError('magstat.profile', f'unknown profile {self.profile!r}')
        _check_decreasing(self.h, 'magstat.h')


@dataclasses.dataclass
class RunSection:
    scenario: str = 'flat_e3'
    initial: str = ''
    out: str = 'runs/default'
    seed: int = 0
    t: float = 0.
    n_competitors: int = 8
    dump_fields: bool = True

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError('run.scenario', f'expected one of {SCENARIOS}, got {self.scenario!r}')
        if self.initial and not os.path.exists(self.initial):
            raise ConfigError('run.initial', f'no such file: {self.initial}')
        if self.n_competitors < 0:
            raise ConfigError('run.n_competitors', 'must be non-negative')


SECTIONS = dict(
    material=MaterialConfig,
    grid=GridConfig,
    schedule=ScheduleConfig,
    solver=SolverConfig,
    evolution=EvolutionConfig,
    gamma=GammaConfig,
    magstat=MagstatConfig,
    run=RunSection,
)


@dataclasses.dataclass
class RunConfig:
    material: MaterialConfig = dataclasses.field(default_factory=MaterialConfig)
    grid: GridConfig = dataclasses.field(default_factory=GridConfig)
    schedule: ScheduleConfig = dataclasses.field(default_factory=ScheduleConfig)
    solver: SolverConfig = dataclasses.field(default_factory=SolverConfig)
    evolution: EvolutionConfig = dataclasses.field(default_factory=EvolutionConfig)
    gamma: GammaConfig = dataclasses.field(default_factory=GammaConfig)
    magstat: MagstatConfig = dataclasses.field(default_factory=MagstatConfig)
    run: RunSection = dataclasses.field(default_factory=RunSection)
    defaulted: list[str] = dataclasses.field(default_factory=list)

    def validate(self) -> 'RunConfig':
        for name in SECTIONS:
            getattr(self, name).validate()
        if self.run.t > self.schedule._parsed()[0][-1]:
            raise ConfigError('run.t', f'{self.run.t} beyond the schedule horizon')
        if any(getattr(self.schedule, f'{k}_file') for k in LOAD_COMPONENTS):
            self.schedule.build(self.grid.build())
        return self

    def to_text(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f'[{name}]')
            section = getattr(self, name)
            for field in dataclasses.fields(section):
                value = getattr(section, field.name)
                lines.append(f'{_key(field.name)} = {_format(value)}')
            lines.append('')
        return '\n'.join(lines)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, 'w') as f:
            f.write(self.to_text())

    @classmethod
    def from_file(cls,
                  path: str | os.PathLike,
                  overrides: dict[str, str] | None = None
                  ) -> 'RunConfig':
        with open(path, encoding='utf-8') as f:
            text = f.read()
        return parse_config(text, os.path.dirname(os.path.abspath(path)), overrides)


def _key(field_name: str) -> str:
    return field_name.rstrip('_')


def _field_name(section_cls: type, key: str) -> str | None:
    names = {_key(f.name): f.name for f in dataclasses.fields(section_cls)}
    return names.get(key)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ', '.join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw: str, tp: Any, key: str) -> Any:
    try:
        if tp is bool:
            match raw.lower():
                case 'true' | 'yes' | '1':
                    return True
                case 'false' | 'no' | '0':
                    return False
                case _:
                    raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if typing.get_origin(tp) is tuple:
            return tuple(float(v) for v in raw.split(',') if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(key, f'cannot read {raw!r} as {getattr(tp, "__name__", tp)}') from exc


def _read_pairs(text: str) -> dict[str, str]:
    pairs = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if line.startswith('['):
            if not line.endswith(']'):
                raise ConfigError(f'line {lineno}', f'malformed section header {line!r}')
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(section, 'unknown section')
            continue
        if '=' not in line:
            raise ConfigError(f'line {lineno}', f'expected key = value, got {line!r}')
        if section is None:
            raise ConfigError(f'line {lineno}', 'key outside of a section')
        key, value = (s.strip() for s in line.split('=', 1))
        path = f'{section}.{key}'
        if path in pairs:
            raise ConfigError(path, 'duplicate key')
        pairs[path] = value
    return pairs


def parse_config(text: str,
                 base_dir: str | os.PathLike = os.curdir,
                 overrides: dict[str, str] | None = None
                 ) -> RunConfig:
    """Read `[section]` / `key = value` text into a validated RunConfig.

    `overrides` maps key paths such as 'grid.nx' to raw values and wins
    over the text. Relative paths are resolved against `base_dir`.
    """
    pairs = _read_pairs(text)
    pairs.update(overrides or {})
    for required in REQUIRED:
        if required not in pairs:
            raise ConfigError(required, 'missing required key')

    sections, defaulted = {}, []
    for name, section_cls in SECTIONS.items():
        hints = typing.get_type_hints(section_cls)
        values = {}
        for path, raw in pairs.items():
            sec, key = path.split('.', 1)
            if sec != name:
                continue
            field_name = _field_name(section_cls, key)
            if field_name is None:
                raise ConfigError(path, 'unknown key')
            values[field_name] = _convert(raw, hints[field_name], path)
        for field in dataclasses.fields(section_cls):
            if field.name not in values:
                defaulted.append(f'{name}.{_key(field.name)}')
        sections[name] = section_cls(**values)
    unknown = {p.split('.', 1)[0] for p in pairs} - set(SECTIONS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], 'unknown section')

    run, schedule = sections['run'], sections['schedule']
    if run.initial:
        run.initial = _resolve(run.initial, base_dir)
    for key in LOAD_COMPONENTS:
        paths = _paths(getattr(schedule, f'{key}_file'))
        setattr(schedule, f'{key}_file', '; '.join(_resolve(p, base_dir) for p in paths))
    cfg = RunConfig(**sections, defaulted=defaulted)
    cfg.validate()
    log.debug('Defaults used for %s', ', '.join(defaulted))
    return cfg
