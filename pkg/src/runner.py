import dataclasses
import logging
import os
from typing import Any, NamedTuple

import numpy as np
import cloudpickle
import jax
import jax.numpy as jnp

from src import bulk
from src import fields
from src import loggers
from src import magnetostatics
from src import ops
from src.config import RunConfig
from src.errors import AcceptanceError, SolverStalledError, StepQualityError
from src.fields import Grid2
from src.material import Material
from src.reduced import LoadSchedule, ReducedState

log = logging.getLogger(__name__)

SUBCOMMANDS = ('static', 'evolve', 'gamma', 'magstat', 'check')


class Runner:
    CONFIG = 'config.kv'
    SUMMARY = 'summary.kv'
    STATIC = 'static_state.cpkl'
    SOLVER = 'solver'
    STABILITY = 'stability.csv'
    TRACE = 'trace.csv'
    TRACE_PKL = 'trace.cpkl'
    BALANCE = 'balance.csv'
    STEPS = 'steps.csv'
    GAMMA = 'gamma.csv'
    MAGSTAT = 'magstat.csv'
    CHECKS = 'checks.csv'
    FIELDS_DIR = 'fields/'

    class Status(NamedTuple):
        config_exists: bool
        static_exists: bool
        trace_exists: bool

    def __init__(self, cfg: RunConfig) -> None:
        if not os.path.exists(cfg.run.out):
            os.makedirs(cfg.run.out)
        self.cfg = cfg
        cfg.save(self.exp_path(Runner.CONFIG))
        self._rng = jax.random.PRNGKey(cfg.run.seed)

    def run(self, subcommand: str) -> None:
        match subcommand:
            case 'static':
                self.run_static()
            case 'evolve':
                self.run_evolve()
            case 'gamma':
                self.run_gamma()
            case 'magstat':
                self.run_magstat()
            case 'check':
                self.run_check()
            case _:
                raise ValueError(f'Unknown subcommand {subcommand!r}; expected one of {SUBCOMMANDS}')

    def run_static(self) -> None:
        """Minimize F₀ at the configured time and sample its stability."""
        c = self.cfg
        grid, mat = self.make_grid(), self.make_material()
        schedule = self.make_schedule(grid)
        opts = self.make_solve_options()
        initial = self.make_initial(grid)
        state, report = ops.minimize_f0(initial, c.run.t, schedule, grid, mat, opts)

        logger = loggers.CSVLogger(self.exp_path(), Runner.SOLVER, step_key='iteration')
        for it, energy in enumerate(report.history):
            logger.write(dict(iteration=it, energy=energy))
        stability = ops.check_stability(
            state, c.run.t, schedule, grid, mat, c.run.n_competitors, c.run.seed, opts)
        loggers.write_table(self.exp_path(Runner.STABILITY),
                            [dict(competitor=n, margin=m) for n, m in stability.log])
        self._write(jax.device_get(state), Runner.STATIC)
        if c.run.dump_fields:
            self._dump_state(state, grid, 'static.csv')

        summary = dict(
            command='static',
            seed=c.run.seed,
            t=c.run.t,
            energy=report.energy,
            **report.breakdown,
            iterations=report.iterations,
            grad_sup=report.grad_sup,
            cg_residual=report.cg_residual,
            converged=report.converged,
            stalled=report.stalled,
            u_sup=float(jnp.abs(state.u).max()),
            v_sup=float(jnp.abs(state.v).max()),
            stability_margin=stability.margin,
        )
        loggers.write_kv(self.exp_path(Runner.SUMMARY), summary)
        if report.stalled:
            raise SolverStalledError(
                f'Line search failed after {report.iterations} iterations, '
                f'|grad| = {report.grad_sup:.3g}')

    def run_evolve(self) -> None:
        """Incremental minimization over the configured partition."""
        c = self.cfg
        grid, mat = self.make_grid(), self.make_material()
        schedule = self.make_schedule(grid)
        opts = self.make_solve_options()
        partition = self.make_partition(schedule)
        status = self.get_status()
        if status.static_exists:
            log.info('Starting from the saved static minimizer.')
            initial = jax.device_put(self._open(Runner.STATIC)).validate(grid)
        else:
            initial = self.make_initial(grid)

        try:
            trace = ops.evolve(initial, partition, c.evolution.sigma, schedule,
                               grid, mat, opts, c.evolution.n_competitors, c.run.seed)
        except StepQualityError as exc:
            if exc.trace is not None:
                self._write_trace(exc.trace, grid)
            raise
        self._write_trace(trace, grid)

        balance = ops.energy_balance_report(
            trace, schedule, grid, mat, c.evolution.balance_constant)
        loggers.write_table(self.exp_path(Runner.BALANCE), balance)
        summary = dict(
            command='evolve',
            seed=c.run.seed,
            nsteps=partition.nsteps,
            partition_size=partition.size,
            sigma=c.evolution.sigma,
            initial_margin=trace.initial_stability.margin,
            F0_final=trace.f0[-1],
            var_final=trace.var_cum[-1],
            power_final=trace.power_cum[-1],
            balance_resid_final=trace.balance_resid[-1],
            max_gap=max(s.gap for s in trace.steps),
            max_aimp_resid=max(r['aimp_resid'] for r in balance),
            refinements=sum(s.refinements for s in trace.steps),
        )
        loggers.write_kv(self.exp_path(Runner.SUMMARY), summary)

    def run_gamma(self) -> None:
        c = self.cfg
        spec = bulk.catalog(c.gamma.spec, self.make_material())
        rows = bulk.gamma_table(spec, c.gamma.h, c.grid.build3(), self.make_grid(),
                                c.gamma.uniform_loads())
        loggers.write_table(self.exp_path(Runner.GAMMA), rows)
        loggers.write_kv(self.exp_path(Runner.SUMMARY), dict(
            command='gamma',
            seed=c.run.seed,
            spec=spec.name,
            E0=rows[-1]['E0'],
            E_h_last=rows[-1]['E_h'],
            err_last=rows[-1]['err'],
        ))

    def run_magstat(self) -> None:
        c = self.cfg
        grid = self.make_grid()
        spec = bulk.catalog(c.magstat.profile, self.make_material())
        zeta = bulk.sample_limit_state(spec, grid).zeta
        rows = magnetostatics.magnetostatic_limit_check(zeta, c.magstat.h, grid)
        for row in rows:
            row['N'] = float(magnetostatics.demag_factor(2 * np.pi * row['h']))
            if c.magstat.oracle:
                setup = magnetostatics.DemagSetup(grid, row['h'])
                row['oracle'] = magnetostatics.poisson_oracle(zeta, setup)
        loggers.write_table(self.exp_path(Runner.MAGSTAT), rows)
        loggers.write_kv(self.exp_path(Runner.SUMMARY), dict(
            command='magstat',
            seed=c.run.seed,
            profile=c.magstat.profile,
            E0_mag=rows[0]['E0_mag'],
            ratio_last=rows[-1]['ratio'],
        ))

    def run_check(self) -> None:
        """Reduced-scale invariant suite; any failure is an acceptance error."""
        from src.checks import run_checks
        results = run_checks(self.cfg)
        loggers.write_table(self.exp_path(Runner.CHECKS), results)
        failed = [r['name'] for r in results if not r['passed']]
        loggers.write_kv(self.exp_path(Runner.SUMMARY), dict(
            command='check',
            seed=self.cfg.run.seed,
            total=len(results),
            failed=len(failed),
        ))
        if failed:
            raise AcceptanceError(f'Failed checks: {", ".join(failed)}')

    def make_material(self) -> Material:
        return self.cfg.material.build()

    def make_grid(self) -> Grid2:
        return self.cfg.grid.build()

    def make_schedule(self, grid: Grid2) -> LoadSchedule:
        return self.cfg.schedule.build(grid)

    def make_solve_options(self) -> ops.SolveOptions:
        s = self.cfg.solver
        return ops.SolveOptions(
            max_outer_iters=s.max_outer_iters,
            grad_tol=s.grad_tol,
            cg_tol=s.cg_tol,
            cg_max_iters=s.cg_max_iters,
            zeta_steps=s.zeta_steps,
            freeze_zeta=s.freeze_zeta,
            freeze_uv=s.freeze_uv,
            restarts=s.restarts,
            seed=self.cfg.run.seed,
            huber_eps=self.cfg.evolution.huber_eps,
        )

    def make_partition(self, schedule: LoadSchedule) -> ops.Partition:
        e = self.cfg.evolution
        if e.times:
            return ops.Partition(e.times)
        return ops.Partition.uniform(schedule.horizon, e.nsteps)

    def make_initial(self, grid: Grid2) -> ReducedState:
        run = self.cfg.run
        if run.initial:
            return jax.device_put(self._open(run.initial)).validate(grid)
        match run.scenario:
            case 'flat_e3':
                return ReducedState.flat(grid)
            case 'flat_e1':
                return ReducedState.flat(grid, (1., 0., 0.))
            case 'random':
                return ReducedState.random(self._rng, grid)
            case 'random_uv':
                state = ReducedState.random(self._rng, grid)
                return state._replace(zeta=ReducedState.flat(grid).zeta)
            case _:
                raise ValueError(run.scenario)

    def exp_path(self, path: str = os.path.curdir) -> str:
        logdir = os.path.abspath(self.cfg.run.out)
        path = os.path.join(logdir, path)
        return os.path.abspath(path)

    def get_status(self) -> 'Runner.Status':
        def exs(p): return os.path.exists(self.exp_path(p))
        return Runner.Status(
            config_exists=exs(Runner.CONFIG),
            static_exists=exs(Runner.STATIC),
            trace_exists=exs(Runner.TRACE_PKL),
        )

    def _write_trace(self, trace: ops.EvolutionTrace, grid: Grid2) -> None:
        loggers.write_table(self.exp_path(Runner.TRACE), trace.rows())
        loggers.write_table(self.exp_path(Runner.STEPS), [
            dict(i=i + 1, t=s.t, dt=s.dt, eps=s.eps, refinements=s.refinements,
                 value=s.value, gap=s.gap, slack=s.slack, d_inc=s.d_inc,
                 iterations=s.solve.iterations, converged=s.solve.converged)
            for i, s in enumerate(trace.steps)])
        self._write(dataclasses.replace(trace, states=jax.device_get(trace.states)),
                    Runner.TRACE_PKL)
        if self.cfg.run.dump_fields:
            for i, state in enumerate(trace.states):
                self._dump_state(state, grid, f'step_{i:04d}.csv')

    def _dump_state(self, state: ReducedState, grid: Grid2, name: str) -> None:
        os.makedirs(self.exp_path(Runner.FIELDS_DIR), exist_ok=True)
        packed = jnp.concatenate([state.u, state.v[..., None], state.zeta], -1)
        fields.write_field(self.exp_path(os.path.join(Runner.FIELDS_DIR, name)), packed, grid)

    def _open(self, path: str) -> Any:
        path = self.exp_path(path)
        with open(path, 'rb') as f:
            obj = cloudpickle.load(f)
        return obj

    def _write(self, obj: Any, path: str) -> None:
        path = self.exp_path(path)
        with open(path, 'wb') as f:
            cloudpickle.dump(obj, f)


def unpack_state(packed: np.ndarray) -> ReducedState:
    """Inverse of the six-component field dump (u₁, u₂, v, ζ₁, ζ₂, ζ₃)."""
    packed = jnp.asarray(packed)
    return ReducedState(u=packed[..., :2], v=packed[..., 2], zeta=packed[..., 3:])


def load_trace(path: str) -> ops.EvolutionTrace:
    with open(path, 'rb') as f:
        return cloudpickle.load(f)
