"""Approximate incremental minimization and energetic-solution diagnostics."""
import dataclasses
import logging
import math
from typing import NamedTuple, Sequence

import numpy as np
import jax

from src import reduced
from src import types_ as types
from src.errors import StepQualityError
from src.fields import Grid2
from src.material import Material
from src.reduced import LoadSchedule, ReducedState
from src.ops.static_solver import (
    Penalty, SolveOptions, SolveReport, StabilityReport,
    check_stability, competitor_family, minimize, objective
)

log = logging.getLogger(__name__)

MAX_REFINEMENTS = 5
GRONWALL_CMAX = 1e6
TRACE_COLUMNS = ('i', 't', 'F0', *reduced.TERMS, 'L0',
                 'd_inc', 'var_cum', 'power_cum', 'balance_resid')


class Partition:
    """Time nodes 0 = t⁰ < t¹ < … < tᴺ = T."""

    def __init__(self, times: Sequence[float]) -> None:
        times = np.asarray(times, float)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError(f'Partition needs at least two nodes: {times}')
        if times[0] != 0.:
            raise ValueError(f'Partition must start at t = 0: {times[0]}')
        if np.any(np.diff(times) <= 0):
            raise ValueError(f'Partition times must increase strictly: {times}')
        self.times = times

    @classmethod
    def uniform(cls, horizon: float, nsteps: int) -> 'Partition':
        if nsteps < 1:
            raise ValueError(f'nsteps must be positive: {nsteps}')
        return cls(np.linspace(0., horizon, nsteps + 1))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def nsteps(self) -> int:
        return len(self.times) - 1

    @property
    def size(self) -> float:
        return float(np.diff(self.times).max())

    def __len__(self) -> int:
        return len(self.times)


class StepReport(NamedTuple):
    t: float
    dt: float
    eps: float
    refinements: int
    value: float
    gap: float
    slack: float
    d_inc: float
    competitors: list[tuple[str, float]]
    solve: SolveReport


def aimp_step(prev: ReducedState,
              t_i: float,
              dt: float,
              sigma: float,
              schedule: LoadSchedule,
              grid: Grid2,
              mat: Material,
              opts: SolveOptions,
              n_competitors: int = 4,
              seed: int = 0
              ) -> tuple[ReducedState, StepReport]:
    """One σ-suboptimal step of q ↦ F₀(tᵢ, q) + D₀(ζ_prev, ζ).

    The solver sees the Huber-smoothed dissipation; acceptance is decided
    with the exact D₀ against prev, a cold start and sign-flip / random
    director variants of the candidate.
    """
    if not dt > 0:
        raise ValueError(f'dt must be positive: {dt}')
    if not sigma > 0:
        raise ValueError(f'sigma must be positive: {sigma}')
    loads = schedule.loads_at(t_i)
    slack = dt * sigma
    free = Penalty.none(grid)

    def exact(q: ReducedState) -> float:
        f = float(objective(q, loads, free, grid=grid, mat=mat))
        return f + float(reduced.dissipation_d0(prev.zeta, q.zeta, grid))

    eps = opts.huber_eps
    cold, _ = minimize(ReducedState.flat(grid), loads, grid, mat, opts,
                       Penalty(prev.zeta, eps, 1.))
    pool = [('prev', prev), ('cold', cold)]
    rng = jax.random.PRNGKey(seed)
    start = prev
    for refinement in range(MAX_REFINEMENTS + 1):
        cand, report = minimize(start, loads, grid, mat, opts,
                                Penalty(prev.zeta, eps, 1.))
        rng, key = jax.random.split(rng)
        family = pool + competitor_family(cand, grid, n_competitors, key)[1:]
        scores = [(name, exact(q)) for name, q in family]
        value = exact(cand)
        gap = value - min(s for _, s in scores)
        if gap <= slack:
            d_inc = float(reduced.dissipation_d0(prev.zeta, cand.zeta, grid))
            log.info('Step t = %.6g accepted: gap %.3g, slack %.3g, eps %.3g',
                     t_i, gap, slack, eps)
            return cand, StepReport(
                t=float(t_i), dt=float(dt), eps=eps, refinements=refinement,
                value=value, gap=gap, slack=slack, d_inc=d_inc,
                competitors=scores, solve=report)
        log.warning('Step t = %.6g rejected: gap %.3g > slack %.3g; eps -> %.3g',
                    t_i, gap, slack, eps / 2)
        eps /= 2
        best, best_value = min(scores, key=lambda s: s[1])
        start = dict(family)[best] if best_value < value else cand
    raise StepQualityError(gap, slack)


@dataclasses.dataclass
class EvolutionTrace:
    partition: Partition
    sigma: float
    states: list[ReducedState] = dataclasses.field(default_factory=list)
    f0: list[float] = dataclasses.field(default_factory=list)
    breakdowns: list[types.Breakdown] = dataclasses.field(default_factory=list)
    l0: list[float] = dataclasses.field(default_factory=list)
    d_inc: list[float] = dataclasses.field(default_factory=list)
    var_cum: list[float] = dataclasses.field(default_factory=list)
    power_cum: list[float] = dataclasses.field(default_factory=list)
    balance_resid: list[float] = dataclasses.field(default_factory=list)
    steps: list[StepReport] = dataclasses.field(default_factory=list)
    initial_stability: StabilityReport | None = None

    @property
    def times(self) -> np.ndarray:
        return self.partition.times[:len(self.states)]

    @property
    def complete(self) -> bool:
        return len(self.states) == len(self.partition)

    def state_at(self, t: float) -> ReducedState:
        """Right-continuous piecewise-constant interpolant."""
        times = self.times
        if not times[0] <= t <= self.partition.horizon:
            raise ValueError(f't = {t} outside [0, {self.partition.horizon}]')
        i = int(np.searchsorted(times, t, side='right')) - 1
        return self.states[min(i, len(self.states) - 1)]

    def record(self,
               state: ReducedState,
               t: float,
               schedule: LoadSchedule,
               grid: Grid2,
               mat: Material
               ) -> None:
        energy, terms = reduced.energy_e0(state, grid, mat)
        work = float(reduced.work_l0(schedule.loads_at(t), state, grid))
        f0 = float(energy) - work
        if self.states:
            prev = self.states[-1]
            t_prev = float(self.times[-1])
            d = float(reduced.dissipation_d0(prev.zeta, state.zeta, grid))
            zetas = [s.zeta for s in self.states] + [state.zeta]
            var = reduced.var_d0(zetas, (0, len(self.states)), grid)
            power = self.power_cum[-1] + reduced.power_integral(
                prev, t_prev, t, schedule, grid)
        else:
            d = var = power = 0.
        self.states.append(state)
        self.f0.append(f0)
        self.breakdowns.append({k: float(terms[k]) for k in reduced.TERMS})
        self.l0.append(work)
        self.d_inc.append(d)
        self.var_cum.append(var)
        self.power_cum.append(power)
        self.balance_resid.append(f0 + var - self.f0[0] - power)

    def rows(self) -> list[types.Row]:
        rows = []
        for i, t in enumerate(self.times):
            values = dict(
                self.breakdowns[i], i=i, t=float(t), F0=self.f0[i],
                L0=self.l0[i], d_inc=self.d_inc[i], var_cum=self.var_cum[i],
                power_cum=self.power_cum[i], balance_resid=self.balance_resid[i])
            rows.append({k: values[k] for k in TRACE_COLUMNS})
        return rows


def evolve(initial: ReducedState,
           partition: Partition,
           sigma: float,
           schedule: LoadSchedule,
           grid: Grid2,
           mat: Material,
           opts: SolveOptions,
           n_competitors: int = 4,
           seed: int = 0
           ) -> EvolutionTrace:
    initial.validate(grid)
    if partition.horizon > schedule.horizon + LoadSchedule.TIME_TOL:
        raise ValueError(f'Partition horizon {partition.horizon} exceeds '
                         f'the load schedule horizon {schedule.horizon}')
    trace = EvolutionTrace(partition=partition, sigma=sigma)
    trace.initial_stability = check_stability(
        initial, 0., schedule, grid, mat, n_competitors, seed, opts)
    if trace.initial_stability.margin < 0:
        log.warning('Initial datum is not sampled-stable: margin %.6g',
                    trace.initial_stability.margin)
    trace.record(initial, 0., schedule, grid, mat)
    times = partition.times
    for i in range(1, len(times)):
        try:
            state, report = aimp_step(
                trace.states[-1], float(times[i]), float(times[i] - times[i - 1]),
                sigma, schedule, grid, mat, opts, n_competitors, seed + i)
        except StepQualityError as exc:
            exc.trace = trace
            raise
        trace.steps.append(report)
        trace.record(state, float(times[i]), schedule, grid, mat)
        log.info('t = %.6g: F0 = %.10g, Var = %.6g, r = %.3g',
                 times[i], trace.f0[-1], trace.var_cum[-1], trace.balance_resid[-1])
    return trace


def _rate_integral(schedule: LoadSchedule, t0: float, t1: float, grid: Grid2) -> float:
    """∫ l(τ) dτ over [t0, t1]; l is constant between knots."""
    cuts = [t0] + schedule.knots_between(t0, t1) + [t1]
    return sum((b - a) * reduced.load_rate_norm(schedule, .5 * (a + b), grid)
               for a, b in zip(cuts[:-1], cuts[1:]))


def energy_balance_report(trace: EvolutionTrace,
                          schedule: LoadSchedule,
                          grid: Grid2,
                          mat: Material,
                          constant: float = 1.
                          ) -> list[types.Row]:
    """Per-step residuals of the discrete energy estimates.

    `constant` is the shift c making F₀ + c positive in the a priori bound
    F₀(tⁱ) + c + Σ D ≤ (F₀(0) + c + tⁱσ)·exp(C∫l); the report gives the
    smallest C for which the bound holds and flags it if C > 1e6.
    """
    del mat  # energies are read from the trace
    sigma = trace.sigma
    times = trace.times
    base = trace.f0[0] + constant
    rows = []
    for i in range(1, len(trace.states)):
        t, t_prev = float(times[i]), float(times[i - 1])
        prev, state = trace.states[i - 1], trace.states[i]
        power = reduced.power_integral(prev, t_prev, t, schedule, grid)
        increment = trace.f0[i] - trace.f0[i - 1] + trace.d_inc[i] - power
        aimp2 = increment - (t - t_prev) * sigma
        if i >= 2:
            two_sided = abs(increment) - (t - float(times[i - 2])) * sigma
        else:
            two_sided = math.nan

        rate = reduced.load_rate_norm(schedule, t, grid)
        lhs = trace.f0[i] + constant + trace.var_cum[i]
        rhs = base + t * sigma
        k = _rate_integral(schedule, 0., t, grid)
        if rhs <= 0 or lhs <= 0:
            ratio, c_min = math.inf, math.inf
        else:
            ratio = lhs / rhs
            log_ratio = math.log(ratio)
            if log_ratio <= 0:
                c_min = 0.
            elif k > 0:
                c_min = log_ratio / k
            else:
                c_min = math.inf
        dtf = abs(float(reduced.power_dt_f0(t, state, schedule, grid)))
        scale = rate * (trace.f0[i] + constant)
        rate_ratio = dtf / scale if scale > 0 else (0. if dtf == 0 else math.inf)

        rows.append(dict(
            i=i, t=t,
            aimp_resid=aimp2,
            balance_resid=trace.f0[i] + trace.var_cum[i] - trace.f0[0] - trace.power_cum[i],
            load_rate=rate,
            gronwall_ratio=ratio,
            gronwall_constant=c_min,
            gronwall_flag=int(c_min > GRONWALL_CMAX),
            two_sided_resid=two_sided,
            rate_ratio=rate_ratio,
        ))
    return rows
