from src.ops.static_solver import (
    Penalty, SolveOptions, SolveReport, StabilityReport,
    check_stability, minimize, minimize_f0
)
from src.ops.quasistatic import (
    EvolutionTrace, Partition, StepReport,
    aimp_step, energy_balance_report, evolve
)
