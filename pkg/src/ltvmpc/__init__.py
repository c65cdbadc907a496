"""Adaptive data-driven min-max MPC for linear time-varying systems."""

from .control_loop import (
    LoopConfig,
    RunSummary,
    StepRecord,
    compare_costs,
    monitor_lyapunov,
    monitor_rpi,
    run_algorithm1,
    run_algorithm2,
    run_bootstrap,
    run_static,
)
from .scenarios import PRESETS, ScenarioConfig, parse_scenario, run_batch, run_scenario
from .synthesis import (
    InfeasibleError,
    InitialInfeasibleError,
    NumericalFailure,
    SynthesisResult,
    Weights,
    check_certificates,
    choose_c,
    solve_adaptive,
    solve_adaptive_noisy,
    solve_bootstrap,
    solve_initial,
    solve_initial_noisy,
)
from .uncertainty import DataPoint, DataWindow, NoiseBound, Qmi, qmi_from_ball

__version__ = "0.1.0"
