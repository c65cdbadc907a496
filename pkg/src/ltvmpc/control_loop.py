"""Receding-horizon loops, the static baseline, bootstrap mode and monitors."""

from dataclasses import dataclass, field
import logging
import math

import numpy as np

from . import synthesis as syn
from .conic import SolverOptions
from .matrixcore import invert_pd, spectral_bounds
from .plant import NoiseGenerator, step
from .uncertainty import (
    DataPoint,
    DataWindow,
    noisy_constraint_block,
    usable_terms,
    zero_data_threshold,
)

log = logging.getLogger(__name__)

ADAPTIVE = "adaptive"
STATIC = "static"
BOOTSTRAP = "bootstrap"
ADAPTIVE_NOISY = "adaptive_noisy"
STATIC_NOISY = "static_noisy"
MODES = (ADAPTIVE, STATIC, BOOTSTRAP, ADAPTIVE_NOISY, STATIC_NOISY)

# controller_source tags
SRC_INITIAL = "initial"
SRC_ADAPTIVE = "adaptive"
SRC_FALLBACK = "backup_fallback"
SRC_EXCITATION = "excitation"
SRC_STOPPED = "stopped_static"

CANDIDATE_TOL = 1e-7


@dataclass(frozen=True)
class LoopConfig:
    steps: int = 40
    window_length: int | None = 5
    mode: str = ADAPTIVE
    excitation_steps: int = 10
    input_range: tuple = (-1.0, 1.0)
    stop_threshold: float | None = None
    seed: int = 0
    c: float | None = None
    solver: SolverOptions = SolverOptions()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        if self.window_length is not None and self.window_length < 1:
            raise ValueError("window_length must be positive")
        if self.mode == BOOTSTRAP and self.excitation_steps < 1:
            raise ValueError("bootstrap mode needs excitation_steps >= 1")
        lo, hi = self.input_range
        if not lo < hi:
            raise ValueError("input_range must be an increasing pair")


@dataclass
class StepRecord:
    t: int
    x: np.ndarray
    u: np.ndarray | None = None
    gamma: float | None = None
    controller_source: str = ""
    lyapunov_value: float = math.nan
    solve_time: float = 0.0
    lmi_residual_min: float | None = None
    constraint_value: float = math.nan
    bound_value: float | None = None
    candidate_residual: float | None = None
    status: str = ""


@dataclass
class RunSummary:
    mode: str
    seed: int
    records: list
    weights: syn.Weights
    p_star: np.ndarray | None = None
    gamma_star: float | None = None
    fallback_count: int = 0
    infeasible_count: int = 0
    c: float | None = None
    c_rpi: float | None = None
    rpi_entry_time: int | None = None
    initial_infeasible: bool = False
    feasible_from: int | None = None
    infeasible_steps: list = field(default_factory=list)

    @property
    def closed_loop_cost(self):
        return float(
            sum(self.weights.stage_cost(r.u, r.x) for r in self.records if r.u is not None)
        )

    @property
    def max_constraint_value(self):
        vals = [r.constraint_value for r in self.records if r.u is not None]
        return float(max(vals)) if vals else 0.0

    @property
    def final_state_norm(self):
        return float(np.linalg.norm(self.records[-1].x))

    def states(self):
        return np.array([r.x for r in self.records])

    def inputs(self):
        return np.array([r.u for r in self.records if r.u is not None])


def lyapunov(p, x):
    x = np.ravel(x)
    return float(x @ p @ x)


def _c_rpi(c, weights, noise):
    return c ** 2 / (spectral_bounds(weights.q)[0] * spectral_bounds(noise.g)[0])


def _fit_input(u, x, weights, shrink=0.5, tries=60):
    """Shrink an excitation input until the constraint holds."""
    for _ in range(tries):
        if weights.constraint_value(x, u) <= 1.0:
            return u
        u = shrink * u
    return np.zeros_like(u)


class _Loop:
    """Shared bookkeeping of one closed-loop run."""

    def __init__(self, plant, prior, profile, weights, cfg, x0, noise=None, streams=None):
        self.plant, self.prior, self.profile = plant, prior, profile
        self.weights, self.cfg, self.noise = weights, cfg, noise
        streams = streams or [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2)]
        self.noise_gen = NoiseGenerator(noise, streams[0]) if noise is not None else None
        self.excite_rng = streams[1]
        self.window = DataWindow((), cfg.window_length)
        self.threshold = zero_data_threshold(x0)
        self.records = []

    def advance(self, t, x, u):
        w = self.noise_gen.sample() if self.noise_gen is not None else None
        x_next = step(self.plant, t, x, u, w)
        self.window = self.window.append(DataPoint(x, u, x_next, t))
        return x_next

    def record(self, t, x, u, p_star, **kw):
        rec = StepRecord(
            t=t,
            x=np.array(x, dtype=float),
            u=None if u is None else np.array(u, dtype=float),
            lyapunov_value=lyapunov(p_star, x) if p_star is not None else math.nan,
            constraint_value=self.weights.constraint_value(x, u) if u is not None else math.nan,
            **kw,
        )
        self.records.append(rec)
        return rec


def _initial(x0, prior, weights, cfg, noisy):
    if noisy:
        if cfg.c is None:
            return syn.choose_c(x0, prior, weights, cfg.solver)
        return cfg.c, syn.solve_initial_noisy(x0, prior, weights, cfg.c, cfg.solver)
    return None, syn.solve_initial(x0, prior, weights, cfg.solver)


def _run_receding(plant, prior, profile, weights, cfg, x0, noise=None, adaptive=True,
                  streams=None):
    noisy = noise is not None
    loop = _Loop(plant, prior, profile, weights, cfg, x0, noise, streams)
    c, base = _initial(x0, prior, weights, cfg, noisy)
    p_star, f_star = base.p, base.f
    summary = RunSummary(cfg.mode, cfg.seed, loop.records, weights, p_star, base.gamma, c=c)
    if noisy:
        summary.c_rpi = _c_rpi(c, weights, noise)
    x = np.ravel(np.asarray(x0, dtype=float))
    stopped = False
    for t in range(cfg.steps):
        if cfg.stop_threshold is not None and np.linalg.norm(x) <= cfg.stop_threshold:
            stopped = True
        kw = {}
        if t == 0 or not adaptive or stopped:
            u = f_star @ x
            src = SRC_STOPPED if stopped else SRC_INITIAL
            kw = dict(gamma=base.gamma if t == 0 else None, solve_time=base.solve_time if t == 0 else 0.0,
                      bound_value=lyapunov(p_star, x))
        else:
            u, src, kw = _adaptive_step(loop, summary, base, x, c)
        loop.record(t, x, u, p_star, controller_source=src, **kw)
        x = loop.advance(t, x, u)
    loop.record(cfg.steps, x, None, p_star)
    if noisy:
        summary.rpi_entry_time = next(
            (r.t for r in loop.records if r.lyapunov_value <= summary.c_rpi), None
        )
    return summary


def _adaptive_step(loop, summary, base, x, c):
    w, cfg = loop.weights, loop.cfg
    try:
        if loop.noise is not None:
            res = syn.solve_adaptive_noisy(
                x, loop.prior, loop.window, loop.profile, loop.noise, base.p, w, c, cfg.solver,
                threshold=loop.threshold,
            )
        else:
            res = syn.solve_adaptive(x, loop.prior, loop.window, loop.profile, base.p, w, cfg.solver,
                                     threshold=loop.threshold)
    except syn.SynthesisError as exc:
        problem = _problem_for(loop, base, c)
        cand = syn.candidate_residual(problem, x, base)
        if isinstance(exc, syn.InfeasibleError) and cand < -CANDIDATE_TOL:
            summary.infeasible_count += 1
            summary.infeasible_steps.append(loop.window.current_time)
        else:
            summary.fallback_count += 1
        log.info("t=%d: falling back to the backup gain (%s)", loop.window.current_time, exc)
        return base.f @ x, SRC_FALLBACK, dict(candidate_residual=cand, status=type(exc).__name__,
                                              bound_value=lyapunov(base.p, x))
    cand = syn.candidate_residual(res.problem, x, base)
    resid = res.problem.program(x, eps_strict=0.0).min_residual(res.values())
    return res.f @ x, SRC_ADAPTIVE, dict(
        gamma=res.gamma,
        solve_time=res.solve_time,
        lmi_residual_min=resid,
        bound_value=lyapunov(res.p, x),
        candidate_residual=cand,
        status=res.status,
    )


def _problem_for(loop, base, c):
    """Rebuild the adaptive problem for the candidate check after a failed solve."""
    w = loop.weights
    if loop.noise is not None:
        terms = usable_terms(loop.window, loop.profile, loop.threshold, normalize=False)
        couplings = [(t, noisy_constraint_block(t.point, t.n_i, loop.noise)) for t in terms]
        return syn.SynthesisProblem(syn.ADAPTIVE_NOISY, loop.prior, w, couplings=couplings,
                                    p_terminal_inv=invert_pd(base.p), c=c)
    terms = usable_terms(loop.window, loop.profile, loop.threshold)
    return syn.SynthesisProblem(syn.ADAPTIVE, loop.prior, w, terms=terms,
                                p_terminal_inv=invert_pd(base.p))


def run_algorithm1(plant, prior, profile, weights, cfg, x0, streams=None):
    """Adaptive scheme without noise; raises ``InitialInfeasibleError`` if the prior is too weak."""
    return _run_receding(plant, prior, profile, weights, cfg, x0, streams=streams)


def run_algorithm2(plant, prior, profile, noise, weights, cfg, x0, streams=None):
    """Adaptive scheme under bounded process noise."""
    return _run_receding(plant, prior, profile, weights, cfg, x0, noise=noise, streams=streams)


def run_static(plant, prior, weights, cfg, x0, noise=None, streams=None):
    """Prior-only gain applied at every step (noisy variant when ``noise`` is given)."""
    return _run_receding(plant, prior, None, weights, cfg, x0, noise=noise, adaptive=False,
                         streams=streams)


def run_bootstrap(plant, prior, profile, weights, cfg, x0, streams=None):
    """Random excitation, then data-plus-prior synthesis at every step.

    The initial prior-only problem is still attempted so that the summary
    can report whether it was infeasible.  Steps where the bootstrap
    problem is infeasible fall back to another random input.
    """
    loop = _Loop(plant, prior, profile, weights, cfg, x0, None, streams)
    summary = RunSummary(cfg.mode, cfg.seed, loop.records, weights)
    try:
        base = syn.solve_initial(x0, prior, weights, cfg.solver)
        summary.p_star, summary.gamma_star = base.p, base.gamma
    except syn.InitialInfeasibleError:
        summary.initial_infeasible = True
    lo, hi = cfg.input_range
    m = weights.m
    x = np.ravel(np.asarray(x0, dtype=float))
    p_cur = summary.p_star
    for t in range(cfg.steps):
        kw = {}
        solved = False
        if t >= cfg.excitation_steps:
            try:
                res = syn.solve_bootstrap(x, prior, loop.window, profile, weights, cfg.solver,
                                          threshold=loop.threshold)
                solved = True
            except syn.SynthesisError as exc:
                summary.infeasible_count += 1
                summary.infeasible_steps.append(t)
                kw["status"] = type(exc).__name__
        if solved:
            u = res.f @ x
            p_cur = res.p
            src = SRC_ADAPTIVE
            kw = dict(gamma=res.gamma, solve_time=res.solve_time, status=res.status,
                      bound_value=lyapunov(res.p, x),
                      lmi_residual_min=res.problem.program(x, eps_strict=0.0).min_residual(res.values()))
        else:
            u = _fit_input(loop.excite_rng.uniform(lo, hi, size=m), x, weights)
            src = SRC_EXCITATION
        loop.record(t, x, u, p_cur, controller_source=src, **kw)
        x = loop.advance(t, x, u)
    loop.record(cfg.steps, x, None, p_cur)
    late = [s for s in summary.infeasible_steps if s >= cfg.excitation_steps]
    summary.feasible_from = (max(late) + 1 if late else cfg.excitation_steps)
    if summary.feasible_from >= cfg.steps:
        summary.feasible_from = None
    return summary


# --- monitors ----------------------------------------------------------------


def monitor_lyapunov(records, p_star, weights, tol=1e-6):
    """Steps ``t`` where ``V(x_{t+1}) - V(x_t) <= -lambda_min(Q) ||x_t||^2`` fails."""
    lam_q = spectral_bounds(weights.q)[0]
    bad = []
    for cur, nxt in zip(records, records[1:]):
        v0, v1 = lyapunov(p_star, cur.x), lyapunov(p_star, nxt.x)
        if v1 - v0 > -lam_q * float(cur.x @ cur.x) + tol * (1.0 + v0):
            bad.append(cur.t)
    return bad


def monitor_rpi(records, p_star, c_rpi, beta, tol=1e-6):
    """Invariance of ``{V <= c_rpi}`` after entry, geometric approach with ratio ``beta`` outside."""
    bad = []
    inside = False
    for cur, nxt in zip(records, records[1:]):
        v0, v1 = lyapunov(p_star, cur.x), lyapunov(p_star, nxt.x)
        inside = inside or v0 <= c_rpi
        if inside and v1 > c_rpi + tol:
            bad.append(cur.t)
        elif not inside and v1 - c_rpi > beta * (v0 - c_rpi) + tol:
            bad.append(cur.t)
    return bad


@dataclass
class ComparisonReport:
    per_seed: dict
    mean_improvement: float
    pooled_improvement: float


def compare_costs(adaptive, static):
    """Relative improvement ``(static - adaptive) / static`` paired by seed."""
    a = {s.seed: s for s in adaptive}
    b = {s.seed: s for s in static}
    if set(a) != set(b) or len(a) != len(adaptive) or len(b) != len(static):
        raise ValueError(f"seed sets differ or repeat: {sorted(a)} vs {sorted(b)}")
    per_seed = {}
    for seed in sorted(a):
        js, ja = b[seed].closed_loop_cost, a[seed].closed_loop_cost
        per_seed[seed] = (js - ja) / js if js > 0 else 0.0
    ca = sum(s.closed_loop_cost for s in adaptive)
    cs = sum(s.closed_loop_cost for s in static)
    return ComparisonReport(
        per_seed=per_seed,
        mean_improvement=float(np.mean(list(per_seed.values()))) if per_seed else 0.0,
        pooled_improvement=(cs - ca) / cs if cs > 0 else 0.0,
    )
